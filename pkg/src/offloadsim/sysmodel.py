"""Discrete-time model of an energy-harvesting IoT device served by edge nodes.

One epoch: the device observes its task queue, energy queue, edge-node
association and per-node channel gains, picks a joint action (where to run
the head-of-line task, how many energy units to spend), and the queues
evolve. All functions here are pure; ``DeviceEnv`` owns the mutable state
and the RNG streams of a single device.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

LN2 = math.log(2.0)

# Base channel-gain ladder, geometric-ish spacing spanning roughly 5.7x.
BASE_GAIN_LEVELS = (0.3, 0.42, 0.6, 0.85, 1.2, 1.7)
GAIN_LEVEL_COUNT = 6

# Scale applied to the base ladder so that a one-unit transmission can
# finish inside a 5 ms epoch under the default interference level.
DEFAULT_GAIN_SCALE = 3.0e3


class InvalidAction(ValueError):
    """Action violates the state it is applied to (never silently fixed)."""


class TransmissionInfeasible(RuntimeError):
    """The channel cannot carry the payload at any transmission duration."""


class PowerInfeasible(RuntimeError):
    """No duration inside the epoch satisfies the transmit-power cap."""


@dataclass(frozen=True)
class EnergyArrival:
    """Energy-unit arrival process: one-unit Bernoulli or Poisson counts."""

    kind: str = "bernoulli"
    rate: float = 0.8

    def __post_init__(self):
        if self.kind not in ("bernoulli", "poisson"):
            raise ValueError(f"unknown energy arrival kind {self.kind!r}")
        if self.kind == "bernoulli" and not 0.0 <= self.rate <= 1.0:
            raise ValueError("bernoulli rate must lie in [0, 1]")
        if self.rate < 0.0:
            raise ValueError("arrival rate must be non-negative")


@dataclass(frozen=True)
class UtilityWeights:
    """Non-negative weights of the per-epoch cost terms."""

    delay: float = 1.0
    queuing: float = 1.0
    drop: float = 1.0
    payment: float = 1.0

    def __post_init__(self):
        for name in ("delay", "queuing", "drop", "payment"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0.0:
                raise ValueError(f"weight {name} must be finite and >= 0")


def default_gain_levels(num_edge_nodes: int, scales=None) -> tuple:
    """Per-node 6-level gain ladders: base levels times a per-node scale."""
    if scales is None:
        scales = (DEFAULT_GAIN_SCALE,) * num_edge_nodes
    if len(scales) != num_edge_nodes:
        raise ValueError("need one gain scale per edge node")
    return tuple(tuple(s * g for g in BASE_GAIN_LEVELS) for s in scales)


@dataclass(frozen=True)
class SystemParams:
    """Physical constants of the device / edge-node system.

    Defaults reproduce the reference configuration: 5 ms epochs, 0.6 MHz
    channel, 30 kbit tasks needing 8.375e6 CPU cycles, 2 GHz CPU cap, 2 W
    transmit-power cap, 2 ms handover, queues capped at 4.
    """

    num_edge_nodes: int = 3
    epoch_seconds: float = 5.0e-3
    bandwidth_hz: float = 6.0e5
    task_bits: float = 3.0e4
    task_cycles: float = 8.375e6
    switched_cap: float = 1.0e-28
    activity_factor: float = 3.0
    max_cpu_hz: float = 2.0e9
    max_tx_power: float = 2.0
    handover_seconds: float = 2.0e-3
    server_exec_seconds: float = 1.0e-6
    price_per_second: float = 0.3
    task_queue_cap: int = 4
    energy_queue_cap: int = 4
    energy_unit_joules: float = 2.0e-3
    task_arrival_prob: float = 0.5
    energy_arrival: EnergyArrival = field(default_factory=EnergyArrival)
    gain_levels: tuple = ()
    interference_watts: float = 0.1

    def __post_init__(self):
        if not self.gain_levels:
            object.__setattr__(
                self, "gain_levels", default_gain_levels(self.num_edge_nodes)
            )
        problems = []
        if self.num_edge_nodes < 1:
            problems.append("num_edge_nodes must be >= 1")
        for name in (
            "epoch_seconds", "bandwidth_hz", "task_bits", "task_cycles",
            "switched_cap", "max_cpu_hz", "max_tx_power", "handover_seconds",
            "energy_unit_joules", "interference_watts",
        ):
            if getattr(self, name) <= 0.0:
                problems.append(f"{name} must be > 0")
        if self.server_exec_seconds < 0.0:
            problems.append("server_exec_seconds must be >= 0")
        if self.price_per_second < 0.0:
            problems.append("price_per_second must be >= 0")
        if self.activity_factor <= 1.0:
            problems.append("activity_factor must exceed 1")
        if not 0.0 <= self.task_arrival_prob <= 1.0:
            problems.append("task_arrival_prob must lie in [0, 1]")
        if self.task_queue_cap < 1 or self.energy_queue_cap < 1:
            problems.append("queue capacities must be >= 1")
        if len(self.gain_levels) != self.num_edge_nodes:
            problems.append("gain_levels needs one ladder per edge node")
        else:
            for n, ladder in enumerate(self.gain_levels):
                if len(ladder) != GAIN_LEVEL_COUNT:
                    problems.append(f"gain ladder {n} must have 6 levels")
                elif any(g <= 0 for g in ladder) or any(
                    b >= a for a, b in zip(ladder[1:], ladder)
                ):
                    problems.append(f"gain ladder {n} must be positive and strictly increasing")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def action_count(self) -> int:
        return (self.num_edge_nodes + 1) * (self.energy_queue_cap + 1)


@dataclass(frozen=True)
class NetworkState:
    """Observable device state: queue lengths, association, channel gains."""

    q_task: int
    q_energy: int
    assoc: int
    gains: tuple

    def validate(self, params: SystemParams) -> None:
        if not 0 <= self.q_task <= params.task_queue_cap:
            raise ValueError("task queue length out of range")
        if not 0 <= self.q_energy <= params.energy_queue_cap:
            raise ValueError("energy queue length out of range")
        if not 1 <= self.assoc <= params.num_edge_nodes:
            raise ValueError("association out of range")
        if len(self.gains) != params.num_edge_nodes:
            raise ValueError("need one gain per edge node")
        for n, g in enumerate(self.gains):
            if g not in params.gain_levels[n]:
                raise ValueError(f"gain {g} is not a level of edge node {n + 1}")


@dataclass(frozen=True)
class JointAction:
    """Offload decision (0 local, n >= 1 edge node) and energy units spent."""

    offload: int
    energy: int


@dataclass
class ArrivalSample:
    tasks: int
    energy: int


@dataclass
class EpochOutcome:
    """Everything one epoch produced, before and after queue accounting."""

    exec_delay: float = 0.0
    handover: float = 0.0
    tx_seconds: float = 0.0
    queuing: int = 0
    drops: int = 0
    payment: float = 0.0
    completed: bool = False
    energy_spent: int = 0
    utility: float = 0.0


def local_exec_delay(energy_joules: float, params: SystemParams) -> float:
    """Seconds to run one task on the device CPU with the given energy.

    The energy budget implies a CPU frequency; if that frequency exceeds
    the hardware cap the run is clamped to the cap (surplus energy is
    still consumed by the caller).
    """
    if energy_joules <= 0.0:
        raise ValueError("energy must be > 0")
    zeta = params.activity_factor
    d = (params.task_cycles ** zeta * params.switched_cap / energy_joules) ** (
        1.0 / (zeta - 1.0)
    )
    floor = params.task_cycles / params.max_cpu_hz
    return d if d >= floor else floor


def handover_delay(offload: int, assoc: int, params: SystemParams) -> float:
    """Delay of switching edge-node association; zero when staying put."""
    if offload < 1:
        raise ValueError("handover is undefined for local execution")
    return 0.0 if offload == assoc else params.handover_seconds


def achievable_rate(gain: float, tx_power: float, interference: float,
                    bandwidth_hz: float) -> float:
    """Link rate in bit/s for the given gain, power and interference."""
    if min(gain, tx_power, interference, bandwidth_hz) <= 0.0:
        raise ValueError("gain, power, interference and bandwidth must be > 0")
    return bandwidth_hz * math.log2(1.0 + gain * tx_power / interference)


def _deliverable_bits(d: float, a: float, bandwidth_hz: float) -> float:
    # Bits pushed over d seconds at constant power; a = gain * E / I.
    return bandwidth_hz * d * math.log2(1.0 + a / d)


@lru_cache(maxsize=16384)
def _tx_root(a: float, bandwidth_hz: float, bits: float) -> float:
    """Unique d > 0 with bandwidth * d * log2(1 + a/d) == bits, by bisection.

    Deliverable bits increase monotonically in d toward bandwidth*a/ln2,
    so a root exists iff that supremum exceeds the payload.
    """
    if bandwidth_hz * a / LN2 <= bits:
        raise TransmissionInfeasible(
            f"payload of {bits} bits exceeds the channel supremum"
        )
    lo = 1e-15
    hi = 1e-3
    while _deliverable_bits(hi, a, bandwidth_hz) < bits:
        hi *= 2.0
        if hi > 1e15:  # supremum check above should make this unreachable
            raise TransmissionInfeasible("no finite transmission time found")
    while hi - lo > 1e-13 * hi:
        mid = 0.5 * (lo + hi)
        if _deliverable_bits(mid, a, bandwidth_hz) < bits:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def solve_transmission_time(energy_joules: float, gain: float,
                            interference: float, params: SystemParams,
                            handover: float = 0.0) -> float:
    """Minimum seconds to push one task payload uplink with the given energy.

    Transmission runs at constant power energy/d. The returned duration
    satisfies the power cap: if the root implies more than max_tx_power,
    the transmission is stretched to energy/max_tx_power, which is valid
    only while it still fits the epoch after any handover.

    Raises TransmissionInfeasible when the payload exceeds what the link
    can ever deliver, and PowerInfeasible when the power-capped stretch
    no longer fits the epoch.
    """
    if energy_joules <= 0.0 or gain <= 0.0:
        raise ValueError("energy and gain must be > 0")
    a = gain * energy_joules / interference
    root = _tx_root(a, params.bandwidth_hz, params.task_bits)
    min_duration = energy_joules / params.max_tx_power
    if root >= min_duration:
        return root
    budget = params.epoch_seconds - handover
    if min_duration <= budget:
        return min_duration
    raise PowerInfeasible(
        "power-capped transmission does not fit the epoch; task stays queued"
    )


def payment(handover: float, tx_seconds: float, params: SystemParams) -> float:
    """Edge-node occupation fee: price times billable time, capped at the epoch."""
    occupied = min(handover + tx_seconds + params.server_exec_seconds,
                   params.epoch_seconds)
    return params.price_per_second * (occupied - handover)


@dataclass
class ActionPhysics:
    """Deterministic consequences of one action in one state (no arrivals)."""

    exec_delay: float
    handover: float
    tx_seconds: float
    payment: float
    completed: bool
    energy_spent: int


def action_physics(state: NetworkState, action: JointAction,
                   params: SystemParams) -> ActionPhysics:
    """Delay, payment and completion of an action, given the current gains.

    Offloads that cannot deliver the payload are charged for the epoch
    they occupy and fail to complete: an undeliverable payload transmits
    until the epoch ends, a power-capped overrun takes its full stretched
    duration. Either way the allocated energy is consumed.
    """
    c, e = action.offload, action.energy
    if e < 0 or e > state.q_energy:
        raise InvalidAction("cannot allocate more energy units than queued")
    if c < 0 or c > params.num_edge_nodes:
        raise InvalidAction("offload target out of range")
    if state.q_task == 0 and e > 0:
        raise InvalidAction("cannot spend energy with an empty task queue")

    if e == 0:
        h = 0.0 if c == 0 or c == state.assoc else params.handover_seconds
        return ActionPhysics(0.0, h, 0.0, 0.0, False, 0)

    energy_joules = e * params.energy_unit_joules
    if c == 0:
        d = local_exec_delay(energy_joules, params)
        return ActionPhysics(d, 0.0, 0.0, 0.0, d <= params.epoch_seconds, e)

    h = handover_delay(c, state.assoc, params)
    try:
        tx = solve_transmission_time(
            energy_joules, state.gains[c - 1], params.interference_watts,
            params, handover=h,
        )
    except TransmissionInfeasible:
        tx = params.epoch_seconds - h
    except PowerInfeasible:
        tx = energy_joules / params.max_tx_power
    d = h + tx + params.server_exec_seconds
    return ActionPhysics(d, h, tx, payment(h, tx, params), d <= params.epoch_seconds, e)


def execution_delay(action: JointAction, state: NetworkState,
                    energy_joules: float, tx_seconds: float,
                    params: SystemParams) -> float:
    """Total execution delay of the epoch: local run, offload chain, or zero."""
    if action.energy == 0:
        return 0.0
    if action.offload == 0:
        return local_exec_delay(energy_joules, params)
    h = handover_delay(action.offload, state.assoc, params)
    return h + tx_seconds + params.server_exec_seconds


def utility(outcome: EpochOutcome, weights: UtilityWeights,
            epoch_seconds: float) -> float:
    """Negated weighted epoch cost; queue counts are scaled to seconds."""
    return -(
        weights.delay * outcome.exec_delay
        + weights.queuing * outcome.queuing * epoch_seconds
        + weights.drop * outcome.drops
        + weights.payment * outcome.payment
    )


def sample_arrivals(rng: np.random.Generator, params: SystemParams) -> ArrivalSample:
    """One epoch of task and energy arrivals from the device's streams."""
    task = 1 if rng.random() < params.task_arrival_prob else 0
    proc = params.energy_arrival
    if proc.kind == "bernoulli":
        energy = 1 if rng.random() < proc.rate else 0
    else:
        energy = int(rng.poisson(proc.rate))
    return ArrivalSample(task, energy)


def sample_gains(rng: np.random.Generator, params: SystemParams) -> tuple:
    """Independent uniform draw of one gain level per edge node."""
    idx = rng.integers(0, GAIN_LEVEL_COUNT, size=params.num_edge_nodes)
    return tuple(params.gain_levels[n][idx[n]] for n in range(params.num_edge_nodes))


def step(state: NetworkState, action: JointAction, arrivals: ArrivalSample,
         params: SystemParams, rng: np.random.Generator,
         weights: UtilityWeights | None = None):
    """Advance the device by one epoch; returns (next_state, outcome)."""
    phys = action_physics(state, action, params)
    served = 1 if phys.completed else 0
    d_positive = 1 if phys.exec_delay > 0.0 else 0

    pre_cap = state.q_task - served + arrivals.tasks
    q_task = min(pre_cap, params.task_queue_cap)
    drops = max(pre_cap - params.task_queue_cap, 0)
    q_energy = min(state.q_energy - phys.energy_spent + arrivals.energy,
                   params.energy_queue_cap)
    assoc = state.assoc if action.offload == 0 else action.offload

    outcome = EpochOutcome(
        exec_delay=phys.exec_delay,
        handover=phys.handover,
        tx_seconds=phys.tx_seconds,
        queuing=state.q_task - d_positive,
        drops=drops,
        payment=phys.payment,
        completed=phys.completed,
        energy_spent=phys.energy_spent,
    )
    outcome.utility = utility(outcome, weights or UtilityWeights(),
                              params.epoch_seconds)
    nxt = NetworkState(q_task, q_energy, assoc, sample_gains(rng, params))
    return nxt, outcome


class DeviceEnv:
    """Single device's mutable environment: state plus its own RNG streams."""

    def __init__(self, params: SystemParams, weights: UtilityWeights,
                 arrival_rng: np.random.Generator, gain_rng: np.random.Generator,
                 initial: NetworkState | None = None):
        self.params = params
        self.weights = weights
        self.arrival_rng = arrival_rng
        self.gain_rng = gain_rng
        self._initial = initial
        self.epoch = 0
        self.state = self._fresh_state()

    def _fresh_state(self) -> NetworkState:
        if self._initial is not None:
            return self._initial
        return NetworkState(0, 0, 1, sample_gains(self.gain_rng, self.params))

    def reset(self) -> NetworkState:
        self.state = self._fresh_state()
        self.epoch = 0
        return self.state

    def refill(self, q_task: int, q_energy: int) -> None:
        """Overwrite queue lengths in place (scenario resets)."""
        self.state = NetworkState(q_task, q_energy, self.state.assoc,
                                  self.state.gains)

    def advance(self, action: JointAction) -> EpochOutcome:
        arrivals = sample_arrivals(self.arrival_rng, self.params)
        self.state, outcome = step(self.state, action, arrivals, self.params,
                                   self.gain_rng, self.weights)
        self.epoch += 1
        return outcome
