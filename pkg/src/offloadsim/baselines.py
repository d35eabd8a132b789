"""Reference policies and exact oracles.

The myopic greedy policy maximizes the deterministic one-epoch utility,
centralized training pools every device's transitions into one agent, and
the 0/1 knapsack solver gives the exact optimum of the frozen no-arrival
special case used as a test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ddqn, metrics, qnet
from .sysmodel import (
    DeviceEnv, EnergyArrival, JointAction, NetworkState, SystemParams,
    UtilityWeights, action_physics,
)


def _immediate_utility(state: NetworkState, action: JointAction,
                       params: SystemParams, weights: UtilityWeights) -> float:
    # Deterministic epoch cost with arrival terms excluded: drops cannot
    # exceed zero without an arrival, so only delay/queuing/payment remain.
    phys = action_physics(state, action, params)
    queuing = state.q_task - (1 if phys.exec_delay > 0.0 else 0)
    return -(
        weights.delay * phys.exec_delay
        + weights.queuing * queuing * params.epoch_seconds
        + weights.payment * phys.payment
    )


def greedy_action(state: NetworkState, params: SystemParams,
                  weights: UtilityWeights) -> JointAction:
    """Myopic maximizer of the immediate utility over all valid actions."""
    mask = ddqn.valid_action_mask(state, params)
    best_idx = -1
    best_u = -np.inf
    for idx in np.flatnonzero(mask):
        action = ddqn.decode_action(int(idx), params)
        u = _immediate_utility(state, action, params, weights)
        if u > best_u:
            best_u = u
            best_idx = int(idx)
    return ddqn.decode_action(best_idx, params)


def greedy_rollout(env: DeviceEnv, epochs: int, device_id: int = 0,
                   sink=None) -> list:
    """Run the greedy policy; returns per-epoch metric rows."""
    rows = []
    for _ in range(epochs):
        action = greedy_action(env.state, env.params, env.weights)
        outcome = env.advance(action)
        row = metrics.make_row(0, env.epoch - 1, device_id, "greedy", outcome,
                               action, 0.0, None)
        rows.append(row)
        if sink is not None:
            sink(row)
    return rows


def centralized_train(envs: dict, agent: ddqn.DDQNAgent,
                      epochs: int, explore_rng: np.random.Generator,
                      replay_rng: np.random.Generator, sink=None,
                      mode: str = "centralized") -> list:
    """Train one shared agent on the pooled experience of every device.

    Models lossless, zero-delay transition upload: each epoch every device
    acts with the shared policy, pushes its transition into the shared
    buffer, and one training step runs per inserted transition.
    """
    rows = []
    for _ in range(epochs):
        for did in sorted(envs):
            env = envs[did]
            outcome, loss, idx = ddqn.run_device_epoch(
                env, agent, explore_rng, replay_rng
            )
            action = ddqn.decode_action(idx, env.params)
            row = metrics.make_row(0, env.epoch - 1, did, mode, outcome,
                                   action, agent.epsilon, loss)
            rows.append(row)
            if sink is not None:
                sink(row)
    return rows


# ---------------------------------------------------------------------------
# Exact 0/1 knapsack oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KnapsackInstance:
    """Tasks with completion values and integer energy costs under a budget."""

    utilities: tuple
    energy_costs: tuple
    budget: int

    def __post_init__(self):
        if len(self.utilities) != len(self.energy_costs):
            raise ValueError("need one energy cost per utility")
        if any(u < 0 for u in self.utilities):
            raise ValueError("utilities must be >= 0")
        if any(int(e) != e or e < 1 for e in self.energy_costs):
            raise ValueError("energy costs must be integers >= 1")
        if int(self.budget) != self.budget or self.budget < 0:
            raise ValueError("budget must be an integer >= 0")


def knapsack_optimal(instance: KnapsackInstance):
    """Exact optimum by dynamic programming over the energy budget.

    Returns (best value, chosen 0-based indices); among equal-value
    solutions the lexicographically smallest index tuple is chosen, which
    the reconstruction achieves by preferring to include earlier items.
    """
    n = len(instance.utilities)
    budget = int(instance.budget)
    u = [float(x) for x in instance.utilities]
    e = [int(x) for x in instance.energy_costs]

    # best[k][b]: max value using items k.. with budget b
    best = [[0.0] * (budget + 1) for _ in range(n + 1)]
    for k in range(n - 1, -1, -1):
        row = best[k]
        nxt = best[k + 1]
        for b in range(budget + 1):
            take = u[k] + nxt[b - e[k]] if e[k] <= b else -np.inf
            row[b] = take if take >= nxt[b] else nxt[b]

    chosen = []
    b = budget
    for k in range(n):
        if e[k] <= b and u[k] + best[k + 1][b - e[k]] == best[k][b]:
            chosen.append(k)
            b -= e[k]
    return best[0][budget], tuple(chosen)


# ---------------------------------------------------------------------------
# Frozen no-arrival scenario bridging the simulator to the knapsack oracle
# ---------------------------------------------------------------------------

def max_frequency_energy_units(params: SystemParams) -> int:
    """Energy units that drive one local run exactly at the CPU cap."""
    joules = (params.switched_cap * params.task_cycles * params.max_cpu_hz ** 2)
    return int(np.ceil(joules / params.energy_unit_joules))


@dataclass
class FrozenScenario:
    """No arrivals, local-only execution, fixed starting queues.

    Every queued task costs the same integer number of energy units (the
    CPU-cap execution cost) and carries the same completion value, derived
    from the utility weights: completing a task at the start of the run
    saves ``queuing_weight * epoch * horizon`` of queue cost at the price
    of one CPU-cap execution delay.
    """

    params: SystemParams
    weights: UtilityWeights
    n_tasks: int
    m_units: int
    horizon: int
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n_tasks <= self.params.task_queue_cap:
            raise ValueError("task count must fit the task queue")
        if not 1 <= self.m_units <= self.params.energy_queue_cap:
            raise ValueError("energy units must fit the energy queue")
        kept = {f: getattr(self.params, f) for f in (
            "num_edge_nodes", "epoch_seconds", "bandwidth_hz", "task_bits",
            "task_cycles", "switched_cap", "activity_factor", "max_cpu_hz",
            "max_tx_power", "handover_seconds", "server_exec_seconds",
            "price_per_second", "task_queue_cap", "energy_queue_cap",
            "energy_unit_joules", "gain_levels", "interference_watts",
        )}
        self.params = SystemParams(
            task_arrival_prob=0.0,
            energy_arrival=EnergyArrival(kind="bernoulli", rate=0.0),
            **kept,
        )

    @property
    def unit_cost(self) -> int:
        return max_frequency_energy_units(self.params)

    @property
    def task_value(self) -> float:
        d_cap = self.params.task_cycles / self.params.max_cpu_hz
        return (self.weights.queuing * self.params.epoch_seconds * self.horizon
                - self.weights.delay * d_cap)

    def knapsack_instance(self) -> KnapsackInstance:
        return KnapsackInstance(
            utilities=(self.task_value,) * self.n_tasks,
            energy_costs=(self.unit_cost,) * self.n_tasks,
            budget=self.m_units,
        )

    def make_env(self, gain_rng, arrival_rng) -> DeviceEnv:
        initial = NetworkState(self.n_tasks, self.m_units, 1,
                               tuple(l[0] for l in self.params.gain_levels))
        return DeviceEnv(self.params, self.weights, arrival_rng, gain_rng,
                         initial=initial)


def oracle_policy(scenario: FrozenScenario):
    """Replay of the knapsack optimum: run at the CPU cap while it pays."""
    cost = scenario.unit_cost

    def policy(state: NetworkState) -> JointAction:
        if state.q_task > 0 and state.q_energy >= cost:
            return JointAction(0, cost)
        return JointAction(0, 0)

    return policy


def never_execute_policy(state: NetworkState) -> JointAction:
    return JointAction(0, 0)


def agent_policy(agent: ddqn.DDQNAgent, params: SystemParams):
    """Pure greedy (no exploration) action choice of a trained agent."""

    def policy(state: NetworkState) -> JointAction:
        feats = ddqn.encode_state(state, params)
        mask = ddqn.valid_action_mask(state, params, local_only=True)
        q = qnet.forward(agent.current, feats)
        q = np.where(mask, q, -np.inf)
        return ddqn.decode_action(int(np.argmax(q)), params)

    return policy


def special_case_env_check(policy, scenario: FrozenScenario,
                           gain_rng=None, arrival_rng=None) -> float:
    """Share of the knapsack optimum a policy collects in the frozen scenario.

    The score credits each completed task with the instance's per-task
    value, so it can never exceed the oracle's optimum.
    """
    if gain_rng is None:
        gain_rng = np.random.default_rng(scenario.seed)
    if arrival_rng is None:
        arrival_rng = np.random.default_rng(scenario.seed + 1)
    env = scenario.make_env(gain_rng, arrival_rng)
    completed = 0
    for _ in range(scenario.horizon):
        outcome = env.advance(policy(env.state))
        completed += 1 if outcome.completed else 0
    optimum, _ = knapsack_optimal(scenario.knapsack_instance())
    score = completed * scenario.task_value
    if optimum == 0.0:
        return 1.0 if score == 0.0 else 0.0
    return score / optimum


def train_scenario_agent(scenario: FrozenScenario, epochs: int, seed: int,
                         epsilon: float = 0.01) -> ddqn.DDQNAgent:
    """Train a fresh agent on the frozen scenario with periodic refills."""
    init_rng = np.random.default_rng(seed)
    explore_rng = np.random.default_rng(seed + 1)
    replay_rng = np.random.default_rng(seed + 2)
    gain_rng = np.random.default_rng(seed + 3)
    arrival_rng = np.random.default_rng(seed + 4)
    params = scenario.params
    agent = ddqn.new_agent(ddqn.feature_dim(params), params.action_count,
                           init_rng, epsilon=epsilon)
    env = scenario.make_env(gain_rng, arrival_rng)
    for epoch in range(epochs):
        if epoch % scenario.horizon == 0:
            env.refill(scenario.n_tasks, scenario.m_units)
        ddqn.run_device_epoch(env, agent, explore_rng, replay_rng,
                              local_only=True)
    return agent
