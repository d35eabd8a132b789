"""Round-based federated training of the per-device agents.

Each round: sample participating devices, push the server weights down,
let every participant act and train locally for a fixed number of epochs,
then replace the server weights with the training-count-weighted average
of the uploads. Only weight payloads and counts ever leave a device.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import ddqn, metrics, qnet
from .sysmodel import DeviceEnv


@dataclass
class FederationConfig:
    rounds: int = 100
    devices_per_round: int | None = None  # None selects every device
    local_epochs: int = 50
    checkpoint_interval: int = 0

    def __post_init__(self):
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.local_epochs < 0:
            raise ValueError("local_epochs must be >= 0")


@dataclass
class DeviceRuntime:
    """One device's environment, agent and private RNG streams."""

    device_id: int
    env: DeviceEnv
    agent: ddqn.DDQNAgent
    explore_rng: np.random.Generator
    replay_rng: np.random.Generator


@dataclass
class RoundReport:
    round_index: int
    selected: list
    train_counts: dict
    params_digest: str
    mean_utility: dict = field(default_factory=dict)


def select_devices(device_ids, m: int, rng: np.random.Generator) -> list:
    """Uniform sample of m device ids without replacement, ascending order."""
    ids = sorted(device_ids)
    if m > len(ids):
        raise ValueError("cannot select more devices than exist")
    picked = rng.choice(len(ids), size=m, replace=False)
    return sorted(ids[i] for i in picked)


def aggregate(uploads) -> qnet.QNetParams:
    """Training-count-weighted element-wise average of uploaded parameters.

    Uploads are (params, count) pairs, already in ascending device order;
    summation follows that order so results are reproducible.
    """
    uploads = list(uploads)
    if not uploads:
        raise ValueError("need at least one upload")
    for p, count in uploads:
        if count <= 0:
            raise ValueError("every upload needs a positive training count")
        for name in qnet.LAYER_ORDER:
            if getattr(p, name).shape != getattr(uploads[0][0], name).shape:
                raise ValueError("uploaded parameter shapes differ")
    if len(uploads) == 1:
        return qnet.copy_params(uploads[0][0])
    total = float(sum(count for _, count in uploads))
    weights = [count / total for _, count in uploads]
    acc = {name: np.zeros_like(getattr(uploads[0][0], name))
           for name in qnet.LAYER_ORDER}
    for (p, _), w in zip(uploads, weights):
        for name in qnet.LAYER_ORDER:
            acc[name] += w * getattr(p, name)
    return qnet.QNetParams(**acc)


def params_digest(params: qnet.QNetParams) -> str:
    return hashlib.sha256(qnet.serialize(params).encode()).hexdigest()


def _local_training(device: DeviceRuntime, epochs: int, round_index: int,
                    mode: str, sink) -> None:
    for _ in range(epochs):
        outcome, loss, idx = ddqn.run_device_epoch(
            device.env, device.agent, device.explore_rng, device.replay_rng
        )
        if sink is not None:
            action = ddqn.decode_action(idx, device.env.params)
            sink(metrics.make_row(
                round_index, device.env.epoch - 1, device.device_id, mode,
                outcome, action, device.agent.epsilon, loss,
            ))


def run_round(round_index: int, devices: dict, server: qnet.QNetParams,
              config: FederationConfig, selection_rng: np.random.Generator,
              sink=None, mode: str = "fl"):
    """One federation round; returns (new server params, RoundReport)."""
    m = config.devices_per_round or len(devices)
    selected = select_devices(devices.keys(), m, selection_rng)
    uploads = []
    counts = {}
    mean_utility = {}
    for did in selected:
        device = devices[did]
        device.agent.current = qnet.copy_params(server)
        device.agent.target = qnet.copy_params(server)
        device.agent.train_count = 0
        utilities = []

        def tap(row, _u=utilities):
            _u.append(row["utility"])
            if sink is not None:
                sink(row)

        _local_training(device, config.local_epochs, round_index, mode, tap)
        counts[did] = device.agent.train_count
        mean_utility[did] = (
            sum(utilities) / len(utilities) if utilities else 0.0
        )
        finite = all(np.all(np.isfinite(getattr(device.agent.current, n)))
                     for n in qnet.LAYER_ORDER)
        if device.agent.train_count > 0 and finite:
            uploads.append((qnet.copy_params(device.agent.current),
                            device.agent.train_count))
    if uploads:
        server = aggregate(uploads)
    report = RoundReport(
        round_index=round_index,
        selected=selected,
        train_counts=counts,
        params_digest=params_digest(server),
        mean_utility=mean_utility,
    )
    return server, report


def run_training(devices: dict, server: qnet.QNetParams,
                 config: FederationConfig, selection_rng: np.random.Generator,
                 sink=None, checkpoint_cb=None):
    """Full federated run; returns (final server params, round reports)."""
    reports = []
    for t in range(config.rounds):
        server, report = run_round(t, devices, server, config, selection_rng,
                                   sink)
        reports.append(report)
        if (checkpoint_cb is not None and config.checkpoint_interval > 0
                and (t + 1) % config.checkpoint_interval == 0):
            checkpoint_cb(t, server)
    return server, reports
