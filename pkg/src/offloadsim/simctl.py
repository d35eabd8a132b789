"""Experiment orchestration: config files, RNG streams, run/sweep/compare.

Configs are JSON with one block per subsystem; unknown keys are rejected
so typos fail loudly. Every random draw in a run comes from a counter-based
stream derived from (seed, device id, purpose), which makes full runs
reproducible bit for bit.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, ddqn, federation, metrics, qnet
from .federation import DeviceRuntime, FederationConfig
from .sysmodel import DeviceEnv, EnergyArrival, SystemParams, UtilityWeights


class ConfigError(ValueError):
    """Invalid experiment configuration; message lists every violation."""


class NumericalFailure(RuntimeError):
    """Training produced non-finite values; the run was aborted."""


MODES = ("fl", "centralized", "greedy")

_SYSTEM_KEYS = {
    "N": "num_edge_nodes",
    "delta": "epoch_seconds",
    "W": "bandwidth_hz",
    "mu": "task_bits",
    "nu": "task_cycles",
    "tau": "switched_cap",
    "zeta": "activity_factor",
    "f_max": "max_cpu_hz",
    "p_max": "max_tx_power",
    "sigma": "handover_seconds",
    "d_s": "server_exec_seconds",
    "pi": "price_per_second",
    "q_t_max": "task_queue_cap",
    "q_e_max": "energy_queue_cap",
    "energy_unit": "energy_unit_joules",
    "p_t": "task_arrival_prob",
    "I": "interference_watts",
}
_WEIGHT_KEYS = ("delay", "queuing", "drop", "payment")
_AGENT_KEYS = ("epsilon", "gamma", "batch_size", "buffer_capacity",
               "min_buffer", "target_sync", "learning_rate")
_FED_KEYS = ("rounds", "devices_per_round", "local_epochs",
             "checkpoint_interval")
_TOP_KEYS = ("mode", "seed", "devices", "epochs", "output", "flush_interval",
             "system", "weights", "agent", "federation", "scenario")
_SCENARIO_KEYS = ("tasks", "units", "horizon")


@dataclass
class AgentSettings:
    epsilon: float = 0.01
    gamma: float = ddqn.DISCOUNT
    batch_size: int = ddqn.BATCH_SIZE
    buffer_capacity: int = ddqn.REPLAY_CAPACITY
    min_buffer: int = ddqn.MIN_BUFFER
    target_sync: int = ddqn.TARGET_SYNC_INTERVAL
    learning_rate: float = ddqn.LEARNING_RATE


@dataclass
class ScenarioSettings:
    tasks: int = 3
    units: int = 4
    horizon: int = 20


@dataclass
class ExperimentConfig:
    mode: str
    seed: int
    devices: int = 1
    epochs: int = 5000
    output: str | None = None
    flush_interval: int = 1000
    system: SystemParams = field(default_factory=SystemParams)
    weights: UtilityWeights = field(default_factory=UtilityWeights)
    agent: AgentSettings = field(default_factory=AgentSettings)
    federation: FederationConfig = field(default_factory=FederationConfig)
    scenario: ScenarioSettings = field(default_factory=ScenarioSettings)


def _reject_unknown(block: dict, allowed, where: str, problems: list) -> None:
    for key in block:
        if key not in allowed:
            problems.append(f"unknown key {key!r} in {where}")


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a raw config dict and build the typed experiment config."""
    problems: list = []
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    _reject_unknown(data, _TOP_KEYS, "config", problems)

    mode = data.get("mode")
    if mode not in MODES:
        problems.append(f"mode must be one of {MODES}, got {mode!r}")
    if "seed" not in data:
        problems.append("seed is required (runs never default to wall-clock)")
    elif not isinstance(data["seed"], int):
        problems.append("seed must be an integer")

    sys_block = data.get("system", {})
    _reject_unknown(
        sys_block,
        set(_SYSTEM_KEYS) | {"energy_arrival", "gain_scales", "gain_levels"},
        "system", problems,
    )
    sys_kwargs = {}
    for key, fname in _SYSTEM_KEYS.items():
        if key in sys_block:
            sys_kwargs[fname] = sys_block[key]
    if "energy_arrival" in sys_block:
        ea = sys_block["energy_arrival"]
        _reject_unknown(ea, ("kind", "rate"), "system.energy_arrival", problems)
        try:
            sys_kwargs["energy_arrival"] = EnergyArrival(**ea)
        except (TypeError, ValueError) as exc:
            problems.append(f"system.energy_arrival: {exc}")
    if "gain_levels" in sys_block and "gain_scales" in sys_block:
        problems.append("give gain_levels or gain_scales, not both")
    if "gain_levels" in sys_block:
        sys_kwargs["gain_levels"] = tuple(
            tuple(float(g) for g in ladder) for ladder in sys_block["gain_levels"]
        )
    elif "gain_scales" in sys_block:
        n = sys_kwargs.get("num_edge_nodes", 3)
        from .sysmodel import default_gain_levels
        try:
            sys_kwargs["gain_levels"] = default_gain_levels(
                n, tuple(float(s) for s in sys_block["gain_scales"])
            )
        except ValueError as exc:
            problems.append(f"system.gain_scales: {exc}")

    weights_block = data.get("weights", {})
    _reject_unknown(weights_block, _WEIGHT_KEYS, "weights", problems)
    agent_block = data.get("agent", {})
    _reject_unknown(agent_block, _AGENT_KEYS, "agent", problems)
    fed_block = data.get("federation", {})
    _reject_unknown(fed_block, _FED_KEYS, "federation", problems)
    scen_block = data.get("scenario", {})
    _reject_unknown(scen_block, _SCENARIO_KEYS, "scenario", problems)

    if mode == "fl" and "federation" not in data:
        problems.append("mode 'fl' requires a federation block")
    if mode in ("centralized", "greedy") and "epochs" not in data:
        problems.append(f"mode {mode!r} requires an epochs count")

    devices = data.get("devices", 1)
    if not isinstance(devices, int) or devices < 1:
        problems.append("devices must be an integer >= 1")
    epochs = data.get("epochs", 5000)
    if not isinstance(epochs, int) or epochs < 0:
        problems.append("epochs must be an integer >= 0")

    if problems:
        raise ConfigError("; ".join(problems))

    try:
        system = SystemParams(**sys_kwargs)
        weights = UtilityWeights(**weights_block)
        agent = AgentSettings(**agent_block)
        fed = FederationConfig(**fed_block)
        scenario = ScenarioSettings(**scen_block)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    return ExperimentConfig(
        mode=mode, seed=data["seed"], devices=devices, epochs=epochs,
        output=data.get("output"), flush_interval=data.get("flush_interval", 1000),
        system=system, weights=weights, agent=agent, federation=fed,
        scenario=scenario,
    )


def load_config(path) -> ExperimentConfig:
    raw = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(data)


def set_config_value(data: dict, dotted_path: str, value) -> dict:
    """Return a copy of the raw config dict with one dotted key replaced."""
    out = copy.deepcopy(data)
    node = out
    parts = dotted_path.split(".")
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"config path {dotted_path!r} does not resolve")
        node = node[part]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ConfigError(f"config path {dotted_path!r} does not resolve")
    node[parts[-1]] = value
    return out


def derive_stream(seed: int, device_id: int, purpose: str) -> np.random.Generator:
    """Independent counter-based stream keyed on (seed, device, purpose)."""
    digest = hashlib.sha256(f"{seed}|{device_id}|{purpose}".encode()).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# Run drivers
# ---------------------------------------------------------------------------

def _build_env(cfg: ExperimentConfig, device_id: int) -> DeviceEnv:
    return DeviceEnv(
        cfg.system, cfg.weights,
        arrival_rng=derive_stream(cfg.seed, device_id, "arrivals"),
        gain_rng=derive_stream(cfg.seed, device_id, "gains"),
    )


def _agent_from(cfg: ExperimentConfig, params: qnet.QNetParams) -> ddqn.DDQNAgent:
    a = cfg.agent
    return ddqn.DDQNAgent(
        current=qnet.copy_params(params), target=qnet.copy_params(params),
        epsilon=a.epsilon, gamma=a.gamma, learning_rate=a.learning_rate,
        batch_size=a.batch_size, min_buffer=a.min_buffer,
        sync_interval=a.target_sync,
        buffer=ddqn.ReplayBuffer(a.buffer_capacity),
    )


def _server_init(cfg: ExperimentConfig) -> qnet.QNetParams:
    return qnet.init(
        ddqn.feature_dim(cfg.system), cfg.system.action_count,
        derive_stream(cfg.seed, 0, "server_init"),
    )


def _check_finite(params: qnet.QNetParams) -> None:
    for name in qnet.LAYER_ORDER:
        if not np.all(np.isfinite(getattr(params, name))):
            raise NumericalFailure(f"non-finite weights in layer {name}")


def run(cfg: ExperimentConfig, out_dir) -> dict:
    """Execute one experiment end to end; returns the summary dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    writer = metrics.MetricsWriter(out / "metrics.csv", cfg.flush_interval)
    try:
        if cfg.mode == "fl":
            server = _server_init(cfg)
            devices = {
                did: DeviceRuntime(
                    device_id=did,
                    env=_build_env(cfg, did),
                    agent=_agent_from(cfg, server),
                    explore_rng=derive_stream(cfg.seed, did, "explore"),
                    replay_rng=derive_stream(cfg.seed, did, "replay"),
                )
                for did in range(1, cfg.devices + 1)
            }
            ckpt_dir = out / "checkpoints"

            def checkpoint(round_idx, params):
                ckpt_dir.mkdir(exist_ok=True)
                path = ckpt_dir / f"round_{round_idx + 1:05d}.json"
                path.write_text(qnet.serialize(params), encoding="utf-8")

            server, reports = federation.run_training(
                devices, server, cfg.federation,
                derive_stream(cfg.seed, 0, "selection"),
                sink=writer.add, checkpoint_cb=checkpoint,
            )
            _check_finite(server)
            (out / "rounds.json").write_text(json.dumps([
                {
                    "round": r.round_index,
                    "selected": r.selected,
                    "train_counts": r.train_counts,
                    "params_digest": r.params_digest,
                    "mean_utility": r.mean_utility,
                }
                for r in reports
            ], indent=2) + "\n", encoding="utf-8")
            (out / "model.json").write_text(qnet.serialize(server),
                                            encoding="utf-8")
        elif cfg.mode == "centralized":
            agent = _agent_from(cfg, _server_init(cfg))
            envs = {did: _build_env(cfg, did)
                    for did in range(1, cfg.devices + 1)}
            baselines.centralized_train(
                envs, agent, cfg.epochs,
                derive_stream(cfg.seed, 0, "explore"),
                derive_stream(cfg.seed, 0, "replay"),
                sink=writer.add,
            )
            _check_finite(agent.current)
            (out / "model.json").write_text(
                json.dumps(ddqn.checkpoint_payload(agent)), encoding="utf-8")
        else:  # greedy
            for did in range(1, cfg.devices + 1):
                baselines.greedy_rollout(_build_env(cfg, did), cfg.epochs,
                                         device_id=did, sink=writer.add)
        rows = writer.rows
    finally:
        writer.close()
    summary = metrics.summarize(rows, cfg.mode)
    metrics.write_summary(summary, out / "summary.json")
    return summary


def sweep(raw_config: dict, param_path: str, values, reps: int,
          out_dir) -> dict:
    """Repeated seeded runs per parameter value; aggregates final windows."""
    if not values:
        raise ConfigError("sweep needs a non-empty list of values")
    if reps < 1:
        raise ConfigError("sweep needs at least one repetition")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base_seed = raw_config.get("seed", 0)
    slug = param_path.replace(".", "_")
    results = []
    for value in values:
        per_rep = []
        for rep in range(reps):
            varied = set_config_value(raw_config, param_path, value)
            varied["seed"] = base_seed + rep
            cfg = parse_config(varied)
            run_dir = out / f"{slug}_{value}" / f"rep_{rep:03d}"
            run(cfg, run_dir)
            rows = metrics.read_rows(run_dir / "metrics.csv")
            per_rep.append({
                "rep": rep,
                "rows": rows,
                "final_mean": metrics.window_mean(rows, "utility"),
                "payment_mean": metrics.window_mean(rows, "payment"),
                "drops_mean": metrics.window_mean(rows, "drops"),
                "early_mean": _early_mean(rows),
            })
        finals = [r["final_mean"] for r in per_rep]
        mean = sum(finals) / len(finals)
        var = sum((f - mean) ** 2 for f in finals) / len(finals)
        results.append({
            "value": value,
            "reps": reps,
            "final_mean_utility": mean,
            "final_std_utility": float(np.sqrt(var)),
            "payment_mean": sum(r["payment_mean"] for r in per_rep) / reps,
            "drops_mean": sum(r["drops_mean"] for r in per_rep) / reps,
            "early_mean_utility": sum(r["early_mean"] for r in per_rep) / reps,
        })
        _write_curves(out / f"{slug}_{value}" / "utility_curve.csv", per_rep)
    payload = {"param": param_path, "results": results}
    (out / "sweep_summary.json").write_text(json.dumps(payload, indent=2) + "\n",
                                            encoding="utf-8")
    with open(out / "sweep_summary.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write("value,reps,final_mean_utility,final_std_utility,"
                 "payment_mean,drops_mean,early_mean_utility\n")
        for r in results:
            fh.write(",".join(repr(float(r[k])) if isinstance(r[k], float)
                              else str(r[k])
                              for k in ("value", "reps", "final_mean_utility",
                                        "final_std_utility", "payment_mean",
                                        "drops_mean", "early_mean_utility"))
                     + "\n")
    return payload


def _early_mean(rows: list, fraction: float = 0.1) -> float:
    """Mean utility over the leading fraction of the epoch range."""
    if not rows:
        return 0.0
    last = max(r["epoch"] for r in rows)
    cutoff = (last + 1) * fraction
    early = [r["utility"] for r in rows if r["epoch"] < cutoff]
    return sum(early) / len(early) if early else 0.0


def _write_curves(path: Path, per_rep: list) -> None:
    """Per-epoch mean and std of utility across repetitions."""
    by_epoch: dict = {}
    for rec in per_rep:
        rep_epochs: dict = {}
        for row in rec["rows"]:
            rep_epochs.setdefault(row["epoch"], []).append(row["utility"])
        for epoch, us in rep_epochs.items():
            by_epoch.setdefault(epoch, []).append(sum(us) / len(us))
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("epoch,mean_utility,std_utility\n")
        for epoch in sorted(by_epoch):
            vals = by_epoch[epoch]
            m = sum(vals) / len(vals)
            s = (sum((v - m) ** 2 for v in vals) / len(vals)) ** 0.5
            fh.write(f"{epoch},{m!r},{s!r}\n")


def compare(raw_config: dict, modes, out_dir) -> dict:
    """Run several modes on identical seeds and pair up their summaries."""
    seen = []
    for m in modes:
        if m in seen:
            print(f"warning: mode {m!r} listed twice, deduplicated")
        else:
            seen.append(m)
    if len(seen) < 2:
        raise ConfigError("compare needs at least two distinct modes")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = {}
    for m in seen:
        varied = copy.deepcopy(raw_config)
        varied["mode"] = m
        if m == "fl" and "federation" not in varied:
            varied["federation"] = {}
        cfg = parse_config(varied)
        summary = run(cfg, out / m)
        rows = metrics.read_rows(out / m / "metrics.csv")
        summary = dict(summary)
        summary["payment_per_epoch_mean"] = metrics.window_mean(rows, "payment")
        report[m] = summary
    (out / "comparison.json").write_text(json.dumps(report, indent=2) + "\n",
                                         encoding="utf-8")
    with open(out / "comparison.csv", "w", newline="", encoding="utf-8") as fh:
        cols = ("mode", "final_window_mean_utility", "final_window_std",
                "energy_per_epoch_mean", "drops_per_epoch_mean",
                "payment_per_epoch_mean")
        fh.write(",".join(cols) + "\n")
        for m in seen:
            fh.write(",".join(_fmt(report[m][c]) for c in cols) + "\n")
    return report


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def oracle_check(cfg: ExperimentConfig, train_epochs: int, out_dir) -> dict:
    """Frozen-scenario check: knapsack optimum vs replay/myopic/trained ratios."""
    scen = baselines.FrozenScenario(
        params=cfg.system, weights=cfg.weights,
        n_tasks=cfg.scenario.tasks, m_units=cfg.scenario.units,
        horizon=cfg.scenario.horizon, seed=cfg.seed,
    )
    optimum, chosen = baselines.knapsack_optimal(scen.knapsack_instance())
    report = {
        "knapsack_optimum": optimum,
        "chosen_tasks": list(chosen),
        "unit_cost": scen.unit_cost,
        "task_value": scen.task_value,
        "oracle_ratio": baselines.special_case_env_check(
            baselines.oracle_policy(scen), scen),
        "never_execute_ratio": baselines.special_case_env_check(
            baselines.never_execute_policy, scen),
    }
    if train_epochs > 0:
        agent = baselines.train_scenario_agent(scen, train_epochs, cfg.seed,
                                               epsilon=cfg.agent.epsilon)
        report["trained_ratio"] = baselines.special_case_env_check(
            baselines.agent_policy(agent, scen.params), scen)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "oracle.json").write_text(json.dumps(report, indent=2) + "\n",
                                     encoding="utf-8")
    return report
