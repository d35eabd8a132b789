"""Metrics schema shared by every training mode.

One row per simulated device-epoch, fixed column order; the CSV layout is
the stability contract consumed by downstream analysis.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

CSV_COLUMNS = (
    "round", "epoch", "device_id", "mode", "utility", "exec_delay",
    "queuing", "drops", "payment", "energy_spent", "offloaded", "epsilon",
    "train_loss",
)

SUMMARY_KEYS = (
    "mode", "final_window_mean_utility", "final_window_std",
    "energy_per_epoch_mean", "drops_per_epoch_mean",
)


def make_row(round_idx: int, epoch: int, device_id: int, mode: str, outcome,
             action, epsilon: float, train_loss) -> dict:
    offloaded = 1 if (action.offload > 0 and action.energy > 0) else 0
    return {
        "round": round_idx,
        "epoch": epoch,
        "device_id": device_id,
        "mode": mode,
        "utility": outcome.utility,
        "exec_delay": outcome.exec_delay,
        "queuing": outcome.queuing,
        "drops": outcome.drops,
        "payment": outcome.payment,
        "energy_spent": outcome.energy_spent,
        "offloaded": offloaded,
        "epsilon": epsilon,
        "train_loss": train_loss,
    }


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


class MetricsWriter:
    """Buffered append-only CSV writer with deterministic formatting."""

    def __init__(self, path: Path, flush_interval: int = 1000):
        self.path = Path(path)
        self.flush_interval = max(1, flush_interval)
        self.rows: list = []
        self._pending: list = []
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(CSV_COLUMNS)

    def add(self, row: dict) -> None:
        self.rows.append(row)
        self._pending.append([_cell(row[c]) for c in CSV_COLUMNS])
        if len(self._pending) >= self.flush_interval:
            self._flush()

    def _flush(self) -> None:
        self._writer.writerows(self._pending)
        self._pending.clear()

    def close(self) -> None:
        self._flush()
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def final_window(rows: list, fraction: float = 0.2) -> list:
    """Rows whose epoch falls in the trailing ``fraction`` of the epoch range."""
    if not rows:
        return []
    last_epoch = max(r["epoch"] for r in rows)
    cutoff = math.floor((last_epoch + 1) * (1.0 - fraction))
    return [r for r in rows if r["epoch"] >= cutoff]


def summarize(rows: list, mode: str) -> dict:
    """Summary statistics over the final window of a run's rows."""
    window = final_window(rows)
    utilities = [r["utility"] for r in window]
    n = len(utilities)
    mean = sum(utilities) / n if n else 0.0
    var = sum((u - mean) ** 2 for u in utilities) / n if n else 0.0
    energy = sum(r["energy_spent"] for r in window) / n if n else 0.0
    drops = sum(r["drops"] for r in window) / n if n else 0.0
    return {
        "mode": mode,
        "final_window_mean_utility": mean,
        "final_window_std": math.sqrt(var),
        "energy_per_epoch_mean": energy,
        "drops_per_epoch_mean": drops,
    }


def window_mean(rows: list, key: str, fraction: float = 0.2) -> float:
    window = final_window(rows, fraction)
    return sum(r[key] for r in window) / len(window) if window else 0.0


def write_summary(summary: dict, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")


def read_rows(path: Path) -> list:
    """Parse a metrics CSV back into typed row dicts."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for raw in csv.DictReader(fh):
            out.append({
                "round": int(raw["round"]),
                "epoch": int(raw["epoch"]),
                "device_id": int(raw["device_id"]),
                "mode": raw["mode"],
                "utility": float(raw["utility"]),
                "exec_delay": float(raw["exec_delay"]),
                "queuing": int(raw["queuing"]),
                "drops": int(raw["drops"]),
                "payment": float(raw["payment"]),
                "energy_spent": int(raw["energy_spent"]),
                "offloaded": int(raw["offloaded"]),
                "epsilon": float(raw["epsilon"]),
                "train_loss": float(raw["train_loss"]) if raw["train_loss"] else None,
            })
    return out
