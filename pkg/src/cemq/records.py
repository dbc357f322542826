"""Run records: the per-evaluation reward series plus metadata for one
training run, with full-precision CSV/JSON persistence."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field


@dataclass
class RunRecord:
    """Evaluation series and outcome of a single training run.

    ``final_reward`` is the last evaluation mean for completed runs and
    -inf for failed runs (or completed runs that never reached an
    evaluation point); stability aggregation relies on that convention.
    """

    config_hash: str
    mode: str
    schedule: str
    seed: int
    env_name: str
    steps: list[int] = field(default_factory=list)
    eval_means: list[float] = field(default_factory=list)
    eval_returns: list[list[float]] = field(default_factory=list)
    final_reward: float = float("-inf")
    status: str = "completed"
    failure: str = ""


def record_to_csv(record: RunRecord, path) -> None:
    """Write the evaluation series; floats use repr() so values round-trip
    exactly and identical runs produce byte-identical files."""
    episodes = len(record.eval_returns[0]) if record.eval_returns else 0
    header = ["step", "eval_mean"] + [f"ep_{i}" for i in range(episodes)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for step, mean, rets in zip(record.steps, record.eval_means, record.eval_returns):
            writer.writerow([step, repr(mean)] + [repr(r) for r in rets])


def record_meta(record: RunRecord, **extra) -> dict:
    meta = {
        "config_hash": record.config_hash,
        "mode": record.mode,
        "schedule": record.schedule,
        "seed": record.seed,
        "env": record.env_name,
        "status": record.status,
        "failure": record.failure,
        "final_reward": repr(record.final_reward),
    }
    meta.update(extra)
    return meta


def save_record(record: RunRecord, run_dir, **extra_meta) -> None:
    record_to_csv(record, run_dir / "record.csv")
    with open(run_dir / "meta.json", "w") as fh:
        json.dump(record_meta(record, **extra_meta), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_record(run_dir) -> RunRecord:
    with open(run_dir / "meta.json") as fh:
        meta = json.load(fh)
    steps, means, returns = [], [], []
    with open(run_dir / "record.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            steps.append(int(row["step"]))
            means.append(float(row["eval_mean"]))
            eps = [float(v) for k, v in row.items() if k.startswith("ep_")]
            returns.append(eps)
    return RunRecord(
        config_hash=meta["config_hash"],
        mode=meta["mode"],
        schedule=meta["schedule"],
        seed=int(meta["seed"]),
        env_name=meta["env"],
        steps=steps,
        eval_means=means,
        eval_returns=returns,
        final_reward=float(meta["final_reward"]),
        status=meta["status"],
        failure=meta.get("failure", ""),
    )
