"""Experiment front end: single runs with persisted artifacts, seeded
hyperparameter sweeps, stability-curve aggregation, and the inference
runtime benchmark."""

from __future__ import annotations

import csv
import itertools
import multiprocessing
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .agents import AgentConfig, ConfigError, config_hash, train
from .cem import CemConfig, cem_policy
from .envs import EndKind, make_env
from .records import RunRecord, load_record, save_record

OUT_ROOT_ENV_VAR = "CEMQ_OUT_ROOT"

# Sweep axes that expand to several config fields at once. "lr" moves both
# learning rates jointly; "width" sets both hidden layers.
_COMPOUND_AXES = {
    "lr": lambda v: {"q_lr": float(v), "policy_lr": float(v)},
    "width": lambda v: {"hidden_sizes": (int(v), int(v))},
}


def default_out_root() -> Path:
    return Path(os.environ.get(OUT_ROOT_ENV_VAR, "runs"))


# ---------------------------------------------------------------------------
# config file format: one "key = value" line per AgentConfig field


def write_config_file(config: AgentConfig, path) -> None:
    """Write every field as a flat ``key = value`` line; a file written with
    defaults reproduces the benchmark configuration verbatim."""
    with open(path, "w") as fh:
        fh.write("# cemq run configuration\n")
        for key, value in config.to_dict().items():
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            fh.write(f"{key} = {value}\n")


def parse_config_value(field_name: str, raw: str):
    raw = raw.strip()
    if field_name == "hidden_sizes":
        return tuple(int(p) for p in raw.split(",") if p.strip())
    defaults = AgentConfig()
    current = getattr(defaults, field_name)
    if isinstance(current, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{field_name} must be true/false, got {raw!r}")
    if isinstance(current, int):
        return int(float(raw)) if ("e" in raw.lower() or "." in raw) else int(raw)
    if isinstance(current, float):
        return float(raw)
    raise ConfigError(f"cannot parse config field {field_name!r}")


def read_config_file(path) -> AgentConfig:
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in {f.name for f in fields(AgentConfig)}:
                raise ConfigError(f"{path}:{lineno}: unknown config field {key!r}")
            values[key] = parse_config_value(key, raw)
    return AgentConfig.from_dict({**AgentConfig().to_dict(), **{k: v for k, v in values.items()}})


# ---------------------------------------------------------------------------
# single runs


def run_dir_name(env_name: str, mode: str, schedule: str, chash: str, seed: int) -> str:
    return f"{env_name}_{mode}_{schedule}_{chash[:10]}_s{seed}"


def run_single(config: AgentConfig, mode: str, schedule: str, seed: int, out_dir,
               env_name: str) -> RunRecord:
    """Train one run, persisting record.csv, meta.json, config.cfg, the
    networks, and the replay buffer under a hash-derived directory."""
    config.validate()
    chash = config_hash(config, mode, schedule, env_name)
    run_dir = Path(out_dir) / run_dir_name(env_name, mode, schedule, chash, seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    env = make_env(env_name)
    started = time.perf_counter()
    record = train(env, mode, schedule, config, seed, out_dir=run_dir)
    wall = time.perf_counter() - started
    write_config_file(config, run_dir / "config.cfg")
    save_record(
        record,
        run_dir,
        config=config.to_dict(),
        version=__version__,
        wall_clock_s=wall,
        action_clamp_count=env.clamp_count,
    )
    return record


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SweepSpec:
    """Grid definition: named axes over AgentConfig fields (or the compound
    'lr'/'width' axes), expanded as a full cartesian product, with
    ``seeds_per_cell`` replicates per cell."""

    env_name: str
    mode: str = "cgp"
    schedule: str = "online"
    base: AgentConfig = field(default_factory=AgentConfig)
    axes: dict = field(default_factory=dict)
    seeds_per_cell: int = 4
    master_seed: int = 0

    def validate(self) -> None:
        if self.seeds_per_cell < 1:
            raise ConfigError(f"seeds_per_cell must be >= 1, got {self.seeds_per_cell}")
        field_names = {f.name for f in fields(AgentConfig)}
        for name, values in self.axes.items():
            if name not in field_names and name not in _COMPOUND_AXES:
                raise ConfigError(f"unknown sweep axis {name!r}")
            if not values:
                raise ConfigError(f"sweep axis {name!r} has no values")
        self.base.validate()

    def cells(self) -> list[tuple[dict, dict]]:
        """Cartesian product of axes in sorted-axis order. Each cell is a
        pair (axis value assignment, AgentConfig field overrides)."""
        names = sorted(self.axes)
        out = []
        for combo in itertools.product(*(self.axes[n] for n in names)):
            assignment = dict(zip(names, combo))
            overrides = {}
            for name, value in assignment.items():
                if name in _COMPOUND_AXES:
                    overrides.update(_COMPOUND_AXES[name](value))
                else:
                    overrides[name] = value
            out.append((assignment, overrides))
        return out

    def cell_config(self, overrides: dict) -> AgentConfig:
        return AgentConfig.from_dict({**self.base.to_dict(), **_jsonable(overrides)})


def _jsonable(overrides: dict) -> dict:
    out = {}
    for k, v in overrides.items():
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


def derive_seed(master_seed: int, cell_index: int, replicate: int) -> int:
    """Independent, reproducible per-run seed from (master, cell, replicate)."""
    return int(np.random.SeedSequence([master_seed, cell_index, replicate]).generate_state(1)[0])


def _sweep_worker(args) -> dict:
    env_name, mode, schedule, config_dict, seed, out_dir, cell_index, replicate = args
    config = AgentConfig.from_dict(config_dict)
    try:
        record = run_single(config, mode, schedule, seed, out_dir, env_name)
        status, final = record.status, record.final_reward
        chash = record.config_hash
    except Exception as err:  # a crashed run is recorded, not fatal to the sweep
        status, final = "failed", float("-inf")
        chash = config_hash(config, mode, schedule, env_name)
        print(f"run cell={cell_index} rep={replicate} crashed: {err}")
    return {
        "cell_index": cell_index,
        "replicate": replicate,
        "seed": seed,
        "config_hash": chash,
        "status": status,
        "final_reward": repr(final),
        "run_dir": run_dir_name(env_name, mode, schedule, chash, seed),
    }


def run_sweep(spec: SweepSpec, parallelism: int, out_dir) -> list[RunRecord]:
    """Execute every cell x replicate exactly once and merge the outcomes
    into ``index.csv``. Individual failures are recorded and the sweep
    continues."""
    spec.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = spec.cells()
    jobs = []
    for cell_index, (_, overrides) in enumerate(cells):
        config = spec.cell_config(overrides)
        for replicate in range(spec.seeds_per_cell):
            seed = derive_seed(spec.master_seed, cell_index, replicate)
            jobs.append(
                (spec.env_name, spec.mode, spec.schedule, config.to_dict(), seed,
                 str(out_dir), cell_index, replicate)
            )
    print(f"sweep: {len(cells)} cells x {spec.seeds_per_cell} seeds = {len(jobs)} runs")

    if parallelism <= 1:
        rows = [_sweep_worker(job) for job in jobs]
    else:
        # One BLAS thread per worker; runs, not matrices, carry the parallelism.
        saved = os.environ.get("OMP_NUM_THREADS")
        os.environ["OMP_NUM_THREADS"] = "1"
        try:
            ctx = multiprocessing.get_context("spawn")
            with ProcessPoolExecutor(max_workers=parallelism, mp_context=ctx) as pool:
                rows = list(pool.map(_sweep_worker, jobs))
        finally:
            if saved is None:
                del os.environ["OMP_NUM_THREADS"]
            else:
                os.environ["OMP_NUM_THREADS"] = saved

    axis_names = sorted(spec.axes)
    with open(out_dir / "index.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["cell_index", "replicate", "seed", "config_hash", "status", "final_reward", "run_dir"]
            + [f"ax_{n}" for n in axis_names]
        )
        for row in rows:
            assignment = cells[row["cell_index"]][0]
            writer.writerow(
                [row["cell_index"], row["replicate"], row["seed"], row["config_hash"],
                 row["status"], row["final_reward"], row["run_dir"]]
                + [assignment[n] for n in axis_names]
            )
    return [
        load_record(out_dir / row["run_dir"])
        for row in rows
        if (out_dir / row["run_dir"] / "meta.json").exists()
    ]


# ---------------------------------------------------------------------------
# stability curves


def stability_curve(records: list[RunRecord], reward_levels) -> list[tuple[float, float]]:
    """Fraction of runs whose final reward reaches each level. Failed runs
    count as -inf. Output is non-increasing in the level."""
    if not records:
        raise ValueError("stability_curve needs at least one record")
    finals = np.array(
        [r.final_reward if r.status == "completed" else float("-inf") for r in records]
    )
    levels = sorted(float(l) for l in reward_levels)
    return [(level, float(np.mean(finals >= level))) for level in levels]


def stability_curve_to_csv(curve, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["reward_level", "fraction"])
        for level, fraction in curve:
            writer.writerow([repr(level), repr(fraction)])


# ---------------------------------------------------------------------------
# runtime benchmark


def time_policy_episodes(env, policy_fn, episodes: int, seed: int, warmup: int = 1) -> float:
    """Mean wall-clock seconds per full episode for one policy."""
    children = np.random.SeedSequence(seed).spawn(warmup + episodes)
    times = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        obs = env.reset(rng)
        start = time.perf_counter()
        while True:
            result = env.step(policy_fn(obs))
            obs = result.next_observation
            if result.end_kind != EndKind.NOT_DONE:
                break
        if i >= warmup:
            times.append(time.perf_counter() - start)
    return float(np.mean(times))


def runtime_bench(env, policies: dict, episodes: int, seed: int = 0) -> list[tuple[str, float]]:
    """Time each named policy callable; returns (name, mean seconds/episode)
    rows in the given order."""
    if episodes < 1:
        raise ValueError(f"episodes must be >= 1, got {episodes}")
    return [
        (name, time_policy_episodes(env, fn, episodes, seed))
        for name, fn in policies.items()
    ]


def build_bench_policies(env, q_net, distilled: dict, cem_iterations=(2, 4),
                         cem_samples: int = 64, cem_elites: int = 6, seed: int = 0) -> dict:
    """Standard benchmark lineup: uniform-random, CEM at each iteration
    count over ``q_net``, then each distilled policy network."""
    act_dim = env.spec.action_dim
    rng = np.random.default_rng(seed)
    policies = {"random": lambda obs: rng.uniform(-1.0, 1.0, act_dim)}

    def q_fn(states, actions):
        return q_net.forward(np.concatenate([states, actions], axis=1))[:, 0]

    for n_iter in cem_iterations:
        cfg = CemConfig(iterations=n_iter, samples=cem_samples, elites=cem_elites, action_dim=act_dim)
        cem_rng = np.random.default_rng(seed + n_iter)
        policies[f"cem-{n_iter}"] = (
            lambda obs, _cfg=cfg, _rng=cem_rng: cem_policy(obs, q_fn, _cfg, _rng)
        )
    for name, net in distilled.items():
        policies[name] = lambda obs, _net=net: _net.forward(obs[None])[0]
    return policies


def bench_to_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "mean_seconds_per_episode"])
        for name, seconds in rows:
            writer.writerow([name, repr(seconds)])
