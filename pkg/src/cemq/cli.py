"""Command-line front end: train / eval / sweep / stability / bench.

Config flags mirror AgentConfig field names (``--q-lr``, ``--batch-size``,
...). A run with no flags uses the benchmark defaults. Output root comes
from --out or the CEMQ_OUT_ROOT environment variable.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .agents import MODES, SCHEDULES, AgentConfig, ConfigError, evaluate
from .cem import CemConfig, cem_policy
from .envs import env_names, make_env
from .harness import (
    SweepSpec,
    bench_to_csv,
    build_bench_policies,
    default_out_root,
    parse_config_value,
    read_config_file,
    run_single,
    run_sweep,
    runtime_bench,
    stability_curve,
    stability_curve_to_csv,
)
from .nets import load_dense_net
from .records import load_record


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config overrides (AgentConfig fields)")
    for f in fields(AgentConfig):
        flag = "--" + f.name.replace("_", "-")
        group.add_argument(
            flag,
            dest=f.name,
            default=None,
            metavar="V",
            help=f"override {f.name} (default {f.default!r})",
        )
    parser.add_argument("--config", default=None, metavar="FILE",
                        help="key = value config file; flags override it")


def _config_from_args(args) -> AgentConfig:
    base = read_config_file(args.config) if args.config else AgentConfig()
    merged = base.to_dict()
    for f in fields(AgentConfig):
        raw = getattr(args, f.name, None)
        if raw is not None:
            value = parse_config_value(f.name, raw)
            merged[f.name] = list(value) if isinstance(value, tuple) else value
    return AgentConfig.from_dict(merged)


def _cmd_train(args) -> int:
    config = _config_from_args(args)
    record = run_single(config, args.mode, args.schedule, args.seed, args.out, args.env)
    print(f"status: {record.status}")
    if record.failure:
        print(f"failure: {record.failure}")
    print(f"config_hash: {record.config_hash}")
    print(f"evaluations: {len(record.steps)}")
    print(f"final_reward: {record.final_reward}")
    return 0


def _cmd_eval(args) -> int:
    run_dir = Path(args.run_dir)
    record = load_record(run_dir)
    env = make_env(record.env_name)
    if args.use_cem:
        q_net = load_dense_net(run_dir / "q1.npz")
        cfg = CemConfig(action_dim=env.spec.action_dim)
        rng = np.random.default_rng(args.seed)

        def q_fn(states, actions):
            return q_net.forward(np.concatenate([states, actions], axis=1))[:, 0]

        policy_fn = lambda obs: cem_policy(obs, q_fn, cfg, rng)
    else:
        policy_path = run_dir / "policy.npz"
        if not policy_path.exists():
            raise ConfigError(f"{policy_path} not found (cem-mode run? try --use-cem)")
        net = load_dense_net(policy_path)
        policy_fn = lambda obs: net.forward(obs[None])[0]
    mean, returns = evaluate(env, policy_fn, args.episodes, args.seed)
    print(f"mean_return: {mean}")
    for i, r in enumerate(returns):
        print(f"episode_{i}: {r}")
    return 0


def _parse_axis(spec_text: str) -> tuple[str, list]:
    if "=" not in spec_text:
        raise ConfigError(f"axis must look like name=v1,v2,... got {spec_text!r}")
    name, raw = spec_text.split("=", 1)
    name = name.strip()
    parts = [p for p in raw.split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"axis {name!r} has no values")
    if name == "lr":
        return name, [float(p) for p in parts]
    if name == "width":
        return name, [int(p) for p in parts]
    return name, [parse_config_value(name, p) for p in parts]


def _cmd_sweep(args) -> int:
    axes = dict(_parse_axis(a) for a in args.axis or [])
    spec = SweepSpec(
        env_name=args.env,
        mode=args.mode,
        schedule=args.schedule,
        base=_config_from_args(args),
        axes=axes,
        seeds_per_cell=args.seeds,
        master_seed=args.master_seed,
    )
    records = run_sweep(spec, args.parallelism, args.out)
    completed = sum(r.status == "completed" for r in records)
    print(f"completed: {completed}/{len(records)}")
    print(f"index: {Path(args.out) / 'index.csv'}")
    return 0


def _cmd_stability(args) -> int:
    sweep_dir = Path(args.sweep_dir)
    index = sweep_dir / "index.csv"
    if not index.exists():
        raise ConfigError(f"{index} not found")
    import csv as _csv

    records = []
    with open(index, newline="") as fh:
        for row in _csv.DictReader(fh):
            run_dir = sweep_dir / row["run_dir"]
            if (run_dir / "meta.json").exists():
                records.append(load_record(run_dir))
    if args.levels:
        levels = [float(p) for p in args.levels.split(",") if p.strip()]
    else:
        finals = [r.final_reward for r in records if np.isfinite(r.final_reward)]
        if not finals:
            raise ConfigError("no finite final rewards to derive levels from; pass --levels")
        levels = list(np.linspace(min(finals), max(finals), args.num_levels))
    curve = stability_curve(records, levels)
    for level, fraction in curve:
        print(f"{level:.6g}\t{fraction:.4f}")
    if args.out:
        stability_curve_to_csv(curve, args.out)
        print(f"wrote {args.out}")
    return 0


def _cmd_bench(args) -> int:
    env = make_env(args.env)
    q_path = Path(args.q)
    if not q_path.exists():
        raise ConfigError(f"Q-network file {q_path} not found")
    distilled = {}
    for item in args.policy or []:
        if "=" not in item:
            raise ConfigError(f"--policy must look like name=path, got {item!r}")
        name, path = item.split("=", 1)
        if not Path(path).exists():
            raise ConfigError(f"policy file {path} not found")
        distilled[name.strip()] = load_dense_net(path)
    iterations = tuple(int(p) for p in args.iterations.split(",") if p.strip())
    policies = build_bench_policies(
        env, load_dense_net(q_path), distilled, cem_iterations=iterations, seed=args.seed
    )
    rows = runtime_bench(env, policies, args.episodes, seed=args.seed)
    for name, seconds in rows:
        print(f"{name}\t{seconds:.6f} s/episode")
    if args.out:
        bench_to_csv(rows, args.out)
        print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cemq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training job")
    p_train.add_argument("--env", required=True, choices=env_names())
    p_train.add_argument("--mode", default="cgp", choices=MODES)
    p_train.add_argument("--schedule", default="online", choices=SCHEDULES)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--out", default=default_out_root(), type=Path)
    _add_config_flags(p_train)
    p_train.set_defaults(fn=_cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a saved run's policy")
    p_eval.add_argument("--run-dir", required=True)
    p_eval.add_argument("--episodes", type=int, default=5)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--use-cem", action="store_true",
                        help="evaluate the CEM policy over the saved critic instead")
    p_eval.set_defaults(fn=_cmd_eval)

    p_sweep = sub.add_parser("sweep", help="run a hyperparameter grid")
    p_sweep.add_argument("--env", required=True, choices=env_names())
    p_sweep.add_argument("--mode", default="cgp", choices=MODES)
    p_sweep.add_argument("--schedule", default="online", choices=SCHEDULES)
    p_sweep.add_argument("--axis", action="append", metavar="NAME=V1,V2",
                         help="grid axis; 'lr' and 'width' are compound axes")
    p_sweep.add_argument("--seeds", type=int, default=4)
    p_sweep.add_argument("--master-seed", type=int, default=0)
    p_sweep.add_argument("--parallelism", type=int, default=1)
    p_sweep.add_argument("--out", default=default_out_root() / "sweep", type=Path)
    _add_config_flags(p_sweep)
    p_sweep.set_defaults(fn=_cmd_sweep)

    p_stab = sub.add_parser("stability", help="survival curve over a sweep's finals")
    p_stab.add_argument("--sweep-dir", required=True)
    p_stab.add_argument("--levels", default=None, metavar="V1,V2,...")
    p_stab.add_argument("--num-levels", type=int, default=20)
    p_stab.add_argument("--out", default=None, metavar="CSV")
    p_stab.set_defaults(fn=_cmd_stability)

    p_bench = sub.add_parser("bench", help="seconds/episode for random, CEM, distilled policies")
    p_bench.add_argument("--env", required=True, choices=env_names())
    p_bench.add_argument("--q", required=True, help="saved critic .npz")
    p_bench.add_argument("--policy", action="append", metavar="NAME=PATH",
                         help="distilled policy .npz (repeatable)")
    p_bench.add_argument("--iterations", default="2,4")
    p_bench.add_argument("--episodes", type=int, default=10)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--out", default=None, metavar="CSV")
    p_bench.set_defaults(fn=_cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
