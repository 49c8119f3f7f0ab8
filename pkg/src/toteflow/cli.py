"""Command-line interface: gen, run, solve, bench, serve, dataset, report."""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .bench import BenchSpec, emit, run_bench
from .domain import SystemKind, load_instance, save_instance
from .engine import STAGES, run_episode, write_episode_log
from .generate import generate, micro_1, preset
from .oracle import export_trajectories, solve_exact
from .policies import POLICY_NAMES, make_policy
from .quotient import build_dataset, save_dataset
from .server import DEFAULT_LISTEN, serve


def _cmd_gen(args) -> int:
    if args.preset == "micro-1":
        inst = micro_1()
    elif args.preset:
        cfg = preset(args.preset, seed=args.seed)
        if args.system:
            cfg = dataclasses.replace(cfg, kind=SystemKind(args.system))
        if args.horizon is not None:
            cfg = dataclasses.replace(cfg, arrival_horizon=args.horizon)
        inst = generate(cfg)
    else:
        from .generate import InstanceConfig

        required = ("skus", "orders", "robots", "workstations", "totes")
        missing = [f for f in required if getattr(args, f) is None]
        if missing:
            raise SystemExit(f"--preset or all of --{', --'.join(missing)} required")
        cfg = InstanceConfig(
            name=args.name or "custom",
            skus=args.skus,
            orders=args.orders,
            robots=args.robots,
            workstations=args.workstations,
            totes=args.totes,
            kind=SystemKind(args.system) if args.system else SystemKind.MULTI_TOTE_2D,
            seed=args.seed,
            arrival_horizon=args.horizon or 0.0,
        )
        inst = generate(cfg)
    save_instance(inst, args.out)
    print(f"wrote {args.out}")
    return 0


def _policy_kwargs(args) -> dict:
    kw = {}
    if getattr(args, "alpha", None) is not None:
        kw["alpha"] = args.alpha
    if getattr(args, "beta", None) is not None:
        kw["beta"] = args.beta
    if getattr(args, "window", None) is not None:
        kw["window"] = args.window
    return kw


def _cmd_run(args) -> int:
    inst = load_instance(args.infile)
    if args.policy == "oracle":
        from .oracle import replay_trajectory

        result = solve_exact(inst, name=Path(args.infile).stem)
        report, state = replay_trajectory(inst, result.trajectory)
        records = state.records
    else:
        fn = make_policy(args.policy, inst, **_policy_kwargs(args))
        report, records = run_episode(inst, {s: fn for s in STAGES}, seed=args.seed)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    if args.log:
        write_episode_log(records, report, args.log)
        print(f"wrote {args.log}", file=sys.stderr)
    return 0


def _cmd_solve(args) -> int:
    inst = load_instance(args.infile)
    result = solve_exact(inst, node_budget=args.node_budget, name=Path(args.infile).stem)
    payload = {
        "instance_name": result.instance_name,
        "z_star": result.z_star,
        "proved_optimal": result.proved_optimal,
        "nodes_expanded": result.nodes_expanded,
        "trajectory_length": len(result.trajectory),
    }
    Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"wrote {args.out}")
    if args.export_traj:
        n = export_trajectories([result], args.export_traj)
        print(f"wrote {args.export_traj} ({n} steps)")
    return 0


def _cmd_bench(args) -> int:
    spec = BenchSpec.load(args.spec)
    results = run_bench(spec)
    out = args.out or spec.output or "results.csv"
    emit(results, "csv", out)
    print(f"wrote {out}")
    if args.json_out:
        emit(results, "json", args.json_out)
        print(f"wrote {args.json_out}")
    return 0


def _cmd_serve(args) -> int:
    serve(args.listen)
    return 0


def _cmd_dataset(args) -> int:
    records = build_dataset(args.traj)
    save_dataset(records, args.out)
    print(f"wrote {args.out} ({len(records)} records)")
    return 0


def _cmd_report(args) -> int:
    from .report import render_report

    written = render_report(args.infile, args.out_dir)
    for p in written:
        print(f"wrote {p}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="toteflow",
        description="Simulation and decision toolkit for tote-handling "
        "robotic order fulfillment.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate an instance file from a preset or custom counts")
    p.add_argument("--preset", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--system", choices=[k.value for k in SystemKind])
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--name", default=None)
    for field in ("skus", "orders", "robots", "workstations", "totes"):
        p.add_argument(f"--{field}", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_gen)

    p = sub.add_parser("run", help="run one episode under a policy")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--policy", choices=(*POLICY_NAMES, "oracle", "random"), default="csgh")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--log", default=None, help="episode log path (ndjson)")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("solve", help="exact objective on a static instance")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--export-traj", default=None)
    p.add_argument("--node-budget", type=int, default=10_000_000)
    p.set_defaults(fn=_cmd_solve)

    p = sub.add_parser("bench", help="run a policy x instance benchmark spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--json-out", default=None)
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("serve", help="expose the simulator over a socket")
    p.add_argument(
        "--listen",
        default=os.environ.get("TOTEFLOW_LISTEN", DEFAULT_LISTEN),
    )
    p.set_defaults(fn=_cmd_serve)

    p = sub.add_parser("dataset", help="build an abstract-state dataset from trajectories")
    p.add_argument("--traj", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_dataset)

    p = sub.add_parser("report", help="render figures and tables from bench results")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=_cmd_report)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
