"""Command-line interface: prep, train-imitation, eval-imitation, train."""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from .imitation import ImitationBundle, evaluate_gap
from .models import PolicyConfig
from .mappo import AgentBundle, MappoParams
from . import imitation, mappo, pipeline, wire


def _cmd_prep(args) -> int:
    dataset = pipeline.prepare_imitation_data(
        Path(args.out_dir), preset=args.preset,
        train_seeds=range(args.train_start, args.train_start + args.train_count),
    )
    print(f"wrote {dataset}")
    return 0


def _cmd_train_imitation(args) -> int:
    config = PolicyConfig(epochs=args.epochs, seed=args.seed)
    bundle = imitation.train(args.data, config)
    bundle.save(args.out)
    metrics = {
        "fallback": bundle.fallback,
        "final_losses": {s: c[-1] for s, c in bundle.loss_curves.items()},
    }
    Path(args.out).with_suffix(".metrics.json").write_text(
        json.dumps(metrics, indent=2, sort_keys=True) + "\n"
    )
    print(f"wrote {args.out}")
    return 0


def _cmd_eval_imitation(args) -> int:
    bundle = ImitationBundle.load(args.model)
    cases = pipeline.prepare_eval_cases(
        Path(args.work_dir), preset=args.preset,
        eval_seeds=range(args.eval_start, args.eval_start + args.eval_count),
        with_trajectories=args.per_stage,
    )
    if args.env:
        results = evaluate_gap(bundle, cases, args.env, per_stage=args.per_stage)
    else:
        with wire.SimulatorServer() as server:
            results = evaluate_gap(bundle, cases, server.address, per_stage=args.per_stage)
    print(json.dumps(results, indent=2, sort_keys=True))
    if args.out:
        Path(args.out).write_text(json.dumps(results, indent=2, sort_keys=True) + "\n")
    return 0


def _cmd_train(args) -> int:
    imit = ImitationBundle.load(args.warm_start) if args.warm_start else None
    params = MappoParams(seed=args.seed)
    if imit is not None:
        bundle = AgentBundle.from_imitation(imit, params)
    else:
        bundle = AgentBundle.cold(PolicyConfig(seed=args.seed), params)

    if args.instance == "scaled":
        paths = [pipeline.scaled_l1_instance(Path(args.work_dir), s) for s in range(8)]
        reset_fn = lambda k: pipeline.inline_reset_kwargs(paths[k % len(paths)])
    else:
        reset_fn = lambda k: {"preset": args.instance, "seed": k}

    def run(address: str) -> dict:
        curves = mappo.train(
            address, bundle, args.mode,
            iterations=args.iterations,
            episodes_per_iter=args.episodes_per_iter,
            reset_kwargs_fn=reset_fn,
            seed=args.seed,
        )
        curves["eval_mean_z"] = mappo.evaluate(address, bundle, 10, reset_fn)
        return curves

    if args.env:
        curves = run(args.env)
    else:
        with wire.SimulatorServer() as server:
            curves = run(server.address)
    bundle.save(args.out)
    Path(args.out).with_suffix(".curves.json").write_text(
        json.dumps(curves, indent=2, sort_keys=True) + "\n"
    )
    print(json.dumps({"eval_mean_z": curves["eval_mean_z"], "mode": args.mode}))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="totelearn", description="Learned policies for the toteflow environment."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prep", help="generate oracle trajectories and the dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--preset", default="S-1")
    p.add_argument("--train-start", type=int, default=0)
    p.add_argument("--train-count", type=int, default=200)
    p.set_defaults(fn=_cmd_prep)

    p = sub.add_parser("train-imitation", help="fit per-stage scorers on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_train_imitation)

    p = sub.add_parser("eval-imitation", help="average gap against exact objectives")
    p.add_argument("--model", required=True)
    p.add_argument("--work-dir", required=True)
    p.add_argument("--preset", default="S-1")
    p.add_argument("--eval-start", type=int, default=200)
    p.add_argument("--eval-count", type=int, default=50)
    p.add_argument("--per-stage", action="store_true")
    p.add_argument("--env", default=None, help="environment address (spawned if omitted)")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_eval_imitation)

    p = sub.add_parser("train", help="multi-agent PPO over the environment")
    p.add_argument("--mode", choices=("mappo", "ippo"), required=True)
    p.add_argument("--env", default=None, help="environment address (spawned if omitted)")
    p.add_argument("--instance", default="scaled", help='"scaled" or a preset name')
    p.add_argument("--warm-start", default=None, help="imitation checkpoint")
    p.add_argument("--iterations", type=int, default=5)
    p.add_argument("--episodes-per-iter", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--work-dir", default="mappo-work")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
