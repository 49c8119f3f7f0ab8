"""Data preparation and evaluation orchestration over the simulator CLI."""

from __future__ import annotations

import json
from pathlib import Path

from . import wire
from .imitation import EvalCase


def prepare_imitation_data(
    out_dir: Path,
    preset: str = "S-1",
    train_seeds: range = range(200),
) -> Path:
    """Generate instances, solve them exactly, export trajectories, and build
    the merged abstract-state dataset. Returns the dataset path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    traj_paths = []
    for seed in train_seeds:
        stem = out_dir / f"{preset.lower()}-{seed}"
        inst = stem.with_suffix(".inst.json")
        if not inst.exists():
            wire.gen_instance(inst, preset=preset, seed=seed)
        traj = stem.with_suffix(".traj.jsonl")
        if not traj.exists():
            wire.solve_instance(inst, stem.with_suffix(".result.json"), traj)
        traj_paths.append(traj)
    merged = out_dir / "merged.traj.jsonl"
    wire.concat_trajectories(traj_paths, merged)
    dataset = out_dir / "dataset.jsonl"
    wire.build_dataset(merged, dataset)
    return dataset


def prepare_eval_cases(
    out_dir: Path,
    preset: str = "S-1",
    eval_seeds: range = range(200, 250),
    with_trajectories: bool = False,
) -> list[EvalCase]:
    """Held-out instances with exact objectives (and optionally expert steps
    for teacher-forced stage gaps)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cases = []
    for seed in eval_seeds:
        stem = out_dir / f"eval-{preset.lower()}-{seed}"
        inst = stem.with_suffix(".inst.json")
        if not inst.exists():
            wire.gen_instance(inst, preset=preset, seed=seed)
        result_path = stem.with_suffix(".result.json")
        traj_path = stem.with_suffix(".traj.jsonl") if with_trajectories else None
        if not result_path.exists():
            result = wire.solve_instance(inst, result_path, traj_path)
        else:
            result = json.loads(result_path.read_text())
        steps = None
        if with_trajectories:
            steps = []
            with open(traj_path, encoding="utf-8") as fh:
                fh.readline()
                for line in fh:
                    rec = json.loads(line)
                    if rec.get("type") == "step":
                        steps.append(rec)
            steps.sort(key=lambda r: r["step_index"])
        cases.append(
            EvalCase(
                reset_kwargs={"preset": preset, "seed": seed},
                z_star=result["z_star"],
                traj_steps=steps,
            )
        )
    return cases


def scaled_l1_instance(out_dir: Path, seed: int) -> Path:
    """The scaled-down coordination benchmark: 15 orders, 4 robots, 2 stations."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"l1-scaled-{seed}.inst.json"
    if not path.exists():
        wire.gen_instance(
            path,
            seed=seed,
            skus=20,
            orders=15,
            robots=4,
            workstations=2,
            totes=150,
            horizon=60,
            name=f"l1-scaled-{seed}",
        )
    return path


def inline_reset_kwargs(instance_path: Path) -> dict:
    payload = json.loads(Path(instance_path).read_text())
    return {"instance": payload, "name": Path(instance_path).stem}
