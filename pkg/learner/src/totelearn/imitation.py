"""Imitation learning on proven-optimal trajectories.

Trains one candidate scorer per decision stage on `toteflow_bq_v1` datasets
(standardized feature rows in canonical candidate order, expert action as a
canonical index). Stages without data fall back to a documented greedy rule
and are flagged. Evaluation drives served episodes and measures the signed
average gap against exact objectives.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .models import (
    DTYPE,
    FALLBACK_RULE,
    STAGE_DIMS,
    STAGES,
    CandidateScorer,
    PolicyConfig,
    imitation_loss,
    pad_batch,
    policy_forward,
)
from . import wire

# Soft coupling applies where a later stage consumes this one's selection;
# the final stage has nothing downstream.
COUPLED_STAGES = {"order_assign", "tote_match"}


@dataclass
class StageSample:
    rows: torch.Tensor  # (n_candidates, d) canonical order
    target: int  # index into rows
    weight: float


@dataclass
class ImitationBundle:
    config: PolicyConfig
    scorers: dict[str, CandidateScorer]
    fallback: dict[str, bool]
    loss_curves: dict[str, list[float]] = field(default_factory=dict)

    def save(self, path: str | Path) -> None:
        payload = {
            "config": self.config.__dict__,
            "fallback": self.fallback,
            "loss_curves": self.loss_curves,
            "state": {stage: s.state_dict() for stage, s in self.scorers.items()},
        }
        torch.save(payload, path)

    @staticmethod
    def load(path: str | Path) -> "ImitationBundle":
        payload = torch.load(path, weights_only=False)
        config = PolicyConfig(**payload["config"])
        scorers = {}
        for stage, state in payload["state"].items():
            scorer = CandidateScorer(STAGE_DIMS[stage], config)
            scorer.load_state_dict(state)
            scorers[stage] = scorer
        return ImitationBundle(
            config=config,
            scorers=scorers,
            fallback=payload["fallback"],
            loss_curves=payload["loss_curves"],
        )


def load_stage_samples(dataset_path: str | Path) -> dict[str, list[StageSample]]:
    """Parse a bq_v1 dataset with feature rows into per-stage samples."""
    out: dict[str, list[StageSample]] = {s: [] for s in STAGES}
    with open(dataset_path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("version") != "toteflow_bq_v1":
            raise ValueError(f"unsupported dataset {header.get('version')!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if "feature_rows" not in rec or rec["action_index"] == 0:
                continue  # defer records carry no imitation target
            rows = torch.tensor(rec["feature_rows"], dtype=DTYPE)
            out[rec["stage"]].append(
                StageSample(
                    rows=rows,
                    target=rec["action_index"] - 1,
                    weight=float(rec["multiplicity"]),
                )
            )
    return out


def _train_stage(
    samples: list[StageSample], stage: str, config: PolicyConfig
) -> tuple[CandidateScorer, list[float]]:
    torch.manual_seed(config.seed + hash(stage) % 1000)
    scorer = CandidateScorer(STAGE_DIMS[stage], config)
    optim = torch.optim.Adam(scorer.parameters(), lr=config.learning_rate)
    lam = config.lambda_coupling if stage in COUPLED_STAGES else 0.0
    order = np.arange(len(samples))
    rng = np.random.default_rng(config.seed)
    curve = []
    for _epoch in range(config.epochs):
        rng.shuffle(order)
        epoch_loss, epoch_weight = 0.0, 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [samples[i] for i in order[start : start + config.batch_size]]
            rows, valid = pad_batch([s.rows for s in batch])
            target = torch.tensor([s.target for s in batch])
            weight = torch.tensor([s.weight for s in batch], dtype=DTYPE)
            logits = scorer.logits(rows, valid)
            per_sample = imitation_loss(logits, valid, rows, target, lam)
            loss = (per_sample * weight).sum() / weight.sum()
            optim.zero_grad()
            loss.backward()
            optim.step()
            epoch_loss += loss.item() * weight.sum().item()
            epoch_weight += weight.sum().item()
        curve.append(epoch_loss / max(epoch_weight, 1.0))
    return scorer, curve


def train(dataset_path: str | Path, config: PolicyConfig) -> ImitationBundle:
    """Fit per-stage scorers; deterministic for a fixed config seed."""
    samples = load_stage_samples(dataset_path)
    scorers: dict[str, CandidateScorer] = {}
    fallback: dict[str, bool] = {}
    curves: dict[str, list[float]] = {}
    for stage in STAGES:
        if not samples[stage]:
            fallback[stage] = True
            continue
        fallback[stage] = False
        scorers[stage], curves[stage] = _train_stage(samples[stage], stage, config)
    return ImitationBundle(config=config, scorers=scorers, fallback=fallback, loss_curves=curves)


def _fallback_choice(observe: dict) -> int:
    rule = FALLBACK_RULE[observe["stage"]]
    best, best_val = None, None
    for i, row in enumerate(observe["features"]):
        if i == 0 or not observe["mask"][i]:
            continue  # skip the defer slot
        val = tuple(sign * row[col] for col, sign in rule)
        if best_val is None or val > best_val:
            best, best_val = i, val
    return best if best is not None else 0


class ImitationPolicy:
    """Chooses actions from observe messages; never defers."""

    def __init__(self, bundle: ImitationBundle):
        self.bundle = bundle
        for scorer in bundle.scorers.values():
            scorer.eval()

    @torch.no_grad()
    def choose(self, observe: dict) -> int:
        stage = observe["stage"]
        if self.bundle.fallback.get(stage, True):
            return _fallback_choice(observe)
        canon = observe["canonical_order"][1:]  # candidate-array indices, defer dropped
        rows = torch.tensor(
            [observe["features"][i] for i in canon], dtype=DTYPE
        ).unsqueeze(0)
        valid = torch.ones(1, rows.shape[1], dtype=torch.bool)
        logits = self.bundle.scorers[stage].logits(rows, valid)
        probs = policy_forward(logits, valid)[0]
        return canon[int(torch.argmax(probs))]

    def latency_probe(self, observe: dict) -> float:
        t0 = time.perf_counter()
        self.choose(observe)
        return time.perf_counter() - t0


def average_gap(policy_values: list[float], baseline_values: list[float]) -> float:
    if len(policy_values) != len(baseline_values) or not policy_values:
        raise ValueError("value lists must be equal-length and non-empty")
    if any(b <= 0 for b in baseline_values):
        raise ValueError("baselines must be positive")
    return float(
        np.mean([(p - b) / b for p, b in zip(policy_values, baseline_values)]) * 100.0
    )


@dataclass
class EvalCase:
    reset_kwargs: dict
    z_star: int
    traj_steps: list[dict] | None = None  # for teacher-forced stage gaps


def _teacher_forced_choice(observe, cursor, steps, model_choice, target_stage):
    """Advance along the expert trajectory while it matches; once the episode
    diverges, non-target stages fall back to their greedy rule."""
    expected = steps[cursor[0]] if cursor[0] < len(steps) else None
    on_path = (
        expected is not None
        and expected["stage"] == observe["stage"]
        and expected["subject"] == observe["subject"]
    )
    if observe["stage"] == target_stage:
        idx = model_choice(observe)
        if on_path and observe["candidates"][idx] == expected["action"]:
            cursor[0] += 1
        else:
            cursor[0] = len(steps)  # off the expert path now
        return idx
    if on_path and expected["action"] in observe["candidates"]:
        cursor[0] += 1
        return observe["candidates"].index(expected["action"])
    return _fallback_choice(observe)


def evaluate_gap(
    bundle: ImitationBundle,
    cases: list[EvalCase],
    env_address: str,
    per_stage: bool = False,
) -> dict:
    """End-to-end (and optional teacher-forced per-stage) signed average gap."""
    policy = ImitationPolicy(bundle)
    results: dict[str, float] = {}

    def run_all(choose_factory) -> list[float]:
        zs = []
        with wire.EpisodeClient(env_address) as client:
            for case in cases:
                term = wire.run_episode(client, choose_factory(case), **case.reset_kwargs)
                zs.append(term["metrics"]["z_final"])
        return zs

    zs = run_all(lambda case: policy.choose)
    results["end_to_end"] = average_gap(zs, [c.z_star for c in cases])
    results["episodes"] = len(cases)
    if per_stage:
        for stage in STAGES:
            def factory(case, stage=stage):
                cursor = [0]
                steps = case.traj_steps or []
                def choose(observe):
                    return _teacher_forced_choice(
                        observe, cursor, steps, policy.choose, stage
                    )
                return choose
            zs = run_all(factory)
            results[f"stage:{stage}"] = average_gap(zs, [c.z_star for c in cases])
    return results
