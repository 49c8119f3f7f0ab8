"""Bisimulation-style state abstraction and the imitation dataset builder.

States that agree on every decision-relevant attribute collapse onto one
canonical key: entity identities are erased, candidates are sorted by their
exact feature tuples, and travel costs stay cell-exact unless a lossy bucket
width is requested (useful for dataset compression, explicitly approximate).
Two states with equal keys are expected to yield equal immediate rewards and
equal successor keys under every common canonical action; ``check_bisimulation``
verifies that on demand.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .domain import MetricsReport
from .engine import (
    DEFER_ACTION,
    DecisionPoint,
    Stage,
    WarehouseState,
    apply_action,
    global_reward,
    next_decision,
)
from .errors import DomainError, TrajectoryError
from .features import exact_candidate_features, subject_features

DATASET_FORMAT_VERSION = "toteflow_bq_v1"


@dataclass(frozen=True)
class AbstractKey:
    stage: str
    subject: tuple
    candidates: tuple  # sorted multiset of per-candidate feature tuples
    context: tuple

    @property
    def hash(self) -> str:
        return hashlib.sha1(repr(self).encode()).hexdigest()

    def to_features(self) -> dict:
        return {
            "stage": self.stage,
            "subject": _jsonable(self.subject),
            "candidates": _jsonable(self.candidates),
            "context": _jsonable(self.context),
        }


def _jsonable(x):
    if isinstance(x, tuple):
        return [_jsonable(v) for v in x]
    return x


def _bucket(features: tuple, stage: Stage, width: float | None) -> tuple:
    """Optionally coarsen the travel components of a candidate feature tuple."""
    if width is None or width <= 1:
        return features
    if stage is Stage.TOTE_MATCH:
        cover, h, v, qty = features
        return (cover, int(h // width), int(v // width), qty)
    if stage is Stage.ROBOT_SCHEDULE:
        kind, cover, h, v = features
        return (kind, cover, int(h // width), int(v // width))
    return features


def _context(state: WarehouseState) -> tuple:
    order_residuals = tuple(
        sorted(
            tuple(sorted(sku for sku, ln in o.lines.items() if not ln.picked))
            for o in state.orders.values()
            if o.status != "complete"
        )
    )
    slack_vector = tuple(sorted(state.station_slack(sid) for sid in state.stations))
    return (order_residuals, slack_vector)


def abstract_state(
    state: WarehouseState, dp: DecisionPoint, travel_bucket: float | None = None
) -> AbstractKey:
    """Canonical key for the decision point: identity-free and permutation-stable.

    ``travel_bucket`` coarsens travel distances into buckets of that many
    cells; the default (None) keeps them exact so the quotient preserves
    reward and transition behavior rather than approximating it.
    """
    feats = [
        _bucket(f, dp.stage, travel_bucket)
        for f in exact_candidate_features(dp, state)
    ]
    return AbstractKey(
        stage=dp.stage.value,
        subject=subject_features(dp, state),
        candidates=tuple(sorted(feats)),
        context=_context(state),
    )


def canonical_candidates(
    dp: DecisionPoint, state: WarehouseState, travel_bucket: float | None = None
) -> list[int]:
    """Real candidates ordered by (feature tuple, original position)."""
    feats = [
        _bucket(f, dp.stage, travel_bucket)
        for f in exact_candidate_features(dp, state)
    ]
    real = [c for c in dp.candidates if c != DEFER_ACTION]
    order = sorted(range(len(real)), key=lambda i: (feats[i], i))
    return [real[i] for i in order]


def canonical_action_index(
    dp: DecisionPoint,
    state: WarehouseState,
    action: int,
    travel_bucket: float | None = None,
) -> int:
    """Index of the action in canonical ordering; 0 is the defer action.

    Candidates with identical features are interchangeable under the
    quotient, so the index of the first member of the feature group is
    returned for all of them.
    """
    if action == DEFER_ACTION:
        return 0
    feats = [
        _bucket(f, dp.stage, travel_bucket)
        for f in exact_candidate_features(dp, state)
    ]
    real = [c for c in dp.candidates if c != DEFER_ACTION]
    try:
        target = feats[real.index(action)]
    except ValueError:
        raise DomainError(f"action {action} not among candidates") from None
    order = sorted(range(len(real)), key=lambda i: (feats[i], i))
    for rank, i in enumerate(order):
        if feats[i] == target:
            return rank + 1  # first member of the feature group; slot 0 is defer
    raise AssertionError("unreachable")


def check_bisimulation(
    state_a: WarehouseState,
    state_b: WarehouseState,
    travel_bucket: float | None = None,
) -> dict | None:
    """Probe two same-key states for behavioral equivalence.

    Applies each common canonical action in both states, advances to the next
    decision, and compares immediate rewards and successor keys (successor
    keys always computed exactly, regardless of the probe's bucketing).
    Returns None when every action agrees, otherwise the first counterexample.
    """
    a = state_a.clone()
    b = state_b.clone()
    dp_a = next_decision(a)
    dp_b = next_decision(b)
    if isinstance(dp_a, MetricsReport) or isinstance(dp_b, MetricsReport):
        raise DomainError("both states must be at a live decision point")
    key_a = abstract_state(a, dp_a, travel_bucket)
    key_b = abstract_state(b, dp_b, travel_bucket)
    if key_a != key_b:
        raise DomainError("precondition violated: states have different keys")

    cands_a = canonical_candidates(dp_a, a, travel_bucket)
    cands_b = canonical_candidates(dp_b, b, travel_bucket)
    for idx in range(min(len(cands_a), len(cands_b))):
        sa = a.clone()
        sb = b.clone()
        dpa = next_decision(sa)
        dpb = next_decision(sb)
        apply_action(sa, dpa, cands_a[idx])
        apply_action(sb, dpb, cands_b[idx])
        out_a = next_decision(sa)
        out_b = next_decision(sb)
        reward_a = global_reward(a, sa)
        reward_b = global_reward(b, sb)
        if reward_a != reward_b:
            return {
                "action_index": idx,
                "kind": "reward",
                "a": reward_a,
                "b": reward_b,
            }
        term_a = isinstance(out_a, MetricsReport)
        term_b = isinstance(out_b, MetricsReport)
        if term_a != term_b:
            return {"action_index": idx, "kind": "successor", "a": term_a, "b": term_b}
        if not term_a:
            succ_a = abstract_state(sa, out_a)
            succ_b = abstract_state(sb, out_b)
            if succ_a != succ_b:
                return {
                    "action_index": idx,
                    "kind": "successor",
                    "a": succ_a.hash,
                    "b": succ_b.hash,
                }
    return None


def build_dataset(traj_path: str | Path) -> list[dict]:
    """Collapse a trajectory file into (key, canonical action) records.

    Exact (key, stage, action) repeats merge into one record whose
    multiplicity counts every occurrence across all suffix subsequences.
    """
    steps: dict[tuple[str, int], dict] = {}
    suffix_starts: dict[str, list[int]] = {}
    with open(traj_path, encoding="utf-8") as fh:
        first = fh.readline().strip()
        try:
            header = json.loads(first) if first else {}
        except json.JSONDecodeError as exc:
            raise TrajectoryError(f"unreadable header record: {exc}") from None
        if header.get("version") != "toteflow_traj_v1":
            raise TrajectoryError("missing or unsupported version header record")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                if rec.get("type") == "step":
                    steps[(rec["instance_name"], rec["step_index"])] = rec
                elif rec.get("type") == "subsequence":
                    suffix_starts.setdefault(rec["instance_name"], []).append(
                        rec["start_index"]
                    )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise TrajectoryError(f"corrupt trajectory record: {exc}") from None

    merged: dict[tuple[str, str, int], dict] = {}
    for (inst_name, step_index), rec in sorted(steps.items()):
        if rec["action_index"] > rec["n_candidates"]:
            raise TrajectoryError(
                f"{inst_name} step {step_index}: action index {rec['action_index']} "
                f"outside its {rec['n_candidates']} candidates"
            )
        multiplicity = sum(
            1 for s in suffix_starts.get(inst_name, [0]) if s <= step_index
        )
        key = (rec["key_hash"], rec["stage"], rec["action_index"])
        if key in merged:
            merged[key]["multiplicity"] += multiplicity
        else:
            merged[key] = {
                "key_hash": rec["key_hash"],
                "key_features": rec["key_features"],
                "stage": rec["stage"],
                "action_index": rec["action_index"],
                "multiplicity": multiplicity,
            }
            if "feature_rows" in rec:
                merged[key]["feature_rows"] = rec["feature_rows"]
    return list(merged.values())


def save_dataset(records: list[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"version": DATASET_FORMAT_VERSION}) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_dataset(path: str | Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("version") != DATASET_FORMAT_VERSION:
            raise TrajectoryError(f"unsupported dataset format {header.get('version')!r}")
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
