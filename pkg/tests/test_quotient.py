"""Abstract keys: permutation stability, bisimulation probes, dataset builder."""

import dataclasses
import json

import pytest

import toteflow as tf
from toteflow.domain import Location, Workstation
from toteflow.engine import Stage, apply_action, next_decision, reset
from toteflow.errors import DomainError, TrajectoryError
from toteflow.oracle import export_trajectories, solve_exact
from toteflow.quotient import (
    abstract_state,
    build_dataset,
    canonical_action_index,
    canonical_candidates,
    check_bisimulation,
    load_dataset,
    save_dataset,
)
from conftest import mirror_instance, relabel_same_sku_totes, run_prefix, tiny_instance


def _key_at(instance, steps=0, policy_name="csgh"):
    policy = tf.make_policy(policy_name, instance)
    state = run_prefix(instance, policy, steps)
    assert state is not None
    dp = next_decision(state)
    return abstract_state(state, dp), state


def test_identical_states_same_key(micro1):
    k1, _ = _key_at(micro1, 1)
    k2, _ = _key_at(micro1, 1)
    assert k1 == k2 and k1.hash == k2.hash


def test_mirrored_instance_same_key(micro1):
    for steps in (0, 1, 2, 3):
        ka, _ = _key_at(micro1, steps)
        kb, _ = _key_at(mirror_instance(micro1), steps)
        assert ka == kb, f"step {steps}"


def test_same_sku_tote_relabel_same_key(micro1):
    relabeled = relabel_same_sku_totes(micro1)
    assert relabeled is not None
    for steps in (2, 3):
        ka, _ = _key_at(micro1, steps)
        kb, _ = _key_at(relabeled, steps)
        assert ka == kb


def test_equal_cost_same_sku_totes_share_candidate_features(micro1):
    # Totes 1 and 2 carry the same SKU; key equality across their relabel
    # means candidate features do not leak identity.
    state = run_prefix(micro1, tf.make_policy("csgh", micro1), 2)
    dp = next_decision(state)
    assert dp.stage is Stage.TOTE_MATCH
    key = abstract_state(state, dp)
    assert len(key.candidates) == len(dp.candidates) - 1


def test_mirrored_prefixes_pass_bisimulation(micro1):
    for steps in (0, 1, 2):
        a = run_prefix(micro1, tf.make_policy("csgh", micro1), steps)
        b = run_prefix(mirror_instance(micro1), tf.make_policy("csgh", micro1), steps)
        assert check_bisimulation(a, b) is None


def test_bisimulation_rejects_different_keys(micro1):
    a = run_prefix(micro1, tf.make_policy("csgh", micro1), 0)
    b = run_prefix(micro1, tf.make_policy("csgh", micro1), 1)
    with pytest.raises(DomainError):
        check_bisimulation(a, b)


def _distance_variant(column: int) -> tf.WarehouseInstance:
    return tf.WarehouseInstance(
        kind=tf.SystemKind.MULTI_TOTE_2D,
        skus=1,
        orders=(tf.Order(id=0, lines=(tf.OrderLine(0),)),),
        totes=(tf.Tote(id=0, sku=0, quantity=5, home=Location(0, column, 0)),),
        robots=(tf.Robot(id=0, capacity=2, position=Location(0, 0, 0)),),
        workstations=(Workstation(id=0, position=Location(0, 0, 0), slots=2),),
        layout=(1, 12, 1),
    )


def test_lossy_quantizer_produces_counterexample():
    # Same demand, tote 2 cells away vs 9 cells away. A huge travel bucket
    # collapses both into one key; the probe sees the divergence downstream.
    near = run_prefix(_distance_variant(2), tf.make_policy("csgh"), 1)
    far = run_prefix(_distance_variant(9), tf.make_policy("csgh"), 1)
    bucket = 1000.0
    ka = abstract_state(near, next_decision(near), travel_bucket=bucket)
    kb = abstract_state(far, next_decision(far), travel_bucket=bucket)
    assert ka == kb
    counterexample = check_bisimulation(near, far, travel_bucket=bucket)
    assert counterexample is not None
    assert counterexample["kind"] == "successor"
    # exact keys keep them apart
    with pytest.raises(DomainError):
        check_bisimulation(near, far)


def test_canonical_index_groups_equal_candidates(micro1):
    # Totes 1 and 2 (same SKU) at different distances have different features,
    # but two identical-feature candidates must share a canonical index.
    state = run_prefix(micro1, tf.make_policy("csgh", micro1), 2)
    dp = next_decision(state)
    order = canonical_candidates(dp, state)
    assert set(order) == set(dp.real_actions())
    assert canonical_action_index(dp, state, tf.DEFER_ACTION) == 0
    for action in order:
        assert 1 <= canonical_action_index(dp, state, action) <= len(order)


def test_canonical_index_unknown_action(micro1):
    state = run_prefix(micro1, tf.make_policy("csgh", micro1), 2)
    dp = next_decision(state)
    with pytest.raises(DomainError):
        canonical_action_index(dp, state, 999)


# --- dataset -----------------------------------------------------------------

def test_build_dataset_from_export(tmp_path, micro1):
    res = solve_exact(micro1, name="micro-1")
    traj = tmp_path / "traj.jsonl"
    export_trajectories([res], traj)
    records = build_dataset(traj)
    assert records
    for rec in records:
        assert rec["multiplicity"] >= 1
        assert rec["stage"] in {s.value for s in tf.STAGES}
        assert rec["action_index"] >= 0
    # later steps carry larger suffix multiplicity
    total = sum(r["multiplicity"] for r in records)
    n = len(res.trajectory)
    assert total == n * (n + 1) // 2


def test_dataset_merges_mirrored_choices(tmp_path, micro1):
    res_a = solve_exact(micro1, name="a")
    res_b = solve_exact(mirror_instance(micro1), name="b")
    traj = tmp_path / "traj.jsonl"
    export_trajectories([res_a, res_b], traj)
    records = build_dataset(traj)
    # mirrored episodes visit identical keys making identical canonical
    # choices: every record's multiplicity is even
    assert all(r["multiplicity"] % 2 == 0 for r in records)
    assert sum(r["multiplicity"] for r in records) == 2 * sum(
        i + 1 for i in range(len(res_a.trajectory))
    )


def test_empty_traj_builds_empty_dataset(tmp_path):
    traj = tmp_path / "traj.jsonl"
    export_trajectories([], traj)
    assert build_dataset(traj) == []


def test_dataset_rejects_missing_header(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"type": "step"}\n')
    with pytest.raises(TrajectoryError):
        build_dataset(path)


def test_dataset_rejects_corrupt_action_index(tmp_path, micro1):
    res = solve_exact(micro1, name="micro-1")
    traj = tmp_path / "traj.jsonl"
    export_trajectories([res], traj)
    lines = traj.read_text().splitlines()
    doctored = []
    for line in lines:
        rec = json.loads(line)
        if rec.get("type") == "step":
            rec["action_index"] = 999
        doctored.append(json.dumps(rec))
    traj.write_text("\n".join(doctored) + "\n")
    with pytest.raises(TrajectoryError):
        build_dataset(traj)


def test_dataset_file_roundtrip(tmp_path, micro1):
    res = solve_exact(micro1, name="micro-1")
    traj = tmp_path / "traj.jsonl"
    export_trajectories([res], traj)
    records = build_dataset(traj)
    out = tmp_path / "data.jsonl"
    save_dataset(records, out)
    again = load_dataset(out)
    assert len(again) == len(records)
    header = json.loads(out.read_text().splitlines()[0])
    assert header["version"] == "toteflow_bq_v1"
