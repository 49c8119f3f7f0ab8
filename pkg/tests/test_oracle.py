"""Exact solver against the enumeration oracle; bounds; gap arithmetic."""

import dataclasses
import json

import pytest

import toteflow as tf
from toteflow.engine import Stage, apply_action, next_decision, reset
from toteflow.errors import OracleError, TrajectoryError
from toteflow.oracle import (
    OracleResult,
    average_gap,
    enumerate_exhaustive,
    export_trajectories,
    lower_bound,
    replay_trajectory,
    solve_exact,
)
from conftest import drive


def test_micro1_exact_is_four(micro1):
    res = solve_exact(micro1, name="micro-1")
    assert res.z_star == 4
    assert res.proved_optimal


def test_micro1_enumeration_agrees(micro1):
    z, nodes = enumerate_exhaustive(micro1)
    assert z == 4
    assert nodes > 1


def test_single_line_instance_costs_two(micro1):
    single = dataclasses.replace(micro1.orders[1], id=0)
    inst = dataclasses.replace(micro1, orders=(single,))
    assert solve_exact(inst).z_star == 2


def test_zero_order_instance_costs_zero(micro1):
    inst = dataclasses.replace(micro1, orders=())
    res = solve_exact(inst)
    assert res.z_star == 0
    assert res.trajectory == []


def test_solver_rejects_dynamic_instances():
    inst = tf.generate(tf.preset("L-1", seed=0))
    with pytest.raises(OracleError):
        solve_exact(inst)


def test_solver_matches_enumeration_on_micros():
    for seed in range(25):
        inst = tf.generate(tf.micro_config(seed))
        res = solve_exact(inst, name=f"micro-{seed}")
        z_enum, _ = enumerate_exhaustive(inst)
        assert res.proved_optimal
        assert res.z_star == z_enum, f"seed {seed}"


def test_trajectory_replays_to_z_star(micro1):
    res = solve_exact(micro1, name="micro-1")
    report, state = replay_trajectory(micro1, res.trajectory)
    assert report.z_final == res.z_star
    # every replayed step was feasible: replay itself enforces the mask


def test_budget_exhaustion_is_flagged():
    inst = tf.generate(tf.preset("S-3", seed=1))
    res = solve_exact(inst, node_budget=20)
    assert not res.proved_optimal


def test_oracle_floor_against_builtins():
    for name, seed in (("S-1", 0), ("S-2", 3)):
        inst = tf.generate(tf.preset(name, seed=seed))
        res = solve_exact(inst, name=name)
        assert res.proved_optimal
        for policy in ("csgh", "r3", "g3"):
            rep, _ = tf.run_episode(inst, tf.make_policies(policy, inst))
            assert res.z_star <= rep.z_final


# --- lower bound ------------------------------------------------------------

def test_lower_bound_terminal_is_z(micro1):
    report, _, final_state = drive(micro1, tf.make_policy("csgh", micro1))
    assert lower_bound(final_state) == report.z_final


def test_lower_bound_fresh_micro1(micro1):
    state = reset(micro1)
    assert lower_bound(state) == 4  # two distinct SKUs, two movements each


def test_lower_bound_mid_episode_micro1(micro1):
    # run until the first retrieval is committed and lifted
    policy = tf.make_policy("csgh", micro1)
    state = reset(micro1)
    while state.z_retrievals == 0:
        out = next_decision(state)
        assert not isinstance(out, tf.MetricsReport)
        apply_action(state, out, policy(out, state))
    bound = lower_bound(state)
    z_opt, _ = enumerate_exhaustive(from_state=state)
    assert 3 <= bound <= z_opt


def test_lower_bound_admissible_on_random_prefixes():
    import numpy as np

    rng = np.random.default_rng(0)
    checked = 0
    seed = 0
    while checked < 60:
        seed += 1
        inst = tf.generate(tf.micro_config(seed))
        policy = tf.make_policy(("csgh", "r3", "g3")[seed % 3], inst)
        state = reset(inst)
        steps = int(rng.integers(1, 8))
        live = True
        for _ in range(steps):
            out = next_decision(state)
            if isinstance(out, tf.MetricsReport):
                live = False
                break
            apply_action(state, out, policy(out, state))
        if not live:
            continue
        z_opt, _ = enumerate_exhaustive(from_state=state)
        assert lower_bound(state) <= z_opt, f"seed {seed}"
        checked += 1


def test_pruned_search_equals_enumeration_up_to_three_orders():
    for seed in (101, 202, 303, 404):
        cfg = dataclasses.replace(tf.micro_config(seed), orders=3)
        inst = tf.generate(cfg)
        assert solve_exact(inst).z_star == enumerate_exhaustive(inst)[0]


# --- average gap -------------------------------------------------------------

def test_average_gap_basic():
    assert average_gap([103], [100]) == pytest.approx(3.0)


def test_average_gap_identity():
    assert average_gap([70, 80], [70, 80]) == 0.0


def test_average_gap_signed_mean_cancels():
    assert average_gap([110, 90], [100, 100]) == pytest.approx(0.0)


def test_average_gap_rejects_bad_input():
    with pytest.raises(OracleError):
        average_gap([1.0], [1.0, 2.0])
    with pytest.raises(OracleError):
        average_gap([], [])
    with pytest.raises(OracleError):
        average_gap([1.0], [0.0])


# --- trajectory files ---------------------------------------------------------

def test_export_counts_suffix_subsequences(tmp_path, micro1):
    res = solve_exact(micro1, name="micro-1")
    out = tmp_path / "traj.jsonl"
    n = export_trajectories([res], out)
    lines = [json.loads(l) for l in out.read_text().splitlines()]
    assert lines[0]["version"] == "toteflow_traj_v1"
    steps = [l for l in lines if l.get("type") == "step"]
    suffixes = [l for l in lines if l.get("type") == "subsequence"]
    assert len(steps) == n == len(res.trajectory)
    assert len(suffixes) == len(res.trajectory)
    assert sorted(s["start_index"] for s in suffixes) == list(range(len(steps)))
    assert {s["length"] for s in suffixes} == {len(steps) - i for i in range(len(steps))}


def test_export_empty_results_header_only(tmp_path):
    out = tmp_path / "empty.jsonl"
    export_trajectories([], out)
    lines = out.read_text().splitlines()
    assert len(lines) == 1
    assert json.loads(lines[0])["version"] == "toteflow_traj_v1"


def test_export_rejects_unproved(tmp_path, micro1):
    res = solve_exact(micro1, name="micro-1")
    res = OracleResult(
        z_star=res.z_star, trajectory=res.trajectory, nodes_expanded=1,
        proved_optimal=False, instance_name="micro-1", instance=micro1,
    )
    with pytest.raises(TrajectoryError):
        export_trajectories([res], tmp_path / "no.jsonl")


def test_replay_detects_divergence(micro1):
    res = solve_exact(micro1, name="micro-1")
    broken = [dataclasses.replace(res.trajectory[0], subject=99)]
    with pytest.raises(TrajectoryError):
        replay_trajectory(micro1, broken)
