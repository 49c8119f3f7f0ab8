"""Shared fixtures: tiny seeded instances, symmetry transforms, episode drivers."""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest

import toteflow as tf
from toteflow.domain import Location, Robot, Tote, WarehouseInstance
from toteflow.engine import STAGES, WarehouseState, apply_action, next_decision, reset
from toteflow.domain import MetricsReport


@pytest.fixture
def micro1() -> WarehouseInstance:
    return tf.micro_1()


def tiny_config(seed: int) -> tf.InstanceConfig:
    """Random small config, a bit larger than the micro regime."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 11)))
    kind = (
        tf.SystemKind.MULTI_TOTE_2D if rng.random() < 0.5 else tf.SystemKind.RACK_CLIMB_3D
    )
    skus = int(rng.integers(3, 9))
    return tf.InstanceConfig(
        name=f"tiny-{seed}",
        skus=skus,
        orders=int(rng.integers(2, 7)),
        robots=int(rng.integers(1, 4)),
        workstations=int(rng.integers(1, 3)),
        totes=skus + int(rng.integers(0, 5)),
        kind=kind,
        seed=seed,
        arrival_horizon=float(rng.choice([0.0, 60.0])),
    )


def tiny_instance(seed: int) -> WarehouseInstance:
    return tf.generate(tiny_config(seed))


def drive(instance, policy, on_step=None, seed: int = 0, max_steps: int = 100000):
    """Manual episode loop exposing every intermediate state to ``on_step``."""
    begin = getattr(policy, "begin_episode", None)
    if begin is not None:
        begin(instance, seed)
    state = reset(instance)
    records = []
    for _ in range(max_steps):
        out = next_decision(state)
        if isinstance(out, MetricsReport):
            return out, records, state
        action = policy(out, state)
        apply_action(state, out, action)
        records.append(state.records[-1])
        if on_step is not None:
            on_step(state)
    raise AssertionError("episode did not terminate within max_steps")


def run_prefix(instance, policy, n_steps: int, seed: int = 0) -> WarehouseState | None:
    """State paused at a live decision point after n_steps actions, or None
    if the episode is shorter."""
    begin = getattr(policy, "begin_episode", None)
    if begin is not None:
        begin(instance, seed)
    state = reset(instance)
    for _ in range(n_steps):
        out = next_decision(state)
        if isinstance(out, MetricsReport):
            return None
        apply_action(state, out, policy(out, state))
    out = next_decision(state)
    if isinstance(out, MetricsReport):
        return None
    return state


def mirror_instance(inst: WarehouseInstance) -> WarehouseInstance:
    """Reflect every location along the column axis; all travel distances
    are preserved, so episodes correspond move-for-move."""
    _, columns, _ = inst.layout

    def flip(loc: Location) -> Location:
        return Location(loc.aisle, columns - 1 - loc.column, loc.level)

    return dataclasses.replace(
        inst,
        totes=tuple(dataclasses.replace(t, home=flip(t.home)) for t in inst.totes),
        robots=tuple(dataclasses.replace(r, position=flip(r.position)) for r in inst.robots),
        workstations=tuple(
            dataclasses.replace(w, position=flip(w.position)) for w in inst.workstations
        ),
    )


def relabel_same_sku_totes(inst: WarehouseInstance) -> WarehouseInstance | None:
    """Swap the identities of the first same-SKU tote pair, if any."""
    by_sku: dict[int, list[Tote]] = {}
    for t in inst.totes:
        by_sku.setdefault(t.sku, []).append(t)
    pair = next((ts for ts in by_sku.values() if len(ts) >= 2), None)
    if pair is None:
        return None
    a, b = pair[0], pair[1]
    totes = list(inst.totes)
    totes[a.id] = dataclasses.replace(a, home=b.home, quantity=b.quantity)
    totes[b.id] = dataclasses.replace(b, home=a.home, quantity=a.quantity)
    return dataclasses.replace(inst, totes=tuple(totes))


def check_state_consistency(state: WarehouseState) -> None:
    """Conservation and structural invariants that must hold mid-episode."""
    inst = state.instance
    seen: dict[int, str] = {}
    for tid, place in state.tote_place.items():
        assert place.kind in ("in_storage", "on_robot", "at_workstation")
        seen[tid] = place.kind
        if place.kind == "on_robot":
            assert tid in state.robots[place.holder].load
        elif place.kind == "at_workstation":
            assert tid in state.stations[place.holder].buffer
    assert len(seen) == len(inst.totes)
    for rid, rt in state.robots.items():
        assert len(rt.load) <= inst.robots[rid].capacity
        for tid in rt.load:
            assert state.tote_place[tid].kind == "on_robot"
            assert state.tote_place[tid].holder == rid
    for sid, st in state.stations.items():
        assert len(st.active) <= inst.workstations[sid].slots
        for tid in st.buffer:
            assert state.tote_place[tid].kind == "at_workstation"
            assert state.tote_place[tid].holder == sid
    assert state.z_retrievals >= 0 and state.z_returns >= 0
