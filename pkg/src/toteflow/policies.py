"""Baseline decision policies: csgh, r3, g3, plus a seeded random policy.

Each policy object serves all three stages through ``__call__`` and never
returns an infeasible action. They differ in where they spend effort:

* csgh couples batching and routing: affinity-driven slot filling, highest
  line-coverage totes, and a global robot-task matching on a utility that
  trades coverage against travel.
* r3 is robot-centric: slots fill first-come-first-placed, totes are chosen
  for robot proximity, robots grab their nearest task. Short trips, poor
  batching.
* g3 is order-centric: overlap-driven slot filling and coverage-greedy tote
  choice, with travel-blind first-in-first-out robot dispatch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assignment import hungarian_max_weight
from .domain import WarehouseInstance, travel_time
from .engine import (
    DEFER_ACTION,
    STAGES,
    DecisionPoint,
    Stage,
    Task,
    TASK_RETRIEVAL,
    WarehouseState,
)
from .errors import DomainError

POLICY_NAMES = ("csgh", "r3", "g3")


@dataclass(frozen=True)
class CsghParams:
    """Weights for the batching-vs-travel utility and the rolling order window."""

    alpha: float = 1.0
    beta: float | None = None  # None: 1 / max travel time of the instance
    window: int | None = None  # None: 2 x total put-wall slots

    def __post_init__(self):
        if self.alpha < 0 or (self.beta is not None and self.beta < 0):
            raise DomainError("alpha and beta must be non-negative")
        if self.alpha == 0 and self.beta == 0:
            raise DomainError("alpha + beta must be positive")

    def bound(self, instance: WarehouseInstance) -> "_BoundParams":
        beta = self.beta
        if beta is None:
            mt = instance.max_travel_time()
            beta = 1.0 / mt if mt > 0 else 1.0
        window = self.window
        if window is None:
            window = 2 * instance.total_slots
        return _BoundParams(self.alpha, beta, max(1, window))


@dataclass(frozen=True)
class _BoundParams:
    alpha: float
    beta: float
    window: int


def f_batch(tote_id: int, station_id: int, state: WarehouseState) -> int:
    """Unsatisfied order lines at the station that this tote's SKU can serve.

    Lines already picked, queued for picking, or committed to a different
    tote do not count.
    """
    sku = state.instance.totes[tote_id].sku
    n = 0
    for oid in state.stations[station_id].active:
        ln = state.orders[oid].lines.get(sku)
        if ln is not None and not ln.picked and not ln.queued and ln.covered_by in (None, tote_id):
            n += 1
    return n


def pair_utility(
    robot_id: int,
    tote_id: int,
    station_id: int,
    params: CsghParams | _BoundParams,
    state: WarehouseState,
) -> float:
    """alpha * line coverage - beta * travel from the robot to the tote."""
    if isinstance(params, CsghParams):
        params = params.bound(state.instance)
    inst = state.instance
    travel = travel_time(
        state.robots[robot_id].position, inst.totes[tote_id].home, inst.kind, inst.speed
    )
    return params.alpha * f_batch(tote_id, station_id, state) - params.beta * travel


def _task_travel(state: WarehouseState, robot_id: int, task: Task) -> float:
    inst = state.instance
    return travel_time(
        state.robots[robot_id].position,
        state.task_pickup_location(task),
        inst.kind,
        inst.speed,
    )


def _task_utility(state: WarehouseState, robot_id: int, task: Task, p: _BoundParams) -> float:
    cover = f_batch(task.tote, task.station, state) if task.kind == TASK_RETRIEVAL else 0
    return p.alpha * cover - p.beta * _task_travel(state, robot_id, task)


def _station_affinity(state: WarehouseState, order_id: int, station_id: int) -> tuple:
    """(service score, slack): how well the station's current pool, inbound
    totes, and buffer match the order's SKUs. A tote already on site or on
    its way serves the line with no extra retrieval, so it scores double."""
    order_def = state.instance.orders[order_id]
    served_skus = {
        state.instance.totes[t].sku for t in state.servable_buffer(station_id)
    }
    served_skus |= state.inbound_skus(station_id)
    pool_skus: set[int] = set()
    for oid in state.stations[station_id].active:
        for sku, ln in state.orders[oid].lines.items():
            if not ln.picked:
                pool_skus.add(sku)
    score = 0
    for line in order_def.lines:
        if line.sku in served_skus:
            score += 2
        elif line.sku in pool_skus:
            score += 1
    return score, state.station_slack(station_id)


def _pairwise_overlap(state: WarehouseState, order_id: int, station_id: int) -> int:
    my_skus = {line.sku for line in state.instance.orders[order_id].lines}
    total = 0
    for oid in state.stations[station_id].active:
        open_skus = {
            sku for sku, ln in state.orders[oid].lines.items() if not ln.picked
        }
        total += len(my_skus & open_skus)
    return total


def _patient_candidates(dp: DecisionPoint, state: WarehouseState) -> list[int]:
    """Totes whose SKU has no committed retrieval already heading here.

    Matching a second tote of an inbound SKU is a redundant movement: the
    tote already on its way will serve those lines on arrival.
    """
    inbound = state.inbound_skus(dp.subject)
    return [
        tid
        for tid in dp.real_actions()
        if state.instance.totes[tid].sku not in inbound
    ]


class CsghPolicy:
    """Collaborative batching-and-routing heuristic."""

    def __init__(self, params: CsghParams | None = None, instance: WarehouseInstance | None = None):
        self.params = params or CsghParams()
        self._bound: _BoundParams | None = None
        if instance is not None:
            self._bound = self.params.bound(instance)

    def begin_episode(self, instance: WarehouseInstance, seed: int) -> None:
        self._bound = self.params.bound(instance)

    def _p(self, state: WarehouseState) -> _BoundParams:
        if self._bound is None:
            self._bound = self.params.bound(state.instance)
        return self._bound

    def __call__(self, dp: DecisionPoint, state: WarehouseState) -> int:
        if dp.stage is Stage.ORDER_ASSIGN:
            return max(
                dp.real_actions(),
                key=lambda sid: (*_station_affinity(state, dp.subject, sid), -sid),
            )
        if dp.stage is Stage.TOTE_MATCH:
            inst = state.instance
            spos = inst.workstations[dp.subject].position
            cands = _patient_candidates(dp, state)
            if not cands:
                return DEFER_ACTION
            return max(
                cands,
                key=lambda tid: (
                    f_batch(tid, dp.subject, state),
                    -travel_time(inst.totes[tid].home, spos, inst.kind, inst.speed),
                    -tid,
                ),
            )
        return self._schedule_robot(dp, state)

    def _schedule_robot(self, dp: DecisionPoint, state: WarehouseState) -> int:
        p = self._p(state)
        rows = [
            rid
            for rid, rt in state.robots.items()
            if not rt.active and len(rt.plan) < state.instance.robots[rid].capacity
        ]
        rows.sort()
        cols = dp.real_actions()
        weights = [
            [_task_utility(state, rid, state.tasks[tid], p) for tid in cols]
            for rid in rows
        ]
        # Shift strictly positive: every robot-task pair stays matchable, so
        # committed retrievals are never starved by unfavorable utilities.
        low = min(min(r) for r in weights)
        shifted = [[w - low + 1.0 for w in r] for r in weights]
        subject_row = rows.index(dp.subject)
        for i, j in hungarian_max_weight(shifted):
            if i == subject_row:
                return cols[j]
        return DEFER_ACTION


class R3Policy:
    """Robot-first routing: proximity everywhere, batching nowhere."""

    def __call__(self, dp: DecisionPoint, state: WarehouseState) -> int:
        inst = state.instance
        if dp.stage is Stage.ORDER_ASSIGN:
            return dp.real_actions()[0]  # lowest station id with a free slot
        if dp.stage is Stage.TOTE_MATCH:
            idle = [rid for rid, rt in state.robots.items() if not rt.active]
            ref = idle if idle else list(state.robots)

            def dist(tid: int) -> float:
                home = inst.totes[tid].home
                return min(
                    travel_time(state.robots[r].position, home, inst.kind, inst.speed)
                    for r in ref
                )

            return min(dp.real_actions(), key=lambda tid: (dist(tid), tid))
        return min(
            dp.real_actions(),
            key=lambda tid: (_task_travel(state, dp.subject, state.tasks[tid]), tid),
        )


class G3Policy:
    """Group-based greedy gathering: overlap-driven, travel-blind."""

    def __call__(self, dp: DecisionPoint, state: WarehouseState) -> int:
        if dp.stage is Stage.ORDER_ASSIGN:
            return max(
                dp.real_actions(),
                key=lambda sid: (_pairwise_overlap(state, dp.subject, sid), -sid),
            )
        if dp.stage is Stage.TOTE_MATCH:
            cands = _patient_candidates(dp, state)
            if not cands:
                return DEFER_ACTION
            return max(cands, key=lambda tid: (f_batch(tid, dp.subject, state), -tid))
        return min(dp.real_actions())  # oldest task first


class RandomPolicy:
    """Uniform choice over real actions; optional defer probability."""

    def __init__(self, seed: int = 0, defer_prob: float = 0.0):
        self.defer_prob = defer_prob
        self._rng = np.random.default_rng(seed)

    def begin_episode(self, instance: WarehouseInstance, seed: int) -> None:
        self._rng = np.random.default_rng(np.random.SeedSequence((seed, 7)))

    def __call__(self, dp: DecisionPoint, state: WarehouseState) -> int:
        real = dp.real_actions()
        if not real or (self.defer_prob > 0 and self._rng.random() < self.defer_prob):
            return DEFER_ACTION
        return int(real[self._rng.integers(len(real))])


def make_policy(name: str, instance: WarehouseInstance | None = None, **kwargs):
    if name == "csgh":
        params = CsghParams(
            alpha=kwargs.get("alpha", 1.0),
            beta=kwargs.get("beta"),
            window=kwargs.get("window"),
        )
        return CsghPolicy(params, instance)
    if name == "r3":
        return R3Policy()
    if name == "g3":
        return G3Policy()
    if name == "random":
        return RandomPolicy(seed=kwargs.get("seed", 0), defer_prob=kwargs.get("defer_prob", 0.0))
    raise KeyError(f"unknown policy {name!r}")


def make_policies(name: str, instance: WarehouseInstance | None = None, **kwargs) -> dict[Stage, object]:
    policy = make_policy(name, instance, **kwargs)
    return {stage: policy for stage in STAGES}
