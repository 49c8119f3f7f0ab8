"""Discrete-event simulation of the order -> tote -> robot fulfillment cycle.

The engine owns all mutation. It alternates between two phases:

* event phase: pop every event sharing the earliest timestamp (total order:
  time, then event-type rank, then entity key, then insertion sequence) and
  apply its effects;
* decision phase: repeatedly offer DecisionPoints to the caller, in stage
  order (order assignment, tote matching, robot scheduling), until no
  eligible subject remains at the current clock.

A defer action is always offered; it skips the subject for the rest of the
current event batch. Robot task plans accumulated during a decision phase are
compiled into trip events when the phase ends.

Tote accounting: ``z_retrievals`` increments when a robot lifts a tote out of
storage, ``z_returns`` when a tote lands back in its home cell. A tote is
committed to return as soon as no active order at its station still needs it.
"""

from __future__ import annotations

import heapq
import json
import time as _time
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Callable

from .domain import (
    Location,
    MetricsReport,
    Place,
    WarehouseInstance,
    travel_time,
    validate_instance,
)
from .errors import DomainError, InfeasibleActionError, SimulationDeadlock

DEFER_ACTION = -1

# Event-type ranks fix the order of simultaneous events.
_RANK_ARRIVAL = 0
_RANK_LOAD = 1
_RANK_UNLOAD = 2
_RANK_PICK = 3
_RANK_RETURN = 4
_RANK_ROBOT_FREE = 5


class Stage(Enum):
    ORDER_ASSIGN = "order_assign"
    TOTE_MATCH = "tote_match"
    ROBOT_SCHEDULE = "robot_schedule"


STAGES = (Stage.ORDER_ASSIGN, Stage.TOTE_MATCH, Stage.ROBOT_SCHEDULE)

TASK_RETRIEVAL = "retrieval"
TASK_RETURN = "return"


@dataclass(frozen=True)
class Task:
    """One tote movement: storage -> station (retrieval) or back (return)."""

    id: int
    kind: str
    tote: int
    station: int
    created: float


@dataclass(frozen=True)
class DecisionPoint:
    """A pending stage decision. candidates[0] is always the defer action."""

    stage: Stage
    subject: int
    candidates: tuple[int, ...]
    mask: tuple[bool, ...]
    state_view: "WarehouseState"

    def feasible_actions(self) -> list[int]:
        return [c for c, ok in zip(self.candidates, self.mask) if ok]

    def real_actions(self) -> list[int]:
        return [c for c, ok in zip(self.candidates, self.mask) if ok and c != DEFER_ACTION]


@dataclass(frozen=True)
class ActionRecord:
    stage: str
    subject: int
    action: int
    clock: float
    z_retrievals: int
    z_returns: int

    def to_dict(self) -> dict:
        return {
            "clock": self.clock,
            "stage": self.stage,
            "subject": self.subject,
            "action": self.action,
            "z_retrievals": self.z_retrievals,
            "z_returns": self.z_returns,
        }


@dataclass(slots=True)
class _LineRT:
    picked: bool = False
    covered_by: int | None = None
    queued: bool = False

    def copy(self) -> "_LineRT":
        return _LineRT(self.picked, self.covered_by, self.queued)


@dataclass(slots=True)
class _OrderRT:
    status: str  # pending | assigned | complete
    station: int | None
    lines: dict[int, _LineRT]  # sku -> line state

    def copy(self) -> "_OrderRT":
        return _OrderRT(self.status, self.station,
                        {sku: ln.copy() for sku, ln in self.lines.items()})


@dataclass(slots=True)
class _RobotRT:
    position: Location
    load: list[int]
    plan: list[Task]
    active: bool
    busy_until: float

    def copy(self) -> "_RobotRT":
        return _RobotRT(self.position, list(self.load), list(self.plan),
                        self.active, self.busy_until)


@dataclass(slots=True)
class _StationRT:
    active: list[int]
    buffer: list[int]
    retired: set[int]  # buffered totes committed to return
    pick_queue: list[tuple[int, int, int, int]]  # (job_seq, tote, order, sku)
    pick_active: tuple[int, int, int, int] | None

    def copy(self) -> "_StationRT":
        return _StationRT(list(self.active), list(self.buffer), set(self.retired),
                          list(self.pick_queue), self.pick_active)


class WarehouseState:
    """Mutable episode state. One engine mutates it at a time."""

    __slots__ = (
        "instance", "clock", "orders", "tote_place", "tote_reserved", "robots",
        "stations", "tasks", "pending_tasks", "events", "seq", "job_seq",
        "task_seq", "z_retrievals", "z_returns", "decision_counts",
        "records", "pending_orders", "deferred", "pending_dp", "inbound",
    )

    def __init__(self, instance: WarehouseInstance):
        self.instance = instance
        self.clock = 0.0
        self.orders: dict[int, _OrderRT] = {}
        self.tote_place: dict[int, Place] = {}
        self.tote_reserved: set[int] = set()
        self.robots: dict[int, _RobotRT] = {}
        self.stations: dict[int, _StationRT] = {}
        self.tasks: dict[int, Task] = {}
        self.pending_tasks: list[int] = []
        self.events: list[tuple] = []
        self.seq = 0
        self.job_seq = 0
        self.task_seq = 0
        self.z_retrievals = 0
        self.z_returns = 0
        self.decision_counts: dict[Stage, int] = {s: 0 for s in STAGES}
        self.records: list[ActionRecord] = []
        self.pending_orders: list[int] = []
        self.deferred: set[tuple[str, int]] = set()
        self.pending_dp: DecisionPoint | None = None
        # station -> sku -> count of committed retrievals not yet delivered
        self.inbound: dict[int, dict[int, int]] = {}

    @property
    def z_final(self) -> int:
        return self.z_retrievals + self.z_returns

    def clone(self) -> "WarehouseState":
        new = WarehouseState.__new__(WarehouseState)
        new.instance = self.instance
        new.clock = self.clock
        new.orders = {oid: o.copy() for oid, o in self.orders.items()}
        new.tote_place = dict(self.tote_place)
        new.tote_reserved = set(self.tote_reserved)
        new.robots = {rid: r.copy() for rid, r in self.robots.items()}
        new.stations = {sid: s.copy() for sid, s in self.stations.items()}
        new.tasks = dict(self.tasks)
        new.pending_tasks = list(self.pending_tasks)
        new.events = list(self.events)
        new.seq = self.seq
        new.job_seq = self.job_seq
        new.task_seq = self.task_seq
        new.z_retrievals = self.z_retrievals
        new.z_returns = self.z_returns
        new.decision_counts = dict(self.decision_counts)
        new.records = list(self.records)
        new.pending_orders = list(self.pending_orders)
        new.deferred = set(self.deferred)
        new.pending_dp = None
        new.inbound = {sid: dict(d) for sid, d in self.inbound.items()}
        return new

    # -- conveniences used by policies and feature builders ------------------

    def order_def(self, oid: int):
        return self.instance.orders[oid]

    def tote_def(self, tid: int):
        return self.instance.totes[tid]

    def robot_def(self, rid: int):
        return self.instance.robots[rid]

    def station_def(self, sid: int):
        return self.instance.workstations[sid]

    def station_slack(self, sid: int) -> int:
        return self.instance.workstations[sid].slots - len(self.stations[sid].active)

    def uncovered_lines(self, sid: int, sku: int | None = None) -> int:
        """Active-order lines at the station not yet picked, queued, or
        covered by a committed tote; optionally restricted to one SKU."""
        n = 0
        for oid in self.stations[sid].active:
            for ln_sku, ln in self.orders[oid].lines.items():
                if sku is not None and ln_sku != sku:
                    continue
                if not ln.picked and not ln.queued and ln.covered_by is None:
                    n += 1
        return n

    def open_skus(self, sid: int) -> set[int]:
        out = set()
        for oid in self.stations[sid].active:
            for sku, ln in self.orders[oid].lines.items():
                if not ln.picked and not ln.queued and ln.covered_by is None:
                    out.add(sku)
        return out

    def storage_totes_of_sku(self, sku: int) -> list[int]:
        return [
            t.id
            for t in self.instance.totes
            if t.sku == sku
            and t.id not in self.tote_reserved
            and self.tote_place[t.id].kind == "in_storage"
        ]

    def inbound_skus(self, sid: int) -> set[int]:
        """SKUs with a committed retrieval currently heading to the station."""
        return {sku for sku, n in self.inbound.get(sid, {}).items() if n > 0}

    def return_task_unassigned(self, tid: int) -> bool:
        for task_id in self.pending_tasks:
            task = self.tasks[task_id]
            if task.kind == TASK_RETURN and task.tote == tid:
                return True
        return False

    def servable_buffer(self, sid: int) -> list[int]:
        """Buffered totes that may still serve picks: not yet committed to
        return, or committed but with the return task still unassigned."""
        st = self.stations[sid]
        return [
            tid
            for tid in st.buffer
            if tid not in st.retired or self.return_task_unassigned(tid)
        ]

    def tote_has_jobs(self, sid: int, tid: int) -> bool:
        st = self.stations[sid]
        if st.pick_active is not None and st.pick_active[1] == tid:
            return True
        return any(job[1] == tid for job in st.pick_queue)

    def task_pickup_location(self, task: Task) -> Location:
        if task.kind == TASK_RETRIEVAL:
            return self.instance.totes[task.tote].home
        return self.instance.workstations[task.station].position

    def task_dropoff_location(self, task: Task) -> Location:
        if task.kind == TASK_RETRIEVAL:
            return self.instance.workstations[task.station].position
        return self.instance.totes[task.tote].home


def reset(instance: WarehouseInstance) -> WarehouseState:
    """Fresh episode state: totes home, robots at depots, arrivals queued."""
    violations = validate_instance(instance)
    if violations:
        raise DomainError("invalid instance: " + "; ".join(violations))
    state = WarehouseState(instance)
    for order in instance.orders:
        state.orders[order.id] = _OrderRT(
            status="pending",
            station=None,
            lines={line.sku: _LineRT() for line in order.lines},
        )
        _push(state, order.arrival_time, _RANK_ARRIVAL, (order.id,), ())
    for tote in instance.totes:
        state.tote_place[tote.id] = tote.initial_place()
    for robot in instance.robots:
        state.robots[robot.id] = _RobotRT(
            position=robot.position,
            load=list(robot.load),
            plan=[],
            active=False,
            busy_until=robot.busy_until,
        )
    for ws in instance.workstations:
        state.stations[ws.id] = _StationRT(
            active=list(ws.active_orders),
            buffer=list(ws.tote_buffer),
            retired=set(),
            pick_queue=[],
            pick_active=None,
        )
    return state


def _push(state: WarehouseState, t: float, rank: int, key: tuple, payload: tuple) -> None:
    heapq.heappush(state.events, (t, rank, key, state.seq) + payload)
    state.seq += 1


def global_reward(prev: WarehouseState, nxt: WarehouseState) -> float:
    """Negative change of the tote-movement objective across a step."""
    return float(prev.z_final - nxt.z_final)


# --- decision scan ----------------------------------------------------------

def _scan(state: WarehouseState) -> DecisionPoint | None:
    # Stage 1: order assignment, FIFO over arrived pending orders.
    free_stations = [
        sid for sid in sorted(state.stations) if state.station_slack(sid) > 0
    ]
    if free_stations:
        for oid in state.pending_orders:
            if (Stage.ORDER_ASSIGN.value, oid) in state.deferred:
                continue
            cands = (DEFER_ACTION, *free_stations)
            return DecisionPoint(
                Stage.ORDER_ASSIGN, oid, cands, (True,) * len(cands), state
            )

    # Stage 2: tote matching per station with open demand.
    for sid in sorted(state.stations):
        if (Stage.TOTE_MATCH.value, sid) in state.deferred:
            continue
        open_skus = state.open_skus(sid)
        if not open_skus:
            continue
        cands_set: set[int] = set()
        for sku in open_skus:
            cands_set.update(state.storage_totes_of_sku(sku))
        if not cands_set:
            continue
        cands = (DEFER_ACTION, *sorted(cands_set))
        return DecisionPoint(Stage.TOTE_MATCH, sid, cands, (True,) * len(cands), state)

    # Stage 3: robot scheduling while unassigned tasks exist. A return task
    # is schedulable only once its tote has no picks queued or in progress.
    schedulable = [
        tid
        for tid in sorted(state.pending_tasks)
        if state.tasks[tid].kind == TASK_RETRIEVAL
        or not state.tote_has_jobs(state.tasks[tid].station, state.tasks[tid].tote)
    ]
    if schedulable:
        eligible = [
            rid
            for rid, rt in state.robots.items()
            if not rt.active
            and len(rt.plan) < state.instance.robots[rid].capacity
            and (Stage.ROBOT_SCHEDULE.value, rid) not in state.deferred
        ]
        eligible.sort(key=lambda rid: (len(state.robots[rid].plan), rid))
        if eligible:
            rid = eligible[0]
            cands = (DEFER_ACTION, *schedulable)
            return DecisionPoint(
                Stage.ROBOT_SCHEDULE, rid, cands, (True,) * len(cands), state
            )
    return None


# --- event effects ----------------------------------------------------------

def _create_return_task(state: WarehouseState, sid: int, tid: int) -> None:
    task = Task(state.task_seq, TASK_RETURN, tid, sid, state.clock)
    state.task_seq += 1
    state.tasks[task.id] = task
    state.pending_tasks.append(task.id)
    state.stations[sid].retired.add(tid)
    state.tote_reserved.add(tid)


def _tote_needed(state: WarehouseState, sid: int, tid: int) -> bool:
    sku = state.instance.totes[tid].sku
    st = state.stations[sid]
    if st.pick_active is not None and st.pick_active[1] == tid:
        return True
    if any(job[1] == tid for job in st.pick_queue):
        return True
    for oid in st.active:
        ln = state.orders[oid].lines.get(sku)
        if ln is not None and not ln.picked and not ln.queued and ln.covered_by in (None, tid):
            return True
    return False


def _check_return_eligible(state: WarehouseState, sid: int, tid: int) -> None:
    st = state.stations[sid]
    if tid not in st.buffer or tid in st.retired:
        return
    if not _tote_needed(state, sid, tid):
        _create_return_task(state, sid, tid)


def _sweep_station_returns(state: WarehouseState, sid: int) -> None:
    for tid in list(state.stations[sid].buffer):
        _check_return_eligible(state, sid, tid)


def _enqueue_pick(state: WarehouseState, sid: int, tid: int, oid: int, sku: int) -> None:
    line = state.orders[oid].lines[sku]
    line.queued = True
    line.covered_by = tid
    state.stations[sid].pick_queue.append((state.job_seq, tid, oid, sku))
    state.job_seq += 1


def _maybe_start_pick(state: WarehouseState, sid: int) -> None:
    st = state.stations[sid]
    if st.pick_active is not None or not st.pick_queue:
        return
    job = st.pick_queue.pop(0)
    st.pick_active = job
    _, tid, oid, sku = job
    qty = next(l.quantity for l in state.instance.orders[oid].lines if l.sku == sku)
    dur = state.instance.speed.pick_s_per_line * qty
    _push(state, state.clock + dur, _RANK_PICK, (sid, job[0]), (job,))


def _serve_tote_arrival(state: WarehouseState, sid: int, tid: int) -> None:
    sku = state.instance.totes[tid].sku
    for oid in state.stations[sid].active:
        ln = state.orders[oid].lines.get(sku)
        if ln is not None and not ln.picked and not ln.queued:
            _enqueue_pick(state, sid, tid, oid, sku)
    _maybe_start_pick(state, sid)


def _serve_on_assign(state: WarehouseState, sid: int, oid: int) -> None:
    # A retired tote whose return trip has not been scheduled yet is still
    # physically present and may serve the new order.
    st = state.stations[sid]
    servable = state.servable_buffer(sid)
    for sku, ln in state.orders[oid].lines.items():
        if ln.picked or ln.queued:
            continue
        candidates = sorted(
            (tid for tid in servable if state.instance.totes[tid].sku == sku),
            key=lambda tid: (tid in st.retired, tid),
        )
        if candidates:
            _enqueue_pick(state, sid, candidates[0], oid, sku)
    _maybe_start_pick(state, sid)


def _process_event(state: WarehouseState, ev: tuple) -> None:
    t, rank = ev[0], ev[1]
    if rank == _RANK_ARRIVAL:
        oid = ev[2][0]
        state.pending_orders.append(oid)
    elif rank == _RANK_LOAD:
        rid, task_id = ev[2]
        loc = ev[4]
        task = state.tasks[task_id]
        robot = state.robots[rid]
        robot.position = loc
        robot.load.append(task.tote)
        if task.kind == TASK_RETRIEVAL:
            state.tote_place[task.tote] = Place.on_robot(rid)
            state.z_retrievals += 1
        else:
            st = state.stations[task.station]
            st.buffer.remove(task.tote)
            st.retired.discard(task.tote)
            state.tote_place[task.tote] = Place.on_robot(rid)
    elif rank == _RANK_UNLOAD:
        rid, task_id = ev[2]
        loc = ev[4]
        task = state.tasks[task_id]
        robot = state.robots[rid]
        robot.position = loc
        robot.load.remove(task.tote)
        state.tote_place[task.tote] = Place.at_workstation(task.station)
        state.stations[task.station].buffer.append(task.tote)
        state.tote_reserved.discard(task.tote)
        sku = state.instance.totes[task.tote].sku
        by_sku = state.inbound.get(task.station)
        if by_sku and by_sku.get(sku, 0) > 0:
            by_sku[sku] -= 1
        _serve_tote_arrival(state, task.station, task.tote)
        _check_return_eligible(state, task.station, task.tote)
    elif rank == _RANK_PICK:
        sid, _ = ev[2]
        job = ev[4]
        _, tid, oid, sku = job
        st = state.stations[sid]
        st.pick_active = None
        order = state.orders[oid]
        order.lines[sku].picked = True
        order.lines[sku].queued = False
        if all(ln.picked for ln in order.lines.values()):
            order.status = "complete"
            st.active.remove(oid)
        _maybe_start_pick(state, sid)
        _sweep_station_returns(state, sid)
    elif rank == _RANK_RETURN:
        rid, task_id = ev[2]
        loc = ev[4]
        task = state.tasks[task_id]
        robot = state.robots[rid]
        robot.position = loc
        robot.load.remove(task.tote)
        state.tote_place[task.tote] = Place.in_storage(loc)
        state.tote_reserved.discard(task.tote)
        state.z_returns += 1
    elif rank == _RANK_ROBOT_FREE:
        rid = ev[2][0]
        robot = state.robots[rid]
        robot.position = ev[4]
        robot.active = False
        robot.busy_until = t
    else:  # pragma: no cover
        raise AssertionError(f"unknown event rank {rank}")


def _flush_trips(state: WarehouseState) -> bool:
    """Compile accumulated robot plans into trip events: every pickup in plan
    order, then every dropoff in plan order. Returns True if any trip left."""
    compiled = False
    for rid in sorted(state.robots):
        robot = state.robots[rid]
        if robot.active or not robot.plan:
            continue
        compiled = True
        speed = state.instance.speed
        kind = state.instance.kind
        t = state.clock
        pos = robot.position
        for task in robot.plan:
            loc = state.task_pickup_location(task)
            t += travel_time(pos, loc, kind, speed)
            pos = loc
            t += speed.load_s_per_tote
            _push(state, t, _RANK_LOAD, (rid, task.id), (loc,))
        for task in robot.plan:
            loc = state.task_dropoff_location(task)
            t += travel_time(pos, loc, kind, speed)
            pos = loc
            t += speed.load_s_per_tote
            rank = _RANK_UNLOAD if task.kind == TASK_RETRIEVAL else _RANK_RETURN
            _push(state, t, rank, (rid, task.id), (loc,))
        _push(state, t, _RANK_ROBOT_FREE, (rid,), (pos,))
        robot.plan = []
        robot.active = True
        robot.busy_until = t
    return compiled


def _advance(state: WarehouseState) -> None:
    """Pop and process every event sharing the earliest timestamp."""
    t0 = state.events[0][0]
    state.clock = t0
    while state.events and state.events[0][0] == t0:
        ev = heapq.heappop(state.events)
        _process_event(state, ev)
    state.deferred.clear()


def _is_complete(state: WarehouseState) -> bool:
    if any(o.status != "complete" for o in state.orders.values()):
        return False
    if any(p.kind != "in_storage" for p in state.tote_place.values()):
        return False
    if state.pending_tasks:
        return False
    if any(r.active or r.plan for r in state.robots.values()):
        return False
    return True


def _diagnose_deadlock(state: WarehouseState) -> SimulationDeadlock:
    if state.pending_orders:
        stage = Stage.ORDER_ASSIGN.value
    elif any(state.open_skus(sid) for sid in state.stations):
        stage = Stage.TOTE_MATCH.value
    elif state.pending_tasks:
        stage = Stage.ROBOT_SCHEDULE.value
    else:
        stage = None
    return SimulationDeadlock(
        f"event queue drained with incomplete orders; starved stage: {stage}",
        stage=stage,
    )


def _terminal_report(state: WarehouseState) -> MetricsReport:
    return MetricsReport(
        z_retrievals=state.z_retrievals,
        z_returns=state.z_returns,
        makespan=state.clock,
        runtime=0.0,
        decisions_per_stage=tuple(state.decision_counts[s] for s in STAGES),
    )


def next_decision(state: WarehouseState) -> DecisionPoint | MetricsReport:
    """Advance to the next required decision, or to episode termination.

    Returns the pending DecisionPoint unchanged if one was already issued and
    not yet applied. Raises SimulationDeadlock when the queue drains with
    incomplete orders and no feasible decision remaining.
    """
    if state.pending_dp is not None:
        return state.pending_dp
    while True:
        dp = _scan(state)
        if dp is not None:
            state.pending_dp = dp
            return dp
        if _flush_trips(state):
            continue
        if not state.events:
            if _is_complete(state):
                return _terminal_report(state)
            raise _diagnose_deadlock(state)
        _advance(state)


def apply_action(state: WarehouseState, dp: DecisionPoint, action: int) -> WarehouseState:
    """Apply a masked-feasible action for the pending decision point."""
    if state.pending_dp is None or state.pending_dp is not dp:
        if state.pending_dp is None or (
            state.pending_dp.stage != dp.stage or state.pending_dp.subject != dp.subject
        ):
            raise InfeasibleActionError("decision point is not pending in this state")
    try:
        idx = dp.candidates.index(action)
    except ValueError:
        raise InfeasibleActionError(
            f"action {action} not a candidate at {dp.stage.value}({dp.subject})"
        ) from None
    if not dp.mask[idx]:
        raise InfeasibleActionError(f"action {action} masked infeasible")

    state.records.append(
        ActionRecord(
            stage=dp.stage.value,
            subject=dp.subject,
            action=action,
            clock=state.clock,
            z_retrievals=state.z_retrievals,
            z_returns=state.z_returns,
        )
    )
    state.decision_counts[dp.stage] += 1
    state.pending_dp = None

    if action == DEFER_ACTION:
        state.deferred.add((dp.stage.value, dp.subject))
        return state

    if dp.stage is Stage.ORDER_ASSIGN:
        oid, sid = dp.subject, action
        state.pending_orders.remove(oid)
        order = state.orders[oid]
        order.status = "assigned"
        order.station = sid
        state.stations[sid].active.append(oid)
        _serve_on_assign(state, sid, oid)
    elif dp.stage is Stage.TOTE_MATCH:
        sid, tid = dp.subject, action
        sku = state.instance.totes[tid].sku
        state.tote_reserved.add(tid)
        for oid in state.stations[sid].active:
            ln = state.orders[oid].lines.get(sku)
            if ln is not None and not ln.picked and not ln.queued and ln.covered_by is None:
                ln.covered_by = tid
        task = Task(state.task_seq, TASK_RETRIEVAL, tid, sid, state.clock)
        state.task_seq += 1
        state.tasks[task.id] = task
        state.pending_tasks.append(task.id)
        state.inbound.setdefault(sid, {})
        state.inbound[sid][sku] = state.inbound[sid].get(sku, 0) + 1
    else:
        rid, task_id = dp.subject, action
        state.pending_tasks.remove(task_id)
        state.robots[rid].plan.append(state.tasks[task_id])
    return state


PolicyFn = Callable[[DecisionPoint, WarehouseState], int]


def run_episode(
    instance: WarehouseInstance,
    policies: dict[Stage, PolicyFn],
    seed: int = 0,
) -> tuple[MetricsReport, list[ActionRecord]]:
    """Drive a full episode; returns the final report and every decision made."""
    for stage in STAGES:
        if stage not in policies:
            raise ValueError(f"missing policy for stage {stage.value}")
    seen: set[int] = set()
    for fn in policies.values():
        if id(fn) in seen:
            continue
        seen.add(id(fn))
        begin = getattr(fn, "begin_episode", None)
        if begin is not None:
            begin(instance, seed)
    t0 = _time.perf_counter()
    state = reset(instance)
    while True:
        out = next_decision(state)
        if isinstance(out, MetricsReport):
            report = replace(out, runtime=_time.perf_counter() - t0)
            return report, state.records
        action = policies[out.stage](out, state)
        apply_action(state, out, action)


def write_episode_log(
    records: list[ActionRecord], report: MetricsReport, path: str | Path
) -> None:
    """Newline-delimited JSON: one record per decision, then the report."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
        fh.write(json.dumps({"report": report.to_dict()}, sort_keys=True) + "\n")
