"""Per-candidate feature extraction shared by the state abstraction and the
decision-environment wire protocol.

Two views of the same attributes:

* exact integer tuples (cell-precise travel, raw counts) feed the canonical
  abstract-state keys;
* scaled float rows feed external policies over the wire, standardized with
  per-instance constants so that homogeneous candidates produce identical
  rows.
"""

from __future__ import annotations

from .domain import WarehouseInstance, travel_time
from .engine import (
    DEFER_ACTION,
    DecisionPoint,
    Stage,
    TASK_RETRIEVAL,
    WarehouseState,
)
from .policies import f_batch

FEATURE_NAMES: dict[Stage, list[str]] = {
    Stage.ORDER_ASSIGN: [
        "order_lines",
        "order_priority",
        "arrival_rank",
        "station_slack",
        "pool_overlap",
        "served_overlap",
    ],
    Stage.TOTE_MATCH: [
        "tote_quantity",
        "line_coverage",
        "travel_to_station",
        "station_slack",
    ],
    Stage.ROBOT_SCHEDULE: [
        "availability",
        "travel_to_pickup",
        "capacity_slack",
        "is_retrieval",
        "line_coverage",
    ],
}


def _travel_cells(a, b) -> tuple[int, int]:
    return (abs(a.aisle - b.aisle) + abs(a.column - b.column), abs(a.level - b.level))


def _arrival_rank(state: WarehouseState, oid: int) -> int:
    order = state.instance.orders[oid]
    rank = 0
    for other in state.instance.orders:
        if (other.arrival_time, other.id) < (order.arrival_time, order.id):
            rank += 1
    return rank


def _order_candidate_features(state: WarehouseState, oid: int, sid: int) -> tuple:
    order = state.instance.orders[oid]
    my_skus = {line.sku for line in order.lines}
    served = {state.instance.totes[t].sku for t in state.servable_buffer(sid)}
    served |= state.inbound_skus(sid)
    pool: set[int] = set()
    for other in state.stations[sid].active:
        for sku, ln in state.orders[other].lines.items():
            if not ln.picked:
                pool.add(sku)
    return (
        len(my_skus & pool),
        len(my_skus & served),
        state.station_slack(sid),
    )


def _tote_candidate_features(state: WarehouseState, sid: int, tid: int) -> tuple:
    tote = state.instance.totes[tid]
    spos = state.instance.workstations[sid].position
    h, v = _travel_cells(tote.home, spos)
    return (f_batch(tid, sid, state), h, v, tote.quantity)


def _task_candidate_features(state: WarehouseState, rid: int, task_id: int) -> tuple:
    task = state.tasks[task_id]
    h, v = _travel_cells(
        state.robots[rid].position, state.task_pickup_location(task)
    )
    cover = f_batch(task.tote, task.station, state) if task.kind == TASK_RETRIEVAL else 0
    return (1 if task.kind == TASK_RETRIEVAL else 0, cover, h, v)


def exact_candidate_features(dp: DecisionPoint, state: WarehouseState) -> list[tuple]:
    """Integer feature tuple per real candidate (defer excluded), cell-exact."""
    out = []
    for action in dp.candidates:
        if action == DEFER_ACTION:
            continue
        if dp.stage is Stage.ORDER_ASSIGN:
            out.append(_order_candidate_features(state, dp.subject, action))
        elif dp.stage is Stage.TOTE_MATCH:
            out.append(_tote_candidate_features(state, dp.subject, action))
        else:
            out.append(_task_candidate_features(state, dp.subject, action))
    return out


def subject_features(dp: DecisionPoint, state: WarehouseState) -> tuple:
    """Exact feature tuple describing the decision subject."""
    if dp.stage is Stage.ORDER_ASSIGN:
        order = state.instance.orders[dp.subject]
        residual = tuple(
            sorted(
                sku
                for sku, ln in state.orders[dp.subject].lines.items()
                if not ln.picked
            )
        )
        return (len(order.lines), order.priority, residual)
    if dp.stage is Stage.TOTE_MATCH:
        open_multiset = tuple(
            sorted(
                (sku, state.uncovered_lines(dp.subject, sku))
                for sku in state.open_skus(dp.subject)
            )
        )
        return (state.station_slack(dp.subject), open_multiset)
    robot = state.robots[dp.subject]
    cap = state.instance.robots[dp.subject].capacity
    return (
        cap - len(robot.plan) - len(robot.load),
        max(0.0, robot.busy_until - state.clock),
    )


# --- wire-protocol float rows ----------------------------------------------

def feature_scales(instance: WarehouseInstance) -> dict[str, list[list[float]]]:
    """Per-stage (offset, scale) pairs used to standardize observation rows.

    Derived from instance-wide constants so clients can de-standardize.
    """
    mt = max(instance.max_travel_time(), 1.0)
    n_orders = max(len(instance.orders), 1)
    slots = max(max((w.slots for w in instance.workstations), default=1), 1)
    cap = max(max((r.capacity for r in instance.robots), default=1), 1)
    max_lines = max(max((len(o.lines) for o in instance.orders), default=1), 1)
    qty = max(max((t.quantity for t in instance.totes), default=1), 1)
    return {
        Stage.ORDER_ASSIGN.value: [
            [0.0, float(max_lines)],
            [0.0, 3.0],
            [0.0, float(n_orders)],
            [0.0, float(slots)],
            [0.0, float(max_lines)],
            [0.0, float(max_lines)],
        ],
        Stage.TOTE_MATCH.value: [
            [0.0, float(qty)],
            [0.0, float(slots)],
            [0.0, mt],
            [0.0, float(slots)],
        ],
        Stage.ROBOT_SCHEDULE.value: [
            [0.0, mt],
            [0.0, mt],
            [0.0, float(cap)],
            [0.0, 1.0],
            [0.0, float(slots)],
        ],
    }


def observe_rows(
    dp: DecisionPoint,
    state: WarehouseState,
    scales: dict[str, list[list[float]]] | None = None,
) -> tuple[list[list[float]], list[bool]]:
    """Standardized float row per candidate, defer row first (all zeros).

    Row count always equals mask length equals candidate count.
    """
    inst = state.instance
    if scales is None:
        scales = feature_scales(inst)
    stage_scales = scales[dp.stage.value]
    rows: list[list[float]] = []
    for action in dp.candidates:
        if action == DEFER_ACTION:
            rows.append([0.0] * len(stage_scales))
            continue
        if dp.stage is Stage.ORDER_ASSIGN:
            order = inst.orders[dp.subject]
            pool, served, slack = _order_candidate_features(state, dp.subject, action)
            raw = [
                float(len(order.lines)),
                float(order.priority),
                float(_arrival_rank(state, dp.subject)),
                float(slack),
                float(pool),
                float(served),
            ]
        elif dp.stage is Stage.TOTE_MATCH:
            cover, h, v, qty = _tote_candidate_features(state, dp.subject, action)
            travel = travel_time(
                inst.totes[action].home,
                inst.workstations[dp.subject].position,
                inst.kind,
                inst.speed,
            )
            raw = [
                float(qty),
                float(cover),
                travel,
                float(state.station_slack(dp.subject)),
            ]
        else:
            task = state.tasks[action]
            robot = state.robots[dp.subject]
            travel = travel_time(
                robot.position,
                state.task_pickup_location(task),
                inst.kind,
                inst.speed,
            )
            raw = [
                max(0.0, robot.busy_until - state.clock),
                travel,
                float(
                    inst.robots[dp.subject].capacity
                    - len(robot.plan)
                    - len(robot.load)
                ),
                1.0 if task.kind == TASK_RETRIEVAL else 0.0,
                float(f_batch(task.tote, task.station, state))
                if task.kind == TASK_RETRIEVAL
                else 0.0,
            ]
        rows.append(
            [(x - off) / sc for x, (off, sc) in zip(raw, stage_scales)]
        )
    return rows, list(dp.mask)


def global_summary(state: WarehouseState) -> list[float]:
    """Compact system snapshot appended to observations for external critics."""
    n_pending = len(state.pending_orders)
    n_active = sum(len(st.active) for st in state.stations.values())
    n_open = sum(state.uncovered_lines(sid) for sid in state.stations)
    n_tasks = len(state.pending_tasks)
    n_idle = sum(1 for rt in state.robots.values() if not rt.active)
    n_buffered = sum(len(st.buffer) for st in state.stations.values())
    return [
        float(n_pending),
        float(n_active),
        float(n_open),
        float(n_tasks),
        float(n_idle),
        float(n_buffered),
        float(state.z_retrievals),
        float(state.z_returns),
    ]
