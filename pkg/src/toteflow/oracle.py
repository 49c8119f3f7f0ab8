"""Exact minimization of total tote movements on small static instances.

In the static all-active regime (every arrival at time zero, no more orders
than put-wall slots) the objective is fully determined by the order-to-station
partition: each station pays one retrieval plus one return per distinct SKU
its orders demand, and no action sequence without deferrals can do better or
worse once the partition is fixed. The solver therefore branches over the
assignment prefix tree with an admissible sku-count bound, collapses
station-permutation symmetry through a canonical visited set, and finally
replays the best partition through the real engine to produce a concrete,
feasible trajectory whose objective equals the proven optimum.

``enumerate_exhaustive`` is the independent check: a plain depth-first
minimum over the engine's full decision tree (deferrals excluded), with no
pruning and no memoization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .domain import MetricsReport, WarehouseInstance
from .engine import (
    DEFER_ACTION,
    ActionRecord,
    DecisionPoint,
    Stage,
    WarehouseState,
    apply_action,
    next_decision,
    reset,
)
from .errors import OracleError, TrajectoryError
from .features import feature_scales, observe_rows
from .policies import f_batch
from .quotient import abstract_state, canonical_action_index, canonical_candidates

TRAJECTORY_FORMAT_VERSION = "toteflow_traj_v1"
DEFAULT_NODE_BUDGET = 10_000_000


@dataclass
class OracleResult:
    z_star: int
    trajectory: list[ActionRecord]
    nodes_expanded: int
    proved_optimal: bool
    instance_name: str = ""
    instance: WarehouseInstance | None = field(default=None, repr=False)


def _require_static_all_active(inst: WarehouseInstance) -> None:
    if any(o.arrival_time > 0 for o in inst.orders):
        raise OracleError("exact solving is defined for static instances only")
    if len(inst.orders) > inst.total_slots:
        raise OracleError(
            f"{len(inst.orders)} orders exceed {inst.total_slots} put-wall slots; "
            "outside the solver's all-active regime"
        )


def solve_exact(
    inst: WarehouseInstance,
    node_budget: int = DEFAULT_NODE_BUDGET,
    name: str = "",
) -> OracleResult:
    """Branch-and-bound over order-to-station assignments, then a trajectory
    dive. ``proved_optimal`` is False when the node budget ran out first."""
    _require_static_all_active(inst)

    order_ids = sorted(o.id for o in inst.orders)
    order_skus = [frozenset(l.sku for l in inst.orders[oid].lines) for oid in order_ids]
    station_ids = sorted(w.id for w in inst.workstations)
    slots = [inst.workstations[sid].slots for sid in station_ids]
    n_orders = len(order_ids)
    n_stations = len(station_ids)

    # Union of SKUs demanded by orders d.. (for the admissible completion bound).
    suffix_skus: list[frozenset] = [frozenset()] * (n_orders + 1)
    for d in range(n_orders - 1, -1, -1):
        suffix_skus[d] = suffix_skus[d + 1] | order_skus[d]

    best_cost = [None]
    best_assign = [None]
    nodes = [0]
    exhausted = [False]

    sets: list[frozenset] = [frozenset()] * n_stations
    slack = list(slots)
    assign = [-1] * n_orders
    visited: set[tuple] = set()

    def dfs(depth: int, cost: int) -> None:
        if exhausted[0]:
            return
        nodes[0] += 1
        if nodes[0] > node_budget:
            exhausted[0] = True
            return
        if depth == n_orders:
            if best_cost[0] is None or cost < best_cost[0]:
                best_cost[0] = cost
                best_assign[0] = list(assign)
            return
        bound = cost + len(suffix_skus[depth] - frozenset().union(*sets))
        if best_cost[0] is not None and bound >= best_cost[0]:
            return
        key = (depth, tuple(sorted((tuple(sorted(s)), sl) for s, sl in zip(sets, slack))))
        if key in visited:
            return
        visited.add(key)

        skus = order_skus[depth]
        children = []
        seen_shapes = set()
        for j in range(n_stations):
            if slack[j] <= 0:
                continue
            shape = (tuple(sorted(sets[j])), slack[j])
            if shape in seen_shapes:
                continue  # isomorphic sibling under station permutation
            seen_shapes.add(shape)
            added = len(skus - sets[j])
            children.append((added, -slack[j], j))
        # Best-affinity children first; among equals prefer the emptiest
        # station, so the first-found optimum is the slack-preserving one and
        # the exported supervision stays expressible in candidate features.
        children.sort()
        for added, _neg_slack, j in children:
            old_set = sets[j]
            sets[j] = old_set | skus
            slack[j] -= 1
            assign[depth] = j
            dfs(depth + 1, cost + added)
            sets[j] = old_set
            slack[j] += 1
            assign[depth] = -1

    dfs(0, 0)
    if best_cost[0] is None:
        raise OracleError("search exhausted the node budget before any incumbent")

    assignment = {
        order_ids[d]: station_ids[best_assign[0][d]] for d in range(n_orders)
    }
    report, records = _dive(inst, assignment)
    if report.z_final != 2 * best_cost[0]:
        raise OracleError(
            f"trajectory objective {report.z_final} disagrees with proven "
            f"partition cost {2 * best_cost[0]}"
        )
    return OracleResult(
        z_star=report.z_final,
        trajectory=records,
        nodes_expanded=nodes[0],
        proved_optimal=not exhausted[0],
        instance_name=name,
        instance=inst,
    )


def _dive(inst: WarehouseInstance, assignment: dict[int, int]):
    """Replay one concrete completion of the given partition.

    Tote and robot choices are free at this point (any completion realizes
    the proven objective), so they follow feature-canonical rules: highest
    line coverage then shortest travel. Keeps the exported supervision
    expressible in candidate features rather than entity identities.
    """
    from .domain import travel_time

    state = reset(inst)
    while True:
        out = next_decision(state)
        if isinstance(out, MetricsReport):
            return out, state.records
        if out.stage is Stage.ORDER_ASSIGN:
            action = assignment[out.subject]
        elif out.stage is Stage.TOTE_MATCH:
            inbound = state.inbound_skus(out.subject)
            cands = [
                t for t in out.real_actions()
                if state.instance.totes[t].sku not in inbound
            ] or out.real_actions()
            spos = inst.workstations[out.subject].position
            action = max(
                cands,
                key=lambda t: (
                    f_batch(t, out.subject, state),
                    -travel_time(inst.totes[t].home, spos, inst.kind, inst.speed),
                    -t,
                ),
            )
        else:
            rpos = state.robots[out.subject].position
            action = min(
                out.real_actions(),
                key=lambda t: (
                    travel_time(
                        rpos,
                        state.task_pickup_location(state.tasks[t]),
                        inst.kind,
                        inst.speed,
                    ),
                    t,
                ),
            )
        apply_action(state, out, action)


def enumerate_exhaustive(
    inst: WarehouseInstance | None = None,
    from_state: WarehouseState | None = None,
    node_limit: int = 2_000_000,
) -> tuple[int, int]:
    """Plain exhaustive minimum of z_final over the full decision tree.

    No pruning, no memoization; deferrals excluded (they only postpone).
    Returns (minimum z_final, nodes visited).
    """
    if from_state is None:
        if inst is None:
            raise OracleError("need an instance or a state")
        from_state = reset(inst)
    nodes = [0]

    def best(state: WarehouseState) -> int:
        nodes[0] += 1
        if nodes[0] > node_limit:
            raise OracleError(f"enumeration exceeded {node_limit} nodes")
        out = next_decision(state)
        if isinstance(out, MetricsReport):
            return out.z_final
        lo = None
        for action in out.real_actions():
            child = state.clone()
            dp = next_decision(child)
            apply_action(child, dp, action)
            z = best(child)
            if lo is None or z < lo:
                lo = z
        if lo is None:
            raise OracleError("decision point with no real action")
        return lo

    return best(from_state.clone()), nodes[0]


def lower_bound(state: WarehouseState) -> int:
    """Admissible completion bound.

    Counts two future movements per distinct SKU that is still demanded with
    no tote committed, buffered, or being picked for it, plus the movements
    already owed by outstanding totes: a committed retrieval not yet lifted
    owes its lift and return, and every tote away from storage owes its
    mandatory return. Commitments never cancel, so the bound never exceeds
    the true optimal completion cost.
    """
    required: set[int] = set()
    for o in state.orders.values():
        if o.status == "complete":
            continue
        for sku, ln in o.lines.items():
            if not ln.picked and not ln.queued:
                required.add(sku)
    served: set[int] = set()
    for sid in state.stations:
        for tid in state.servable_buffer(sid):
            served.add(state.instance.totes[tid].sku)
        served |= state.inbound_skus(sid)
    owed = 0
    for tid, place in state.tote_place.items():
        if place.kind != "in_storage":
            owed += 1  # return still to come
        elif tid in state.tote_reserved:
            owed += 2  # committed retrieval: lift and return still to come
    return state.z_final + 2 * len(required - served) + owed


def average_gap(policy_values: list[float], baseline_values: list[float]) -> float:
    """Signed mean relative excess over the baseline, in percent."""
    if len(policy_values) != len(baseline_values):
        raise OracleError("value lists must have equal length")
    if not policy_values:
        raise OracleError("need at least one value pair")
    if any(b <= 0 for b in baseline_values):
        raise OracleError("baseline objectives must be positive")
    return (
        sum((p - b) / b for p, b in zip(policy_values, baseline_values))
        / len(policy_values)
        * 100.0
    )


def replay_trajectory(
    inst: WarehouseInstance, records: list[ActionRecord]
) -> tuple[MetricsReport, WarehouseState]:
    """Re-drive the engine along recorded actions, checking feasibility."""
    state = reset(inst)
    for rec in records:
        out = next_decision(state)
        if isinstance(out, MetricsReport):
            raise TrajectoryError("episode terminated before trajectory ended")
        if out.stage.value != rec.stage or out.subject != rec.subject:
            raise TrajectoryError(
                f"replay divergence: expected {rec.stage}({rec.subject}), "
                f"engine offered {out.stage.value}({out.subject})"
            )
        apply_action(state, out, rec.action)
    out = next_decision(state)
    if not isinstance(out, MetricsReport):
        raise TrajectoryError("trajectory ended before the episode terminated")
    return out, state


def export_trajectories(results: list[OracleResult], out: str | Path) -> int:
    """Write proven trajectories with canonical keys, plus one subsequence
    record per suffix (the training-set augmentation). Returns the number of
    step records written."""
    for res in results:
        if not res.proved_optimal:
            raise TrajectoryError(
                f"{res.instance_name or 'result'}: refusing to export an "
                "unproven trajectory"
            )
        if res.instance is None:
            raise TrajectoryError("result carries no instance to replay")

    n_steps = 0
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(
            json.dumps({"version": TRAJECTORY_FORMAT_VERSION, "count": len(results)})
            + "\n"
        )
        for res in results:
            scales = feature_scales(res.instance)
            state = reset(res.instance)
            for step_index, rec in enumerate(res.trajectory):
                dp = next_decision(state)
                if isinstance(dp, MetricsReport):
                    raise TrajectoryError("trajectory longer than its episode")
                key = abstract_state(state, dp)
                idx = canonical_action_index(dp, state, rec.action)
                rows, _mask = observe_rows(dp, state, scales)
                canon_rows = [
                    rows[dp.candidates.index(a)]
                    for a in canonical_candidates(dp, state)
                ]
                fh.write(
                    json.dumps(
                        {
                            "type": "step",
                            "instance_name": res.instance_name,
                            "step_index": step_index,
                            "stage": dp.stage.value,
                            "subject": dp.subject,
                            "action": rec.action,
                            "action_index": idx,
                            "n_candidates": len(dp.candidates),
                            "key_hash": key.hash,
                            "key_features": key.to_features(),
                            "feature_rows": canon_rows,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
                n_steps += 1
                apply_action(state, dp, rec.action)
            for start in range(len(res.trajectory)):
                fh.write(
                    json.dumps(
                        {
                            "type": "subsequence",
                            "instance_name": res.instance_name,
                            "start_index": start,
                            "length": len(res.trajectory) - start,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
    return n_steps
