"""Baseline policy behavior: utilities, stage rules, feasibility."""

import dataclasses

import pytest

import toteflow as tf
from toteflow.domain import Location, Workstation
from toteflow.engine import DEFER_ACTION, Stage, apply_action, next_decision, reset
from toteflow.errors import DomainError
from toteflow.policies import CsghParams, f_batch, pair_utility
from conftest import drive, tiny_instance


def _assign_both_orders(micro1):
    state = reset(micro1)
    for _ in range(2):
        dp = next_decision(state)
        assert dp.stage is Stage.ORDER_ASSIGN
        apply_action(state, dp, 0)
    return state


def test_f_batch_counts_servable_lines(micro1):
    state = _assign_both_orders(micro1)
    # tote 0 holds SKU 0, wanted only by order 0
    assert f_batch(0, 0, state) == 1
    # tote 1 holds SKU 1, wanted by both orders
    assert f_batch(1, 0, state) == 2


def test_f_batch_zero_when_no_demand(micro1):
    state = reset(micro1)  # nothing assigned yet
    assert f_batch(0, 0, state) == 0


def test_pair_utility_arithmetic(micro1):
    state = _assign_both_orders(micro1)
    params = CsghParams(alpha=1.0, beta=0.1)
    # robot 0 at column 0, tote 1 at column 2: two cells of travel
    travel = tf.travel_time(
        micro1.robots[0].position, micro1.totes[1].home, micro1.kind, micro1.speed
    )
    expected = 1.0 * f_batch(1, 0, state) - 0.1 * travel
    assert pair_utility(0, 1, 0, params, state) == pytest.approx(expected)


def test_pair_utility_degenerate_weights(micro1):
    state = _assign_both_orders(micro1)
    pure_batch = pair_utility(0, 1, 0, CsghParams(alpha=1.0, beta=0.0), state)
    assert pure_batch == pytest.approx(f_batch(1, 0, state))
    pure_travel = pair_utility(0, 1, 0, CsghParams(alpha=0.0, beta=1.0), state)
    travel = tf.travel_time(
        micro1.robots[0].position, micro1.totes[1].home, micro1.kind, micro1.speed
    )
    assert pure_travel == pytest.approx(-travel)


def test_csgh_params_validation():
    with pytest.raises(DomainError):
        CsghParams(alpha=0.0, beta=0.0)
    with pytest.raises(DomainError):
        CsghParams(alpha=-1.0)


def test_csgh_prefers_high_coverage_tote(micro1):
    state = _assign_both_orders(micro1)
    dp = next_decision(state)
    assert dp.stage is Stage.TOTE_MATCH
    choice = tf.make_policy("csgh", micro1)(dp, state)
    assert state.instance.totes[choice].sku == 1  # the shared SKU first


def test_g3_prefers_coverage_ignoring_distance():
    # Two stations' worth of demand at one station: tote of SKU A serves two
    # orders but sits far; tote of SKU B serves one and sits near.
    inst = tf.WarehouseInstance(
        kind=tf.SystemKind.MULTI_TOTE_2D,
        skus=2,
        orders=(
            tf.Order(id=0, lines=(tf.OrderLine(0),)),
            tf.Order(id=1, lines=(tf.OrderLine(0), tf.OrderLine(1))),
        ),
        totes=(
            tf.Tote(id=0, sku=0, quantity=5, home=Location(0, 9, 0)),
            tf.Tote(id=1, sku=1, quantity=5, home=Location(0, 1, 0)),
        ),
        robots=(tf.Robot(id=0, capacity=2, position=Location(0, 0, 0)),),
        workstations=(Workstation(id=0, position=Location(0, 0, 0), slots=6),),
        layout=(1, 10, 1),
    )
    state = reset(inst)
    for _ in range(2):
        dp = next_decision(state)
        apply_action(state, dp, 0)
    dp = next_decision(state)
    assert dp.stage is Stage.TOTE_MATCH
    assert tf.make_policy("g3")(dp, state) == 0  # two-order tote over nearer tote


def test_r3_prefers_nearest_tote_to_idle_robot():
    inst = tf.WarehouseInstance(
        kind=tf.SystemKind.MULTI_TOTE_2D,
        skus=2,
        orders=(
            tf.Order(id=0, lines=(tf.OrderLine(0),)),
            tf.Order(id=1, lines=(tf.OrderLine(1),)),
            tf.Order(id=2, lines=(tf.OrderLine(1),)),
        ),
        totes=(
            tf.Tote(id=0, sku=0, quantity=5, home=Location(0, 1, 0)),  # near robot
            tf.Tote(id=1, sku=1, quantity=5, home=Location(0, 8, 0)),  # far, 2 orders
        ),
        robots=(tf.Robot(id=0, capacity=2, position=Location(0, 0, 0)),),
        workstations=(Workstation(id=0, position=Location(0, 4, 0), slots=6),),
        layout=(1, 10, 1),
    )
    state = reset(inst)
    for _ in range(3):
        dp = next_decision(state)
        apply_action(state, dp, 0)
    dp = next_decision(state)
    assert dp.stage is Stage.TOTE_MATCH
    # r3 takes the tote nearest an idle robot; g3 would take the 2-order tote.
    assert tf.make_policy("r3")(dp, state) == 0
    assert tf.make_policy("g3")(dp, state) == 1


def test_km_matching_beats_greedy_nearest_on_crossing_case():
    # Robots at columns 0 and 3; totes at columns 2 and 9. Greedy-nearest
    # sends robot 1 to the far tote after robot 0 grabs the near one;
    # the matching swaps them for a lower joint travel cost.
    from toteflow.assignment import hungarian_max_weight

    d = [[3.0, 4.0], [1.0, 9.0]]  # travel cells robot x tote
    utilities = [[-c for c in row] for row in d]
    shift = min(min(r) for r in utilities)
    shifted = [[u - shift + 1 for u in row] for row in utilities]
    pairs = hungarian_max_weight(shifted)
    km_cost = sum(d[i][j] for i, j in pairs)
    greedy_cost = d[0][0] + d[1][1]  # robot 0 takes its nearest first
    assert km_cost < greedy_cost
    assert pairs == [(0, 1), (1, 0)]


def test_single_robot_single_task_all_policies_agree(micro1):
    single = dataclasses.replace(micro1.orders[1], id=0)
    inst = dataclasses.replace(micro1, orders=(single,))
    outcomes = {}
    for name in ("csgh", "r3", "g3"):
        state = reset(inst)
        while True:
            dp = next_decision(state)
            if dp.stage is Stage.ROBOT_SCHEDULE:
                outcomes[name] = tf.make_policy(name, inst)(dp, state)
                break
            apply_action(state, dp, tf.make_policy(name, inst)(dp, state))
    assert len(set(outcomes.values())) == 1


def test_policies_only_emit_feasible_actions():
    for seed in (0, 4, 9):
        inst = tiny_instance(seed)
        for name in ("csgh", "r3", "g3", "random"):
            policy = tf.make_policy(name, inst)

            def watch(state):
                rec = state.records[-1]
                assert rec.action == DEFER_ACTION or rec.action >= 0

            drive(inst, policy, on_step=watch)


def test_shared_sku_case_r3_not_better_than_g3():
    # Two orders share a SKU whose tote is not the nearest; order-centric
    # batching should never lose to robot-first routing here.
    zs = {}
    inst = tf.generate(
        tf.InstanceConfig(
            name="shared", skus=4, orders=6, robots=2, workstations=2,
            totes=8, kind=tf.SystemKind.MULTI_TOTE_2D, seed=21,
        )
    )
    for name in ("r3", "g3"):
        report, _ = tf.run_episode(inst, tf.make_policies(name, inst))
        zs[name] = report.z_final
    assert zs["g3"] <= zs["r3"]


def test_csgh_defers_tote_match_when_sku_already_inbound(micro1):
    state = _assign_both_orders(micro1)
    dp = next_decision(state)
    policy = tf.make_policy("csgh", micro1)
    apply_action(state, dp, policy(dp, state))  # shared SKU tote committed
    dp = next_decision(state)
    assert dp.stage is Stage.TOTE_MATCH
    apply_action(state, dp, policy(dp, state))  # SKU 0 committed
    # All demand now inbound; if the engine were to offer more candidates the
    # policy would defer rather than duplicate.
    from toteflow.policies import _patient_candidates

    assert state.inbound_skus(0) == {0, 1}


def test_make_policy_unknown_name():
    with pytest.raises(KeyError):
        tf.make_policy("nope")
