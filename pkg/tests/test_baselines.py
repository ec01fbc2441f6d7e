import pytest

from dpdplab.baselines import (
    ExactInfeasibleError,
    greedy_dispatch,
    make_greedy_policy,
    make_plan_policy,
    solve_exact,
    validate_routes,
)
from dpdplab.env import JointState, VehicleState, run_episode
from dpdplab.instance import FleetConfig, VehicleSpec, generate_instance
from dpdplab.routing import DELIVER, PICKUP, Action, Route, Stop, simulate_timeline

from conftest import make_instance, make_network, make_order
from oracles import exhaustive_optimum


def _state(rows, accepted=None):
    built = []
    for row in rows:
        if row is None:
            built.append(VehicleState(-1.0, -1.0, -1.0, -1, -1, feasible=False))
        else:
            cur, new = row
            built.append(VehicleState(cur, new, 0.0, 1, 0, feasible=True))
    k = len(built)
    return JointState(
        rows=built,
        order_id=0,
        positions=[(0.0, 0.0)] * k,
        accepted=accepted or [0] * k,
    )


def test_greedy_incremental_minimizes_detour():
    state = _state([(10.0, 13.0), (2.0, 9.0)])
    assert greedy_dispatch(state, "incremental") == 0  # detours 3 vs 7


def test_greedy_total_minimizes_new_length():
    state = _state([(10.0, 13.0), (2.0, 9.0)])
    assert greedy_dispatch(state, "total") == 1


def test_greedy_max_orders_prefers_busy_vehicle():
    state = _state([(0.0, 5.0), (0.0, 9.0)], accepted=[1, 4])
    assert greedy_dispatch(state, "max_orders") == 1


def test_greedy_ties_go_to_vehicle_zero():
    state = _state([(0.0, 5.0), (0.0, 5.0)], accepted=[0, 0])
    for rule in ("incremental", "total", "max_orders"):
        assert greedy_dispatch(state, rule) == 0


def test_greedy_skips_infeasible_rows():
    state = _state([None, (5.0, 6.0)], accepted=[9, 0])
    for rule in ("incremental", "total", "max_orders"):
        assert greedy_dispatch(state, rule) == 1


def test_all_rules_agree_on_single_feasible():
    state = _state([None, (1.0, 7.0), None])
    assert {greedy_dispatch(state, r) for r in ("incremental", "total", "max_orders")} == {1}


def test_greedy_aliases():
    assert make_greedy_policy("greedy1").policy_name == "incremental"
    assert make_greedy_policy("greedy2").policy_name == "total"
    assert make_greedy_policy("greedy3").policy_name == "max_orders"
    with pytest.raises(ValueError):
        make_greedy_policy("greedy4")


def test_exact_single_order_formula():
    net = make_network(
        coords=[(3.0, 0.0), (3.0, 4.0), (0.0, 0.0)],
        roles=["factory", "factory", "depot"],
    )
    fleet = FleetConfig(vehicles=[VehicleSpec(0, 2)], capacity=10, fixed_cost=300.0, unit_cost=2.0)
    inst = make_instance(net, [make_order(0, pickup=0, delivery=1, created_at=0)], fleet)
    res = solve_exact(inst)
    assert res.optimal
    assert res.nuv == 1
    assert res.tc == pytest.approx(300.0 + 2.0 * (3.0 + 4.0 + 5.0))
    assert res.assignment == {0: 0}


def test_exact_pools_orders_when_fixed_cost_dominates():
    net = make_network(
        coords=[(3.0, 0.0), (7.0, 0.0), (0.0, 0.0)],
        roles=["factory", "factory", "depot"],
    )
    fleet = FleetConfig(
        vehicles=[VehicleSpec(0, 2), VehicleSpec(1, 2)],
        capacity=10,
        fixed_cost=10_000.0,
        unit_cost=1.0,
    )
    orders = [
        make_order(0, pickup=0, delivery=1, created_at=0),
        make_order(1, pickup=0, delivery=1, created_at=0),
    ]
    inst = make_instance(net, orders, fleet)
    res = solve_exact(inst)
    assert res.nuv == 1


def test_exact_matches_exhaustive_enumerator():
    inst = generate_instance(seed=12, n_factories=6, n_orders=5, n_vehicles=3)
    res = solve_exact(inst)
    tc, nuv = exhaustive_optimum(inst)
    assert res.optimal
    assert res.tc == tc
    assert res.nuv == nuv


def test_exact_budget_validation():
    inst = generate_instance(seed=12, n_factories=6, n_orders=3, n_vehicles=2)
    with pytest.raises(ValueError, match="budget must be positive"):
        solve_exact(inst, budget=0)


def test_exact_budget_exhaustion_flags_result():
    inst = generate_instance(seed=13, n_factories=8, n_orders=8, n_vehicles=4)
    res = solve_exact(inst, budget=1e-9)
    assert not res.optimal


def test_exact_plan_replays_in_env():
    inst = generate_instance(seed=14, n_factories=6, n_orders=5, n_vehicles=3)
    res = solve_exact(inst)
    report, _ = run_episode(inst, make_plan_policy(res.assignment))
    assert report.nuv >= res.nuv
    assert report.tc >= res.tc - 1e-9
    assert validate_routes(report, inst).ok


def test_exact_infeasible_instance_raises(line_network):
    fleet = FleetConfig(vehicles=[VehicleSpec(0, 2)], capacity=1)
    inst = make_instance(
        line_network,
        [make_order(0, pickup=0, delivery=1, quantity=1, created_at=0, latest_delivery=1)],
        fleet,
    )
    with pytest.raises(ExactInfeasibleError):
        solve_exact(inst)


def test_plan_lines_describe_routes():
    inst = generate_instance(seed=15, n_factories=5, n_orders=3, n_vehicles=2)
    res = solve_exact(inst)
    lines = res.plan_lines()
    assert lines and all(line.startswith("vehicle ") for line in lines)


def test_validator_passes_greedy_episodes():
    for seed in (21, 22, 23):
        inst = generate_instance(seed=seed, n_factories=7, n_orders=10, n_vehicles=3)
        for rule in ("incremental", "total", "max_orders"):
            report, _ = run_episode(inst, make_greedy_policy(rule))
            verdict = validate_routes(report, inst)
            assert verdict.ok, verdict.violations


def test_validator_names_crossed_lifo_pair(line_network):
    fleet = FleetConfig(vehicles=[VehicleSpec(0, 2)], capacity=10)
    o1 = make_order(0, pickup=0, delivery=1, created_at=0)
    o2 = make_order(1, pickup=1, delivery=0, created_at=0)
    inst = make_instance(line_network, sorted([o1, o2], key=lambda o: o.created_at), fleet)
    report, _ = run_episode(inst, make_greedy_policy("incremental"))
    # Tamper: rebuild vehicle 0's route with crossed pairs.
    bad = Route(
        vehicle=0,
        depot=2,
        stops=[
            Stop(2),
            Stop(0, [Action(PICKUP, o1)]),
            Stop(1, [Action(PICKUP, o2), Action(DELIVER, o1)]),
            Stop(0, [Action(DELIVER, o2)]),
            Stop(2),
        ],
    )
    simulate_timeline(bad, line_network, 0.0)
    report.routes[0] = bad
    report.ttl = bad.length
    report.tc = fleet.fixed_cost * report.nuv + fleet.unit_cost * report.ttl
    verdict = validate_routes(report, inst)
    assert not verdict.ok
    assert any(v.startswith("lifo") and "stop 2" in v for v in verdict.violations)


def test_validator_catches_tampered_tc():
    inst = generate_instance(seed=25, n_factories=6, n_orders=5, n_vehicles=2)
    report, _ = run_episode(inst, make_greedy_policy("incremental"))
    report.tc += 1.0
    verdict = validate_routes(report, inst)
    assert not verdict.ok
    assert any("tc identity" in v for v in verdict.violations)


def test_validator_catches_unserved_order():
    inst = generate_instance(seed=26, n_factories=6, n_orders=4, n_vehicles=2)
    report, _ = run_episode(inst, make_greedy_policy("incremental"))
    victim = report.routes[[i for i, r in enumerate(report.routes) if not r.is_empty][0]]
    victim.stops = [s for s in victim.stops if not s.actions]
    verdict = validate_routes(report, inst)
    assert not verdict.ok
    assert any("served 0 times" in v for v in verdict.violations)


def test_oracle_dominates_policies_small():
    inst = generate_instance(seed=30, n_factories=6, n_orders=6, n_vehicles=3)
    res = solve_exact(inst)
    for rule in ("incremental", "total", "max_orders"):
        report, _ = run_episode(inst, make_greedy_policy(rule))
        assert res.tc <= report.tc + 1e-9
