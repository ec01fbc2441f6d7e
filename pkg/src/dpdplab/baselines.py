"""Greedy dispatch rules, a clairvoyant exact solver, and an independent
post-hoc validator for executed episodes.

The exact solver treats the whole order stream as known in advance (the
static relaxation of the online problem): it branches over order-to-vehicle
assignments, pricing each vehicle's order set with its optimal feasible
stop sequence (depth-first search over LIFO stack programs with time
windows and capacity, memoized per (depot, order set)).  The lower bound
``fixed_cost * used + unit_cost * sum_k optimal_length(set_k)`` is
admissible whenever distances satisfy the triangle inequality, which holds
for generated (Euclidean) instances; adding an order to a set can never
shorten its optimal route.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

from .env import EpisodeReport, JointState
from .instance import DeliveryOrder, Instance
from .routing import DELIVER, PICKUP, Action, Route, Stop, simulate_timeline

GREEDY_RULES = ("incremental", "total", "max_orders")

GREEDY_ALIASES = {
    "greedy1": "incremental",
    "greedy2": "total",
    "greedy3": "max_orders",
    "incremental": "incremental",
    "total": "total",
    "max_orders": "max_orders",
}


def greedy_dispatch(state: JointState, rule: str) -> int:
    """Pick a feasible vehicle by one of three myopic rules.

    ``incremental`` minimizes the added route length, ``total`` the
    resulting total route length, ``max_orders`` maximizes the vehicle's
    committed order count.  Ties go to the lowest vehicle id.
    """
    feasible = state.feasible_vehicles()
    if not feasible:
        raise ValueError(f"no feasible vehicle for order {state.order_id}")
    if rule == "incremental":
        return min(feasible, key=lambda k: (state.rows[k].new_len - state.rows[k].cur_len, k))
    if rule == "total":
        return min(feasible, key=lambda k: (state.rows[k].new_len, k))
    if rule == "max_orders":
        return min(feasible, key=lambda k: (-state.accepted[k], k))
    raise ValueError(f"unknown greedy rule {rule!r}")


def make_greedy_policy(rule: str) -> Callable[[JointState], int]:
    rule = GREEDY_ALIASES.get(rule, rule)
    if rule not in GREEDY_RULES:
        raise ValueError(f"unknown greedy rule {rule!r}")

    def policy(state: JointState) -> int:
        return greedy_dispatch(state, rule)

    policy.policy_name = rule
    return policy


def make_plan_policy(assignment: dict[int, int]) -> Callable[[JointState], int]:
    """Replay a precomputed order-to-vehicle assignment (e.g. the exact plan).

    The clairvoyant plan may be online-infeasible for the assigned vehicle,
    in which case the episode surfaces the failure rather than rerouting.
    """

    def policy(state: JointState) -> int:
        try:
            return assignment[state.order_id]
        except KeyError:
            raise ValueError(f"plan does not cover order {state.order_id}") from None

    policy.policy_name = "exact_plan"
    return policy


class ExactInfeasibleError(RuntimeError):
    """No assignment of orders to vehicles admits feasible routes."""


@dataclass
class ExactResult:
    tc: float
    nuv: int
    ttl: float
    assignment: dict[int, int]
    routes: dict[int, Route]
    optimal: bool
    nodes_explored: int
    seconds: float

    def plan_lines(self) -> list[str]:
        lines = []
        for vid in sorted(self.routes):
            route = self.routes[vid]
            seq = " ".join(
                str(stop.node)
                + "".join(
                    ("[+" if a.kind == PICKUP else "[-") + str(a.order.id) + "]"
                    for a in stop.actions
                )
                for stop in route.stops
            )
            lines.append(f"vehicle {vid}: {seq} length {route.length:.3f}")
        return lines


class _Budget:
    def __init__(self, seconds: float | None):
        self.deadline = None if seconds is None else time.monotonic() + seconds
        self.exhausted = False

    def check(self) -> bool:
        if self.deadline is not None and time.monotonic() > self.deadline:
            self.exhausted = True
        return self.exhausted


def _best_route_for(
    depot: int,
    order_ids: tuple[int, ...],
    orders_by_id: dict[int, DeliveryOrder],
    instance: Instance,
) -> tuple[float, tuple[tuple[str, int], ...]] | None:
    """Optimal feasible action sequence serving exactly ``order_ids``.

    Sequences are generated action by action: any remaining pickup, or
    delivering the current top of the LIFO stack.  The vehicle leaves the
    depot at minute 0 and may wait at pickups for order creation.
    """
    network = instance.network
    dist = network.dist
    speed = network.speed
    service = network.service_time
    capacity = instance.fleet.capacity
    best_len = math.inf
    best_seq: tuple[tuple[str, int], ...] | None = None

    def recurse(
        node: int,
        t: float,
        load: int,
        stack: tuple[int, ...],
        remaining: tuple[int, ...],
        length: float,
        seq: list[tuple[str, int]],
    ) -> None:
        nonlocal best_len, best_seq
        if length >= best_len:
            return
        if not remaining and not stack:
            total = length + float(dist[node, depot])
            if total < best_len:
                best_len = total
                best_seq = tuple(seq)
            return
        for oid in remaining:
            o = orders_by_id[oid]
            if load + o.quantity > capacity:
                continue
            leg = float(dist[node, o.pickup])
            t2 = max(t + leg / speed, float(o.created_at)) + service
            seq.append((PICKUP, oid))
            recurse(
                o.pickup,
                t2,
                load + o.quantity,
                stack + (oid,),
                tuple(x for x in remaining if x != oid),
                length + leg,
                seq,
            )
            seq.pop()
        if stack:
            oid = stack[-1]
            o = orders_by_id[oid]
            leg = float(dist[node, o.delivery])
            t2 = t + leg / speed + service
            if t2 <= o.latest_delivery + 1e-9:
                seq.append((DELIVER, oid))
                recurse(
                    o.delivery,
                    t2,
                    load - o.quantity,
                    stack[:-1],
                    remaining,
                    length + leg,
                    seq,
                )
                seq.pop()

    recurse(depot, 0.0, 0, (), order_ids, 0.0, [])
    if best_seq is None:
        return None
    return best_len, best_seq


def solve_exact(instance: Instance, budget: float | None = None) -> ExactResult:
    """Branch-and-bound optimum of the static (all orders known) problem.

    Intended for small instances (roughly up to 8 orders and 5 vehicles).
    When ``budget`` seconds elapse before the search finishes, the best
    incumbent is returned with ``optimal=False``.
    """
    if budget is not None and budget <= 0:
        raise ValueError("budget must be positive (or None for unlimited)")
    start = time.monotonic()
    orders = sorted(instance.orders, key=lambda o: (o.created_at, o.id))
    orders_by_id = {o.id: o for o in orders}
    vehicles = instance.fleet.vehicles
    fleet = instance.fleet
    budget_state = _Budget(budget)

    route_memo: dict[tuple[int, tuple[int, ...]], tuple[float, tuple] | None] = {}

    def priced(depot: int, ids: tuple[int, ...]) -> tuple[float, tuple] | None:
        key = (depot, ids)
        if key not in route_memo:
            route_memo[key] = _best_route_for(depot, ids, orders_by_id, instance)
        return route_memo[key]

    best_tc = math.inf
    best_sets: list[tuple[int, ...]] | None = None
    nodes = 0

    sets: list[tuple[int, ...]] = [() for _ in vehicles]
    lengths: list[float] = [0.0 for _ in vehicles]

    def assign(i: int) -> None:
        nonlocal best_tc, best_sets, nodes
        if budget_state.check():
            return
        nodes += 1
        used = sum(1 for s in sets if s)
        bound = fleet.fixed_cost * used + fleet.unit_cost * sum(lengths)
        if bound >= best_tc:
            return
        if i == len(orders):
            best_tc = bound
            best_sets = [tuple(s) for s in sets]
            return
        order = orders[i]
        seen_unused_depots: set[int] = set()
        for k, vehicle in enumerate(vehicles):
            if not sets[k]:
                # unused vehicles with the same depot are interchangeable
                if vehicle.depot in seen_unused_depots:
                    continue
                seen_unused_depots.add(vehicle.depot)
            new_ids = tuple(sorted(sets[k] + (order.id,)))
            priced_route = priced(vehicle.depot, new_ids)
            if priced_route is None:
                continue
            old_set, old_len = sets[k], lengths[k]
            sets[k] = new_ids
            lengths[k] = priced_route[0]
            assign(i + 1)
            sets[k] = old_set
            lengths[k] = old_len

    assign(0)
    seconds = time.monotonic() - start
    if best_sets is None:
        if budget_state.exhausted:
            return ExactResult(math.inf, 0, 0.0, {}, {}, False, nodes, seconds)
        raise ExactInfeasibleError("no feasible assignment of orders to vehicles exists")

    assignment: dict[int, int] = {}
    routes: dict[int, Route] = {}
    ttl = 0.0
    for k, ids in enumerate(best_sets):
        if not ids:
            continue
        vehicle = vehicles[k]
        length, seq = priced(vehicle.depot, ids)
        ttl += length
        for oid in ids:
            assignment[oid] = vehicle.id
        stops = [Stop(vehicle.depot)]
        for kind, oid in seq:
            o = orders_by_id[oid]
            node = o.pickup if kind == PICKUP else o.delivery
            stops.append(Stop(node, [Action(kind, o)]))
        stops.append(Stop(vehicle.depot))
        route = Route(vehicle=vehicle.id, depot=vehicle.depot, stops=stops)
        simulate_timeline(route, instance.network, 0.0)
        routes[vehicle.id] = route
    nuv = len(routes)
    tc = fleet.fixed_cost * nuv + fleet.unit_cost * ttl
    return ExactResult(
        tc=tc,
        nuv=nuv,
        ttl=ttl,
        assignment=assignment,
        routes=routes,
        optimal=not budget_state.exhausted,
        nodes_explored=nodes,
        seconds=seconds,
    )


# ---------------------------------------------------------------------------
# Post-hoc validation


@dataclass
class ValidationReport:
    ok: bool
    violations: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


def validate_routes(report: EpisodeReport, instance: Instance) -> ValidationReport:
    """Independently re-check an executed episode against every constraint.

    Re-simulates each route with its own walker (not the planner's), checks
    time windows, capacity, LIFO, back-to-depot and the frozen-prefix rule
    across successive commits, and verifies the cost identities.
    """
    violations: list[str] = []
    network = instance.network
    fleet = instance.fleet
    dist = network.dist
    speed = network.speed
    service = network.service_time

    served: dict[int, int] = {}
    recomputed_ttl = 0.0
    used = 0
    for route in report.routes:
        vid = route.vehicle
        if route.is_empty:
            if route.length != 0.0:
                violations.append(f"vehicle {vid}: empty route with nonzero length")
            continue
        used += 1
        stops = route.stops
        if stops[0].node != route.depot:
            violations.append(f"back-to-depot: vehicle {vid} does not start at its depot")
        if stops[-1].node != route.depot:
            violations.append(f"back-to-depot: vehicle {vid} does not end at its depot")
        t = route.start_time if route.start_time is not None else 0.0
        load = 0
        stack: list[int] = []
        length = 0.0
        prev = None
        for si, stop in enumerate(stops):
            if prev is not None:
                leg = float(dist[prev, stop.node])
                length += leg
                t += leg / speed
            prev = stop.node
            for act in stop.actions:
                o = act.order
                if act.kind == PICKUP:
                    if t < o.created_at:
                        t = float(o.created_at)
                    t += service
                    load += o.quantity
                    stack.append(o.id)
                    served[o.id] = served.get(o.id, 0) + 1
                    if o.pickup != stop.node:
                        violations.append(
                            f"vehicle {vid} stop {si}: order {o.id} picked at node {stop.node}, expected {o.pickup}"
                        )
                    if load > fleet.capacity:
                        violations.append(
                            f"capacity: vehicle {vid} stop {si} load {load} exceeds {fleet.capacity}"
                        )
                else:
                    if not stack or stack[-1] != o.id:
                        violations.append(
                            f"lifo: vehicle {vid} stop {si} order {o.id} not on top of stack"
                        )
                        if o.id in stack:
                            stack.remove(o.id)
                    else:
                        stack.pop()
                    t += service
                    load -= o.quantity
                    if o.delivery != stop.node:
                        violations.append(
                            f"vehicle {vid} stop {si}: order {o.id} delivered at node {stop.node}, expected {o.delivery}"
                        )
                    if t > o.latest_delivery + 1e-9:
                        violations.append(
                            f"time-window: vehicle {vid} stop {si} order {o.id} delivered at {t:.3f} after {o.latest_delivery}"
                        )
                if load < 0:
                    violations.append(f"capacity: vehicle {vid} stop {si} negative load")
        if stack:
            violations.append(f"lifo: vehicle {vid} finished with undelivered orders {stack}")
        if abs(length - route.length) > 1e-6:
            violations.append(
                f"vehicle {vid}: recorded length {route.length!r} differs from recomputed {length!r}"
            )
        recomputed_ttl += length

    for o in instance.orders:
        count = served.get(o.id, 0)
        if count != 1:
            violations.append(f"order {o.id} served {count} times")

    if abs(recomputed_ttl - report.ttl) > 1e-6:
        violations.append(f"ttl {report.ttl!r} differs from recomputed {recomputed_ttl!r}")
    if report.nuv != used:
        violations.append(f"nuv {report.nuv} differs from recomputed {used}")
    if report.tc != fleet.fixed_cost * report.nuv + fleet.unit_cost * report.ttl:
        violations.append("tc identity tc == fixed_cost*nuv + unit_cost*ttl is broken")

    by_vehicle: dict[int, list] = {}
    for rec in report.assignments:
        by_vehicle.setdefault(rec.vehicle, []).append(rec)
    delta_total = 0.0
    for vid, recs in by_vehicle.items():
        prev_stops = None
        for rec in recs:
            delta_total += rec.delta_d
            if prev_stops is not None:
                f = rec.frozen_until
                if rec.stops[: f + 1] != prev_stops[: f + 1]:
                    violations.append(
                        f"frozen-prefix: vehicle {vid} commit for order {rec.order_id} rewrote frozen stops"
                    )
            prev_stops = rec.stops
    if report.assignments and abs(delta_total - report.ttl) > 1e-6:
        violations.append(
            f"sum of per-order detours {delta_total!r} differs from ttl {report.ttl!r}"
        )

    return ValidationReport(ok=not violations, violations=violations)
