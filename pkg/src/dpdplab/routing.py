"""Route representation and the constrained insertion planner.

A route is a depot-to-depot stop sequence.  Each stop carries an ordered
list of load/unload actions; timing is simulated with a constant travel
speed, a fixed per-action service time, and waiting at pickups whose order
has not been created yet.  Feasibility covers four constraints: delivery
time windows, vehicle capacity, LIFO loading (only the most recently
loaded undelivered order may be unloaded), and back-to-depot.

Dispatching must not interfere with a moving vehicle: stops up to
``frozen_until`` (the stop the vehicle currently occupies or is driving
toward) are immutable, and new stops may only be inserted after them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .instance import DeliveryOrder, FleetConfig, MINUTES_PER_DAY, RoadNetwork

PICKUP = "pickup"
DELIVER = "deliver"


@dataclass(frozen=True)
class Action:
    kind: str
    order: DeliveryOrder

    @property
    def order_id(self) -> int:
        return self.order.id

    def signature(self) -> tuple[str, int]:
        return (self.kind, self.order.id)


@dataclass
class Stop:
    node: int
    actions: list[Action] = field(default_factory=list)
    arrival: float = 0.0
    departure: float = 0.0

    def signature(self) -> tuple[int, tuple[tuple[str, int], ...]]:
        return (self.node, tuple(a.signature() for a in self.actions))


@dataclass
class Verdict:
    feasible: bool
    violation: str | None = None  # "time-window" | "capacity" | "lifo" | "back-to-depot"
    detail: str = ""

    def __bool__(self) -> bool:
        return self.feasible


FEASIBLE = Verdict(True)


@dataclass
class Route:
    """A vehicle's committed stop sequence plus its simulated timeline.

    ``start_time`` is the minute the vehicle first left its depot (``None``
    until the first order is committed).  ``load_profile`` and
    ``stack_profile`` record cargo load and the LIFO stack after each stop;
    both are filled by :func:`simulate_timeline`.
    """

    vehicle: int
    depot: int
    stops: list[Stop]
    start_time: float | None = None
    frozen_until: int = 0
    length: float = 0.0
    load_profile: list[int] = field(default_factory=list)
    stack_profile: list[tuple[int, ...]] = field(default_factory=list)

    @classmethod
    def empty(cls, vehicle: int, depot: int) -> "Route":
        return cls(vehicle=vehicle, depot=depot, stops=[Stop(node=depot)])

    @property
    def is_empty(self) -> bool:
        return not any(s.actions for s in self.stops)

    def order_ids(self) -> list[int]:
        return [a.order.id for s in self.stops for a in s.actions if a.kind == PICKUP]

    def signatures(self) -> tuple[tuple[int, tuple[tuple[str, int], ...]], ...]:
        return tuple(s.signature() for s in self.stops)


@dataclass
class PlannerResult:
    """Outcome of planning one order onto one vehicle.

    When no feasible insertion exists every numeric field is the sentinel
    ``-1`` and ``best_route`` is ``None``.
    """

    feasible: bool
    cur_len: float
    new_len: float
    score: float
    used_flag: int
    interval: int
    best_route: Route | None

    @classmethod
    def no_fit(cls) -> "PlannerResult":
        return cls(False, -1.0, -1.0, -1.0, -1, -1, None)

    def features(self) -> tuple[float, float, float, float, float]:
        return (
            float(self.cur_len),
            float(self.new_len),
            float(self.score),
            float(self.used_flag),
            float(self.interval),
        )


# ---------------------------------------------------------------------------
# Timeline simulation


def _process_actions(
    t: float,
    load: int,
    stack: list[int],
    actions: Iterable[Action],
    service_time: float,
    capacity: int,
) -> tuple[float, int, str | None, str]:
    """Run a stop's actions in order; returns (time, load, violation, detail).

    Pickups wait for the order's creation minute before loading; a delivery
    must finish (including its service time) by the order's deadline.
    """
    for act in actions:
        o = act.order
        if act.kind == PICKUP:
            if t < o.created_at:
                t = float(o.created_at)
            t += service_time
            load += o.quantity
            stack.append(o.id)
            if load > capacity:
                return t, load, "capacity", f"load {load} exceeds capacity {capacity} picking order {o.id}"
        else:
            if not stack or stack[-1] != o.id:
                return t, load, "lifo", f"order {o.id} is not on top of the stack"
            t += service_time
            if t > o.latest_delivery + 1e-9:
                return t, load, "time-window", f"order {o.id} delivered at {t:.3f} after {o.latest_delivery}"
            stack.pop()
            load -= o.quantity
    return t, load, None, ""


def simulate_timeline(route: Route, network: RoadNetwork, start_time: float) -> Route:
    """Fill per-stop arrival/departure, length, load and stack profiles.

    Pure recomputation: violations are left for :func:`check_feasibility`,
    except LIFO mismatches which make load bookkeeping meaningless and are
    tolerated here by skipping the pop.
    """
    dist = network.dist
    service = network.service_time
    t = float(start_time)
    load = 0
    stack: list[int] = []
    length = 0.0
    route.start_time = float(start_time)
    route.load_profile = []
    route.stack_profile = []
    prev = None
    for stop in route.stops:
        if prev is not None:
            leg = float(dist[prev, stop.node])
            length += leg
            t += leg / network.speed
        stop.arrival = t
        for act in stop.actions:
            o = act.order
            if act.kind == PICKUP:
                if t < o.created_at:
                    t = float(o.created_at)
                t += service
                load += o.quantity
                stack.append(o.id)
            else:
                t += service
                if stack and stack[-1] == o.id:
                    stack.pop()
                load -= o.quantity
        stop.departure = t
        route.load_profile.append(load)
        route.stack_profile.append(tuple(stack))
        prev = stop.node
    route.length = length
    return route


def frozen_index(route: Route, now: float) -> int:
    """Index of the last stop dispatching may not touch at time ``now``.

    The stop the vehicle occupies (waiting or serving) or is driving toward.
    A never-dispatched or completed route freezes up to its last stop.
    """
    if route.start_time is None:
        return 0
    for idx, stop in enumerate(route.stops):
        if stop.departure > now:
            return idx
    return len(route.stops) - 1


def vehicle_position(route: Route, network: RoadNetwork, now: float) -> tuple[float, float]:
    """Planar position at ``now``: linear interpolation along the current leg."""
    stops = route.stops
    if route.start_time is None or now <= stops[0].departure:
        return network.coords(stops[0].node)
    for i in range(1, len(stops)):
        prev, cur = stops[i - 1], stops[i]
        if now < cur.arrival:
            travel = cur.arrival - prev.departure
            frac = (now - prev.departure) / travel if travel > 0 else 1.0
            x0, y0 = network.coords(prev.node)
            x1, y1 = network.coords(cur.node)
            return (x0 + frac * (x1 - x0), y0 + frac * (y1 - y0))
        if now < cur.departure:
            return network.coords(cur.node)
    return network.coords(stops[-1].node)


def check_feasibility(route: Route, network: RoadNetwork, fleet: FleetConfig) -> Verdict:
    """Re-walk a simulated route and report the first constraint violation."""
    stops = route.stops
    if stops[0].node != route.depot or stops[-1].node != route.depot:
        return Verdict(False, "back-to-depot", f"route of vehicle {route.vehicle} must start and end at depot {route.depot}")
    start = route.start_time if route.start_time is not None else 0.0
    seq = [(s.node, tuple(s.actions)) for s in stops]
    kind, detail, _, _ = _walk(seq, start, network, fleet.capacity)
    if kind is not None:
        return Verdict(False, kind, detail)
    return FEASIBLE


def _walk(
    seq: Sequence[tuple[int, tuple[Action, ...]]],
    start_time: float,
    network: RoadNetwork,
    capacity: int,
) -> tuple[str | None, str, float, float]:
    """Simulate a (node, actions) sequence; returns (violation, detail, length, end_time)."""
    dist = network.dist
    speed = network.speed
    service = network.service_time
    t = float(start_time)
    load = 0
    stack: list[int] = []
    length = 0.0
    prev = seq[0][0]
    first = True
    for node, actions in seq:
        if not first:
            leg = float(dist[prev, node])
            length += leg
            t += leg / speed
        first = False
        prev = node
        t, load, kind, detail = _process_actions(t, load, stack, actions, service, capacity)
        if kind is not None:
            return kind, detail, length, t
    if stack:
        return "lifo", f"orders {stack} picked up but never delivered", length, t
    return None, "", length, t


# ---------------------------------------------------------------------------
# Insertion planning


@dataclass
class _WalkState:
    node: int
    time: float
    load: int
    stack: tuple[int, ...]
    length: float


def _extend(
    state: _WalkState,
    seq: Iterable[tuple[int, tuple[Action, ...]]],
    network: RoadNetwork,
    capacity: int,
    best_len: float,
) -> _WalkState | None:
    """Advance a walk state through further stops; None on violation.

    Abandons early once accumulated length reaches ``best_len`` since
    distances are non-negative and cannot recover.
    """
    dist = network.dist
    speed = network.speed
    service = network.service_time
    t = state.time
    load = state.load
    stack = list(state.stack)
    length = state.length
    prev = state.node
    for node, actions in seq:
        leg = float(dist[prev, node])
        length += leg
        if length >= best_len:
            return None
        t += leg / speed
        prev = node
        t, load, kind, _ = _process_actions(t, load, stack, actions, service, capacity)
        if kind is not None:
            return None
    return _WalkState(prev, t, load, tuple(stack), length)


def _coalesce(stops: list[Stop], protect: int) -> list[Stop]:
    """Merge adjacent same-node stops, never touching indices <= protect."""
    out: list[Stop] = []
    for i, stop in enumerate(stops):
        if out and len(out) - 1 > protect and out[-1].node == stop.node:
            out[-1].actions.extend(stop.actions)
        else:
            out.append(Stop(stop.node, list(stop.actions)))
    return out


def plan_insertion(
    route: Route,
    order: DeliveryOrder,
    now: float,
    network: RoadNetwork,
    fleet: FleetConfig,
    horizon: int = 144,
    predicted=None,
) -> PlannerResult:
    """Find the shortest feasible way to serve ``order`` with this vehicle.

    Enumerates every pickup/delivery gap pair strictly after the frozen
    prefix, keeping existing stops in their relative order; the new stops go
    before the final depot return (a completed route gets a fresh return
    appended).  Ties on length resolve to the lexicographically smallest gap
    pair.  Infeasibility is a value (`PlannerResult.no_fit`), not an error.
    """
    from . import demand as _demand

    start = route.start_time if route.start_time is not None else float(now)
    frozen = frozen_index(route, now)
    base = [(s.node, tuple(s.actions)) for s in route.stops]
    if frozen == len(base) - 1:
        base.append((route.depot, ()))
    last = len(base) - 1

    capacity = fleet.capacity
    used_flag = 0 if route.is_empty else 1
    interval_minutes = MINUTES_PER_DAY / horizon
    interval = min(max(int(now // interval_minutes), 0), horizon - 1)

    # Walk states after each prefix base[:g]; the committed route is feasible
    # by construction so this never hits a violation.
    states: list[_WalkState | None] = [None] * (len(base) + 1)
    stack0: list[int] = []
    t0, load0, _, _ = _process_actions(
        float(start), 0, stack0, base[0][1], network.service_time, capacity
    )
    st = _WalkState(base[0][0], t0, load0, tuple(stack0), 0.0)
    states[1] = st
    for g in range(1, len(base)):
        st = _extend(st, [base[g]], network, capacity, math.inf)
        if st is None:
            raise RuntimeError(f"committed route of vehicle {route.vehicle} became infeasible")
        states[g + 1] = st

    pick = (order.pickup, (Action(PICKUP, order),))
    drop = (order.delivery, (Action(DELIVER, order),))

    best_len = math.inf
    best_pair: tuple[int, int] | None = None
    for i in range(frozen + 1, last + 1):
        mid = _extend(states[i], [pick], network, capacity, best_len)
        if mid is None:
            continue
        for j in range(i, last + 1):
            cand = _extend(mid, [drop] + list(base[j:]), network, capacity, best_len)
            if cand is not None and cand.length < best_len:
                best_len = cand.length
                best_pair = (i, j)
            if j < last:
                mid = _extend(mid, [base[j]], network, capacity, math.inf)
                if mid is None:
                    break

    if best_pair is None:
        return PlannerResult.no_fit()

    i, j = best_pair
    new_stops = (
        [Stop(n, list(a)) for n, a in base[:i]]
        + [Stop(order.pickup, [Action(PICKUP, order)])]
        + [Stop(n, list(a)) for n, a in base[i:j]]
        + [Stop(order.delivery, [Action(DELIVER, order)])]
        + [Stop(n, list(a)) for n, a in base[j:]]
    )
    new_stops = _coalesce(new_stops, frozen)
    best_route = Route(vehicle=route.vehicle, depot=route.depot, stops=new_stops, frozen_until=frozen)
    simulate_timeline(best_route, network, start)

    score = 0.0
    if predicted is not None:
        cap_vec = _demand.capacity_profile(best_route, capacity, network, horizon)
        dem_vec = _demand.demand_profile(best_route, predicted, network)
        if len(cap_vec.values):
            score = _demand.divergence_score(cap_vec, dem_vec)

    return PlannerResult(
        feasible=True,
        cur_len=route.length,
        new_len=best_route.length,
        score=score,
        used_flag=used_flag,
        interval=interval,
        best_route=best_route,
    )


def route_dump(route: Route) -> str:
    """One line per stop: ``node arrival departure [+id|-id]...`` for trace diffing."""
    lines = []
    for stop in route.stops:
        marks = " ".join(
            ("+" if a.kind == PICKUP else "-") + str(a.order.id) for a in stop.actions
        )
        line = f"{stop.node} {stop.arrival:.3f} {stop.departure:.3f}"
        lines.append(line + (" " + marks if marks else ""))
    return "\n".join(lines)
