"""Episode simulator and the route-centric decision process.

Orders are processed strictly in creation order, each immediately on
arrival.  For every order the simulator asks the insertion planner for each
vehicle's feasibility, current/new route length, demand-alignment score,
used flag and the current interval index (five features per vehicle), hands
the joint state to a dispatch policy, and commits the chosen vehicle's best
insertion.  Rewards are cost-shaped: an instant term charging the per-km
cost of the detour plus the fixed cost when the assignment activates a
fresh vehicle, and an episode-mean term added to every order's reward once
the day ends so the summed signal equals the negated scaled total cost.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .demand import DemandGrid, build_demand_grid, predict_grid
from .instance import DeliveryOrder, Instance
from .routing import PlannerResult, Route, plan_insertion

DEFAULT_ALPHA = 0.01


class UnserviceableOrderError(RuntimeError):
    """No vehicle can feasibly serve an order; the episode cannot continue."""

    def __init__(self, order_id: int):
        super().__init__(f"no vehicle has a feasible insertion for order {order_id}")
        self.order_id = order_id


@dataclass
class VehicleState:
    """Per-vehicle feature row; all five features are -1 when infeasible."""

    cur_len: float
    new_len: float
    score: float
    used_flag: int
    interval: int
    feasible: bool

    @classmethod
    def from_planner(cls, result: PlannerResult) -> "VehicleState":
        return cls(
            cur_len=result.cur_len,
            new_len=result.new_len,
            score=result.score,
            used_flag=result.used_flag,
            interval=result.interval,
            feasible=result.feasible,
        )

    def features(self) -> tuple[float, float, float, float, float]:
        return (
            float(self.cur_len),
            float(self.new_len),
            float(self.score),
            float(self.used_flag),
            float(self.interval),
        )


@dataclass
class JointState:
    """Fleet state with respect to one order: K rows plus vehicle positions.

    ``accepted`` carries each vehicle's committed order count as side
    information for dispatch rules; it is not part of the feature rows.
    """

    rows: list[VehicleState]
    order_id: int
    positions: list[tuple[float, float]]
    accepted: list[int]

    @property
    def n_vehicles(self) -> int:
        return len(self.rows)

    def feasible_vehicles(self) -> list[int]:
        return [k for k, row in enumerate(self.rows) if row.feasible]

    def feature_matrix(self) -> np.ndarray:
        return np.array([row.features() for row in self.rows], dtype=float)


@dataclass
class Transition:
    state: JointState
    action: int
    interval_end: bool
    reward: float
    next_state: JointState | None


@dataclass
class AssignmentRecord:
    order_id: int
    vehicle: int
    delta_d: float
    reward: float
    frozen_until: int
    stops: tuple


@dataclass
class EpisodeReport:
    nuv: int
    ttl: float
    tc: float
    assignments: list[AssignmentRecord]
    routes: list[Route]
    decision_seconds_mean: float = 0.0
    decision_seconds_max: float = 0.0

    def trace_lines(self) -> list[str]:
        return [
            f"{a.order_id} {a.vehicle} {a.delta_d!r} {a.reward!r}" for a in self.assignments
        ]

    def to_dict(self) -> dict:
        return {
            "nuv": self.nuv,
            "ttl": self.ttl,
            "tc": self.tc,
            "assignments": [
                {
                    "order": a.order_id,
                    "vehicle": a.vehicle,
                    "delta_d": a.delta_d,
                    "reward": a.reward,
                }
                for a in self.assignments
            ],
            "routes": [
                {
                    "vehicle": r.vehicle,
                    "stops": [
                        {
                            "node": s.node,
                            "arrival": s.arrival,
                            "departure": s.departure,
                            "actions": [(a.kind, a.order.id) for a in s.actions],
                        }
                        for s in r.stops
                    ],
                    "length": r.length,
                }
                for r in self.routes
            ],
            "decision_seconds_mean": self.decision_seconds_mean,
            "decision_seconds_max": self.decision_seconds_max,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def instant_reward(
    used_flag: int, delta_d: float, fixed_cost: float, unit_cost: float, alpha: float
) -> float:
    """Negated, scaled marginal cost of one assignment.

    The fixed cost is charged exactly when the assignment activates the
    vehicle (its used flag is still 0), so instant rewards over an episode
    sum to ``-alpha * (fixed_cost * NUV + unit_cost * TTL)``.
    """
    activation = 1 if used_flag == 0 else 0
    return -alpha * (fixed_cost * activation + unit_cost * delta_d)


def long_term_reward(instant_rewards: Sequence[float]) -> float:
    """Mean instant reward per served order across the whole episode."""
    if not instant_rewards:
        raise ValueError("cannot average rewards over an episode with no served orders")
    return float(sum(instant_rewards) / len(instant_rewards))


@dataclass
class _VehicleRuntime:
    vehicle_id: int
    depot: int
    route: Route
    served: int = 0


def episode_demand_grid(instance: Instance) -> DemandGrid:
    """Forecast grid for an episode: mean over history days when available,
    otherwise the instance's own order stream."""
    n = instance.network.n_factories
    if instance.history:
        grids = [build_demand_grid(day, n, instance.horizon) for day in instance.history]
        return predict_grid(grids)
    return build_demand_grid(instance.orders, n, instance.horizon)


def _plan_all(
    order: DeliveryOrder,
    runtimes: Sequence[_VehicleRuntime],
    instance: Instance,
    predicted: DemandGrid,
    now: float,
) -> list[PlannerResult]:
    return [
        plan_insertion(
            rt.route, order, now, instance.network, instance.fleet, instance.horizon, predicted
        )
        for rt in runtimes
    ]


def _joint_state(
    order: DeliveryOrder,
    runtimes: Sequence[_VehicleRuntime],
    instance: Instance,
    results: Sequence[PlannerResult],
    now: float,
) -> JointState:
    from .routing import vehicle_position

    return JointState(
        rows=[VehicleState.from_planner(r) for r in results],
        order_id=order.id,
        positions=[vehicle_position(rt.route, instance.network, now) for rt in runtimes],
        accepted=[rt.served for rt in runtimes],
    )


def build_joint_state(
    order: DeliveryOrder,
    routes: Sequence[Route],
    instance: Instance,
    predicted: DemandGrid | None = None,
    now: float | None = None,
) -> JointState:
    """Assemble the fleet state for one order from committed routes."""
    if predicted is None:
        predicted = episode_demand_grid(instance)
    if now is None:
        now = float(order.created_at)
    runtimes = [
        _VehicleRuntime(r.vehicle, r.depot, r, served=len(r.order_ids())) for r in routes
    ]
    results = _plan_all(order, runtimes, instance, predicted, now)
    return _joint_state(order, runtimes, instance, results, now)


PolicyFn = Callable[[JointState], int]


def run_episode(
    instance: Instance,
    policy: PolicyFn,
    record: bool = False,
    alpha: float = DEFAULT_ALPHA,
    predicted: DemandGrid | None = None,
) -> tuple[EpisodeReport, list[Transition]]:
    """Simulate one day; returns the cost report and (if recorded) transitions.

    Deterministic given the instance and the policy's own randomness; aborts
    with :class:`UnserviceableOrderError` when an order fits no vehicle.
    """
    if predicted is None:
        predicted = episode_demand_grid(instance)
    fleet = instance.fleet
    runtimes = [
        _VehicleRuntime(v.id, v.depot, Route.empty(v.id, v.depot)) for v in fleet.vehicles
    ]
    orders = instance.orders
    intervals = [instance.interval_of(o.created_at) for o in orders]
    last_in_interval = [
        i == len(orders) - 1 or intervals[i] != intervals[i + 1] for i in range(len(orders))
    ]

    transitions: list[Transition] = []
    rewards: list[float] = []
    records: list[AssignmentRecord] = []
    decision_times: list[float] = []

    for idx, order in enumerate(orders):
        now = float(order.created_at)
        t0 = time.perf_counter()
        results = _plan_all(order, runtimes, instance, predicted, now)
        state = _joint_state(order, runtimes, instance, results, now)
        if not state.feasible_vehicles():
            raise UnserviceableOrderError(order.id)
        k = int(policy(state))
        decision_times.append(time.perf_counter() - t0)
        result = results[k]
        if not result.feasible:
            raise ValueError(f"policy chose infeasible vehicle {k} for order {order.id}")

        rt = runtimes[k]
        prev_sigs = rt.route.signatures()
        new_route = result.best_route
        frozen = new_route.frozen_until
        if new_route.signatures()[: frozen + 1] != prev_sigs[: frozen + 1]:
            raise RuntimeError(
                f"insertion for order {order.id} altered the frozen prefix of vehicle {k}"
            )
        delta = result.new_len - result.cur_len
        r = instant_reward(result.used_flag, delta, fleet.fixed_cost, fleet.unit_cost, alpha)
        rt.route = new_route
        rt.served += 1
        rewards.append(r)
        records.append(
            AssignmentRecord(
                order_id=order.id,
                vehicle=k,
                delta_d=delta,
                reward=r,
                frozen_until=frozen,
                stops=new_route.signatures(),
            )
        )
        tr = Transition(state, k, last_in_interval[idx], r, None)
        if transitions:
            transitions[-1].next_state = state
        transitions.append(tr)

    if rewards:
        mean_reward = long_term_reward(rewards)
        for tr, rec in zip(transitions, records):
            tr.reward = tr.reward + mean_reward
            rec.reward = tr.reward

    nuv = sum(1 for rt in runtimes if rt.served > 0)
    ttl = sum(rt.route.length for rt in runtimes)
    report = EpisodeReport(
        nuv=nuv,
        ttl=ttl,
        tc=fleet.fixed_cost * nuv + fleet.unit_cost * ttl,
        assignments=records,
        routes=[rt.route for rt in runtimes],
        decision_seconds_mean=float(np.mean(decision_times)) if decision_times else 0.0,
        decision_seconds_max=float(max(decision_times)) if decision_times else 0.0,
    )
    return report, transitions
