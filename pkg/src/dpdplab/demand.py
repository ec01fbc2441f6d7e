"""Spatial-temporal demand grids and the capacity/demand alignment score.

A demand grid is an ``n_factories x intervals`` matrix whose cell (i, j)
holds the total cargo quantity created at factory i during interval j.
Forecasting is element-wise averaging over past days' grids.

For a planned route we extract two aligned vectors over its factory stops:
the vehicle's residual capacity on arrival and the forecast demand at each
(factory, arrival-interval) cell.  Their Jensen-Shannon divergence (base-2
logarithm, so the value lies in [0, 1]) measures how poorly the route's
spare capacity tracks where demand is expected; low values indicate cheap
opportunities to absorb nearby future orders.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .instance import DeliveryOrder, MINUTES_PER_DAY, RoadNetwork
from .routing import Route


class DemandError(ValueError):
    """Raised on malformed grids or misaligned profile vectors."""


@dataclass
class DemandGrid:
    values: np.ndarray  # shape (n_factories, intervals), non-negative

    @property
    def n_factories(self) -> int:
        return int(self.values.shape[0])

    @property
    def intervals(self) -> int:
        return int(self.values.shape[1])

    @property
    def total(self) -> float:
        return float(self.values.sum())

    def to_csv(self) -> str:
        lines = [",".join(repr(float(v)) for v in row) for row in self.values]
        return "\n".join(lines) + "\n"


def build_demand_grid(
    orders: Sequence[DeliveryOrder], n_factories: int, intervals: int
) -> DemandGrid:
    """Accumulate order quantities into (pickup factory, creation interval) cells.

    Intervals are left-closed right-open, so a creation time exactly on a
    boundary counts toward the later interval.
    """
    width = MINUTES_PER_DAY / intervals
    grid = np.zeros((n_factories, intervals), dtype=float)
    for o in orders:
        if not 0 <= o.pickup < n_factories:
            raise DemandError(f"order {o.id} pickup {o.pickup} outside factory range 0..{n_factories - 1}")
        j = int(o.created_at // width)
        if not 0 <= j < intervals:
            raise DemandError(f"order {o.id} created_at {o.created_at} outside the day horizon")
        grid[o.pickup, j] += o.quantity
    return DemandGrid(grid)


def predict_grid(history: Sequence[DemandGrid]) -> DemandGrid:
    """Element-wise mean of past days' grids."""
    if not history:
        raise DemandError("history must contain at least one grid")
    shape = history[0].values.shape
    for g in history[1:]:
        if g.values.shape != shape:
            raise DemandError(f"grid shape {g.values.shape} does not match {shape}")
    stacked = np.stack([g.values for g in history])
    return DemandGrid(stacked.mean(axis=0))


@dataclass
class RouteProfile:
    """Values indexed by (factory, interval) coordinates along a route's stops."""

    coords: list[tuple[int, int]]
    values: np.ndarray
    kind: str  # "capacity" | "demand"


def _stop_coords(route: Route, network: RoadNetwork, intervals: int) -> list[tuple[int, int, int]]:
    """(stop index, factory, arrival interval) for each non-depot stop.

    Arrival intervals past the end of the day clamp to the final interval.
    """
    width = MINUTES_PER_DAY / intervals
    out = []
    for idx, stop in enumerate(route.stops):
        if network.is_depot(stop.node):
            continue
        j = min(max(int(stop.arrival // width), 0), intervals - 1)
        out.append((idx, stop.node, j))
    return out


def capacity_profile(route: Route, capacity: int, network: RoadNetwork, intervals: int) -> RouteProfile:
    """Residual capacity on arrival at each factory stop of a simulated route."""
    entries = _stop_coords(route, network, intervals)
    values = []
    coords = []
    for idx, factory, j in entries:
        load_on_arrival = route.load_profile[idx - 1] if idx > 0 else 0
        values.append(float(capacity - load_on_arrival))
        coords.append((factory, j))
    return RouteProfile(coords=coords, values=np.array(values, dtype=float), kind="capacity")


def demand_profile(route: Route, grid: DemandGrid, network: RoadNetwork) -> RouteProfile:
    """Forecast demand at each factory stop's spatial-temporal coordinate."""
    entries = _stop_coords(route, network, grid.intervals)
    coords = [(factory, j) for _, factory, j in entries]
    values = np.array([grid.values[f, j] for f, j in coords], dtype=float)
    return RouteProfile(coords=coords, values=values, kind="demand")


def divergence_score(capacity: RouteProfile, demand: RouteProfile, smoothing: float = 1e-9) -> float:
    """Base-2 Jensen-Shannon divergence between the two normalized profiles.

    Both value vectors are additively smoothed and renormalized into
    probability distributions (an all-zero vector becomes uniform), so the
    result is well-defined and bounded in [0, 1]; 0 means identical shapes.
    """
    if len(capacity.values) != len(demand.values):
        raise DemandError(
            f"profile length mismatch: {len(capacity.values)} vs {len(demand.values)}"
        )
    if len(capacity.values) == 0:
        raise DemandError("profiles must contain at least one entry")
    if capacity.coords != demand.coords:
        raise DemandError("profiles are not aligned on the same coordinates")
    p = np.asarray(capacity.values, dtype=float) + smoothing
    q = np.asarray(demand.values, dtype=float) + smoothing
    p /= p.sum()
    q /= q.sum()
    m = 0.5 * (p + q)
    js = 0.5 * float(np.sum(p * np.log2(p / m))) + 0.5 * float(np.sum(q * np.log2(q / m)))
    return float(min(max(js, 0.0), 1.0))
