import numpy as np
import pytest

from dpdplab.instance import (
    DEPOT,
    FACTORY,
    DeliveryOrder,
    FleetConfig,
    Instance,
    Node,
    RoadNetwork,
    VehicleSpec,
    euclidean_matrix,
)


def make_network(coords, roles, speed=1.0, service_time=0.0, dist=None):
    nodes = [
        Node(id=i, role=role, x=float(x), y=float(y))
        for i, (role, (x, y)) in enumerate(zip(roles, coords))
    ]
    matrix = euclidean_matrix(nodes) if dist is None else np.array(dist, dtype=float)
    return RoadNetwork(nodes=nodes, dist=matrix, speed=speed, service_time=service_time)


def make_order(oid=0, pickup=0, delivery=1, quantity=1, created_at=0, latest_delivery=1440):
    return DeliveryOrder(
        id=oid,
        pickup=pickup,
        delivery=delivery,
        quantity=quantity,
        created_at=created_at,
        latest_delivery=latest_delivery,
    )


@pytest.fixture
def line_network():
    """Two factories and a depot on a line: depot 2 at x=0, factories at 3 and 7."""
    return make_network(
        coords=[(3.0, 0.0), (7.0, 0.0), (0.0, 0.0)],
        roles=[FACTORY, FACTORY, DEPOT],
    )


@pytest.fixture
def line_fleet():
    return FleetConfig(vehicles=[VehicleSpec(0, 2)], capacity=10)


def make_instance(network, orders, fleet, horizon=144, history=None):
    inst = Instance(network=network, orders=orders, fleet=fleet, horizon=horizon, history=history)
    inst.validate()
    return inst
