"""Crossing priorities: bids, conflict maps, and per-point negotiation.

Every vehicle periodically broadcasts its identity, path, state, and last
input; negotiation is recomputed from such a snapshot at every step.  Each
collision point with waiting traffic runs one auction, vehicles bidding

    bid = (speed_weight * v + distance_weight) / (distance_to_point + epsilon)

so that close, fast vehicles rank first.  The negotiated lists yield, per
vehicle, the set ranked ahead of it anywhere on its route; together with
its frontal vehicle that is everything it must plan against.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

from .cbaa import run_auction
from .dynamics import VehicleState
from .geometry import (
    PROJECT_TOL,
    CollisionPoint,
    GlobalPos,
    Path,
    collision_points_ahead,
    euclidean_distance,
    locate,
    project,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BidParams:
    """Weights of the priority bid."""

    speed_weight: float = 1.0     # multiplies current speed in the numerator
    distance_weight: float = 1.0  # constant numerator term; keeps bids positive
    epsilon: float = 0.1          # m, keeps the denominator positive at the point

    def __post_init__(self) -> None:
        if self.speed_weight <= 0.0 or self.distance_weight <= 0.0:
            raise ValueError("bid weights must be positive")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class VehicleInfo:
    """One vehicle's broadcast: identity, route, state, last applied input."""

    vehicle_id: int
    path: Path
    state: VehicleState
    accel: float = 0.0

    def position(self) -> GlobalPos:
        return locate(self.path, self.state.p)


Snapshot = Mapping[int, VehicleInfo]


@dataclass(frozen=True)
class PriorityView:
    """Negotiation outcome for one step.

    crossing_lists orders, per collision point, all vehicles that still have
    the point ahead.  higher_priority[i] is everyone ranked above i at any
    point ahead of i; awareness[i] additionally includes i's frontal vehicle.
    """

    crossing_lists: dict[int, tuple[int, ...]]
    bids: dict[int, dict[int, float]]  # vehicle -> point index -> bid
    frontal: dict[int, frozenset[int]]
    higher_priority: dict[int, frozenset[int]]
    awareness: dict[int, frozenset[int]]
    diagnostics: tuple[str, ...] = ()

    def precedes(self, first: int, second: int, point_index: int) -> bool:
        """True when `first` is ranked above `second` at the given point."""
        order = self.crossing_lists.get(point_index, ())
        if first not in order or second not in order:
            return False
        return order.index(first) < order.index(second)


def compute_bid(v: float, d: float, params: BidParams) -> float:
    """Priority bid of a vehicle at speed v, d meters from the collision point."""
    if v < 0.0 or d < 0.0:
        raise ValueError(f"speed and distance must be nonnegative, got v={v} d={d}")
    return (params.speed_weight * v + params.distance_weight) / (d + params.epsilon)


def frontal_set(
    subject: int, snapshot: Snapshot, tol: float = PROJECT_TOL
) -> frozenset[int]:
    """Vehicles physically on the subject's path, ahead of it.

    Membership is geometric: the other vehicle's global position must lie on
    the subject's path (within tol) with a larger arc coordinate.  A right
    turner that has merged onto the subject's lane is frontal from the
    moment its position joins the path.
    """
    me = snapshot[subject]
    out = set()
    for vid, info in snapshot.items():
        if vid == subject:
            continue
        coord = project(me.path, info.position(), tol)
        if coord is not None and coord > me.state.p:
            out.add(vid)
    return frozenset(out)


def crossing_maps(
    snapshot: Snapshot,
) -> tuple[dict[int, frozenset[int]], dict[int, frozenset[int]]]:
    """Dual maps of pending conflicts.

    Returns (ahead, waiting): ahead[vehicle] is the set of collision point
    indices still strictly ahead on its path; waiting[point] is the set of
    vehicles that have that point ahead.  Points with no pending vehicle are
    present with an empty set.
    """
    ahead: dict[int, frozenset[int]] = {}
    waiting: dict[int, set[int]] = {}
    for vid in sorted(snapshot):
        info = snapshot[vid]
        for pt, _ in collision_points_ahead(info.path, info.state.p):
            waiting.setdefault(pt.index, set()).add(vid)
        ahead[vid] = frozenset(
            pt.index for pt, _ in collision_points_ahead(info.path, info.state.p)
        )
        for pt in info.path.collision_points:
            waiting.setdefault(pt.index, set())
    return ahead, {k: frozenset(v) for k, v in waiting.items()}


def _point_positions(snapshot: Snapshot) -> dict[int, CollisionPoint]:
    pts: dict[int, CollisionPoint] = {}
    for info in snapshot.values():
        for pt in info.path.collision_points:
            pts[pt.index] = pt
    return pts


def negotiate(snapshot: Snapshot, params: BidParams) -> PriorityView:
    """Run one negotiation step over the snapshot.

    One auction per collision point with pending vehicles, every vehicle
    bidding from its Euclidean distance to the point (equal to along-path
    distance in this layout).  Lone bidders win trivially without running
    the protocol.
    """
    ahead, waiting = crossing_maps(snapshot)
    points = _point_positions(snapshot)

    bids: dict[int, dict[int, float]] = {vid: {} for vid in snapshot}
    lists: dict[int, tuple[int, ...]] = {}
    for pidx in sorted(waiting):
        members = sorted(waiting[pidx])
        if not members:
            lists[pidx] = ()
            continue
        point_bids = {}
        for vid in members:
            info = snapshot[vid]
            d = euclidean_distance(info.position(), points[pidx].position)
            point_bids[vid] = compute_bid(info.state.v, d, params)
            bids[vid][pidx] = point_bids[vid]
        if len(members) == 1:
            lists[pidx] = (members[0],)
        else:
            winners, _ = run_auction(point_bids)
            lists[pidx] = winners

    frontal = {vid: frontal_set(vid, snapshot) for vid in sorted(snapshot)}
    higher: dict[int, frozenset[int]] = {}
    for vid in sorted(snapshot):
        above: set[int] = set()
        for pidx in ahead[vid]:
            order = lists[pidx]
            mine = order.index(vid)
            above.update(order[:mine])
        higher[vid] = frozenset(above)

    diagnostics = []
    for vid in sorted(snapshot):
        for front in sorted(frontal[vid]):
            for pidx in ahead[vid]:
                order = lists[pidx]
                if vid in order and front in order:
                    if order.index(vid) < order.index(front):
                        msg = (
                            f"point {pidx}: rear vehicle {vid} ranked above its "
                            f"frontal vehicle {front}; lists left untouched"
                        )
                        diagnostics.append(msg)
                        logger.warning(msg)

    awareness = {
        vid: frontal[vid] | higher[vid] for vid in sorted(snapshot)
    }
    return PriorityView(
        crossing_lists=lists,
        bids=bids,
        frontal=frontal,
        higher_priority=higher,
        awareness=awareness,
        diagnostics=tuple(diagnostics),
    )
