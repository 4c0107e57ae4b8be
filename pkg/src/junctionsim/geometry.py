"""Intersection layout: lane paths, collision points, and arc-length maps.

The world is a single four-way intersection of two orthogonal two-lane
roads, right-hand traffic, in a frame centered on the intersection
(x east, y north).  Every admissible route is a polyline path; vehicles
are described by a scalar arc-length coordinate along their path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Approaches are named by the compass side the vehicle comes from.
APPROACHES = ("N", "E", "S", "W")
MANEUVERS = ("straight", "right")

# Tolerance for deciding whether a point lies on a path (meters).
PROJECT_TOL = 1e-6

# Travel direction per approach and the exit direction of its right turn.
_TRAVEL = {"N": (0.0, -1.0), "E": (-1.0, 0.0), "S": (0.0, 1.0), "W": (1.0, 0.0)}


def _right_of(d: tuple[float, float]) -> tuple[float, float]:
    # Clockwise quarter turn: the driver's right-hand side.
    return (d[1], -d[0])


@dataclass(frozen=True)
class LayoutConfig:
    """Geometric parameters of the intersection."""

    lane_width: float = 3.5   # m, one lane
    road_length: float = 30.0  # m, road segment outside the intersection box

    def __post_init__(self) -> None:
        if not (self.lane_width > 0.0 and math.isfinite(self.lane_width)):
            raise ValueError(f"lane_width must be positive, got {self.lane_width}")
        if not (self.road_length > self.lane_width):
            raise ValueError(
                f"road_length must exceed lane_width, got {self.road_length}"
            )


@dataclass(frozen=True)
class GlobalPos:
    """A point in the intersection frame, meters."""

    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite position ({self.x}, {self.y})")


@dataclass(frozen=True)
class CollisionPoint:
    """A lane-centerline crossing inside the intersection box."""

    index: int
    position: GlobalPos


@dataclass(frozen=True, eq=False)
class Path:
    """A polyline route through the intersection.

    collision_points / collision_point_coords list, in increasing arc
    length, the collision points the path runs over and their arc-length
    coordinates.  Derived arrays are cached for the vectorized helpers.
    """

    approach: str
    maneuver: str
    waypoints: tuple[GlobalPos, ...]
    total_length: float
    collision_points: tuple[CollisionPoint, ...]
    collision_point_coords: tuple[tuple[int, float], ...]
    _pts: np.ndarray = field(repr=False, compare=False, default=None)
    _seg_dir: np.ndarray = field(repr=False, compare=False, default=None)
    _seg_len: np.ndarray = field(repr=False, compare=False, default=None)
    _cum_len: np.ndarray = field(repr=False, compare=False, default=None)

    def __post_init__(self) -> None:
        pts = np.array([(w.x, w.y) for w in self.waypoints], dtype=float)
        vec = np.diff(pts, axis=0)
        seg_len = np.hypot(vec[:, 0], vec[:, 1])
        if np.any(seg_len <= 0.0):
            raise ValueError("degenerate path segment")
        object.__setattr__(self, "_pts", pts)
        object.__setattr__(self, "_seg_dir", vec / seg_len[:, None])
        object.__setattr__(self, "_seg_len", seg_len)
        object.__setattr__(self, "_cum_len", np.concatenate(([0.0], np.cumsum(seg_len))))

    def tangent(self, s: float) -> tuple[float, float]:
        """Unit travel direction at arc length s (corner: incoming segment)."""
        i = int(np.searchsorted(self._cum_len[1:-1], s, side="left"))
        return (float(self._seg_dir[i, 0]), float(self._seg_dir[i, 1]))


def euclidean_distance(a: GlobalPos, b: GlobalPos) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


def locate(path: Path, s: float) -> GlobalPos:
    """Global position at arc length s; s must lie within [0, total_length]."""
    if not (0.0 <= s <= path.total_length):
        raise ValueError(
            f"arc length {s} outside [0, {path.total_length}] for "
            f"{path.approach}/{path.maneuver}"
        )
    return locate_extended(path, s)


def locate_extended(path: Path, s: float) -> GlobalPos:
    """Like locate, but extrapolates along the end segments for out-of-range s.

    Predictions routinely run past the modeled road end; the road continues
    straight there, so the final segment is extended (and the first one,
    for negative s).
    """
    cum = path._cum_len
    if s <= 0.0:
        d = path._seg_dir[0]
        p = path._pts[0] + s * d
    elif s >= path.total_length:
        d = path._seg_dir[-1]
        p = path._pts[-1] + (s - path.total_length) * d
    else:
        i = int(np.searchsorted(cum[1:-1], s, side="right"))
        p = path._pts[i] + (s - cum[i]) * path._seg_dir[i]
    return GlobalPos(float(p[0]), float(p[1]))


def locate_many(path: Path, s: np.ndarray) -> np.ndarray:
    """Vectorized locate_extended: (n,) arc lengths -> (n, 2) positions."""
    s = np.asarray(s, dtype=float)
    cum = path._cum_len
    idx = np.clip(np.searchsorted(cum[1:], s, side="right"), 0, len(path._seg_len) - 1)
    return path._pts[idx] + (s - cum[idx])[:, None] * path._seg_dir[idx]


def project(path: Path, g: GlobalPos, tol: float = PROJECT_TOL) -> float | None:
    """Arc-length coordinate of g on the path, or None if g is off the path.

    g is on the path when its distance to the polyline is at most tol.
    The earliest matching segment wins, which makes locate/project exact
    round trips (the corner belongs to both of its segments).
    """
    p = np.array((g.x, g.y))
    for i in range(len(path._seg_len)):
        rel = p - path._pts[i]
        t = float(np.clip(rel @ path._seg_dir[i], 0.0, path._seg_len[i]))
        close = path._pts[i] + t * path._seg_dir[i]
        if math.hypot(*(p - close)) <= tol:
            return float(path._cum_len[i] + t)
    return None


def project_many(
    path: Path, pts: np.ndarray, tol: float = PROJECT_TOL, extend_end: bool = False
) -> np.ndarray:
    """Vectorized project: (n, 2) points -> (n,) coordinates, NaN when off path.

    With extend_end, points on the forward extension of the final segment
    get coordinates beyond total_length (used for predicted positions).
    """
    pts = np.asarray(pts, dtype=float)
    out = np.full(len(pts), np.nan)
    for i in range(len(path._seg_len)):
        rel = pts - path._pts[i]
        t = rel @ path._seg_dir[i]
        hi = np.inf if (extend_end and i == len(path._seg_len) - 1) else path._seg_len[i]
        tc = np.clip(t, 0.0, hi)
        d = np.hypot(
            rel[:, 0] - tc * path._seg_dir[i, 0], rel[:, 1] - tc * path._seg_dir[i, 1]
        )
        hit = np.isnan(out) & (d <= tol)
        out[hit] = path._cum_len[i] + tc[hit]
    return out


def collision_points_ahead(path: Path, s: float) -> list[tuple[CollisionPoint, float]]:
    """Collision points strictly ahead of arc length s, with distances to go."""
    ahead = []
    for pt, (_, coord) in zip(path.collision_points, path.collision_point_coords):
        if coord > s:
            ahead.append((pt, coord - s))
    return ahead


def _make_path(
    approach: str,
    maneuver: str,
    waypoints: list[GlobalPos],
    points: list[CollisionPoint],
) -> Path:
    pts = np.array([(w.x, w.y) for w in waypoints])
    total = float(np.sum(np.hypot(*np.diff(pts, axis=0).T)))
    probe = Path(
        approach=approach,
        maneuver=maneuver,
        waypoints=tuple(waypoints),
        total_length=total,
        collision_points=(),
        collision_point_coords=(),
    )
    hits = []
    for pt in points:
        s = project(probe, pt.position)
        if s is not None:
            hits.append((s, pt))
    hits.sort(key=lambda e: e[0])
    return Path(
        approach=approach,
        maneuver=maneuver,
        waypoints=tuple(waypoints),
        total_length=total,
        collision_points=tuple(pt for _, pt in hits),
        collision_point_coords=tuple((pt.index, s) for s, pt in hits),
    )


def build_intersection(
    layout: LayoutConfig,
) -> tuple[list[CollisionPoint], dict[tuple[str, str], Path]]:
    """Construct the four collision points and the eight lane paths.

    Returns the points (indexed 1..4 in (x, y) order) and a path per
    (approach, maneuver) pair.  Straight paths run over exactly two
    collision points, right turns over exactly one: their corner.
    """
    half = layout.lane_width / 2.0
    reach = layout.road_length + layout.lane_width  # entry distance from center

    coords = sorted((sx * half, sy * half) for sx in (-1, 1) for sy in (-1, 1))
    points = [
        CollisionPoint(index=i + 1, position=GlobalPos(x, y))
        for i, (x, y) in enumerate(coords)
    ]

    paths: dict[tuple[str, str], Path] = {}
    for app in APPROACHES:
        d = _TRAVEL[app]
        r = _right_of(d)
        # Entry point: reach out along -d, shifted half a lane to the right.
        start = GlobalPos(-reach * d[0] + half * r[0], -reach * d[1] + half * r[1])
        end = GlobalPos(reach * d[0] + half * r[0], reach * d[1] + half * r[1])
        paths[(app, "straight")] = _make_path(app, "straight", [start, end], points)

        # The right turn bends 90 degrees exactly at its collision point:
        # where the entry lane meets the near exit lane (offset -half*d).
        corner = GlobalPos(half * (r[0] - d[0]), half * (r[1] - d[1]))
        exit_end = GlobalPos(corner.x + (reach - half) * r[0], corner.y + (reach - half) * r[1])
        paths[(app, "right")] = _make_path(app, "right", [start, corner, exit_end], points)

    for (app, man), path in paths.items():
        want = 2 if man == "straight" else 1
        if len(path.collision_points) != want:
            raise AssertionError(
                f"{app}/{man}: expected {want} collision points, got "
                f"{len(path.collision_points)}"
            )
    return points, paths
