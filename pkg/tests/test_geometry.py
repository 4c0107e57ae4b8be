"""Layout construction, arc-length mapping, and projection round trips."""

import math

import numpy as np
import pytest

from junctionsim import geometry as geo


@pytest.fixture(scope="module")
def world():
    layout = geo.LayoutConfig(lane_width=3.5, road_length=30.0)
    points, paths = geo.build_intersection(layout)
    return layout, points, paths


def test_collision_point_layout(world):
    _, points, _ = world
    # Lane centerlines sit half a lane from the road axis, so the four
    # crossings are the corners of a 3.5 m square around the center.
    got = {pt.index: (pt.position.x, pt.position.y) for pt in points}
    assert got == {
        1: (-1.75, -1.75),
        2: (-1.75, 1.75),
        3: (1.75, -1.75),
        4: (1.75, 1.75),
    }


def test_path_lengths(world):
    layout, _, paths = world
    reach = layout.road_length + layout.lane_width
    for (app, man), path in paths.items():
        if man == "straight":
            assert path.total_length == pytest.approx(2 * reach)
        else:
            # Entry leg reaches the corner, exit leg stops one half lane
            # earlier because the corner already sits on the exit lane.
            assert path.total_length == pytest.approx(2 * reach - layout.lane_width)


def test_straight_paths_cross_two_points(world):
    _, _, paths = world
    # Entry runs 33.5 m to the center; the first crossing sits 1.75 m
    # before it and the second 1.75 m after.
    for app in geo.APPROACHES:
        path = paths[(app, "straight")]
        coords = [s for _, s in path.collision_point_coords]
        assert coords == pytest.approx([31.75, 35.25])


def test_right_turns_cross_their_corner(world):
    _, _, paths = world
    expected_point = {"S": 3, "W": 1, "N": 2, "E": 4}
    for app in geo.APPROACHES:
        path = paths[(app, "right")]
        assert len(path.collision_point_coords) == 1
        idx, s = path.collision_point_coords[0]
        assert idx == expected_point[app]
        assert s == pytest.approx(31.75)
        corner = geo.locate(path, s)
        assert corner.x == pytest.approx(path.collision_points[0].position.x)
        assert corner.y == pytest.approx(path.collision_points[0].position.y)


def test_locate_project_roundtrip(world):
    _, _, paths = world
    rng = np.random.default_rng(7)
    for path in paths.values():
        for s in rng.uniform(0.0, path.total_length, size=60):
            g = geo.locate(path, float(s))
            back = geo.project(path, g)
            assert back is not None
            assert back == pytest.approx(float(s), abs=1e-9)


def test_project_rejects_off_path_points(world):
    _, _, paths = world
    rng = np.random.default_rng(11)
    for path in paths.values():
        for s in rng.uniform(0.0, path.total_length, size=20):
            g = geo.locate(path, float(s))
            tx, ty = path.tangent(float(s))
            # Push sideways by more than the tolerance.
            off = geo.GlobalPos(g.x - ty * 0.01, g.y + tx * 0.01)
            assert geo.project(path, off) is None


def test_locate_bounds_and_extension(world):
    _, _, paths = world
    path = paths[("S", "straight")]
    with pytest.raises(ValueError):
        geo.locate(path, -0.1)
    with pytest.raises(ValueError):
        geo.locate(path, path.total_length + 0.1)
    ahead = geo.locate_extended(path, path.total_length + 5.0)
    end = geo.locate(path, path.total_length)
    assert math.hypot(ahead.x - end.x, ahead.y - end.y) == pytest.approx(5.0)
    behind = geo.locate_extended(path, -3.0)
    start = geo.locate(path, 0.0)
    assert math.hypot(behind.x - start.x, behind.y - start.y) == pytest.approx(3.0)


def test_locate_many_matches_scalar(world):
    _, _, paths = world
    rng = np.random.default_rng(23)
    for path in paths.values():
        s = rng.uniform(-5.0, path.total_length + 5.0, size=40)
        got = geo.locate_many(path, s)
        for k, sk in enumerate(s):
            g = geo.locate_extended(path, float(sk))
            assert got[k, 0] == pytest.approx(g.x, abs=1e-12)
            assert got[k, 1] == pytest.approx(g.y, abs=1e-12)


def test_project_many_matches_scalar(world):
    _, _, paths = world
    rng = np.random.default_rng(31)
    for path in paths.values():
        s = rng.uniform(0.0, path.total_length, size=30)
        pts = geo.locate_many(path, s)
        got = geo.project_many(path, pts)
        for k, sk in enumerate(s):
            assert got[k] == pytest.approx(float(sk), abs=1e-9)
        # A clearly off-path point comes back NaN.
        far = geo.project_many(path, np.array([[100.0, 100.0]]))
        assert np.isnan(far[0])


def test_project_many_extends_final_segment(world):
    _, _, paths = world
    path = paths[("W", "right")]
    beyond = path.total_length + 4.0
    g = geo.locate_extended(path, beyond)
    plain = geo.project_many(path, np.array([[g.x, g.y]]))
    extended = geo.project_many(path, np.array([[g.x, g.y]]), extend_end=True)
    assert np.isnan(plain[0])
    assert extended[0] == pytest.approx(beyond, abs=1e-9)


def test_tangent_follows_route(world):
    _, _, paths = world
    # From the south, travel starts northbound; the right turn exits east.
    straight = paths[("S", "straight")]
    assert straight.tangent(10.0) == pytest.approx((0.0, 1.0))
    assert straight.tangent(60.0) == pytest.approx((0.0, 1.0))
    right = paths[("S", "right")]
    assert right.tangent(10.0) == pytest.approx((0.0, 1.0))
    assert right.tangent(40.0) == pytest.approx((1.0, 0.0))


def test_collision_points_ahead(world):
    _, _, paths = world
    path = paths[("W", "straight")]
    both = geo.collision_points_ahead(path, 0.0)
    assert [pt.index for pt, _ in both] == [1, 3]
    assert [d for _, d in both] == pytest.approx([31.75, 35.25])
    one = geo.collision_points_ahead(path, 32.0)
    assert [pt.index for pt, _ in one] == [3]
    assert one[0][1] == pytest.approx(3.25)
    assert geo.collision_points_ahead(path, 36.0) == []


def test_layout_validation():
    with pytest.raises(ValueError):
        geo.LayoutConfig(lane_width=0.0)
    with pytest.raises(ValueError):
        geo.LayoutConfig(lane_width=3.5, road_length=2.0)
    with pytest.raises(ValueError):
        geo.GlobalPos(float("nan"), 0.0)


def test_euclidean_distance():
    a = geo.GlobalPos(1.0, 2.0)
    b = geo.GlobalPos(4.0, 6.0)
    assert geo.euclidean_distance(a, b) == pytest.approx(5.0)
