import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radcam import geom
from radcam.errors import AboveHorizon, ResultBehindCamera
from radcam.geom import BBox2D, CameraIntrinsics, CamPoint3, RadarPin, RigidTransform

K = CameraIntrinsics(1000.0, 1000.0, 914.0, 474.0, 1828, 948)
IDENTITY = RigidTransform.radar_to_camera()


def pin(x=10.0, y=0.0, vx=5.0, vy=0.0, t=0.0):
    return RadarPin(1, 0.9, x, y, vx, vy, t)


@pytest.mark.parametrize("t0, t1, expected", [(0.0, 0.0, 10.0), (0.0, 0.02, 10.1), (0.02, 0.0, 9.9)])
def test_align_temporal(t0, t1, expected):
    out = geom.align_temporal(pin(t=t0), t1)
    assert out.pos_x == pytest.approx(expected, abs=1e-12)
    assert out.t == t1
    assert (out.vel_x, out.vel_y, out.id, out.obstacle_prob) == (5.0, 0.0, 1, 0.9)


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_align_temporal_composes(t1, t2, t0):
    p = RadarPin(3, 0.5, 30.0, -2.0, 7.5, -1.25, t0)
    via = geom.align_temporal(geom.align_temporal(p, t1), t2)
    direct = geom.align_temporal(p, t2)
    assert abs(via.pos_x - direct.pos_x) < 1e-12
    assert abs(via.pos_y - direct.pos_y) < 1e-12


def test_pin_rejects_non_finite():
    with pytest.raises(ValueError):
        RadarPin(1, 0.5, float("nan"), 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        RadarPin(1, 1.5, 10.0, 0.0, 0.0, 0.0)


def test_to_camera_axis_relabel():
    assert geom.to_camera(pin(), IDENTITY, assumed_height=0.0) == CamPoint3(0.0, 0.0, 10.0)
    # radar left (+y) is camera left (-X); radar up (+z) is camera up (-Y)
    c = geom.to_camera(pin(y=2.0), IDENTITY, assumed_height=1.0)
    assert c == pytest.approx((-2.0, -1.0, 10.0))


def test_to_camera_translation():
    tf = RigidTransform.radar_to_camera((0.0, 0.0, 1.0))
    assert geom.to_camera(pin(), tf, assumed_height=0.0).Z == pytest.approx(11.0)


def test_to_camera_behind():
    tf = RigidTransform.radar_to_camera((0.0, 0.0, -20.0))
    with pytest.raises(ResultBehindCamera):
        geom.to_camera(pin(), tf, 0.0)


def test_rigid_transform_validates():
    with pytest.raises(ValueError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(ValueError):
        RigidTransform(np.eye(3) * 1.01, np.zeros(3))


@settings(max_examples=50)
@given(st.floats(-0.5, 0.5), st.lists(st.floats(-50, 50), min_size=6, max_size=6))
def test_rigid_transform_preserves_distances(yaw, coords):
    tf = RigidTransform.radar_to_camera((0.3, 1.5, 2.0), yaw=yaw)
    a, b = np.array(coords[:3]), np.array(coords[3:])
    d0 = np.linalg.norm(a - b)
    d1 = np.linalg.norm(tf.apply(a) - tf.apply(b))
    assert abs(d1 - d0) <= 1e-9 * max(1.0, d0)


@pytest.mark.parametrize("p, uv", [((0, 0, 10), (914, 474)), ((2, 0, 10), (1114, 474)), ((2, 0, 20), (1014, 474))])
def test_project(p, uv):
    out = geom.project(CamPoint3(*p), K)
    assert (out.u, out.v) == pytest.approx(uv)
    assert out.in_image


def test_project_flags_out_of_image_and_rejects_behind():
    assert not geom.project(CamPoint3(100.0, 0.0, 10.0), K).in_image
    with pytest.raises(ResultBehindCamera):
        geom.project(CamPoint3(0.0, 0.0, 0.0), K)


def test_ipm_at_principal_point_is_above_horizon():
    with pytest.raises(AboveHorizon):
        geom.ipm_ground((K.cx, K.cy), K, 1.5)


def test_ipm_depth_from_forward_projection():
    v = geom.project(CamPoint3(0.0, 1.5, 30.0), K).v  # = cy + fy * 1.5 / 30
    assert v == pytest.approx(524.0)
    assert geom.ipm_ground((K.cx, v), K, 1.5).Z == pytest.approx(30.0, abs=1e-6)


@settings(max_examples=200)
@given(st.floats(-40, 40), st.floats(2.0, 150.0), st.floats(0.5, 3.0))
def test_ipm_inverts_projection_on_ground(x, z, h):
    p = CamPoint3(x, h, z)
    back = geom.ipm_ground(geom.project(p, K), K, h)
    assert max(abs(a - b) for a, b in zip(back, p)) < 1e-9


@settings(max_examples=200)
@given(st.floats(0, 1827), st.floats(474.5, 947), st.floats(0.5, 3.0))
def test_projection_inverts_ipm_below_horizon(u, v, h):
    px = geom.project(geom.ipm_ground((u, v), K, h), K)
    assert abs(px.u - u) < 1e-9 and abs(px.v - v) < 1e-9


@settings(max_examples=200)
@given(st.floats(2.0, 100.0), st.floats(2.0, 100.0), st.floats(-10, 10), st.floats(-10, 10))
def test_ground_ordering(d1, d2, x1, x2):
    """Farther ground contact <=> higher (smaller) bottom row."""
    if abs(d1 - d2) < 1e-6:
        return
    y1 = geom.project(CamPoint3(x1, 1.5, d1), K).v
    y2 = geom.project(CamPoint3(x2, 1.5, d2), K).v
    assert (d1 > d2) == (y1 < y2)


def test_frustum_width_matches_ipm_of_box_span():
    # ground points 2 m either side of the axis at 20 m project 100 px off centre
    left = geom.project(CamPoint3(-2.0, 1.5, 20.0), K)
    right = geom.project(CamPoint3(2.0, 1.5, 20.0), K)
    assert (left.u, right.u) == pytest.approx((814.0, 1014.0))
    b = BBox2D(0, 914.0, left.v - 50.0, 200.0, 100.0, "sedan")
    fr = geom.frustum(b, K, 1.5)
    assert fr.width_at(20.0) == pytest.approx(4.0)
    assert fr.depth_range() == pytest.approx((5.0, 25.0))
    assert fr.contains(0.0, 20.0, truncated=True)
    assert not fr.contains(3.0, 20.0)


def test_frustum_degenerates_for_zero_width():
    # the wedge angle collapses with the box width; its fixed-width truncation recedes to infinity
    frs = [geom.frustum(BBox2D(0, 914.0, 600.0, w, 50.0), K, 1.5) for w in (10.0, 1.0, 1e-3, 1e-6)]
    spreads = [f.spread for f in frs]
    assert spreads == sorted(spreads, reverse=True)
    assert spreads[-1] < 1e-8
    assert frs[-1].depth_range()[0] > 1e6
    assert frs[-1].width_at(50.0) < 1e-6


def test_frustum_above_horizon():
    with pytest.raises(AboveHorizon):
        geom.frustum(BBox2D(0, 914.0, 300.0, 50.0, 50.0), K, 1.5)


def test_camera_from_fov():
    cam = CameraIntrinsics.from_fov(1828, 948, 52.0)
    assert math.degrees(2 * math.atan(cam.cx / cam.fx)) == pytest.approx(52.0)
    with pytest.raises(ValueError):
        CameraIntrinsics(1000.0, 1000.0, 2000.0, 474.0, 1828, 948)


def test_bbox_accessors():
    b = BBox2D(4, 100.0, 200.0, 40.0, 60.0, "bus")
    assert b.y_max == 230.0 and b.x_min == 80.0 and b.category_index == 3
    with pytest.raises(ValueError):
        BBox2D(4, 100.0, 200.0, 0.0, 60.0)
    with pytest.raises(ValueError):
        BBox2D(4, 100.0, 200.0, 1.0, 60.0, "tank")
