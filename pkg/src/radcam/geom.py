"""Sensor geometry: pinhole projection, ground-plane back-projection, frustums
and constant-velocity time alignment of radar pins.

Frames
------
radar  : x forward, y left, z up; z = 0 is the ground plane.
camera : X right, Y down, Z forward (standard pinhole). A level camera mounted
         ``h`` metres above the ground sees the ground plane at ``Y = h``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .errors import AboveHorizon, ResultBehindCamera

CATEGORIES = ("sedan", "suv", "truck", "bus", "bicycle", "tricycle", "motorcycle", "person", "unknown")

# radar (x fwd, y left, z up) -> camera (X right, Y down, Z fwd)
AXIS_RELABEL = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])


def _finite(*values):
    return all(math.isfinite(v) for v in values)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    img_w: int
    img_h: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.img_w and 0 < self.cy < self.img_h):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, img_w=1828, img_h=948, hfov_deg=52.0):
        """Square-pixel camera with the principal point at the image centre."""
        f = (img_w / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
        return cls(f, f, img_w / 2.0, img_h / 2.0, img_w, img_h)

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "img_w": self.img_w, "img_h": self.img_h}


@dataclass(frozen=True)
class RigidTransform:
    """``p_cam = rotation @ p_radar + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9, rtol=0):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation must have det +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def radar_to_camera(cls, translation=(0.0, 0.0, 0.0), yaw=0.0):
        """Extrinsics for a radar whose axes are the camera axes relabelled.

        ``translation`` is expressed in the camera frame; ``yaw`` (radians,
        about the radar z axis) models a small mounting misalignment.
        """
        c, s = math.cos(yaw), math.sin(yaw)
        mount = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return cls(AXIS_RELABEL @ mount, np.asarray(translation, dtype=float))

    def apply(self, points):
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def inverse(self):
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def to_dict(self):
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["rotation"], dtype=float), np.array(d["translation"], dtype=float))

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation)

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))


@dataclass(frozen=True)
class RadarPin:
    id: int
    obstacle_prob: float
    pos_x: float
    pos_y: float
    vel_x: float
    vel_y: float
    t: float = 0.0

    def __post_init__(self):
        if not _finite(self.obstacle_prob, self.pos_x, self.pos_y, self.vel_x, self.vel_y, self.t):
            raise ValueError(f"radar pin {self.id} has non-finite fields")
        if not 0.0 <= self.obstacle_prob <= 1.0:
            raise ValueError(f"radar pin {self.id}: obstacle_prob outside [0, 1]")
        if not self.pos_x > 0:
            raise ValueError(f"radar pin {self.id}: pos_x must be positive (forward-looking radar)")


@dataclass(frozen=True)
class BBox2D:
    id: int
    center_x: float
    center_y: float
    width: float
    height: float
    category: str = "unknown"

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"box {self.id}: width and height must be positive")
        if self.category not in CATEGORIES:
            raise ValueError(f"box {self.id}: unknown category {self.category!r}")

    @property
    def x_min(self):
        return self.center_x - self.width / 2.0

    @property
    def x_max(self):
        return self.center_x + self.width / 2.0

    @property
    def y_min(self):
        return self.center_y - self.height / 2.0

    @property
    def y_max(self):
        return self.center_y + self.height / 2.0

    @property
    def category_index(self):
        return CATEGORIES.index(self.category)

    def intersects_image(self, K: CameraIntrinsics):
        return self.x_max > 0 and self.x_min < K.img_w and self.y_max > 0 and self.y_min < K.img_h


class CamPoint3(NamedTuple):
    X: float
    Y: float
    Z: float

    @property
    def d(self):
        return self.Z


class PixelCoord(NamedTuple):
    u: float
    v: float
    in_image: bool = True


def align_temporal(pin: RadarPin, t_target: float) -> RadarPin:
    """Move a pin along its velocity to ``t_target`` (constant-velocity model)."""
    dt = t_target - pin.t
    return replace(pin, pos_x=pin.pos_x + pin.vel_x * dt, pos_y=pin.pos_y + pin.vel_y * dt, t=t_target)


def to_camera(pin: RadarPin, tf: RigidTransform, assumed_height: float = 0.5) -> CamPoint3:
    """Lift a BEV pin to ``assumed_height`` above ground and express it in the camera frame."""
    p = tf.apply([pin.pos_x, pin.pos_y, assumed_height])
    if not p[2] > 0:
        raise ResultBehindCamera(f"pin {pin.id} maps to depth {p[2]:.3f} m")
    return CamPoint3(float(p[0]), float(p[1]), float(p[2]))


def velocity_to_camera(pin: RadarPin, tf: RigidTransform):
    """Rotate the BEV velocity into the camera frame (translation does not apply)."""
    v = tf.rotation @ np.array([pin.vel_x, pin.vel_y, 0.0])
    return float(v[0]), float(v[1]), float(v[2])


def project(p: CamPoint3, K: CameraIntrinsics) -> PixelCoord:
    if not p[2] > 0:
        raise ResultBehindCamera(f"point depth {p[2]:.3f} m is not in front of the camera")
    u = K.fx * p[0] / p[2] + K.cx
    v = K.fy * p[1] / p[2] + K.cy
    return PixelCoord(u, v, bool(0.0 <= u < K.img_w and 0.0 <= v < K.img_h))


def project_many(points, K: CameraIntrinsics):
    """Vectorised ``project`` for an (N, 3) array; no depth check."""
    p = np.asarray(points, dtype=float)
    return np.stack([K.fx * p[:, 0] / p[:, 2] + K.cx, K.fy * p[:, 1] / p[:, 2] + K.cy], axis=1)


def ipm_ground(px, K: CameraIntrinsics, cam_height: float) -> CamPoint3:
    """Intersect the viewing ray through pixel ``px`` with the ground plane.

    Assumes a level camera ``cam_height`` metres above flat ground.
    """
    u, v = px[0], px[1]
    dv = v - K.cy
    if not dv > 0:
        raise AboveHorizon(f"pixel row {v:.3f} is not below the horizon row {K.cy:.3f}")
    z = K.fy * cam_height / dv
    return CamPoint3((u - K.cx) * z / K.fx, cam_height, z)


def ground_depth_of_row(v: float, K: CameraIntrinsics, cam_height: float) -> float:
    return ipm_ground((K.cx, v), K, cam_height).Z


@dataclass(frozen=True)
class Frustum:
    """BEV wedge (camera X/Z plane) spanned by a box's two side edges.

    ``slope_left`` / ``slope_right`` are X/Z ratios of the bounding rays; the
    truncated polygon keeps the section where the wedge is between
    ``near_width`` and ``far_width`` metres wide.
    """

    slope_left: float
    slope_right: float
    near_width: float = 1.0
    far_width: float = 5.0

    @property
    def spread(self):
        return self.slope_right - self.slope_left

    def width_at(self, z):
        return z * self.spread

    def depth_range(self):
        if self.spread <= 0:
            return (math.inf, math.inf)
        return (self.near_width / self.spread, self.far_width / self.spread)

    def polygon(self):
        """Truncated polygon as four (X, Z) vertices, counter-clockwise."""
        z0, z1 = self.depth_range()
        if not math.isfinite(z0):
            return np.zeros((0, 2))
        return np.array([
            [self.slope_left * z0, z0],
            [self.slope_right * z0, z0],
            [self.slope_right * z1, z1],
            [self.slope_left * z1, z1],
        ])

    def area(self):
        poly = self.polygon()
        if len(poly) == 0:
            return 0.0
        x, z = poly[:, 0], poly[:, 1]
        return 0.5 * abs(float(np.dot(x, np.roll(z, -1)) - np.dot(z, np.roll(x, -1))))

    def contains(self, x, z, truncated=False, tol=1e-9):
        if not z > 0:
            return False
        inside = self.slope_left * z - tol <= x <= self.slope_right * z + tol
        if inside and truncated:
            z0, z1 = self.depth_range()
            inside = z0 - tol <= z <= z1 + tol
        return inside


def frustum(b: BBox2D, K: CameraIntrinsics, cam_height: float,
            near_width: float = 1.0, far_width: float = 5.0) -> Frustum:
    """Back-project the side edges of ``b`` onto the ground to form its BEV frustum."""
    if not b.y_max > K.cy:
        raise AboveHorizon(f"box {b.id} bottom row {b.y_max:.3f} is above the horizon")
    left = ipm_ground((b.x_min, b.y_max), K, cam_height)
    right = ipm_ground((b.x_max, b.y_max), K, cam_height)
    return Frustum(left.X / left.Z, right.X / right.Z, near_width, far_width)
