"""Synthetic radar + camera frames with ground-truth and uncertain labels.

Objects live on a flat road in the radar BEV frame. Each frame yields object
level radar pins (with clutter from static structures) and tight 2D boxes of
the projected 3D object cuboids (with jitter, dropout and false positives).
Frames are independently seeded so they can be generated in any order.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import geom
from .errors import ConfigInvalid, SchemaError
from .geom import BBox2D, CameraIntrinsics, RadarPin, RigidTransform

SCHEMA = "radcam/1"

# (length, width, height) ranges in metres per category
CATEGORY_SIZES = {
    "sedan": ((4.2, 4.9), (1.7, 1.9), (1.4, 1.6)),
    "suv": ((4.5, 5.1), (1.8, 2.0), (1.6, 1.9)),
    "truck": ((6.5, 12.0), (2.3, 2.6), (3.0, 4.0)),
    "bus": ((10.0, 13.0), (2.4, 2.6), (3.0, 3.5)),
    "bicycle": ((1.6, 1.9), (0.5, 0.7), (1.6, 1.8)),
    "tricycle": ((2.0, 3.0), (1.0, 1.4), (1.5, 1.8)),
    "motorcycle": ((2.0, 2.3), (0.7, 0.9), (1.4, 1.6)),
    "person": ((0.4, 0.6), (0.4, 0.6), (1.6, 1.9)),
    "unknown": ((1.0, 4.0), (1.0, 2.0), (1.0, 2.0)),
}

DEFAULT_CATEGORY_WEIGHTS = {
    "sedan": 0.35, "suv": 0.2, "truck": 0.12, "bus": 0.05, "bicycle": 0.05,
    "tricycle": 0.03, "motorcycle": 0.05, "person": 0.1, "unknown": 0.05,
}

VULNERABLE = ("bicycle", "person")
LANE_WIDTH = 3.5
LARGE_OBJECT_LENGTH = 6.0


@dataclass(frozen=True)
class SceneObject:
    id: int
    x: float
    y: float
    vx: float
    vy: float
    length: float
    width: float
    height: float
    category: str
    color: tuple = (0.5, 0.5, 0.5)

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0 and self.height > 0):
            raise ValueError(f"object {self.id}: size components must be positive")

    @property
    def center(self):
        return (self.x, self.y)

    @property
    def near_x(self):
        return self.x - self.length / 2.0

    def corners(self):
        """The 8 cuboid corners in the radar frame (z up from the ground)."""
        xs = (self.x - self.length / 2, self.x + self.length / 2)
        ys = (self.y - self.width / 2, self.y + self.width / 2)
        zs = (0.0, self.height)
        return np.array([[x, y, z] for x in xs for y in ys for z in zs])


@dataclass(frozen=True)
class SensorNoiseConfig:
    pin_pos_sigma: float = 0.3
    pin_dropout_prob: float = 0.05
    clutter_rate: float = 2.0
    bbox_jitter_sigma: float = 3.0
    bbox_dropout_prob: float = 0.03
    bbox_false_rate: float = 0.1
    pins_per_large_object_max: int = 3
    radar_camera_time_offset: float = 0.025
    pin_vel_sigma: float = 0.3

    @classmethod
    def noiseless(cls, **overrides):
        base = dict(pin_pos_sigma=0.0, pin_dropout_prob=0.0, clutter_rate=0.0,
                    bbox_jitter_sigma=0.0, bbox_dropout_prob=0.0, bbox_false_rate=0.0,
                    pins_per_large_object_max=1, radar_camera_time_offset=0.0, pin_vel_sigma=0.0)
        base.update(overrides)
        return cls(**base)

    def validate(self):
        for name in ("pin_dropout_prob", "bbox_dropout_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigInvalid(name, "probability outside [0, 1]")
        for name in ("pin_pos_sigma", "bbox_jitter_sigma", "clutter_rate", "bbox_false_rate",
                     "pin_vel_sigma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigInvalid(name, "must be finite and >= 0")
        if int(self.pins_per_large_object_max) != self.pins_per_large_object_max or \
                self.pins_per_large_object_max < 1:
            raise ConfigInvalid("pins_per_large_object_max", "integer >= 1 required")
        if not math.isfinite(self.radar_camera_time_offset):
            raise ConfigInvalid("radar_camera_time_offset")


@dataclass(frozen=True)
class SimConfig:
    n_frames: int = 100
    objects_min: int = 2
    objects_max: int = 12
    range_x: tuple = (8.0, 70.0)
    range_y: tuple = (-12.0, 12.0)
    min_separation: float = 1.0
    category_weights: dict = field(default_factory=lambda: dict(DEFAULT_CATEGORY_WEIGHTS))
    noise: SensorNoiseConfig = field(default_factory=SensorNoiseConfig)
    img_w: int = 1828
    img_h: int = 948
    camera_hfov_deg: float = 52.0
    radar_fov_deg: float = 120.0
    cam_height: float = 1.5
    radar_forward_offset: float = 2.0
    frame_period: float = 0.5
    min_visible_fraction: float = 0.3
    uncertain_depth: float = 2.0
    assumed_height: float = 0.5
    ego_speed: tuple = (5.0, 25.0)

    def validate(self):
        if self.n_frames < 0:
            raise ConfigInvalid("n_frames", "must be >= 0")
        if not 1 <= self.objects_min <= self.objects_max:
            raise ConfigInvalid("objects_min", "need 1 <= objects_min <= objects_max")
        if not 0 < self.range_x[0] < self.range_x[1]:
            raise ConfigInvalid("range_x")
        if not self.range_y[0] < self.range_y[1]:
            raise ConfigInvalid("range_y")
        w = self.category_weights
        if not w or any(k not in CATEGORY_SIZES for k in w) or any(v < 0 for v in w.values()) \
                or sum(w.values()) <= 0:
            raise ConfigInvalid("category_weights")
        if not 0 < self.camera_hfov_deg < 180 or not 0 < self.radar_fov_deg <= 180:
            raise ConfigInvalid("camera_hfov_deg")
        if self.cam_height <= 0:
            raise ConfigInvalid("cam_height")
        if not 0 <= self.min_visible_fraction <= 1:
            raise ConfigInvalid("min_visible_fraction")
        if self.uncertain_depth < 0:
            raise ConfigInvalid("uncertain_depth")
        self.noise.validate()

    def intrinsics(self):
        return CameraIntrinsics.from_fov(self.img_w, self.img_h, self.camera_hfov_deg)

    def extrinsics(self):
        # radar z is height above ground; the camera sits cam_height above it
        return RigidTransform.radar_to_camera((0.0, self.cam_height, self.radar_forward_offset))

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["noise"] = {f.name: getattr(self.noise, f.name) for f in fields(self.noise)}
        d["range_x"] = list(self.range_x)
        d["range_y"] = list(self.range_y)
        d["ego_speed"] = list(self.ego_speed)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "noise" in d:
            d["noise"] = SensorNoiseConfig(**d["noise"])
        for key in ("range_x", "range_y", "ego_speed"):
            if key in d:
                d[key] = tuple(d[key])
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigInvalid(sorted(unknown)[0], "unknown field")
        return cls(**d)


@dataclass(frozen=True)
class FrameRecord:
    frame_id: int
    t_camera: float
    t_radar: float
    intrinsics: CameraIntrinsics
    extrinsics: RigidTransform
    pins: tuple = ()
    boxes: tuple = ()
    labels_pos: frozenset = frozenset()
    labels_uncertain: frozenset = frozenset()
    truth_pos: frozenset = frozenset()
    objects: tuple = ()
    cam_height: float = 1.5

    def __post_init__(self):
        for name in ("labels_pos", "labels_uncertain", "truth_pos"):
            object.__setattr__(self, name, frozenset((int(a), int(b)) for a, b in getattr(self, name)))
        object.__setattr__(self, "pins", tuple(self.pins))
        object.__setattr__(self, "boxes", tuple(self.boxes))
        object.__setattr__(self, "objects", tuple(self.objects))
        pin_ids = {p.id for p in self.pins}
        box_ids = {b.id for b in self.boxes}
        if len(pin_ids) != len(self.pins) or len(box_ids) != len(self.boxes):
            raise ValueError(f"frame {self.frame_id}: duplicate pin or box ids")
        for name in ("labels_pos", "labels_uncertain", "truth_pos"):
            for a, b in getattr(self, name):
                if a not in pin_ids or b not in box_ids:
                    raise ValueError(f"frame {self.frame_id}: {name} pair {(a, b)} references unknown ids")
        if self.labels_pos & self.labels_uncertain:
            raise ValueError(f"frame {self.frame_id}: labels_pos and labels_uncertain overlap")
        truth_pins = [a for a, _ in self.truth_pos]
        if len(truth_pins) != len(set(truth_pins)):
            raise ValueError(f"frame {self.frame_id}: a pin appears in more than one truth pair")

    def pin(self, pin_id):
        for p in self.pins:
            if p.id == pin_id:
                return p
        raise KeyError(pin_id)

    def box(self, box_id):
        for b in self.boxes:
            if b.id == box_id:
                return b
        raise KeyError(box_id)

    def aligned_pins(self):
        """Pins moved to the camera timestamp."""
        return tuple(geom.align_temporal(p, self.t_camera) for p in self.pins)


def frame_seed(seed, frame_id):
    return np.random.SeedSequence([int(seed) % (1 << 64), int(frame_id)])


def _sample_objects(cfg: SimConfig, rng, t_ego):
    cats = list(cfg.category_weights)
    weights = np.array([cfg.category_weights[c] for c in cats], dtype=float)
    weights /= weights.sum()
    n = int(rng.integers(cfg.objects_min, cfg.objects_max + 1))
    lanes = np.arange(math.ceil(cfg.range_y[0] / LANE_WIDTH), math.floor(cfg.range_y[1] / LANE_WIDTH) + 1)
    objects = []
    for _ in range(n):
        for _attempt in range(30):
            cat = cats[int(rng.choice(len(cats), p=weights))]
            (l0, l1), (w0, w1), (h0, h1) = CATEGORY_SIZES[cat]
            length, width, height = rng.uniform(l0, l1), rng.uniform(w0, w1), rng.uniform(h0, h1)
            near = rng.uniform(*cfg.range_x)
            x = near + length / 2.0
            if cat in VULNERABLE or len(lanes) == 0:
                y = rng.uniform(*cfg.range_y)
                vx = rng.normal(-t_ego, 1.0) if cat == "person" else rng.normal(-t_ego * 0.5, 2.0)
                vy = rng.normal(0.0, 0.5)
            else:
                y = float(rng.choice(lanes)) * LANE_WIDTH + rng.normal(0.0, 0.25)
                vx = rng.normal(0.0, 4.0)
                vy = rng.normal(0.0, 0.3)
            y = float(np.clip(y, *cfg.range_y))
            ok = all(
                abs(x - o.x) > (length + o.length) / 2 + cfg.min_separation
                or abs(y - o.y) > (width + o.width) / 2 + cfg.min_separation
                for o in objects
            )
            if ok:
                color = tuple(float(c) for c in rng.uniform(0.05, 0.95, size=3))
                objects.append(SceneObject(len(objects), float(x), y, float(vx), float(vy),
                                           float(length), float(width), float(height), cat, color))
                break
    return objects


def _silhouette_hit(obj: SceneObject, K: CameraIntrinsics, tf: RigidTransform):
    """Where the camera ray through the middle of the object's silhouette meets its footprint.

    Horizontal image position depends only on bearing, so the middle of the
    unclipped box in u is a bearing inside the footprint's angular extent and
    the ray always enters the footprint rectangle.
    """
    cam = tf.apply(obj.corners())
    if np.any(cam[:, 2] <= 0.1):
        return None
    u = cam[:, 0] / cam[:, 2]
    slope = 0.5 * (u.min() + u.max())  # X / Z of the middle bearing
    inv = tf.inverse()
    origin = inv.apply(np.zeros(3))[:2]
    direction = inv.rotation @ np.array([slope, 0.0, 1.0])
    direction = direction[:2]
    lo = np.array([obj.x - obj.length / 2, obj.y - obj.width / 2])
    hi = np.array([obj.x + obj.length / 2, obj.y + obj.width / 2])
    t_enter, t_exit = 0.0, math.inf
    for k in range(2):
        if abs(direction[k]) < 1e-12:
            if not lo[k] <= origin[k] <= hi[k]:
                return None
            continue
        t0, t1 = sorted(((lo[k] - origin[k]) / direction[k], (hi[k] - origin[k]) / direction[k]))
        t_enter, t_exit = max(t_enter, t0), min(t_exit, t1)
    if t_enter > t_exit:
        return None
    x, y = origin + t_enter * direction
    return float(x), float(y)


def _object_pin_positions(obj: SceneObject, n_pins, K: CameraIntrinsics, tf: RigidTransform):
    """Reflection points: the surface point facing the sensors first, then along the radar-facing side."""
    hit = _silhouette_hit(obj, K, tf)
    pts = [hit if hit is not None else (obj.near_x, obj.y)]
    side = obj.y - math.copysign(obj.width / 2.0, obj.y) if abs(obj.y) > obj.width / 2 else obj.y
    for k in range(1, n_pins):
        pts.append((obj.near_x + obj.length * k / n_pins, side))
    return pts


def _project_box(obj: SceneObject, K: CameraIntrinsics, tf: RigidTransform):
    cam = tf.apply(obj.corners())
    if np.any(cam[:, 2] <= 0.1):
        return None
    uv = geom.project_many(cam, K)
    x0, y0 = uv.min(axis=0)
    x1, y1 = uv.max(axis=0)
    x0, x1 = max(x0, 0.0), min(x1, float(K.img_w))
    y0, y1 = max(y0, 0.0), min(y1, float(K.img_h))
    if x1 - x0 < 1.0 or y1 - y0 < 1.0:
        return None
    return (x0, y0, x1, y1), float(cam[:, 2].min())


def _visible_fractions(rects, depths, K: CameraIntrinsics, scale=0.25):
    """Fraction of each rectangle not covered by nearer rectangles."""
    h, w = int(K.img_h * scale) + 1, int(K.img_w * scale) + 1
    covered = np.zeros((h, w), dtype=bool)
    out = [0.0] * len(rects)
    for i in np.argsort(depths, kind="stable"):
        x0, y0, x1, y1 = (int(round(c * scale)) for c in rects[i])
        x1, y1 = max(x1, x0 + 1), max(y1, y0 + 1)
        region = covered[y0:y1, x0:x1]
        out[i] = 1.0 - float(region.mean()) if region.size else 0.0
        region[...] = True
    return out


def generate_frame(cfg: SimConfig, seed, frame_id) -> FrameRecord:
    rng = np.random.default_rng(frame_seed(seed, frame_id))
    noise = cfg.noise
    K = cfg.intrinsics()
    tf = cfg.extrinsics()
    t_cam = frame_id * cfg.frame_period
    t_radar = t_cam + noise.radar_camera_time_offset
    ego = rng.uniform(*cfg.ego_speed)
    objects = _sample_objects(cfg, rng, ego)
    half_radar_fov = math.radians(cfg.radar_fov_deg) / 2.0

    # radar
    raw_pins = []  # (x, y, vx, vy, prob, object id or None)
    for obj in objects:
        n_pins = 1
        if obj.length > LARGE_OBJECT_LENGTH and noise.pins_per_large_object_max > 1:
            n_pins = int(rng.integers(1, noise.pins_per_large_object_max + 1))
        for px, py in _object_pin_positions(obj, n_pins, K, tf):
            if noise.pin_dropout_prob > 0 and rng.random() < noise.pin_dropout_prob:
                continue
            px += rng.normal(0.0, noise.pin_pos_sigma) if noise.pin_pos_sigma > 0 else 0.0
            py += rng.normal(0.0, noise.pin_pos_sigma) if noise.pin_pos_sigma > 0 else 0.0
            vx = obj.vx + (rng.normal(0.0, noise.pin_vel_sigma) if noise.pin_vel_sigma > 0 else 0.0)
            vy = obj.vy + (rng.normal(0.0, noise.pin_vel_sigma) if noise.pin_vel_sigma > 0 else 0.0)
            raw_pins.append((px, py, vx, vy, rng.uniform(0.5, 1.0), obj.id))
    n_clutter = int(rng.poisson(noise.clutter_rate)) if noise.clutter_rate > 0 else 0
    for _ in range(n_clutter):
        if rng.random() < 0.6:  # roadside sign / pole
            px = rng.uniform(10.0, cfg.range_x[1])
            py = math.copysign(rng.uniform(8.0, 16.0), rng.random() - 0.5)
        else:  # overhead structure across the road
            px = rng.uniform(20.0, cfg.range_x[1] + 10.0)
            py = rng.uniform(-6.0, 6.0)
        raw_pins.append((px, py, -ego + rng.normal(0.0, 0.3), rng.normal(0.0, 0.2),
                         rng.uniform(0.05, 0.45), None))
    raw_pins = [p for p in raw_pins if p[0] > 0.5 and abs(math.atan2(p[1], p[0])) <= half_radar_fov]
    pin_ids = rng.choice(1000, size=len(raw_pins), replace=False) if raw_pins else []
    pins, pin_owner = [], {}
    dt = t_radar - t_cam
    for pid, (px, py, vx, vy, prob, owner) in zip(pin_ids, raw_pins):
        pid = int(pid)
        pins.append(RadarPin(pid, float(prob), float(px + vx * dt), float(py + vy * dt),
                             float(vx), float(vy), float(t_radar)))
        pin_owner[pid] = owner

    # camera
    projected = []
    for obj in objects:
        res = _project_box(obj, K, tf)
        if res is not None:
            projected.append((obj, res[0], res[1]))
    fractions = _visible_fractions([r for _, r, _ in projected], [d for _, _, d in projected], K)
    raw_boxes = []  # (x0, y0, x1, y1, cat, owner)
    for (obj, rect, _), frac in zip(projected, fractions):
        if frac < cfg.min_visible_fraction:
            continue
        if noise.bbox_dropout_prob > 0 and rng.random() < noise.bbox_dropout_prob:
            continue
        x0, y0, x1, y1 = rect
        if noise.bbox_jitter_sigma > 0:
            x0, y0, x1, y1 = np.array(rect) + rng.normal(0.0, noise.bbox_jitter_sigma, size=4)
        raw_boxes.append((x0, y0, x1, y1, obj.category, obj.id))
    n_false = int(rng.poisson(noise.bbox_false_rate)) if noise.bbox_false_rate > 0 else 0
    for _ in range(n_false):
        w = rng.uniform(20.0, 200.0)
        h = w * rng.uniform(0.6, 1.2)
        cx = rng.uniform(w / 2, K.img_w - w / 2)
        bottom = rng.uniform(K.cy + 5.0, K.img_h)
        raw_boxes.append((cx - w / 2, bottom - h, cx + w / 2, bottom, "unknown", None))
    box_ids = rng.permutation(len(raw_boxes))
    boxes, box_owner = [], {}
    for bid, (x0, y0, x1, y1, cat, owner) in zip(box_ids, raw_boxes):
        x0, x1 = sorted((float(x0), float(x1)))
        y0, y1 = sorted((float(y0), float(y1)))
        w, h = max(x1 - x0, 1.0), max(y1 - y0, 1.0)
        boxes.append(BBox2D(int(bid), x0 + w / 2, y0 + h / 2, w, h, cat))
        box_owner[int(bid)] = owner
    boxes.sort(key=lambda b: b.id)

    owner_box = {o: b for b, o in box_owner.items() if o is not None}
    truth, unverifiable = set(), set()
    for pin in pins:
        owner = pin_owner[pin.id]
        contact = _ground_contact(pin, t_cam, K, tf)
        if owner in owner_box:
            # a truncated object whose radar return falls outside the image cannot be checked
            inside = contact is not None and 0.0 <= contact[1].u < K.img_w
            (truth if inside else unverifiable).add((pin.id, owner_box[owner]))
        elif owner is not None and contact is not None:
            # return from an occluded object, seen through the box of whatever hides it
            c = contact[0]
            for b in boxes:
                try:
                    if geom.frustum(b, K, cfg.cam_height).contains(c.X, c.Z):
                        unverifiable.add((pin.id, b.id))
                except geom.AboveHorizon:
                    pass
    truth = frozenset(truth)
    frame = FrameRecord(frame_id, float(t_cam), float(t_radar), K, tf, tuple(pins), tuple(boxes),
                        truth, frozenset(unverifiable), truth, tuple(objects), cfg.cam_height)
    return mark_uncertain(frame, cfg.uncertain_depth, cfg.assumed_height)


def _ground_contact(pin, t_cam, K, tf):
    try:
        c = geom.to_camera(geom.align_temporal(pin, t_cam), tf, 0.0)
    except geom.ResultBehindCamera:
        return None
    return c, geom.project(c, K)


def _threads():
    try:
        return max(1, int(os.environ.get("RADCAM_THREADS", "1")))
    except ValueError:
        return 1


def generate_dataset(cfg: SimConfig, seed, start_frame=0):
    """Generate ``cfg.n_frames`` frames with ids ``start_frame, start_frame + 1, ...``."""
    cfg.validate()
    ids = range(start_frame, start_frame + cfg.n_frames)
    workers = _threads()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(lambda i: generate_frame(cfg, seed, i), ids))
    return [generate_frame(cfg, seed, i) for i in ids]


def pin_depths(frame: FrameRecord, assumed_height=0.5):
    """Camera-frame depth of every pin after alignment to the camera time."""
    out = {}
    for p in frame.aligned_pins():
        try:
            out[p.id] = geom.to_camera(p, frame.extrinsics, assumed_height).Z
        except geom.ResultBehindCamera:
            pass
    return out


def mark_uncertain(frame: FrameRecord, depth_window: float, assumed_height=0.5,
                   copy_truth=True) -> FrameRecord:
    """Flag plausible-but-wrong pairs as uncertain.

    A non-truth pair is uncertain when the pin lies in the box frustum and its
    depth is within ``depth_window`` of the depth of a pin truly paired with
    that box. Pairs already marked uncertain stay marked. With ``copy_truth`` the clean truth also becomes ``labels_pos``.
    """
    depths = pin_depths(frame, assumed_height)
    cams = {}
    for p in frame.aligned_pins():
        if p.id in depths:
            cams[p.id] = geom.to_camera(p, frame.extrinsics, assumed_height)
    partner_depths = {}
    for pid, bid in frame.truth_pos:
        if pid in depths:
            partner_depths.setdefault(bid, []).append(depths[pid])
    uncertain = set()
    for b in frame.boxes:
        if b.id not in partner_depths:
            continue
        try:
            fr = geom.frustum(b, frame.intrinsics, frame.cam_height)
        except geom.AboveHorizon:
            continue
        for pid, c in cams.items():
            if (pid, b.id) in frame.truth_pos or not fr.contains(c.X, c.Z):
                continue
            if min(abs(c.Z - d) for d in partner_depths[b.id]) < depth_window:
                uncertain.add((pid, b.id))
    labels_pos = frame.truth_pos if copy_truth else frame.labels_pos
    uncertain |= frame.labels_uncertain
    return replace(frame, labels_pos=labels_pos, labels_uncertain=frozenset(uncertain) - labels_pos)


# -- serialization ---------------------------------------------------------

def _dumps(obj):
    """Compact JSON with floats written at 17 significant digits."""
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            raise ValueError("non-finite float in dataset record")
        s = "%.17g" % v
        return s if any(ch in s for ch in ".en") else s + ".0"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ",".join(json.dumps(str(k)) + ":" + _dumps(v) for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_dumps(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _pairs(s):
    return [list(p) for p in sorted(s)]


def frame_to_dict(f: FrameRecord):
    return {
        "frame_id": f.frame_id,
        "t_camera": f.t_camera,
        "t_radar": f.t_radar,
        "cam_height": f.cam_height,
        "intrinsics": f.intrinsics.to_dict(),
        "extrinsics": f.extrinsics.to_dict(),
        "pins": [{"id": p.id, "prob": p.obstacle_prob, "x": p.pos_x, "y": p.pos_y,
                  "vx": p.vel_x, "vy": p.vel_y, "t": p.t} for p in f.pins],
        "boxes": [{"id": b.id, "cx": b.center_x, "cy": b.center_y, "w": b.width, "h": b.height,
                   "cat": b.category} for b in f.boxes],
        "labels_pos": _pairs(f.labels_pos),
        "labels_uncertain": _pairs(f.labels_uncertain),
        "truth_pos": _pairs(f.truth_pos),
        "objects": [{"id": o.id, "x": o.x, "y": o.y, "vx": o.vx, "vy": o.vy, "l": o.length,
                     "w": o.width, "h": o.height, "cat": o.category, "color": list(o.color)}
                    for o in f.objects],
    }


def frame_from_dict(d):
    K = d["intrinsics"]
    t_radar = float(d["t_radar"])
    return FrameRecord(
        frame_id=int(d["frame_id"]),
        t_camera=float(d["t_camera"]),
        t_radar=t_radar,
        intrinsics=CameraIntrinsics(float(K["fx"]), float(K["fy"]), float(K["cx"]), float(K["cy"]),
                                    int(K["img_w"]), int(K["img_h"])),
        extrinsics=RigidTransform.from_dict(d["extrinsics"]),
        pins=tuple(RadarPin(int(p["id"]), float(p["prob"]), float(p["x"]), float(p["y"]),
                            float(p["vx"]), float(p["vy"]), float(p.get("t", t_radar)))
                   for p in d["pins"]),
        boxes=tuple(BBox2D(int(b["id"]), float(b["cx"]), float(b["cy"]), float(b["w"]),
                           float(b["h"]), b["cat"]) for b in d["boxes"]),
        labels_pos=frozenset(tuple(p) for p in d["labels_pos"]),
        labels_uncertain=frozenset(tuple(p) for p in d["labels_uncertain"]),
        truth_pos=frozenset(tuple(p) for p in d["truth_pos"]),
        objects=tuple(SceneObject(int(o["id"]), float(o["x"]), float(o["y"]), float(o["vx"]),
                                  float(o["vy"]), float(o["l"]), float(o["w"]), float(o["h"]),
                                  o["cat"], tuple(float(c) for c in o["color"]))
                      for o in d.get("objects", [])),
        cam_height=float(d.get("cam_height", 1.5)),
    )


def write_dataset(frames, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dumps({"schema": SCHEMA}) + "\n")
        for f in frames:
            fh.write(_dumps(frame_to_dict(f)) + "\n")


def read_dataset(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise SchemaError("missing schema header", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise SchemaError(f"unreadable header: {exc.msg}", line=1) from None
    if not isinstance(header, dict) or header.get("schema") != SCHEMA:
        raise SchemaError(f"expected header {{\"schema\":\"{SCHEMA}\"}}", line=1)
    frames = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            frames.append(frame_from_dict(json.loads(line)))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"malformed record: {exc.msg}", line=lineno) from None
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad record: {exc!r}", line=lineno) from None
    return frames


# -- rendering -------------------------------------------------------------

def render_rgb(frame: FrameRecord, grid_w, grid_h):
    """Flat-shaded object rectangles over a sky/ground gradient, shape (3, H, W) in [0, 1]."""
    K = frame.intrinsics
    sx, sy = grid_w / K.img_w, grid_h / K.img_h
    rows = (np.arange(grid_h) + 0.5) / sy
    horizon = K.cy
    img = np.empty((3, grid_h, grid_w))
    sky = np.clip((horizon - rows) / horizon, 0.0, 1.0)
    ground = np.clip((rows - horizon) / (K.img_h - horizon), 0.0, 1.0)
    above = rows < horizon
    img[0] = np.where(above, 0.55 + 0.2 * sky, 0.35 - 0.15 * ground)[:, None]
    img[1] = np.where(above, 0.7 + 0.15 * sky, 0.35 - 0.15 * ground)[:, None]
    img[2] = np.where(above, 0.9, 0.38 - 0.15 * ground)[:, None]
    drawn = []
    for obj in frame.objects:
        res = _project_box(obj, K, frame.extrinsics)
        if res is not None:
            drawn.append((res[1], obj, res[0]))
    for _, obj, (x0, y0, x1, y1) in sorted(drawn, key=lambda t: -t[0]):
        c0, c1 = int(math.floor(x0 * sx)), int(math.ceil(x1 * sx))
        r0, r1 = int(math.floor(y0 * sy)), int(math.ceil(y1 * sy))
        img[:, max(r0, 0):min(r1, grid_h), max(c0, 0):min(c1, grid_w)] = np.array(obj.color)[:, None, None]
    return img
