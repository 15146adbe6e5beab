"""Pseudo-image construction and per-object embedding read-out."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import geom
from .errors import ShapeMismatch
from .scenesim import FrameRecord, render_rgb

log = logging.getLogger(__name__)

CHANNELS = (
    "pin_id", "pin_prob", "pin_pos_x", "pin_pos_z", "pin_vel_x", "pin_vel_z", "pin_heatmap",
    "box_h", "box_w", "box_cat", "box_heatmap",
    "rgb_r", "rgb_g", "rgb_b",
)
N_CHANNELS = len(CHANNELS)
POS_SCALE = 100.0
VEL_SCALE = 40.0
HEATMAP_SIGMA = 1.5
HEATMAP_RADIUS = 2

_NEIGHBOURS = sorted(((dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)),
                     key=lambda d: (abs(d[0]) + abs(d[1]), d))


@dataclass(frozen=True)
class GridSpec:
    grid_w: int = 192
    grid_h: int = 96
    img_w: int = 1828
    img_h: int = 948

    @property
    def sx(self):
        return self.grid_w / self.img_w

    @property
    def sy(self):
        return self.grid_h / self.img_h

    def validate(self, divisor=1):
        if self.grid_w % divisor or self.grid_h % divisor:
            raise ShapeMismatch(f"grid {self.grid_w}x{self.grid_h} must be divisible by {divisor}")

    def to_grid(self, u, v):
        return math.floor(v * self.sy), math.floor(u * self.sx)

    def to_image(self, row, col):
        """Centre of a grid cell in full-image pixels."""
        return (col + 0.5) / self.sx, (row + 0.5) / self.sy


@dataclass
class PseudoImage:
    tensor: np.ndarray
    pin_anchors: dict = field(default_factory=dict)
    box_anchors: dict = field(default_factory=dict)
    dropped: list = field(default_factory=list)

    @property
    def anchors(self):
        out = {("pin", k): v for k, v in self.pin_anchors.items()}
        out.update({("box", k): v for k, v in self.box_anchors.items()})
        return out


@dataclass
class EmbeddingSet:
    pin_emb: dict = field(default_factory=dict)
    box_emb: dict = field(default_factory=dict)
    dim: int = 0

    def __post_init__(self):
        for v in list(self.pin_emb.values()) + list(self.box_emb.values()):
            if len(v) != self.dim:
                raise ShapeMismatch(f"embedding of length {len(v)} in a set of dimension {self.dim}")


def _gaussian_patch():
    r = np.arange(-HEATMAP_RADIUS, HEATMAP_RADIUS + 1)
    return np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2 * HEATMAP_SIGMA ** 2))


_PATCH = _gaussian_patch()


def _splat(plane, row, col):
    H, W = plane.shape
    r0, c0 = row - HEATMAP_RADIUS, col - HEATMAP_RADIUS
    rs, cs = max(r0, 0), max(c0, 0)
    re, ce = min(r0 + _PATCH.shape[0], H), min(c0 + _PATCH.shape[1], W)
    np.maximum(plane[rs:re, cs:ce], _PATCH[rs - r0:re - r0, cs - c0:ce - c0], out=plane[rs:re, cs:ce])


def _claim(occupied, row, col, H, W):
    if (row, col) not in occupied:
        return row, col
    for dr, dc in _NEIGHBOURS:
        r, c = row + dr, col + dc
        if 0 <= r < H and 0 <= c < W and (r, c) not in occupied:
            return r, c
    return None


def build_pseudo_image(frame: FrameRecord, grid: GridSpec = GridSpec(), rgb=None, assumed_height=0.5,
                       shared_anchors=False, dtype=np.float32) -> PseudoImage:
    """Rasterise pins and boxes of ``frame`` into the 14-channel network input.

    Pins are aligned to the camera timestamp and projected with the frame's
    extrinsics; boxes are anchored at their centre. Attributes are written
    at the anchor pixel only. With ``shared_anchors`` a pin and a box may not
    share a pixel either (needed when both read the same embedding channels).
    """
    H, W = grid.grid_h, grid.grid_w
    img = np.zeros((N_CHANNELS, H, W), dtype=np.float64)
    img[11:14] = render_rgb(frame, W, H) if rgb is None else rgb
    K, tf = frame.intrinsics, frame.extrinsics
    pin_occ, box_occ = set(), set()
    out = PseudoImage(img)
    for pin in sorted(frame.aligned_pins(), key=lambda p: p.id):
        try:
            c = geom.to_camera(pin, tf, assumed_height)
        except geom.ResultBehindCamera:
            out.dropped.append(("pin", pin.id, "behind camera"))
            continue
        u, v, _ = geom.project(c, K)
        row, col = grid.to_grid(u, v)
        if not (0 <= row < H and 0 <= col < W):
            out.dropped.append(("pin", pin.id, "outside grid"))
            continue
        cell = _claim(pin_occ, row, col, H, W)
        if cell is None:
            log.warning("frame %s: pin %s dropped, no free pixel near (%d, %d)", frame.frame_id, pin.id, row, col)
            out.dropped.append(("pin", pin.id, "collision"))
            continue
        if cell != (row, col):
            log.info("frame %s: pin %s anchor moved from %s to %s", frame.frame_id, pin.id, (row, col), cell)
        row, col = cell
        pin_occ.add(cell)
        vx, _, vz = geom.velocity_to_camera(pin, tf)
        img[0:6, row, col] = ((pin.id % 256) / 256.0, pin.obstacle_prob, c.X / POS_SCALE, c.Z / POS_SCALE,
                              vx / VEL_SCALE, vz / VEL_SCALE)
        _splat(img[6], row, col)
        out.pin_anchors[pin.id] = (row, col)
    for box in sorted(frame.boxes, key=lambda b: b.id):
        row, col = grid.to_grid(box.center_x, box.center_y)
        row, col = min(max(row, 0), H - 1), min(max(col, 0), W - 1)
        occupied = box_occ | pin_occ if shared_anchors else box_occ
        cell = _claim(occupied, row, col, H, W)
        if cell is None:
            log.warning("frame %s: box %s dropped, no free pixel near (%d, %d)", frame.frame_id, box.id, row, col)
            out.dropped.append(("box", box.id, "collision"))
            continue
        if cell != (row, col):
            log.info("frame %s: box %s anchor moved from %s to %s", frame.frame_id, box.id, (row, col), cell)
        row, col = cell
        box_occ.add(cell)
        img[7:10, row, col] = (box.height / K.img_h, box.width / K.img_w, box.category_index / 9.0)
        _splat(img[10], row, col)
        out.box_anchors[box.id] = (row, col)
    out.tensor = img.astype(dtype)
    return out


def embedding_channels(D, shared=False):
    """Channel slices read for pins and for boxes."""
    if shared:
        return slice(0, D), slice(0, D)
    if D % 2:
        raise ShapeMismatch(f"output channel count {D} must be even")
    return slice(0, D // 2), slice(D // 2, D)


def extract_embeddings(featmap, pseudo: PseudoImage, shared=False) -> EmbeddingSet:
    """Read pin vectors from the first half of the channels and box vectors from the second."""
    fm = featmap.data if hasattr(featmap, "data") and not isinstance(featmap, np.ndarray) else featmap
    fm = np.asarray(fm)
    if fm.ndim != 3 or fm.shape[1:] != pseudo.tensor.shape[1:]:
        raise ShapeMismatch(f"feature map {fm.shape} does not match pseudo-image {pseudo.tensor.shape}")
    D = fm.shape[0]
    pin_sl, box_sl = embedding_channels(D, shared)
    pins = {k: fm[pin_sl, r, c].astype(np.float64) for k, (r, c) in pseudo.pin_anchors.items()}
    boxes = {k: fm[box_sl, r, c].astype(np.float64) for k, (r, c) in pseudo.box_anchors.items()}
    return EmbeddingSet(pins, boxes, pin_sl.stop - pin_sl.start)


def save_contact_sheet(pseudo: PseudoImage, path, cols=7):
    """Write the 14 channels as a grey-scale PNG grid (RGB channels shown separately)."""
    from PIL import Image

    C, H, W = pseudo.tensor.shape
    rows = math.ceil(C / cols)
    sheet = np.zeros((rows * (H + 2), cols * (W + 2)), dtype=np.uint8)
    for i in range(C):
        ch = pseudo.tensor[i].astype(np.float64)
        lo, hi = float(ch.min()), float(ch.max())
        norm = (ch - lo) / (hi - lo) if hi > lo else np.zeros_like(ch)
        r, c = divmod(i, cols)
        sheet[r * (H + 2):r * (H + 2) + H, c * (W + 2):c * (W + 2) + W] = (norm * 255).round().astype(np.uint8)
    Image.fromarray(sheet, mode="L").save(path)
