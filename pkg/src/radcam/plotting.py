"""Deterministic SVG figures: image-plane associations, BEV frustums, curves and sweeps.

Everything is written by hand with fixed number formatting, so identical
inputs always give identical bytes.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

from . import geom
from .scenesim import FrameRecord

STYLE = """
.bg{fill:#f4f4f0}
.sky{fill:#dde8f0}
.ground{fill:#e4e0d6}
.box{fill:none;stroke:#2b6cb0;stroke-width:2}
.box-false{fill:none;stroke:#888;stroke-width:1.5;stroke-dasharray:6 3}
.pin{fill:#1f4e9c;stroke:#fff;stroke-width:1}
.pin-label{font:11px sans-serif;fill:#1f4e9c}
.assoc{stroke:#d62728;stroke-width:2}
.assoc-uncertain{stroke:#ff8c00;stroke-width:2;stroke-dasharray:5 3}
.assoc-wrong{stroke:#7f3fbf;stroke-width:2;stroke-dasharray:2 2}
.frustum{fill:#2b6cb0;fill-opacity:0.12;stroke:#2b6cb0;stroke-width:1}
.ego{fill:#333}
.axis{stroke:#555;stroke-width:1}
.grid{stroke:#ccc;stroke-width:0.5}
.tick{font:10px sans-serif;fill:#444}
.title{font:13px sans-serif;fill:#222}
.series0{fill:none;stroke:#1f77b4;stroke-width:1.5}
.series1{fill:none;stroke:#ff7f0e;stroke-width:1.5}
.series2{fill:none;stroke:#2ca02c;stroke-width:1.5}
.series3{fill:none;stroke:#d62728;stroke-width:1.5}
.legend{font:11px sans-serif;fill:#222}
""".strip()


def _f(x):
    """Fixed two-decimal formatting; avoids '-0.00'."""
    s = f"{x:.2f}"
    return "0.00" if s == "-0.00" else s


class _Svg:
    def __init__(self, width, height, title=None):
        self.w, self.h = width, height
        self.parts = []
        if title:
            self.parts.append(f"<title>{escape(title)}</title>")

    def add(self, s):
        self.parts.append(s)

    def rect(self, x, y, w, h, cls):
        self.add(f'<rect class="{cls}" x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}"/>')

    def line(self, x1, y1, x2, y2, cls, extra=""):
        self.add(f'<line class="{cls}" x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}"{extra}/>')

    def circle(self, x, y, r, cls, extra=""):
        self.add(f'<circle class="{cls}" cx="{_f(x)}" cy="{_f(y)}" r="{_f(r)}"{extra}/>')

    def text(self, x, y, s, cls, anchor="start"):
        self.add(f'<text class="{cls}" x="{_f(x)}" y="{_f(y)}" text-anchor="{anchor}">{escape(str(s))}</text>')

    def polygon(self, pts, cls):
        body = " ".join(f"{_f(x)},{_f(y)}" for x, y in pts)
        self.add(f'<polygon class="{cls}" points="{body}"/>')

    def polyline(self, pts, cls):
        body = " ".join(f"{_f(x)},{_f(y)}" for x, y in pts)
        self.add(f'<polyline class="{cls}" points="{body}"/>')

    def render(self):
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.w}" height="{self.h}" '
                f'viewBox="0 0 {self.w} {self.h}">\n<style>\n{STYLE}\n</style>\n')
        return head + "\n".join(self.parts) + ("\n" if self.parts else "") + "</svg>\n"


def _pair_classes(frame: FrameRecord, pred):
    """(pin, box, css class) for every line to draw, in a fixed order."""
    if pred is None:
        drawn = [(a, b, "assoc") for a, b in sorted(frame.labels_pos)]
        drawn += [(a, b, "assoc-uncertain") for a, b in sorted(frame.labels_uncertain)]
        return drawn
    pairs = sorted(pred.pairs if hasattr(pred, "pairs") else pred)
    out = []
    for p in pairs:
        if p in frame.labels_uncertain:
            cls = "assoc-uncertain"
        elif p in frame.truth_pos or p in frame.labels_pos:
            cls = "assoc"
        else:
            cls = "assoc-wrong"
        out.append((p[0], p[1], cls))
    return out


def scene_svg(frame: FrameRecord, pred=None, scale=0.5, assumed_height=0.5):
    """Image-plane view: boxes, projected pins and association lines.

    Without ``pred`` the frame's labels are drawn (uncertain pairs in their
    own style class); with ``pred`` each predicted pair is styled as correct,
    uncertain or wrong.
    """
    K = frame.intrinsics
    W, H = int(round(K.img_w * scale)), int(round(K.img_h * scale))
    svg = _Svg(W, H, f"frame {frame.frame_id}")
    svg.rect(0, 0, W, H, "bg")
    horizon = K.cy * scale
    svg.rect(0, 0, W, horizon, "sky")
    svg.rect(0, horizon, W, H - horizon, "ground")
    pin_px = {}
    for p in sorted(frame.aligned_pins(), key=lambda p: p.id):
        try:
            c = geom.to_camera(p, frame.extrinsics, assumed_height)
        except geom.ResultBehindCamera:
            continue
        px = geom.project(c, K)
        if px.in_image:
            pin_px[p.id] = (px.u * scale, px.v * scale)
    box_ids = {b.id for b in frame.boxes}
    owned = {b for _, b in frame.truth_pos}
    for b in sorted(frame.boxes, key=lambda b: b.id):
        cls = "box" if b.id in owned or b.category != "unknown" else "box-false"
        svg.rect(b.x_min * scale, b.y_min * scale, b.width * scale, b.height * scale, cls)
    for a, b, cls in _pair_classes(frame, pred):
        if a not in pin_px or b not in box_ids:
            continue
        box = frame.box(b)
        x, y = pin_px[a]
        svg.line(x, y, box.center_x * scale, box.y_max * scale, cls, f' data-pin="{a}" data-box="{b}"')
    for pid, (x, y) in sorted(pin_px.items()):
        svg.circle(x, y, 5, "pin", f' data-pin="{pid}"')
        svg.text(x + 6, y - 6, pid, "pin-label")
    return svg.render()


def bev_svg(frame: FrameRecord, pred=None, size=(480, 640), x_range=(-25.0, 25.0), z_range=(0.0, 80.0),
            near_width=1.0, far_width=5.0, assumed_height=0.5):
    """Top-down camera-frame view with each box's truncated frustum and the pins."""
    W, H = size
    sx = W / (x_range[1] - x_range[0])
    sz = H / (z_range[1] - z_range[0])

    def to_px(x, z):
        return (x - x_range[0]) * sx, H - (z - z_range[0]) * sz

    svg = _Svg(W, H, f"frame {frame.frame_id} bird's-eye view")
    svg.rect(0, 0, W, H, "bg")
    for z in range(int(z_range[0]), int(z_range[1]) + 1, 10):
        x0, y = to_px(x_range[0], z)
        x1, _ = to_px(x_range[1], z)
        svg.line(x0, y, x1, y, "grid")
        svg.text(4, y - 2, f"{z} m", "tick")
    K = frame.intrinsics
    for b in sorted(frame.boxes, key=lambda b: b.id):
        try:
            fr = geom.frustum(b, K, frame.cam_height, near_width, far_width)
        except geom.AboveHorizon:
            continue
        if fr.spread <= 0:
            continue
        pts = fr.polygon()
        if len(pts):
            svg.polygon([to_px(x, z) for x, z in pts], "frustum")
    cams = {}
    for p in sorted(frame.aligned_pins(), key=lambda p: p.id):
        try:
            c = geom.to_camera(p, frame.extrinsics, assumed_height)
        except geom.ResultBehindCamera:
            continue
        cams[p.id] = to_px(c.X, c.Z)
    box_pt = {}
    for b in frame.boxes:
        try:
            g = geom.ipm_ground((b.center_x, b.y_max), K, frame.cam_height)
        except geom.AboveHorizon:
            continue
        box_pt[b.id] = to_px(g.X, g.Z)
    for a, b, cls in _pair_classes(frame, pred):
        if a in cams and b in box_pt:
            svg.line(*cams[a], *box_pt[b], cls, f' data-pin="{a}" data-box="{b}"')
    for pid, (x, y) in sorted(cams.items()):
        svg.circle(x, y, 3.5, "pin", f' data-pin="{pid}"')
    ex, ey = to_px(0.0, 0.0)
    svg.polygon([(ex, ey - 10), (ex - 6, ey), (ex + 6, ey)], "ego")
    return svg.render()


def _nice_ticks(lo, hi, n=5):
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    ticks, t = [], start
    while t <= hi + 1e-12 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks


def line_chart_svg(x, series, title="", xlabel="", ylabel="", size=(640, 360), log_y=False):
    """Simple multi-series line chart; ``series`` maps legend label -> y values."""
    W, H = size
    left, right, top, bottom = 60, 120, 30, 40
    pw, ph = W - left - right, H - top - bottom
    svg = _Svg(W, H, title)
    svg.rect(0, 0, W, H, "bg")
    if title:
        svg.text(left, 18, title, "title")

    def tr(v):
        if not log_y:
            return v
        return math.log10(v) if v > 0 else None

    ys = [tr(v) for vals in series.values() for v in vals]
    ys = [v for v in ys if v is not None and math.isfinite(v)]
    x = list(x)
    if not x or not ys:
        return svg.render()
    x0, x1 = min(x), max(x)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1
    px = lambda v: left + (v - x0) / (x1 - x0) * pw  # noqa: E731
    py = lambda v: top + ph - (v - y0) / (y1 - y0) * ph  # noqa: E731
    svg.line(left, top + ph, left + pw, top + ph, "axis")
    svg.line(left, top, left, top + ph, "axis")
    for t in _nice_ticks(x0, x1):
        svg.line(px(t), top + ph, px(t), top + ph + 4, "axis")
        svg.text(px(t), top + ph + 16, f"{t:g}", "tick", "middle")
    for t in _nice_ticks(y0, y1):
        svg.line(left - 4, py(t), left, py(t), "axis")
        label = f"1e{t:g}" if log_y else f"{t:g}"
        svg.text(left - 6, py(t) + 3, label, "tick", "end")
    if xlabel:
        svg.text(left + pw / 2, H - 6, xlabel, "tick", "middle")
    if ylabel:
        svg.text(12, top - 10, ylabel, "tick")
    for k, (label, vals) in enumerate(series.items()):
        pts = [(px(a), py(tr(b))) for a, b in zip(x, vals) if tr(b) is not None and math.isfinite(tr(b))]
        if pts:
            svg.polyline(pts, f"series{k % 4}")
        ly = top + 14 * k + 8
        svg.line(left + pw + 10, ly, left + pw + 30, ly, f"series{k % 4}")
        svg.text(left + pw + 34, ly + 4, label, "legend")
    return svg.render()


def training_curve_svg(rows):
    """Loss components against iteration from training-log rows."""
    it = [int(r["iter"]) for r in rows]
    series = {k: [float(r[k]) for r in rows] for k in ("total", "pull", "push", "ord")}
    return line_chart_svg(it, series, "training loss", "iteration", "loss")


def sweep_svg(rows, key="threshold"):
    """Precision / recall / F1 against the swept quantity."""
    x = [float(r[key]) for r in rows]
    series = {k: [float(r[k]) for r in rows] for k in ("precision", "recall", "f1")}
    return line_chart_svg(x, series, f"{key} sweep", key, "score")
