"""Rule-based radar/camera association used as the label source and baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import geom
from .errors import ConfigInvalid
from .scenesim import FrameRecord


@dataclass(frozen=True)
class AssociationSet:
    """Pin -> box pairs. ``scores`` may hold costs of non-selected candidates too."""

    pairs: frozenset = frozenset()
    scores: dict = field(default_factory=dict)
    pin_prob: dict = field(default_factory=dict)
    flipped: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "pairs", frozenset((int(a), int(b)) for a, b in self.pairs))
        pins = [a for a, _ in self.pairs]
        if len(pins) != len(set(pins)):
            raise ValueError("a pin is associated with more than one box")

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(sorted(self.pairs))

    def box_of(self, pin_id):
        for a, b in self.pairs:
            if a == pin_id:
                return b
        return None


@dataclass(frozen=True)
class CorruptionConfig:
    enabled: bool = False
    depth_range: tuple = (0.0, math.inf)
    flip_prob: float = 0.0


@dataclass(frozen=True)
class TeacherConfig:
    gate_cost_max: float = 1.0
    purify_margin: float = 0.15
    assumed_height: float = 0.0
    depth_window: float = 10.0
    min_obstacle_prob: float = 0.3
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)

    def validate(self):
        if not self.gate_cost_max > 0:
            raise ConfigInvalid("gate_cost_max", "must be > 0")
        if not self.purify_margin >= 0:
            raise ConfigInvalid("purify_margin", "must be >= 0")
        if not self.depth_window >= 0:
            raise ConfigInvalid("depth_window", "must be >= 0")
        if not 0.0 <= self.corruption.flip_prob <= 1.0:
            raise ConfigInvalid("corruption.flip_prob", "probability outside [0, 1]")

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "corruption"}
        c = self.corruption
        d["corruption"] = {"enabled": c.enabled, "depth_range": list(c.depth_range),
                           "flip_prob": c.flip_prob}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        c = d.pop("corruption", None)
        names = {f.name for f in fields(cls)}
        for k in d:
            if k not in names:
                raise ConfigInvalid(k, "unknown field")
        if c is not None:
            c = dict(c)
            if "depth_range" in c:
                c["depth_range"] = tuple(float(v) for v in c["depth_range"])
            d["corruption"] = CorruptionConfig(**c)
        return cls(**d)


def _pin_cameras(frame: FrameRecord, assumed_height):
    out = {}
    for p in frame.aligned_pins():
        try:
            c = geom.to_camera(p, frame.extrinsics, assumed_height)
        except geom.ResultBehindCamera:
            continue
        out[p.id] = (c, geom.project(c, frame.intrinsics))
    return out


def pair_cost(px, box: geom.BBox2D):
    """Image-plane distance from a projected pin to the box bottom centre, box-normalised."""
    return abs(px[0] - box.center_x) / box.width + abs(px[1] - box.y_max) / box.height


def associate_rule_based(frame: FrameRecord, cfg: TeacherConfig) -> AssociationSet:
    if not frame.pins or not frame.boxes:
        return AssociationSet()
    K, h = frame.intrinsics, frame.cam_height
    cams = _pin_cameras(frame, cfg.assumed_height)
    scores = {}
    for b in frame.boxes:
        try:
            fr = geom.frustum(b, K, h)
            box_depth = geom.ipm_ground((b.center_x, b.y_max), K, h).Z
        except geom.AboveHorizon:
            continue
        for pid, (c, px) in cams.items():
            if fr.contains(c.X, c.Z) and abs(box_depth - c.Z) <= cfg.depth_window:
                scores[(pid, b.id)] = pair_cost(px, b)
    chosen = {}
    for (pid, bid), cost in sorted(scores.items(), key=lambda kv: (kv[1], kv[0])):
        if pid not in chosen and cost <= cfg.gate_cost_max:
            chosen[pid] = bid
    probs = {p.id: p.obstacle_prob for p in frame.pins}
    return AssociationSet(frozenset(chosen.items()), scores, probs)


def purify(assoc: AssociationSet, cfg: TeacherConfig) -> AssociationSet:
    """Keep only confident pairs: a clear cost margin and a likely obstacle."""
    best_other = {}
    for (pid, bid), cost in assoc.scores.items():
        if (pid, bid) not in assoc.pairs:
            best_other[pid] = min(best_other.get(pid, math.inf), cost)
    kept = set()
    for pid, bid in assoc.pairs:
        cost = assoc.scores.get((pid, bid), 0.0)
        if best_other.get(pid, math.inf) - cost < cfg.purify_margin:
            continue
        if assoc.pin_prob.get(pid, 1.0) < cfg.min_obstacle_prob:
            continue
        kept.add((pid, bid))
    return replace(assoc, pairs=frozenset(kept))


def corrupt(assoc: AssociationSet, cfg: TeacherConfig, rng, frame: FrameRecord) -> AssociationSet:
    """Inject systematic mistakes: re-point pairs in a depth band to the runner-up box.

    The runner-up is the other box with the lowest image-plane cost for that
    pin; with no other box the pair is dropped.
    """
    c = cfg.corruption
    if not c.enabled or c.flip_prob <= 0 or not assoc.pairs:
        return assoc
    cams = _pin_cameras(frame, cfg.assumed_height)
    lo, hi = c.depth_range
    pairs, scores, flipped = set(), dict(assoc.scores), set()
    for pid, bid in sorted(assoc.pairs):
        depth = cams[pid][0].Z if pid in cams else None
        if depth is None or not lo <= depth <= hi or rng.random() >= c.flip_prob:
            pairs.add((pid, bid))
            continue
        flipped.add((pid, bid))
        px = cams[pid][1]
        others = [(pair_cost(px, b), b.id) for b in frame.boxes if b.id != bid]
        if others:
            cost, new_bid = min(others)
            pairs.add((pid, new_bid))
            scores[(pid, new_bid)] = cost
    return AssociationSet(frozenset(pairs), scores, assoc.pin_prob, frozenset(flipped))


def frame_rng(seed, frame_id):
    return np.random.default_rng(np.random.SeedSequence([int(seed) % (1 << 64), int(frame_id), 7]))


def teach_frame(frame: FrameRecord, cfg: TeacherConfig, seed=0, purified=True) -> AssociationSet:
    """Full label pipeline for one frame: associate, optionally purify, then corrupt."""
    assoc = associate_rule_based(frame, cfg)
    if purified:
        assoc = purify(assoc, cfg)
    return corrupt(assoc, cfg, frame_rng(seed, frame.frame_id), frame)


def teach_dataset(frames, cfg: TeacherConfig, seed=0, keep_uncertain=False):
    """Replace ``labels_pos`` with teacher labels; ``truth_pos`` stays for scoring."""
    cfg.validate()
    out = []
    for f in frames:
        labels = teach_frame(f, cfg, seed).pairs
        unc = f.labels_uncertain - labels if keep_uncertain else frozenset()
        out.append(replace(f, labels_pos=labels, labels_uncertain=unc))
    return out
