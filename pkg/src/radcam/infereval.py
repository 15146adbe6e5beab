"""Affinity-matrix inference and precision / recall / F1 with uncertain labels."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import OverlapError, SchemaError
from .teacher import AssociationSet


@dataclass(frozen=True)
class AffinityMatrix:
    rows: tuple
    cols: tuple
    dist: np.ndarray

    @property
    def shape(self):
        return self.dist.shape


def affinity(emb) -> AffinityMatrix:
    """Euclidean distances between every pin and every box embedding.

    Rows and columns are sorted by id so tie-breaking is deterministic.
    """
    rows = tuple(sorted(emb.pin_emb))
    cols = tuple(sorted(emb.box_emb))
    dim = emb.dim
    P = np.array([emb.pin_emb[i] for i in rows], dtype=float).reshape(len(rows), dim)
    B = np.array([emb.box_emb[j] for j in cols], dtype=float).reshape(len(cols), dim)
    diff = P[:, None, :] - B[None, :, :]
    return AffinityMatrix(rows, cols, np.sqrt((diff * diff).sum(axis=-1)))


def associate(aff: AffinityMatrix, threshold: float) -> AssociationSet:
    """Each pin takes its nearest box (lowest id on ties) if within ``threshold``."""
    pairs, scores = set(), {}
    if aff.dist.size == 0:
        return AssociationSet()
    best = np.argmin(aff.dist, axis=1)  # first occurrence == lowest box id
    for i, j in enumerate(best):
        d = float(aff.dist[i, j])
        if d <= threshold:
            pairs.add((aff.rows[i], aff.cols[j]))
            scores[(aff.rows[i], aff.cols[j])] = d
    return AssociationSet(frozenset(pairs), scores)


@dataclass
class EvalReport:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    per_frame: list = field(default_factory=list)

    @property
    def precision(self):
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self):
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def __add__(self, other):
        return EvalReport(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn,
                          self.per_frame + other.per_frame)

    def to_dict(self):
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "precision": self.precision,
                "recall": self.recall, "f1": self.f1}

    def summary(self):
        return f"{self.precision:.3f} / {self.recall:.3f} / {self.f1:.3f}"

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_per_frame_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["frame_id", "tp", "fp", "fn"])
            w.writerows(self.per_frame)


def evaluate(pred, gt_pos, gt_unc=frozenset(), frame_id=None) -> EvalReport:
    """Count one frame. Uncertain pairs are neither true nor false positives."""
    pred = set(pred.pairs if isinstance(pred, AssociationSet) else pred)
    gt_pos, gt_unc = set(gt_pos), set(gt_unc)
    if gt_pos & gt_unc:
        raise OverlapError(f"pairs labelled both positive and uncertain: {sorted(gt_pos & gt_unc)}")
    tp = len(pred & gt_pos)
    fp = len(pred - gt_pos - gt_unc)
    fn = len(gt_pos - pred)
    rows = [(frame_id, tp, fp, fn)] if frame_id is not None else []
    return EvalReport(tp, fp, fn, rows)


def evaluate_frames(preds, frames, against="truth") -> EvalReport:
    """Micro-averaged report over frames; ``preds`` aligns with ``frames``."""
    total = EvalReport()
    for pred, f in zip(preds, frames):
        gt = f.truth_pos if against == "truth" else f.labels_pos
        total = total + evaluate(pred, gt, f.labels_uncertain - gt, frame_id=f.frame_id)
    return total


PRED_SCHEMA = "radcam-pred/1"


def write_predictions(preds, frames, path):
    """One JSON line per frame: frame id, sorted pairs and their affinity distances."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"schema": PRED_SCHEMA}) + "\n")
        for pred, f in zip(preds, frames):
            pairs = sorted(pred.pairs)
            scores = [pred.scores.get(p) for p in pairs]
            rec = {"frame_id": f.frame_id, "pairs": [list(p) for p in pairs], "scores": scores}
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_predictions(path):
    """Map frame_id -> AssociationSet."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().split("\n") if ln]
    if not lines:
        raise SchemaError("missing schema header", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise SchemaError(f"unreadable header: {exc.msg}", line=1) from None
    if not isinstance(header, dict) or header.get("schema") != PRED_SCHEMA:
        raise SchemaError(f"expected header {{\"schema\":\"{PRED_SCHEMA}\"}}", line=1)
    out = {}
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
            pairs = [tuple(p) for p in rec["pairs"]]
            scores = {p: s for p, s in zip(pairs, rec.get("scores", [])) if s is not None}
            out[int(rec["frame_id"])] = AssociationSet(frozenset(pairs), scores)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad prediction record: {exc!r}", line=lineno) from None
    return out


def threshold_sweep(affinities, frames, thresholds, against="truth"):
    """Micro-averaged scores at each threshold; ``affinities`` aligns with ``frames``."""
    rows = []
    for t in thresholds:
        rep = evaluate_frames([associate(a, t) for a in affinities], frames, against)
        rows.append({"threshold": float(t), **rep.to_dict()})
    return rows
