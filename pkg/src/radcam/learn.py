"""Pull / push / ordinal losses, negative sampling and the training loop."""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import geom, nnet
from .encode import CHANNELS, GridSpec, build_pseudo_image, embedding_channels
from .errors import ConfigInvalid, DivergenceDetected, EmptyDataset, MissingDepth, UnknownId
from .nnet import Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossConfig:
    m1: float = 2.0
    m2: float = 8.0
    w_ord: float = 2.0
    sample_ratio: Optional[float] = 1.0  # None: use every negative pair
    tau_train: float = 5.0
    t_soft: float = 1.0

    def validate(self):
        if not 0 <= self.m1 < self.m2:
            raise ConfigInvalid("m1", "need 0 <= m1 < m2")
        if self.w_ord < 0:
            raise ConfigInvalid("w_ord", "must be >= 0")
        if self.sample_ratio is not None and not self.sample_ratio > 0:
            raise ConfigInvalid("sample_ratio", "must be > 0 (or null for no sampling)")
        if not self.t_soft > 0:
            raise ConfigInvalid("t_soft", "must be > 0")


@dataclass(frozen=True)
class TrainConfig:
    batch_frames: int = 8
    total_iters: int = 2000
    lr: float = 1e-3
    lr_drops: tuple = (0.8, 0.9)
    lr_drop_factor: float = 10.0
    momentum: float = 0.9
    seed: int = 0
    checkpoint_every: int = 0
    assumed_height: float = 0.5
    shared_embedding: bool = False

    def validate(self):
        if not self.lr > 0:
            raise ConfigInvalid("lr", "must be > 0")
        if list(self.lr_drops) != sorted(self.lr_drops) or any(not 0 < f < 1 for f in self.lr_drops):
            raise ConfigInvalid("lr_drops", "must be sorted fractions in (0, 1)")
        if self.batch_frames < 1:
            raise ConfigInvalid("batch_frames", "must be >= 1")
        if self.total_iters < 0:
            raise ConfigInvalid("total_iters", "must be >= 0")

    @classmethod
    def paper(cls, **overrides):
        """The published schedule: 48-frame batches, 10K iterations, lr 1e-4."""
        return cls(**{"batch_frames": 48, "total_iters": 10000, "lr": 1e-4, **overrides})

    def lr_at(self, it):
        drops = sum(1 for f in self.lr_drops if it >= f * self.total_iters)
        return self.lr / self.lr_drop_factor ** drops


class FrameEmbeddings:
    """Differentiable pin / box embedding matrices of one frame, rows sorted by id."""

    def __init__(self, pin_ids, box_ids, pins: Tensor, boxes: Tensor):
        self.pin_ids = list(pin_ids)
        self.box_ids = list(box_ids)
        self.pins = pins
        self.boxes = boxes
        self.pin_index = {k: i for i, k in enumerate(self.pin_ids)}
        self.box_index = {k: i for i, k in enumerate(self.box_ids)}
        self._dist = None

    @classmethod
    def from_embedding_set(cls, emb, requires_grad=True, dtype=np.float64):
        pin_ids, box_ids = sorted(emb.pin_emb), sorted(emb.box_emb)
        P = np.array([emb.pin_emb[k] for k in pin_ids], dtype=dtype).reshape(len(pin_ids), emb.dim)
        B = np.array([emb.box_emb[k] for k in box_ids], dtype=dtype).reshape(len(box_ids), emb.dim)
        return cls(pin_ids, box_ids, Tensor(P, requires_grad=requires_grad), Tensor(B, requires_grad=requires_grad))

    @property
    def dist(self):
        if self._dist is None:
            self._dist = nnet.pairwise_distance(self.pins, self.boxes)
        return self._dist

    def flat_index(self, pairs):
        idx = []
        nb = len(self.box_ids)
        for a, b in pairs:
            if a not in self.pin_index:
                raise UnknownId(f"pin {a} has no embedding")
            if b not in self.box_index:
                raise UnknownId(f"box {b} has no embedding")
            idx.append(self.pin_index[a] * nb + self.box_index[b])
        return np.array(idx, dtype=np.intp)


def _as_frame_emb(emb):
    return emb if isinstance(emb, FrameEmbeddings) else FrameEmbeddings.from_embedding_set(emb)


def _zero(emb):
    return Tensor(np.zeros((), dtype=emb.pins.dtype))


def pull_loss(emb, pos, m1=2.0) -> Tensor:
    """Mean hinge ``max(0, |h_pin - h_box| - m1)`` over positive pairs."""
    emb = _as_frame_emb(emb)
    pos = sorted(pos)
    if not pos:
        return _zero(emb)
    d = nnet.take(emb.dist, emb.flat_index(pos))
    return nnet.mean(nnet.relu(d - m1))


def push_loss(emb, neg, m2=8.0) -> Tensor:
    """Mean hinge ``max(0, m2 - |h_pin - h_box|)`` over negative pairs."""
    emb = _as_frame_emb(emb)
    neg = sorted(neg)
    if not neg:
        return _zero(emb)
    d = nnet.take(emb.dist, emb.flat_index(neg))
    return nnet.mean(nnet.relu(m2 - d))


def sample_negatives(pin_ids, box_ids, labels_pos, labels_uncertain, n_pos, ratio, rng):
    """Uniformly sample unlabeled pairs; never a positive or an uncertain one.

    ``ratio=None`` returns the whole candidate pool.
    """
    excluded = set(labels_pos) | set(labels_uncertain)
    pool = [(a, b) for a in sorted(pin_ids) for b in sorted(box_ids) if (a, b) not in excluded]
    if ratio is None:
        return set(pool)
    if n_pos <= 0 or not pool:
        return set()
    k = min(int(round(ratio * n_pos)), len(pool))
    pick = rng.choice(len(pool), size=k, replace=False)
    return {pool[i] for i in sorted(pick)}


def predicted_positives(emb, tau_train=5.0, t_soft=1.0, min_weight=0.01):
    """Per-pin nearest box with soft membership ``sigmoid((tau - dist) / T)``.

    Returns (pairs, weights) where ``weights`` is a differentiable vector
    aligned with ``pairs``; pairs whose weight falls below ``min_weight`` are
    left out.
    """
    emb = _as_frame_emb(emb)
    if not emb.pin_ids or not emb.box_ids:
        return [], Tensor(np.zeros(0, dtype=emb.pins.dtype))
    dist = emb.dist
    best = np.argmin(dist.data, axis=1)
    pairs, idx = [], []
    for i, j in enumerate(best):
        w = 1.0 / (1.0 + math.exp(-(tau_train - float(dist.data[i, j])) / t_soft))
        if w >= min_weight:
            pairs.append((emb.pin_ids[i], emb.box_ids[j]))
            idx.append(i * len(emb.box_ids) + j)
    d = nnet.take(dist, np.array(idx, dtype=np.intp))
    return pairs, nnet.sigmoid(nnet.scale(tau_train - d, 1.0 / t_soft))


def ordinal_loss(pairs, weights: Tensor, depths, bottoms) -> Tensor:
    """Soft count of predicted pairs whose depth order contradicts their box bottom order.

    A farther pin must belong to a box whose bottom edge is higher in the
    image (smaller ``y_max``). Each unordered pair of predictions contributes
    ``s_i * s_j * sigmoid((d_i - d_j) * (y_i - y_j))``; the sum is divided by
    the number of unordered pairs. Predictions on the same box carry no
    ordering information and contribute nothing.
    """
    n = len(pairs)
    if n < 2:
        return Tensor(np.zeros((), dtype=weights.dtype))
    # a canonical order makes the floating-point sum independent of the input order
    order = sorted(range(n), key=lambda k: tuple(pairs[k]))
    if order != list(range(n)):
        pairs = [pairs[k] for k in order]
        weights = nnet.take(weights, np.array(order, dtype=np.intp))
    d = np.empty(n)
    y = np.empty(n)
    for k, (pin, box) in enumerate(pairs):
        if pin not in depths:
            raise MissingDepth(f"no depth for pin {pin}")
        d[k] = depths[pin]
        y[k] = bottoms[box]
    iu, ju = np.triu_indices(n, k=1)
    boxes = np.array([b for _, b in pairs])
    keep = boxes[iu] != boxes[ju]
    iu, ju = iu[keep], ju[keep]
    if len(iu) == 0:
        return Tensor(np.zeros((), dtype=weights.dtype))
    arg = (d[iu] - d[ju]) * (y[iu] - y[ju])
    viol = 1.0 / (1.0 + np.exp(-np.clip(arg, -500, 500)))
    si, sj = nnet.take(weights, iu), nnet.take(weights, ju)
    terms = nnet.mul(nnet.mul(si, sj), Tensor(viol.astype(weights.dtype)))
    return nnet.scale(nnet.total(terms), 2.0 / (n * (n - 1)))


def total_loss(pull, push, ordinal, w_ord):
    if w_ord == 0:
        return nnet.add(pull, push)
    return nnet.add(nnet.add(pull, push), nnet.scale(ordinal, w_ord))


# -- training ---------------------------------------------------------------

@dataclass
class PreparedFrame:
    """Everything the loss needs for one frame, computed once."""

    frame: object
    tensor: np.ndarray
    pin_ids: list
    box_ids: list
    pin_cells: np.ndarray
    box_cells: np.ndarray
    pos: list
    uncertain: list
    depths: dict
    bottoms: dict


def prepare_frame(frame, grid: GridSpec, assumed_height=0.5, shared=False, dtype=np.float32):
    pseudo = build_pseudo_image(frame, grid, assumed_height=assumed_height, shared_anchors=shared, dtype=dtype)
    pin_ids = sorted(pseudo.pin_anchors)
    box_ids = sorted(pseudo.box_anchors)
    pin_set, box_set = set(pin_ids), set(box_ids)
    pos = sorted(p for p in frame.labels_pos if p[0] in pin_set and p[1] in box_set)
    unc = sorted(p for p in frame.labels_uncertain if p[0] in pin_set and p[1] in box_set)
    depths = {}
    for p in frame.aligned_pins():
        if p.id in pin_set:
            depths[p.id] = geom.to_camera(p, frame.extrinsics, assumed_height).Z
    bottoms = {b.id: b.y_max for b in frame.boxes if b.id in box_set}
    cells = lambda ids, anchors: np.array([anchors[k] for k in ids], dtype=np.intp).reshape(len(ids), 2)
    return PreparedFrame(frame, pseudo.tensor, pin_ids, box_ids, cells(pin_ids, pseudo.pin_anchors),
                         cells(box_ids, pseudo.box_anchors), pos, unc, depths, bottoms)


def batch_embeddings(net, prepared, shared=False):
    """Run the network on a batch and slice per-frame embedding matrices."""
    x = np.stack([p.tensor for p in prepared], axis=1)  # (C, N, H, W)
    batch, rows, cols, spans = [], [], [], []
    for n, p in enumerate(prepared):
        start = len(batch)
        cells = np.concatenate([p.pin_cells, p.box_cells], axis=0)
        batch.extend([n] * len(cells))
        rows.extend(cells[:, 0].tolist())
        cols.extend(cells[:, 1].tolist())
        spans.append((start, len(p.pin_ids), len(p.box_ids)))
    feats = net.features_at(Tensor(x), batch, rows, cols)
    pin_sl, box_sl = embedding_channels(net.cfg.out_channels, shared)
    out = []
    for p, (start, npin, nbox) in zip(prepared, spans):
        P = select(feats, np.arange(start, start + npin), pin_sl)
        B = select(feats, np.arange(start + npin, start + npin + nbox), box_sl)
        out.append(FrameEmbeddings(p.pin_ids, p.box_ids, P, B))
    return out


def select(x: Tensor, rows, col_slice):
    """Sub-matrix ``x[rows, col_slice]`` as a differentiable op."""
    rows = np.asarray(rows, dtype=np.intp)
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[rows, col_slice] += g
        return (gx,)

    return nnet._node(x.data[rows, col_slice], (x,), backward, "select")


def frame_losses(emb: FrameEmbeddings, prep: PreparedFrame, loss_cfg: LossConfig, rng, fallback_npos):
    n_pos = len(prep.pos)
    k = n_pos if n_pos > 0 else fallback_npos
    neg = sample_negatives(prep.pin_ids, prep.box_ids, prep.pos, prep.uncertain, k, loss_cfg.sample_ratio, rng)
    pull = pull_loss(emb, prep.pos, loss_cfg.m1)
    push = push_loss(emb, neg, loss_cfg.m2)
    if loss_cfg.w_ord > 0:
        pairs, weights = predicted_positives(emb, loss_cfg.tau_train, loss_cfg.t_soft)
        ordl = ordinal_loss(pairs, weights, prep.depths, prep.bottoms)
    else:
        ordl = _zero(emb)
    return pull, push, ordl


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)

    COLUMNS = ("iter", "lr", "pull", "push", "ord", "total", "seconds")

    def append(self, **row):
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return [r[name] for r in self.rows]

    def write_csv(self, path, wallclock=True):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([r["iter"], repr(r["lr"]), repr(r["pull"]), repr(r["push"]), repr(r["ord"]),
                            repr(r["total"]), f"{r['seconds']:.3f}" if wallclock else ""])


def train(frames, net, loss_cfg: LossConfig = LossConfig(), train_cfg: TrainConfig = TrainConfig(),
          grid: GridSpec = GridSpec(), checkpoint_dir=None, progress=None):
    """Optimise ``net`` in place on labelled frames; returns (net, TrainLog)."""
    loss_cfg.validate()
    train_cfg.validate()
    frames = list(frames)
    trainlog = TrainLog()
    if train_cfg.total_iters == 0:
        return net, trainlog
    if not frames:
        raise EmptyDataset("training needs at least one frame")
    grid.validate(net.cfg.stride)
    shared = train_cfg.shared_embedding
    prepared = [prepare_frame(f, grid, train_cfg.assumed_height, shared, net.dtype) for f in frames]
    n_pos = [len(p.pos) for p in prepared]
    fallback = max(1, int(round(float(np.median(n_pos))))) if n_pos else 1
    rng = np.random.default_rng(np.random.SeedSequence([train_cfg.seed % (1 << 64), 11]))
    opt = nnet.SGD(net.parameters(), train_cfg.lr, train_cfg.momentum)
    last_good = net.state_dict()
    t0 = time.perf_counter()
    for it in range(train_cfg.total_iters):
        lr = train_cfg.lr_at(it)
        opt.lr = lr
        if len(prepared) <= train_cfg.batch_frames:
            idx = np.arange(len(prepared))
        else:
            idx = np.sort(rng.choice(len(prepared), size=train_cfg.batch_frames, replace=False))
        batch = [prepared[i] for i in idx]
        embs = batch_embeddings(net, batch, shared)
        pulls, pushes, ords = [], [], []
        for emb, prep in zip(embs, batch):
            a, b, c = frame_losses(emb, prep, loss_cfg, rng, fallback)
            pulls.append(a)
            pushes.append(b)
            ords.append(c)
        inv = 1.0 / len(batch)
        pull = nnet.scale(_sum(pulls), inv)
        push = nnet.scale(_sum(pushes), inv)
        ordl = nnet.scale(_sum(ords), inv)
        tot = total_loss(pull, push, ordl, loss_cfg.w_ord)
        if not math.isfinite(tot.item()):
            net.load_state_dict(last_good)
            raise DivergenceDetected(f"total loss became {tot.item()} at iteration {it}")
        last_good = net.state_dict()
        net.zero_grad()
        if tot.requires_grad:
            tot.backward()
        for p in net.parameters():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
        opt.step()
        trainlog.append(iter=it, lr=lr, pull=pull.item(), push=push.item(), ord=ordl.item(), total=tot.item(),
                        seconds=time.perf_counter() - t0)
        if progress is not None:
            progress(it, trainlog.rows[-1])
        if checkpoint_dir and train_cfg.checkpoint_every and (it + 1) % train_cfg.checkpoint_every == 0:
            nnet.save_checkpoint(net, os.path.join(checkpoint_dir, f"ckpt_{it + 1:06d}.npz"),
                                 {"channels": list(CHANNELS)})
    return net, trainlog


def _sum(terms):
    out = terms[0]
    for t in terms[1:]:
        out = nnet.add(out, t)
    return out


def embed_frames(net, frames, grid: GridSpec = GridSpec(), assumed_height=0.5, shared=False, batch=16):
    """Numpy embedding sets for frames (no gradient tracking)."""
    from .encode import EmbeddingSet

    out = []
    for start in range(0, len(frames), batch):
        chunk = [prepare_frame(f, grid, assumed_height, shared, net.dtype) for f in frames[start:start + batch]]
        for prep, emb in zip(chunk, batch_embeddings(net, chunk, shared)):
            pins = {k: emb.pins.data[i].astype(np.float64) for i, k in enumerate(prep.pin_ids)}
            boxes = {k: emb.boxes.data[i].astype(np.float64) for i, k in enumerate(prep.box_ids)}
            out.append(EmbeddingSet(pins, boxes, emb.pins.shape[1]))
    return out


def predict(net, frames, threshold=5.0, grid: GridSpec = GridSpec(), assumed_height=0.5, shared=False):
    """Affinity-matrix inference on every frame; returns a list of AssociationSet."""
    from .infereval import affinity, associate

    return [associate(affinity(e), threshold)
            for e in embed_frames(net, frames, grid, assumed_height, shared)]
