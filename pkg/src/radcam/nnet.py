"""A small reverse-mode autodiff tensor on numpy and the association network.

Only the handful of ops the model and its losses need are provided, each
with an explicit backward. Graphs are built eagerly; ``Tensor.backward``
walks them in reverse topological order.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigInvalid, MissingGrad, NonFiniteError, ShapeMismatch

_DEBUG = False


def set_debug(flag: bool):
    """Check every op output for NaN/Inf when enabled."""
    global _DEBUG
    _DEBUG = bool(flag)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, dtype=None, _parents=(), _backward=None, op=""):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self.op = op
        if _DEBUG and not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values produced by {op or 'tensor construction'}")

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch(f"backward() without a gradient needs a scalar, got {self.shape}")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accum(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other, self.dtype), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), scale(self, -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__


def _as_tensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _node(data, parents, backward, op):
    rg = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=rg, _parents=parents if rg else (), _backward=backward if rg else None,
                  op=op)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise and reductions --------------------------------------------

def add(x, y):
    x, y = _as_tensor(x), _as_tensor(y, x.dtype if isinstance(x, Tensor) else None)
    try:
        out = x.data + y.data
    except ValueError:
        raise ShapeMismatch(f"add: shapes {x.shape} and {y.shape} do not broadcast") from None
    if x.shape != y.shape and x.data.size > 1 and y.data.size > 1 and out.shape != x.shape:
        raise ShapeMismatch(f"add: shapes {x.shape} and {y.shape} differ")
    sx, sy = x.shape, y.shape
    return _node(out, (x, y), lambda g: (_unbroadcast(g, sx), _unbroadcast(g, sy)), "add")


def mul(x, y):
    x, y = _as_tensor(x), _as_tensor(y)
    try:
        out = x.data * y.data
    except ValueError:
        raise ShapeMismatch(f"mul: shapes {x.shape} and {y.shape} do not broadcast") from None
    return _node(out, (x, y), lambda g: (_unbroadcast(g * y.data, x.shape), _unbroadcast(g * x.data, y.shape)),
                 "mul")


def scale(x, c):
    return _node(x.data * c, (x,), lambda g: (g * c,), "scale")


def relu(x):
    out = np.maximum(x.data, 0)
    return _node(out, (x,), lambda g: (np.where(out > 0, g, 0).astype(g.dtype, copy=False),), "relu")


def sigmoid(x):
    s = np.empty_like(x.data)
    pos = x.data >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    e = np.exp(x.data[~pos])
    s[~pos] = e / (1.0 + e)
    return _node(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def total(x):
    shape = x.shape
    return _node(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def mean(x):
    n = x.data.size
    if n == 0:
        return Tensor(np.zeros((), dtype=x.dtype))
    return scale(total(x), 1.0 / n)


def take(x, index):
    """Flat gather: ``x.data.ravel()[index]``."""
    index = np.asarray(index, dtype=np.intp)
    shape = x.shape

    def backward(g):
        out = np.zeros(int(np.prod(shape)), dtype=g.dtype)
        np.add.at(out, index.ravel(), g.ravel())
        return (out.reshape(shape),)

    return _node(x.data.ravel()[index], (x,), backward, "take")


def pairwise_distance(a, b):
    """Euclidean distances between rows of ``a`` (n, k) and rows of ``b`` (m, k).

    The gradient of the distance at coincident points is defined as zero.
    """
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeMismatch(f"pairwise_distance: shapes {a.shape} and {b.shape}")
    diff = a.data[:, None, :] - b.data[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    safe = np.where(dist > 0, dist, 1.0)

    def backward(g):
        w = np.where(dist > 0, g / safe, 0.0)[:, :, None] * diff
        return w.sum(axis=1), -w.sum(axis=0)

    return _node(dist, (a, b), backward, "pairwise_distance")


def gather_pixels(x, batch, rows, cols, channels):
    """Read feature vectors ``x[batch[i], channels, rows[i], cols[i]]`` -> (n, len(channels))."""
    batch, rows, cols = (np.asarray(v, dtype=np.intp) for v in (batch, rows, cols))
    ch = np.arange(x.shape[1])[channels]
    shape = x.shape
    out = x.data[batch[:, None], ch[None, :], rows[:, None], cols[:, None]]

    def backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.add.at(gx, (batch[:, None], ch[None, :], rows[:, None], cols[:, None]), g)
        return (gx,)

    return _node(out.reshape(len(batch), len(ch)), (x,), backward, "gather_pixels")


def concat_rows(parts):
    parts = list(parts)
    sizes = [p.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return _node(np.concatenate([p.data for p in parts], axis=0), tuple(parts), backward, "concat_rows")


def gather_cnhw(x, batch, rows, cols):
    """Feature vectors of a channel-major (C, N, H, W) map at pixels -> (n, C)."""
    batch, rows, cols = (np.asarray(v, dtype=np.intp) for v in (batch, rows, cols))
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.add.at(gx, (slice(None), batch, rows, cols), g.T)
        return (gx,)

    return _node(np.ascontiguousarray(x.data[:, batch, rows, cols].T), (x,), backward, "gather_cnhw")


def linear(x, weight, bias=None):
    """Rows of ``x`` (n, Cin) through a 1x1 conv weight (O, Cin, 1, 1) -> (n, O)."""
    O = weight.shape[0]
    wmat = weight.data.reshape(O, -1)
    if x.data.ndim != 2 or x.shape[1] != wmat.shape[1]:
        raise ShapeMismatch(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = x.data @ wmat.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gx = g @ wmat
        gw = (g.T @ x.data).reshape(weight.shape)
        return (gx, gw) + ((g.sum(axis=0),) if bias is not None else ())

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return _node(out, parents, backward, "linear")


# -- convolutional ops ------------------------------------------------------

def _as4d(x):
    if x.data.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.data.ndim != 4:
        raise ShapeMismatch(f"expected (C,H,W) or (N,C,H,W), got {x.shape}")
    return x, False


def reshape(x, shape):
    old = x.shape
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x, axes):
    inv = np.argsort(axes)
    return _node(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                 lambda g: (np.ascontiguousarray(g.transpose(inv)),), "transpose")


def _conv_cnhw(x, weight, bias, stride, padding):
    """Convolution on channel-major (C, N, H, W) data; the network's internal layout."""
    C, N, H, W = x.shape
    O, Cw, k, k2 = weight.shape
    if Cw != C or k != k2:
        raise ShapeMismatch(f"conv2d: input with {C} channels incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (O,):
        raise ShapeMismatch(f"conv2d: bias {bias.shape} does not match weight {weight.shape}")
    p, s = padding, stride
    Ho, Wo = (H + 2 * p - k) // s + 1, (W + 2 * p - k) // s + 1
    if Ho < 1 or Wo < 1:
        raise ShapeMismatch(f"conv2d: spatial size {(H, W)} too small for weight {weight.shape}")
    wmat = weight.data.reshape(O, -1)
    if k == 1 and p == 0:
        cols = x.data[:, :, ::s, ::s].reshape(C, -1) if s > 1 else x.data.reshape(C, -1)
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :Ho, :Wo]
        cols = np.ascontiguousarray(win.transpose(0, 4, 5, 1, 2, 3)).reshape(C * k * k, -1)
    out = (wmat @ cols).reshape(O, N, Ho, Wo)
    if bias is not None:
        out += bias.data[:, None, None, None]
    need_x = x.requires_grad

    def backward(g):
        g2 = g.reshape(O, -1)
        live = np.flatnonzero(np.any(g2 != 0, axis=0))
        sparse = len(live) < g2.shape[1] // 4
        if sparse:  # gradients that only touch a few pixels (anchor read-outs)
            gw = (g2[:, live] @ cols[:, live].T).reshape(weight.shape)
        else:
            gw = (g2 @ cols.T).reshape(weight.shape)
        gb = g2.sum(axis=1) if bias is not None else None
        gx = None
        if need_x:
            if sparse:
                gcols = np.zeros((wmat.shape[1], g2.shape[1]), dtype=g.dtype)
                gcols[:, live] = wmat.T @ g2[:, live]
            else:
                gcols = wmat.T @ g2
            if k == 1 and p == 0 and s == 1:
                gx = gcols.reshape(C, N, H, W)
            else:
                gcols = gcols.reshape(C, k, k, N, Ho, Wo)
                gxp = np.zeros((C, N, H + 2 * p, W + 2 * p), dtype=g.dtype)
                for i in range(k):
                    for j in range(k):
                        gxp[:, :, i:i + s * Ho:s, j:j + s * Wo:s] += gcols[:, i, j]
                gx = gxp[:, :, p:p + H, p:p + W] if p else gxp
        return gx, gw, gb

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return _node(out, parents, backward, "conv2d")


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of (N, C, H, W) or (C, H, W) input with (O, C, k, k) weights."""
    if stride not in (1, 2):
        raise ShapeMismatch(f"conv2d: stride must be 1 or 2, got {stride}")
    x4, squeeze = _as4d(x)
    if x4.shape[1] != weight.shape[1]:
        raise ShapeMismatch(f"conv2d: input {x.shape} incompatible with weight {weight.shape}")
    out = transpose(_conv_cnhw(transpose(x4, (1, 0, 2, 3)), weight, bias, stride, padding), (1, 0, 2, 3))
    return reshape(out, out.shape[1:]) if squeeze else out


def upsample_nearest2x(x):
    """Nearest-neighbour 2x upsampling of the last two axes."""
    if x.data.ndim < 2:
        raise ShapeMismatch(f"upsample_nearest2x: need at least 2 dims, got {x.shape}")
    shape = x.shape
    out = x.data.repeat(2, axis=-2).repeat(2, axis=-1)

    def backward(g):
        return (g.reshape(shape[:-2] + (shape[-2], 2, shape[-1], 2)).sum(axis=(-3, -1)),)

    return _node(out, (x,), backward, "upsample_nearest2x")


# -- network ----------------------------------------------------------------

@dataclass(frozen=True)
class NetworkConfig:
    in_channels: int = 14
    base_channels: int = 16
    out_channels: int = 16
    stages: int = 3
    weight_init_seed: int = 0
    residual: bool = False

    def validate(self):
        if self.out_channels % 2:
            raise ConfigInvalid("out_channels", "must be even")
        if self.stages < 2:
            raise ConfigInvalid("stages", "must be >= 2")
        if self.in_channels < 1 or self.base_channels < 1:
            raise ConfigInvalid("base_channels", "must be >= 1")

    @property
    def stride(self):
        """Total downsampling factor; input sides must be divisible by it."""
        return 2 ** (self.stages + 1)


class AssociationNet:
    """Compact encoder / feature-pyramid decoder producing a full-resolution feature map.

    stem (stride 2) -> ``stages`` stride-2 stages with C, 2C, 4C, ... channels
    -> top-down pathway (1x1 laterals, upsample + add) ending at 1/4 scale
    -> two upsample + conv layers back to full size -> 1x1 head to D.
    The last upsample layer is a 1x1 conv summed with a 1x1 projection of the
    raw input, so every anchor pixel sees its own attributes.
    """

    def __init__(self, cfg: NetworkConfig = NetworkConfig(), dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(cfg.weight_init_seed)
        C = cfg.base_channels
        chans = [C * 2 ** i for i in range(cfg.stages)]
        self.params = {}

        def conv(name, cin, cout, k):
            std = np.sqrt(2.0 / (cin * k * k))
            self.params[name + ".w"] = Tensor(rng.normal(0.0, std, (cout, cin, k, k)).astype(self.dtype),
                                              requires_grad=True)
            self.params[name + ".b"] = Tensor(np.zeros(cout, dtype=self.dtype), requires_grad=True)

        conv("stem", cfg.in_channels, C, 3)
        prev = C
        for i, ch in enumerate(chans):
            conv(f"down{i}.a", prev, ch, 3)
            conv(f"down{i}.b", ch, ch, 3)
            conv(f"lat{i}", ch, C, 1)
            prev = ch
        conv("smooth", C, C, 3)
        conv("up0", C, C, 3)
        conv("up1", C, C, 1)
        conv("skip", cfg.in_channels, C, 1)
        conv("head", C, cfg.out_channels, 1)

    def _conv(self, x, name, stride=1):
        w = self.params[name + ".w"]
        return _conv_cnhw(x, w, self.params[name + ".b"], stride, w.shape[-1] // 2)

    def forward(self, x):
        """(N, 14, H, W) or (14, H, W) input -> (N, D, H, W) or (D, H, W) feature map."""
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        x4, squeeze = _as4d(x)
        out = transpose(self.forward_cnhw(transpose(x4, (1, 0, 2, 3))), (1, 0, 2, 3))
        return reshape(out, out.shape[1:]) if squeeze else out

    def _prepare(self, xc):
        xc = xc if isinstance(xc, Tensor) else Tensor(np.asarray(xc, dtype=self.dtype))
        if xc.dtype != self.dtype:
            xc = Tensor(xc.data.astype(self.dtype), requires_grad=xc.requires_grad)
        if xc.data.ndim != 4 or xc.shape[0] != self.cfg.in_channels:
            raise ShapeMismatch(f"network expects {self.cfg.in_channels} input channels, got {xc.shape}")
        H, W = xc.shape[2:]
        if H % self.cfg.stride or W % self.cfg.stride:
            raise ShapeMismatch(f"input {xc.shape}: H and W must be divisible by {self.cfg.stride}")
        return xc

    def _trunk(self, xc):
        """Everything up to the half-resolution decoder layer."""
        h = relu(self._conv(xc, "stem", stride=2))
        feats = []
        for i in range(self.cfg.stages):
            a = relu(self._conv(h, f"down{i}.a", stride=2))
            b = relu(self._conv(a, f"down{i}.b"))
            h = add(a, b) if self.cfg.residual else b
            feats.append(h)
        top = self._conv(feats[-1], f"lat{self.cfg.stages - 1}")
        for i in range(self.cfg.stages - 2, -1, -1):
            top = add(self._conv(feats[i], f"lat{i}"), upsample_nearest2x(top))
        y = relu(self._conv(top, "smooth"))
        return relu(self._conv(upsample_nearest2x(y), "up0"))

    def forward_cnhw(self, xc):
        """Same network on channel-major (C, N, H, W) data, returning (D, N, H, W)."""
        xc = self._prepare(xc)
        y = self._trunk(xc)
        # a 1x1 conv commutes with nearest upsampling, so apply it at half size
        y = relu(add(upsample_nearest2x(self._conv(y, "up1")), self._conv(xc, "skip")))
        return self._conv(y, "head")

    def features_at(self, xc, batch, rows, cols):
        """Output feature vectors at the given pixels only -> (n, D).

        The layers after the half-resolution decoder are pointwise, so this
        equals reading ``forward_cnhw(xc)`` at those pixels without computing
        the full-resolution map.
        """
        xc = self._prepare(xc)
        batch, rows, cols = (np.asarray(v, dtype=np.intp) for v in (batch, rows, cols))
        y = self._trunk(xc)
        p = self.params
        up = linear(gather_cnhw(y, batch, rows // 2, cols // 2), p["up1.w"], p["up1.b"])
        skip = linear(gather_cnhw(xc, batch, rows, cols), p["skip.w"], p["skip.b"])
        return linear(relu(add(up, skip)), p["head.w"], p["head.b"])

    __call__ = forward

    def parameters(self):
        return [self.params[k] for k in sorted(self.params)]

    def named_parameters(self):
        return sorted(self.params.items())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state):
        if set(state) != set(self.params):
            raise ShapeMismatch(f"parameter names differ: {sorted(set(state) ^ set(self.params))}")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise ShapeMismatch(f"parameter {k}: {v.shape} vs {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=self.dtype)

    def copy(self):
        twin = AssociationNet(self.cfg, self.dtype)
        twin.load_state_dict(self.state_dict())
        return twin


class SGD:
    """SGD with heavy-ball momentum: ``v = m*v + g; p -= lr*v``."""

    def __init__(self, params, lr, momentum=0.9):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise MissingGrad(f"parameter {i} (shape {p.shape}) has no gradient")
        for p, v in zip(self.params, self.velocity):
            v *= self.momentum
            v += p.grad
            p.data -= (self.lr * v).astype(p.data.dtype)
            p.grad = None


def sgd_step(params, lr, momentum=0.0, state=None):
    """Functional form of one SGD step; ``state`` carries velocities between calls."""
    opt = state if state is not None else SGD(params, lr, momentum)
    opt.lr, opt.momentum = lr, momentum
    opt.step()
    return opt


CHECKPOINT_FORMAT = "radcam-checkpoint/1"


def save_checkpoint(net: AssociationNet, path, meta=None):
    header = {"format": CHECKPOINT_FORMAT, "config": asdict(net.cfg), "dtype": net.dtype.str,
              "meta": meta or {}}
    arrays = {"param/" + k: v for k, v in net.state_dict().items()}
    buf = io.BytesIO()
    np.savez(buf, __header__=np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8),
             **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path, expected_meta=None):
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(bytes(z["__header__"]).decode())
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ConfigInvalid("format", f"not a radcam checkpoint: {header.get('format')!r}")
        state = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
    for key, value in (expected_meta or {}).items():
        if header["meta"].get(key) != value:
            raise ConfigInvalid(key, f"checkpoint has {header['meta'].get(key)!r}, expected {value!r}")
    net = AssociationNet(NetworkConfig(**header["config"]), np.dtype(header["dtype"]))
    net.load_state_dict(state)
    return net, header["meta"]


def gradcheck_report(fn, tensors, h=1e-5, max_probes=None, seed=0, skip_kinks=False, kink_tol=1e-2):
    """Compare backprop with central differences; returns (rel_err, n_probes, n_skipped).

    ``fn`` maps no arguments to a scalar Tensor built from ``tensors``. With
    ``max_probes`` only that many randomly chosen entries per tensor are
    perturbed. The error is ``|a - n| / max(|a|, |n|)`` over all probed
    entries, with ``a`` the analytic and ``n`` the numeric gradient vectors.

    Central differences are only an oracle where the function is smooth on
    ``[x - h, x + h]``. With ``skip_kinks`` a probe whose forward and backward
    one-sided slopes disagree by more than ``kink_tol`` (relative) straddles a
    relu or hinge corner and is left out; the number of such probes is
    returned so callers can bound it.
    """
    for t in tensors:
        t.grad = None
    fn().backward()
    base = fn().item() if skip_kinks else None
    rng = np.random.default_rng(seed)
    analytic, numeric = [], []
    n_probes = n_skipped = 0
    for t in tensors:
        grad = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_probes is not None and flat.size > max_probes:
            idx = np.sort(rng.choice(flat.size, size=max_probes, replace=False))
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up = fn().item()
            flat[i] = orig - h
            down = fn().item()
            flat[i] = orig
            n_probes += 1
            central = (up - down) / (2 * h)
            if skip_kinks:
                fwd, bwd = (up - base) / h, (base - down) / h
                if abs(fwd - bwd) > kink_tol * (abs(central) + 1e-3):
                    n_skipped += 1
                    continue
            numeric.append(central)
            analytic.append(grad.reshape(-1)[i])
    a, n = np.array(analytic), np.array(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n)) if len(a) else 0.0
    err = float(np.linalg.norm(a - n) / scale) if scale > 0 else 0.0
    return err, n_probes, n_skipped


def gradcheck(fn, tensors, h=1e-5, max_probes=None, seed=0):
    """Relative error between backprop and central differences (see ``gradcheck_report``)."""
    return gradcheck_report(fn, tensors, h, max_probes, seed)[0]
