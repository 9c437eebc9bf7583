"""Dense float64 tensors with taped reverse-mode differentiation.

Everything downstream (scan serialization, state-space recurrences, the
generator and discriminator, the losses) computes through the ops in this
module, so each op carries its own backward closure. Layout is row-major and
channels-last throughout: feature maps are (H, W, C), serialized sequences
are (T, C), matrices are 2-D. 64-bit floats are the reference precision;
every backward closure is written against that assumption so
finite-difference checks have headroom.

A Tensor whose ``requires_grad`` flag is set, or that depends on one that
does, records its parent nodes and a backward closure. The recorded parent
links are the computation graph; ``topo_order`` materializes it and
``backward`` replays it exactly once per node in reverse topological order.
Tensors are treated as immutable after creation: no op writes into an
input's buffer, and optimizers replace ``data`` wholesale rather than
mutating it in place.

Broadcasting is intentionally narrow: same-shape operands, python scalars,
and size-1 leading/channel axes (the (1, 1, C) against (H, W, C) pattern the
attention block needs). Anything else raises.
"""

from __future__ import annotations

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigurationError(ValueError):
    """An operation parameter is outside its supported range."""


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Split on sign so neither branch exponentiates a large positive value.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return np.reshape(g, shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float64):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    @staticmethod
    def _node(data: np.ndarray, parents: tuple, backward, op: str) -> "Tensor":
        """Internal constructor for op results.

        Parent links and the backward closure are dropped when no parent is
        tracked, so untracked forward passes build no graph at all.
        """
        t = Tensor.__new__(Tensor)
        t.data = data
        t.grad = None
        t.requires_grad = any(p.requires_grad for p in parents)
        t._parents = tuple(parents) if t.requires_grad else ()
        t._backward = backward if t.requires_grad else None
        t._op = op
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item: tensor has shape {self.shape}, not a single value")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    # --- arithmetic sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported; multiply by a reciprocal")
        return mul(self, _as_tensor(1.0 / other))

    def __pow__(self, p):
        if isinstance(p, Tensor):
            raise TypeError("tensor exponents are not supported")
        return powi(self, float(p))

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def sum(self) -> "Tensor":
        return tsum(self)

    def mean(self) -> "Tensor":
        return tmean(self)

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{flag})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _binary_data(a: Tensor, b: Tensor, opname: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{opname}: shapes {a.shape} and {b.shape} do not broadcast") from None


# --- elementwise ----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_data(a, b, "add")
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._node(out, (a, b), bw, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_data(a, b, "sub")
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._node(out, (a, b), bw, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_data(a, b, "mul")
    out = a.data * b.data

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._node(out, (a, b), bw, "mul")


def neg(a: Tensor) -> Tensor:
    def bw(g):
        return (-g,)

    return Tensor._node(-a.data, (a,), bw, "neg")


def powi(a: Tensor, p: float) -> Tensor:
    out = a.data**p

    def bw(g):
        return (g * p * a.data ** (p - 1.0),)

    return Tensor._node(out, (a,), bw, "pow")


def texp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def bw(g):
        return (g * out,)

    return Tensor._node(out, (a,), bw, "exp")


def tlog(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def bw(g):
        return (g / a.data,)

    return Tensor._node(out, (a,), bw, "log")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bw(g):
        return (g * (1.0 - out * out),)

    return Tensor._node(out, (a,), bw, "tanh")


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)

    def bw(g):
        return (g * out * (1.0 - out),)

    return Tensor._node(out, (a,), bw, "sigmoid")


def silu(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    out = a.data * s

    def bw(g):
        # d/dx x*s(x) = s(x) * (1 + x * (1 - s(x)))
        return (g * s * (1.0 + a.data * (1.0 - s)),)

    return Tensor._node(out, (a,), bw, "silu")


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    factor = np.where(a.data > 0, 1.0, slope)
    out = a.data * factor

    def bw(g):
        return (g * factor,)

    return Tensor._node(out, (a,), bw, "leaky_relu")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)

    def bw(g):
        return (g * inside,)

    return Tensor._node(out, (a,), bw, "clip")


# --- shape and reductions -------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = np.reshape(a.data, shape)

    def bw(g):
        return (np.reshape(g, a.shape),)

    return Tensor._node(out, (a,), bw, "reshape")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose: expected a matrix, got shape {a.shape}")
    out = a.data.T

    def bw(g):
        return (g.T,)

    return Tensor._node(out, (a,), bw, "transpose")


def tsum(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum())

    def bw(g):
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._node(out, (a,), bw, "sum")


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    out = np.asarray(a.data.sum() / n)

    def bw(g):
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return Tensor._node(out, (a,), bw, "mean")


# --- linear algebra -------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul: expected matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner extents differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor._node(out, (a, b), bw, "matmul")


def softmax_rows(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"softmax_rows: expected a matrix, got shape {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return Tensor._node(out, (a,), bw, "softmax_rows")


# --- convolutions ---------------------------------------------------------


def _same_pads(size: int, k: int, stride: int):
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    lo = total // 2
    return lo, total - lo, out


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Cross-channel convolution, zero same-padding: (H,W,Ci) x (k,k,Ci,Co)."""
    if x.ndim != 3 or w.ndim != 4:
        raise DimensionError(f"conv2d: expected (H,W,Ci) and (k,k,Ci,Co), got {x.shape} and {w.shape}")
    kh, kw, ci, co = w.shape
    if kh != kw:
        raise ConfigurationError(f"conv2d: kernel must be square, got {kh}x{kw}")
    if kh % 2 == 0:
        raise ConfigurationError(f"conv2d: kernel extent must be odd, got {kh}")
    if stride < 1:
        raise ConfigurationError(f"conv2d: stride must be positive, got {stride}")
    if x.shape[2] != ci:
        raise DimensionError(f"conv2d: channel mismatch: input {x.shape} vs kernel {w.shape}")
    if bias is not None and bias.shape != (co,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({co},)")

    h, wd = x.shape[0], x.shape[1]
    pt, pb, oh = _same_pads(h, kh, stride)
    pl, pr, ow = _same_pads(wd, kw, stride)
    xp = np.zeros((h + pt + pb, wd + pl + pr, ci))
    xp[pt : pt + h, pl : pl + wd] = x.data

    def _rows(d):
        return slice(d, d + stride * (oh - 1) + 1, stride)

    def _cols(d):
        return slice(d, d + stride * (ow - 1) + 1, stride)

    out = np.zeros((oh * ow, co))
    for di in range(kh):
        for dj in range(kw):
            patch = xp[_rows(di), _cols(dj)].reshape(oh * ow, ci)
            out += patch @ w.data[di, dj]
    out = out.reshape(oh, ow, co)
    if bias is not None:
        out = out + bias.data

    def bw(g):
        g2 = g.reshape(oh * ow, co)
        dw = np.zeros_like(w.data)
        dxp = np.zeros_like(xp)
        for di in range(kh):
            for dj in range(kw):
                patch = xp[_rows(di), _cols(dj)].reshape(oh * ow, ci)
                dw[di, dj] = patch.T @ g2
                dxp[_rows(di), _cols(dj)] += (g2 @ w.data[di, dj].T).reshape(oh, ow, ci)
        dx = dxp[pt : pt + h, pl : pl + wd]
        if bias is not None:
            return dx, dw, g2.sum(axis=0)
        return dx, dw

    parents = (x, w) if bias is None else (x, w, bias)
    return Tensor._node(out, parents, bw, "conv2d")


def conv2d_depthwise(x: Tensor, kernels: Tensor) -> Tensor:
    """Per-channel convolution, zero same-padding, stride 1: (H,W,C) x (k,k,C)."""
    if x.ndim != 3 or kernels.ndim != 3:
        raise DimensionError(
            f"conv2d_depthwise: expected (H,W,C) and (k,k,C), got {x.shape} and {kernels.shape}"
        )
    kh, kw, c = kernels.shape
    if kh != kw:
        raise ConfigurationError(f"conv2d_depthwise: kernel must be square, got {kh}x{kw}")
    if kh % 2 == 0:
        raise ConfigurationError(f"conv2d_depthwise: kernel extent must be odd, got {kh}")
    if x.shape[2] != c:
        raise DimensionError(f"conv2d_depthwise: channel mismatch: input {x.shape} vs kernels {kernels.shape}")

    h, wd = x.shape[0], x.shape[1]
    p = kh // 2
    xp = np.zeros((h + 2 * p, wd + 2 * p, c))
    xp[p : p + h, p : p + wd] = x.data
    out = np.zeros_like(x.data)
    for di in range(kh):
        for dj in range(kw):
            out += xp[di : di + h, dj : dj + wd] * kernels.data[di, dj]

    def bw(g):
        dk = np.empty_like(kernels.data)
        dxp = np.zeros_like(xp)
        for di in range(kh):
            for dj in range(kw):
                dk[di, dj] = (xp[di : di + h, dj : dj + wd] * g).sum(axis=(0, 1))
                dxp[di : di + h, dj : dj + wd] += g * kernels.data[di, dj]
        return dxp[p : p + h, p : p + wd], dk

    return Tensor._node(out, (x, kernels), bw, "conv2d_depthwise")


def conv1x1(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-site channel mixing: (H,W,Ci) x (Ci,Co) [+ (Co,)]."""
    if x.ndim != 3 or w.ndim != 2:
        raise DimensionError(f"conv1x1: expected (H,W,Ci) and (Ci,Co), got {x.shape} and {w.shape}")
    ci, co = w.shape
    if x.shape[2] != ci:
        raise DimensionError(f"conv1x1: channel mismatch: input {x.shape} vs weight {w.shape}")
    if bias is not None and bias.shape != (co,):
        raise DimensionError(f"conv1x1: bias shape {bias.shape} != ({co},)")
    h, wd = x.shape[0], x.shape[1]
    flat = x.data.reshape(h * wd, ci)
    out = flat @ w.data
    if bias is not None:
        out = out + bias.data
    out = out.reshape(h, wd, co)

    def bw(g):
        g2 = g.reshape(h * wd, co)
        dx = (g2 @ w.data.T).reshape(x.shape)
        dw = flat.T @ g2
        if bias is not None:
            return dx, dw, g2.sum(axis=0)
        return dx, dw

    parents = (x, w) if bias is None else (x, w, bias)
    return Tensor._node(out, parents, bw, "conv1x1")


# --- spatial resampling ---------------------------------------------------


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 3:
        raise DimensionError(f"global_avg_pool: expected (H,W,C), got {x.shape}")
    h, w = x.shape[0], x.shape[1]
    out = x.data.mean(axis=(0, 1), keepdims=True)

    def bw(g):
        return (np.broadcast_to(g / (h * w), x.shape).copy(),)

    return Tensor._node(out, (x,), bw, "global_avg_pool")


def avg_pool(x: Tensor, factor: int) -> Tensor:
    """Non-overlapping mean pooling; extents must divide by ``factor``."""
    if x.ndim != 3:
        raise DimensionError(f"avg_pool: expected (H,W,C), got {x.shape}")
    if factor < 1:
        raise ConfigurationError(f"avg_pool: factor must be positive, got {factor}")
    h, w, c = x.shape
    if h % factor or w % factor:
        raise DimensionError(f"avg_pool: extents {x.shape} do not divide by {factor}")
    if factor == 1:
        return x
    oh, ow = h // factor, w // factor
    out = x.data.reshape(oh, factor, ow, factor, c).mean(axis=(1, 3))

    def bw(g):
        spread = g[:, None, :, None, :] / (factor * factor)
        return (np.broadcast_to(spread, (oh, factor, ow, factor, c)).reshape(h, w, c).copy(),)

    return Tensor._node(out, (x,), bw, "avg_pool")


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    if x.ndim != 3:
        raise DimensionError(f"upsample_nearest: expected (H,W,C), got {x.shape}")
    if factor < 1:
        raise ConfigurationError(f"upsample_nearest: factor must be positive, got {factor}")
    if factor == 1:
        return x
    h, w, c = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=0), factor, axis=1)

    def bw(g):
        return (g.reshape(h, factor, w, factor, c).sum(axis=(1, 3)),)

    return Tensor._node(out, (x,), bw, "upsample_nearest")


def pad_edge2d(x: Tensor, pad_bottom: int, pad_right: int) -> Tensor:
    """Replicate the last row/column; used to reach pooling divisibility."""
    if x.ndim != 3:
        raise DimensionError(f"pad_edge2d: expected (H,W,C), got {x.shape}")
    if pad_bottom < 0 or pad_right < 0:
        raise ConfigurationError("pad_edge2d: negative padding")
    if pad_bottom == 0 and pad_right == 0:
        return x
    h, w, _ = x.shape
    ri = np.minimum(np.arange(h + pad_bottom), h - 1)
    ci = np.minimum(np.arange(w + pad_right), w - 1)
    out = x.data[ri[:, None], ci[None, :]]

    def bw(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, (ri[:, None], ci[None, :]), g)
        return (dx,)

    return Tensor._node(out, (x,), bw, "pad_edge2d")


# --- gather / concat ------------------------------------------------------


def take_rows(x: Tensor, idx) -> Tensor:
    """Row gather on a matrix; duplicate indices accumulate in backward."""
    if x.ndim != 2:
        raise DimensionError(f"take_rows: expected a matrix, got {x.shape}")
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise DimensionError(f"take_rows: expected a flat index list, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise DimensionError(f"take_rows: index out of range for {x.shape[0]} rows")
    out = x.data[idx]

    def bw(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, idx, g)
        return (dx,)

    return Tensor._node(out, (x,), bw, "take_rows")


def concat_rows(tensors) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat_rows: nothing to concatenate")
    cols = {t.shape[1:] for t in tensors}
    if any(t.ndim != 2 for t in tensors) or len(cols) != 1:
        raise DimensionError(f"concat_rows: incompatible shapes {[t.shape for t in tensors]}")
    out = np.concatenate([t.data for t in tensors], axis=0)
    sizes = [t.shape[0] for t in tensors]
    edges = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(g[edges[i] : edges[i + 1]] for i in range(len(sizes)))

    return Tensor._node(out, tuple(tensors), bw, "concat_rows")


# --- backward pass --------------------------------------------------------


def topo_order(out: Tensor) -> list:
    """All nodes reachable from ``out``, inputs strictly before consumers."""
    order = []
    seen = set()
    stack = [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(out: Tensor) -> None:
    """Accumulate d(out)/d(node) into ``grad`` for every tracked node.

    ``out`` must hold a single value. Each recorded node's closure runs
    exactly once; leaves keep accumulating across calls until the caller
    clears them.
    """
    if out.data.size != 1:
        raise ValueError(f"backward: output must be a single value, got shape {out.shape}")
    order = topo_order(out)
    if out.grad is None:
        out.grad = np.ones_like(out.data)
    else:
        out.grad = out.grad + np.ones_like(out.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._backward(node.grad)):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad += g


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


# --- gradient verification ------------------------------------------------


def finite_diff_check(f, x: Tensor, eps: float = 1e-5) -> float:
    """Compare reverse-mode against central differences, coordinate by coordinate.

    ``f`` maps one tensor to a single-value tensor. Returns the maximum over
    coordinates of |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
    """
    probe = Tensor(x.data.copy(), requires_grad=True)
    backward(f(probe))
    analytic = probe.grad if probe.grad is not None else np.zeros_like(probe.data)

    worst = 0.0
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        bumped = x.data.copy().reshape(-1)
        bumped[i] = flat[i] + eps
        fp = f(Tensor(bumped.reshape(x.shape))).item()
        bumped[i] = flat[i] - eps
        fm = f(Tensor(bumped.reshape(x.shape))).item()
        numeric = (fp - fm) / (2.0 * eps)
        a = float(analytic.reshape(-1)[i])
        rel = abs(a - numeric) / (abs(a) + abs(numeric) + 1e-12)
        worst = max(worst, rel)
    return worst
