"""Dense float64 tensors with reverse-mode gradients.

Every primitive records its inputs and a backward rule, so `backward`
on any scalar result replays the recorded tape once, in reverse
topological order, and accumulates gradients onto the leaf tensors.
Op outputs are checked for finiteness, so a NaN or overflow surfaces at
the op that produced it rather than at the end of a run.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DivergenceError, ParameterError, ShapeError
from .rng import RngState


class Tensor:
    """Row-major float64 array, optionally participating in the gradient tape.

    Treat `data` as immutable once constructed; optimizers may rewrite
    leaf data between graph builds, never mid-graph.
    """

    __slots__ = ("data", "requires_grad", "grad", "op", "parents", "vjps", "_backward_used")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.size == 0:
            raise ValueError("tensor extents must be positive")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor data must be finite")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op: str | None = None
        self.parents: tuple[Tensor, ...] = ()
        self.vjps: tuple | None = None
        self._backward_used = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self.vjps is None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def sum(self, axis: int | None = None) -> "Tensor":
        return tsum(self, axis)

    def mean(self, axis: int | None = None) -> "Tensor":
        return tmean(self, axis)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def backward(self) -> None:
        backward(self)

    def zero_grad(self) -> None:
        self.grad = None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x, requires_grad=False)


def _make(data: np.ndarray, op: str, parents: tuple[Tensor, ...], vjps: tuple) -> Tensor:
    data = np.asarray(data, dtype=np.float64)
    # a non-finite element always poisons the sum; the cheap check can only
    # false-alarm (finite values overflowing the sum), so recheck exactly then
    if not np.isfinite(data.sum()) and not np.all(np.isfinite(data)):
        raise DivergenceError(f"non-finite values produced by op '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    out.op = op
    # constants drop their history: nothing upstream can receive gradient
    out.parents = parents if out.requires_grad else ()
    out.vjps = vjps if out.requires_grad else None
    out._backward_used = False
    return out


def tape(result: Tensor) -> list[Tensor]:
    """Tensors reachable from `result` through grad-requiring parents, in
    topological order (every parent precedes its consumers)."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(result, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into `.grad` of every reachable leaf.

    `loss` must be scalar; calling backward twice on the same result is
    an error (rebuild the graph instead).
    """
    if loss.data.shape != ():
        raise ContractError("backward requires a scalar result")
    if loss._backward_used:
        raise ContractError("backward was already called on this result")
    loss._backward_used = True
    if not loss.requires_grad:
        return
    order = tape(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            if not parent.requires_grad or vjp is None:
                continue
            contrib = vjp(g)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + contrib
            else:
                grads[key] = contrib


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / arithmetic primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, "add", (a, b),
                 (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, "sub", (a, b),
                 (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, "mul", (a, b),
                 (lambda g: _unbroadcast(g * b.data, a.shape),
                  lambda g: _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data / b.data, "div", (a, b),
                 (lambda g: _unbroadcast(g / b.data, a.shape),
                  lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, "neg", (a,), (lambda g: -g,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), "relu", (a,), (lambda g: g * mask,))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make(out, "exp", (a,), (lambda g: g * out,))


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _make(out, "log", (a,), (lambda g: g / a.data,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), "clip", (a,), (lambda g: g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, "sigmoid", (a,), (lambda g: g * out * (1.0 - out),))


# ---------------------------------------------------------------------------
# matrix / structural primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    return _make(a.data @ b.data, "matmul", (a, b),
                 (lambda g: g @ b.data.T, lambda g: a.data.T @ g))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = matmul(x, w)
    return out if b is None else add(out, b)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("transpose expects a 2-D tensor")
    return _make(a.data.T, "transpose", (a,), (lambda g: g.T,))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    orig = a.shape
    return _make(a.data.reshape(shape), "reshape", (a,), (lambda g: g.reshape(orig),))


def concat_rows(parts: list[Tensor]) -> Tensor:
    return _concat(parts, axis=0, op="concat_rows")


def concat_cols(parts: list[Tensor]) -> Tensor:
    return _concat(parts, axis=1, op="concat_cols")


def _concat(parts: list[Tensor], axis: int, op: str) -> Tensor:
    if not parts:
        raise ShapeError("concat of zero tensors")
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i: int):
        sl = [slice(None)] * parts[0].data.ndim
        sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
        sl = tuple(sl)
        return lambda g: g[sl]

    return _make(np.concatenate([p.data for p in parts], axis=axis), op,
                 tuple(parts), tuple(make_vjp(i) for i in range(len(parts))))


def take_rows(a: Tensor, idx) -> Tensor:
    """Gather rows; repeated indices accumulate gradient."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("take_rows expects a flat index list")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError("row index out of range")

    def vjp(g):
        z = np.zeros_like(a.data)
        np.add.at(z, idx, g)
        return z

    return _make(a.data[idx], "take_rows", (a,), (vjp,))


def set_rows(a: Tensor, idx, rows: Tensor) -> Tensor:
    """Functional row update: result equals `a` with `rows` written at `idx`.

    Indices must be distinct so the write order is immaterial.
    """
    idx = np.asarray(idx, dtype=np.int64)
    if len(np.unique(idx)) != idx.size:
        raise ContractError("set_rows requires distinct indices")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError("row index out of range")
    if rows.shape != (idx.size,) + a.shape[1:]:
        raise ShapeError("replacement rows have wrong shape")
    out = a.data.copy()
    out[idx] = rows.data

    def vjp_a(g):
        z = g.copy()
        z[idx] = 0.0
        return z

    return _make(out, "set_rows", (a, rows), (vjp_a, lambda g: g[idx]))


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("slice_cols expects a 2-D tensor")

    def vjp(g):
        z = np.zeros_like(a.data)
        z[:, start:stop] = g
        return z

    return _make(a.data[:, start:stop], "slice_cols", (a,), (vjp,))


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        return _make(a.data.sum(), "sum", (a,), (lambda g: np.broadcast_to(g, a.shape).copy(),))

    def vjp(g):
        return np.broadcast_to(np.expand_dims(g, axis), a.shape).copy()

    return _make(a.data.sum(axis=axis), "sum", (a,), (vjp,))


def tmean(a: Tensor, axis: int | None = None) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    if axis is None:
        return _make(a.data.mean(), "mean", (a,),
                     (lambda g: np.broadcast_to(g / count, a.shape).copy(),))

    def vjp(g):
        return np.broadcast_to(np.expand_dims(g, axis) / count, a.shape).copy()

    return _make(a.data.mean(axis=axis), "mean", (a,), (vjp,))


# ---------------------------------------------------------------------------
# neural-net primitives
# ---------------------------------------------------------------------------

def softmax(a: Tensor, axis: int) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return out * (g - (g * out).sum(axis=axis, keepdims=True))

    return _make(out, "softmax", (a,), (vjp,))


def layer_norm(a: Tensor, scale: Tensor, shift: Tensor, axis: int = -1,
               eps: float = 1e-6) -> Tensor:
    """Normalize to zero mean / unit variance along `axis`, then apply
    the learnable elementwise scale and shift."""
    ax = axis % a.data.ndim
    extent = a.shape[ax]
    if extent < 2:
        raise ShapeError("layer_norm axis extent must be >= 2")
    if scale.shape != (extent,) or shift.shape != (extent,):
        raise ShapeError("scale/shift must be 1-D of the axis extent")
    bshape = [1] * a.data.ndim
    bshape[ax] = extent
    sc = scale.data.reshape(bshape)
    sh = shift.data.reshape(bshape)

    mu = a.data.mean(axis=ax, keepdims=True)
    var = ((a.data - mu) ** 2).mean(axis=ax, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv
    out = xhat * sc + sh

    other_axes = tuple(i for i in range(a.data.ndim) if i != ax)

    def vjp_x(g):
        dxhat = g * sc
        return inv * (dxhat - dxhat.mean(axis=ax, keepdims=True)
                      - xhat * (dxhat * xhat).mean(axis=ax, keepdims=True))

    def vjp_scale(g):
        return (g * xhat).sum(axis=other_axes).reshape(extent)

    def vjp_shift(g):
        return g.sum(axis=other_axes).reshape(extent)

    return _make(out, "layer_norm", (a, scale, shift), (vjp_x, vjp_scale, vjp_shift))


def dropout(a: Tensor, rate: float, rng: RngState, training: bool) -> Tensor:
    """Zero entries with probability `rate` and rescale survivors during
    training; identity in eval mode."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return _make(a.data.copy(), "dropout_eval", (a,), (lambda g: g,))
    keep = rng.uniform(*a.shape).reshape(a.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    factor = keep * scale
    return _make(a.data * factor, "dropout", (a,), (lambda g: g * factor,))


def bilinear_sample(fmap: Tensor, pts: Tensor) -> Tensor:
    """Sample an (h, w, c) map at k normalized (y, x) points.

    Point (u, v) reads the map at continuous index (u*h - 0.5, v*w - 0.5)
    with 4-neighbour interpolation; neighbours outside the grid contribute
    zero, so reads taper to zero as points leave [0, 1]. Exact at cell
    centres. Differentiable w.r.t. both the map and the points.
    """
    if fmap.data.ndim != 3:
        raise ShapeError("bilinear_sample expects an (h, w, c) map")
    if pts.data.ndim != 2 or pts.shape[1] != 2:
        raise ShapeError("bilinear_sample expects (k, 2) points")
    h, w, c = fmap.shape
    fy = pts.data[:, 0] * h - 0.5
    fx = pts.data[:, 1] * w - 0.5
    y0 = np.floor(fy).astype(np.int64)
    x0 = np.floor(fx).astype(np.int64)
    wy = fy - y0
    wx = fx - x0

    corners = []
    for dy, dx, cw in ((0, 0, (1 - wy) * (1 - wx)), (0, 1, (1 - wy) * wx),
                       (1, 0, wy * (1 - wx)), (1, 1, wy * wx)):
        yy, xx = y0 + dy, x0 + dx
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        vals = fmap.data[yy.clip(0, h - 1), xx.clip(0, w - 1)] * valid[:, None]
        corners.append((yy, xx, valid, cw, vals))

    out = np.zeros((pts.shape[0], c))
    for _, _, _, cw, vals in corners:
        out += cw[:, None] * vals

    def vjp_map(g):
        z = np.zeros_like(fmap.data)
        for yy, xx, valid, cw, _ in corners:
            contrib = (g * cw[:, None])[valid]
            np.add.at(z, (yy[valid], xx[valid]), contrib)
        return z

    def vjp_pts(g):
        m00, m01, m10, m11 = (cr[4] for cr in corners)
        d_dy = (-(1 - wx)[:, None] * m00 - wx[:, None] * m01
                + (1 - wx)[:, None] * m10 + wx[:, None] * m11)
        d_dx = (-(1 - wy)[:, None] * m00 + (1 - wy)[:, None] * m01
                - wy[:, None] * m10 + wy[:, None] * m11)
        gy = (g * d_dy).sum(axis=1) * h
        gx = (g * d_dx).sum(axis=1) * w
        return np.stack([gy, gx], axis=1)

    return _make(out, "bilinear_sample", (fmap, pts), (vjp_map, vjp_pts))
