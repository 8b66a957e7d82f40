"""Small reverse-mode autodiff engine on top of numpy.

Values are float64 arrays.  Operations are recorded on the innermost active
:class:`Tape` whenever at least one input requires a gradient; outside a tape
every op is a plain numpy computation, which is what the acting path uses.

    with Tape() as tape:
        loss = (x @ w).square().sum()
    grads = tape.backward(loss, [w])

A tape is single-use: ``backward`` consumes it and clears the node list.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numba
import numpy as np

DTYPE = np.float64

_TAPES: list["Tape"] = []


class ShapeError(ValueError):
    pass


class NonFiniteGradient(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "name")
    # make numpy defer to our reflected operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return multiply(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, mask=None):
        return masked_sum(self, mask=mask, axis=axis)

    def square(self):
        return square(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended in creation order, which is a topological order of the
    graph, so the backward pass is a single reverse sweep.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor, params: Iterable[Tensor] = ()) -> list[np.ndarray]:
        """Accumulate d(loss)/d(param) into ``param.grad`` and return them.

        Parameters not reachable from ``loss`` get a zero gradient.
        """
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        params = list(params)
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None or node.backward_fn is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        # whatever is left in ``grads`` belongs to leaves
        out = []
        for p in params:
            g = grads.get(id(p))
            if g is None:
                g = np.zeros_like(p.data)
            p.grad = g if p.grad is None else p.grad + g
            out.append(p.grad)
        self.nodes.clear()
        return out


def backward(tape: Tape, loss: Tensor, params: Iterable[Tensor] = ()) -> list[np.ndarray]:
    return tape.backward(loss, params)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.parents = ()
    out.backward_fn = None
    out.requires_grad = False
    if _TAPES and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.backward_fn = fn
        _TAPES[-1].nodes.append(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- arithmetic


def _binary(op, a: Tensor, b: Tensor, name: str) -> np.ndarray:
    try:
        return op(a.data, b.data)
    except ValueError as e:
        raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}") from e


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        _binary(np.add, a, b, "add"),
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        _binary(np.subtract, a, b, "sub"),
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def multiply(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        _binary(np.multiply, a, b, "multiply"),
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError("matmul: scalars are not allowed")
    ka = a.shape[-1]
    kb = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if ka != kb:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    a2 = a.data[None, :] if a.ndim == 1 else a.data
    b2 = b.data[:, None] if b.ndim == 1 else b.data

    def fn(g):
        g2 = g
        if a.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if b.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = g2 @ np.swapaxes(b2, -1, -2)
        gb = np.swapaxes(a2, -1, -2) @ g2
        if a.ndim == 1:
            ga = _unbroadcast(ga, (1,) + a.shape).reshape(a.shape)
        else:
            ga = _unbroadcast(ga, a.shape)
        if b.ndim == 1:
            gb = _unbroadcast(gb, b.shape + (1,)).reshape(b.shape)
        else:
            gb = _unbroadcast(gb, b.shape)
        return ga, gb

    return _node(np.matmul(a.data, b.data), (a, b), fn)


def square(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.abs(a.data), (a,), lambda g: (np.sign(a.data) * g,))


# ------------------------------------------------------------- nonlinearities


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0),))


def elu(a, alpha: float = 1.0) -> Tensor:
    a = as_tensor(a)
    neg = alpha * np.expm1(np.minimum(a.data, 0.0))
    out = np.where(a.data > 0, a.data, neg)
    return _node(out, (a,), lambda g: (g * np.where(a.data > 0, 1.0, neg + alpha),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _node(y, (a,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp(-x) may overflow to inf for very negative x, which still yields 0
    with np.errstate(over="ignore", under="ignore"):
        out = np.exp(-np.asarray(x))
    if out.ndim == 0:
        return np.asarray(1.0 / (1.0 + out))
    out += 1.0
    return np.reciprocal(out, out=out)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = _sigmoid(a.data)
    return _node(y, (a,), lambda g: (g * y * (1.0 - y),))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _node(
        y, (a,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),)
    )


# ---------------------------------------------------------------- reductions


def masked_sum(a, mask=None, axis=None) -> Tensor:
    """Sum of ``a`` (optionally weighted by a broadcastable 0/1 ``mask``)."""
    a = as_tensor(a)
    if mask is not None:
        m = np.asarray(mask, dtype=DTYPE)
        try:
            np.broadcast_shapes(a.shape, m.shape)
        except ValueError as e:
            raise ShapeError(f"sum: mask shape {m.shape} vs {a.shape}") from e
        x = a.data * m
    else:
        m = None
        x = a.data
    out = x.sum(axis=axis)

    def fn(g):
        if axis is not None:
            axes = (axis,) if isinstance(axis, int) else axis
            axes = tuple(ax % a.ndim for ax in axes)
            g = np.expand_dims(g, axes)
        g = np.broadcast_to(g, a.shape)
        return (g * m if m is not None else np.array(g),)

    return _node(np.asarray(out, dtype=DTYPE), (a,), fn)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return multiply(masked_sum(a, axis=axis), 1.0 / n)


# ------------------------------------------------------------ shape plumbing


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (int, slice)) or i is None or i is Ellipsis for i in parts)

    def fn(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _node(a.data[index], (a,), fn)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    out = np.stack([t.data for t in tensors], axis=axis)

    def fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _node(out, tensors, fn)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(out, tensors, fn)


def gather(a, index: np.ndarray, axis: int = -1) -> Tensor:
    """Pick entries of ``a`` along ``axis``; ``index`` keeps a length-1 axis there."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)

    def fn(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, index, g, axis=axis)
        return (full,)

    return _node(np.take_along_axis(a.data, index, axis=axis), (a,), fn)


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


# ------------------------------------------------------------- fused layers


def linear(x, w, b) -> Tensor:
    """x @ w + b for x of shape (..., n_in), w (n_in, n_out), b (n_out,)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.shape[-1] != w.shape[0] or b.shape != w.shape[1:]:
        raise ShapeError(f"linear: x {x.shape}, w {w.shape}, b {b.shape}")
    x2 = x.data.reshape(-1, x.shape[-1])

    def fn(g):
        g2 = g.reshape(-1, w.shape[1])
        return (
            (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None,
            x2.T @ g2,
            g2.sum(axis=0),
        )

    return _node((x2 @ w.data + b.data).reshape(x.shape[:-1] + w.shape[1:]), (x, w, b), fn)


def _gru_forward(x, h, w_ih, b_ih, w_hh, b_hh):
    H = h.shape[-1]
    gi = x @ w_ih + b_ih
    gh = h @ w_hh + b_hh
    r = _sigmoid(gi[:, :H] + gh[:, :H])
    z = _sigmoid(gi[:, H : 2 * H] + gh[:, H : 2 * H])
    ghn = gh[:, 2 * H :]
    n = np.tanh(gi[:, 2 * H :] + r * ghn)
    h_new = n + z * (h - n)
    return h_new, (r, z, n, ghn)


def _gru_backward(g, x, h, cache, w_ih, w_hh):
    """Returns (dx, dh, dW_ih, db_ih, dW_hh, db_hh) for one cell step."""
    r, z, n, ghn = cache
    dn = g * (1.0 - z)
    dz = g * (h - n)
    da_n = dn * (1.0 - n * n)
    da_r = da_n * ghn * r * (1.0 - r)
    da_z = dz * z * (1.0 - z)
    dgi = np.concatenate([da_r, da_z, da_n], axis=1)
    dgh = np.concatenate([da_r, da_z, da_n * r], axis=1)
    dx = dgi @ w_ih.T
    dh = g * z + dgh @ w_hh.T
    return dx, dh, x.T @ dgi, dgi.sum(axis=0), h.T @ dgh, dgh.sum(axis=0)


def gru_step(x: np.ndarray, h: np.ndarray, w_ih, b_ih, w_hh, b_hh) -> np.ndarray:
    """Plain-array GRU step for inference, no tape bookkeeping."""
    return _gru_forward(x, h, w_ih, b_ih, w_hh, b_hh)[0]


def _check_gru(x: Tensor, h: Tensor, w_ih: Tensor, b_ih: Tensor, w_hh: Tensor, b_hh: Tensor) -> None:
    H = h.shape[-1]
    ok = (
        w_ih.shape == (x.shape[-1], 3 * H)
        and w_hh.shape == (H, 3 * H)
        and b_ih.shape == (3 * H,)
        and b_hh.shape == (3 * H,)
        and x.shape[-2] == h.shape[0]
    )
    if not ok:
        raise ShapeError(
            f"gru: x {x.shape}, h {h.shape}, w_ih {w_ih.shape}, w_hh {w_hh.shape}, b {b_ih.shape}/{b_hh.shape}"
        )


def gru_cell(x, h, w_ih, b_ih, w_hh, b_hh) -> Tensor:
    """One gated-recurrent step; gate blocks in weight columns are (reset, update, new).

        r = sigmoid(x W_ir + b_ir + h W_hr + b_hr)
        z = sigmoid(x W_iz + b_iz + h W_hz + b_hz)
        n = tanh(x W_in + b_in + r * (h W_hn + b_hn))
        h' = (1 - z) * n + z * h
    """
    x, h, w_ih, b_ih, w_hh, b_hh = map(as_tensor, (x, h, w_ih, b_ih, w_hh, b_hh))
    _check_gru(x, h, w_ih, b_ih, w_hh, b_hh)
    out, cache = _gru_forward(x.data, h.data, w_ih.data, b_ih.data, w_hh.data, b_hh.data)

    def fn(g):
        dx, dh, dwi, dbi, dwh, dbh = _gru_backward(g, x.data, h.data, cache, w_ih.data, w_hh.data)
        return dx, dh, dwi, dbi, dwh, dbh

    return _node(out, (x, h, w_ih, b_ih, w_hh, b_hh), fn)


@numba.njit(cache=True)
def _gru_bptt(g, h0, out, rz_all, n_all, ghn_all, w_hh_t, dgi_all, dgh_all):
    """Reverse sweep over time; fills the gate gradients and returns dL/dh0."""
    T, N, H = out.shape
    dh = np.zeros((N, H))
    for t in range(T - 1, -1, -1):
        h_prev = out[t - 1] if t > 0 else h0
        for i in range(N):
            for j in range(H):
                r = rz_all[t, i, j]
                z = rz_all[t, i, H + j]
                n = n_all[t, i, j]
                gt = g[t, i, j] + dh[i, j]
                da_n = gt * (1.0 - z) * (1.0 - n * n)
                da_r = da_n * (ghn_all[t, i, j] * r * (1.0 - r))
                da_z = gt * (h_prev[i, j] - n) * (z * (1.0 - z))
                dgi_all[t, i, j] = da_r
                dgi_all[t, i, H + j] = da_z
                dgi_all[t, i, 2 * H + j] = da_n
                dgh_all[t, i, j] = da_r
                dgh_all[t, i, H + j] = da_z
                dgh_all[t, i, 2 * H + j] = da_n * r
                dh[i, j] = gt * z
        dh += dgh_all[t] @ w_hh_t
    return dh


def gru_sequence(xs, h0, w_ih, b_ih, w_hh, b_hh) -> Tensor:
    """Run :func:`gru_cell` over a time-major (T, N, n_in) input; returns (T, N, H).

    The whole unroll is a single tape node; backward is truncation-free BPTT.
    """
    xs, h0, w_ih, b_ih, w_hh, b_hh = map(as_tensor, (xs, h0, w_ih, b_ih, w_hh, b_hh))
    if xs.ndim != 3:
        raise ShapeError(f"gru_sequence wants (T, N, n_in), got {xs.shape}")
    _check_gru(xs, h0, w_ih, b_ih, w_hh, b_hh)
    T = xs.shape[0]
    H = h0.shape[-1]
    w_hh_, b_hh_ = w_hh.data, b_hh.data
    # input projections do not depend on the recurrence; the r/z hidden
    # biases can be folded in, the n-gate one sits inside r * (.)
    gi_all = xs.data @ w_ih.data + b_ih.data
    gi_all[..., : 2 * H] += b_hh_[: 2 * H]
    b_hn = b_hh_[2 * H :]
    out = np.empty((T,) + h0.shape)
    rz_all = np.empty(gi_all.shape[:-1] + (2 * H,))
    n_all = np.empty(out.shape)
    ghn_all = np.empty(out.shape)
    gh = np.empty(gi_all.shape[1:])
    h = h0.data
    # in-place sigmoid; exp(-x) overflowing to inf still gives 0
    with np.errstate(over="ignore", under="ignore"):
        for t in range(T):
            gi = gi_all[t]
            np.matmul(h, w_hh_, out=gh)
            rz = rz_all[t]
            np.add(gi[:, : 2 * H], gh[:, : 2 * H], out=rz)
            np.negative(rz, out=rz)
            np.exp(rz, out=rz)
            rz += 1.0
            np.reciprocal(rz, out=rz)
            ghn = ghn_all[t]
            np.add(gh[:, 2 * H :], b_hn, out=ghn)
            n = n_all[t]
            np.multiply(rz[:, :H], ghn, out=n)
            n += gi[:, 2 * H :]
            np.tanh(n, out=n)
            h_new = out[t]
            np.subtract(h, n, out=h_new)
            h_new *= rz[:, H:]
            h_new += n
            h = h_new

    def fn(g):
        dgi_all = np.empty(gi_all.shape)
        dgh_all = np.empty(gi_all.shape)
        dh = _gru_bptt(
            np.ascontiguousarray(g, dtype=DTYPE), h0.data, out, rz_all, n_all, ghn_all,
            np.ascontiguousarray(w_hh_.T), dgi_all, dgh_all,
        )
        flat_gi = dgi_all.reshape(-1, 3 * H)
        flat_gh = dgh_all.reshape(-1, 3 * H)
        prev = np.concatenate([h0.data[None], out[:-1]], axis=0).reshape(-1, H)
        dxs = (dgi_all @ w_ih.data.T) if xs.requires_grad else None
        return (
            dxs,
            dh,
            xs.data.reshape(-1, xs.shape[-1]).T @ flat_gi,
            flat_gi.sum(axis=0),
            prev.T @ flat_gh,
            flat_gh.sum(axis=0),
        )

    return _node(out, (xs, h0, w_ih, b_ih, w_hh, b_hh), fn)


# ---------------------------------------------------------------- checking


def grad_check(
    function: Callable[[Sequence[Tensor]], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
) -> float:
    """Max over all parameter entries of |analytic - numeric| / max(1, |numeric|).

    Numeric derivatives are central differences.  Returns ``inf`` if anything
    non-finite shows up.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    for p in params:
        p.grad = None
        p.requires_grad = True
    with Tape() as tape:
        loss = function(params)
    analytic = [g.copy() for g in tape.backward(loss, params)]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = function(params).item()
            flat[j] = orig - eps
            down = function(params).item()
            flat[j] = orig
            numeric = (up - down) / (2 * eps)
            a = ga.reshape(-1)[j]
            if not (np.isfinite(numeric) and np.isfinite(a)):
                return float("inf")
            worst = max(worst, abs(a - numeric) / max(1.0, abs(numeric)))
    return worst


# ---------------------------------------------------------------- optimiser


@dataclass
class RMSPropConfig:
    lr: float = 5e-4
    alpha: float = 0.99
    eps: float = 1e-5


class RMSProp:
    """RMS-scaled gradient descent: v <- a*v + (1-a)*g^2; p <- p - lr*g/(sqrt(v)+eps)."""

    def __init__(self, params: Sequence[Tensor], config: RMSPropConfig | None = None):
        self.params = list(params)
        self.config = config or RMSPropConfig()
        self.square_avg = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Sequence[np.ndarray] | None = None) -> None:
        if grads is None:
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        optimizer_step(self.params, grads, self.config, self.square_avg)

    def state_dict(self) -> list[np.ndarray]:
        return [v.copy() for v in self.square_avg]


def optimizer_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray],
    config: RMSPropConfig,
    square_avg: Sequence[np.ndarray],
) -> None:
    """In-place RMSProp update of ``params`` (and of the running ``square_avg``)."""
    if len(params) != len(grads) or len(params) != len(square_avg):
        raise ShapeError("params, grads and state must line up")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise ShapeError(f"grad {i} has shape {g.shape}, param has {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for parameter {i} ({p.name})")
    a = config.alpha
    for p, g, v in zip(params, grads, square_avg):
        v *= a
        v += (1.0 - a) * g * g
        p.data -= config.lr * g / (np.sqrt(v) + config.eps)


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if not np.isfinite(total):
        raise NonFiniteGradient("gradient norm is not finite")
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-6)
        return [g * scale for g in grads], total
    return list(grads), total


def uniform_init(rng: np.random.Generator, fan_in: int, shape, name: str | None = None) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)
