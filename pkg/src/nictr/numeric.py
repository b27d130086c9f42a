"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only the primitives the model needs are provided. Shapes must match
exactly; there is no implicit broadcasting. Operations that combine a
per-row vector with a matrix (``add_bias``, ``layer_norm``) say so in
their name.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

NEG_INF = -1e30


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "tape", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, data, tape: "Tape | None" = None, requires_grad: bool = False,
                 name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim > 3:
            raise ShapeError(f"tensors are at most rank 3, got shape {self.data.shape}")
        self.grad = None
        self.tape = tape
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")


class Tape:
    """Records operations in execution order (parents always precede children)."""

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.params: dict[str, Tensor] = {}

    def param(self, name: str, value: np.ndarray) -> Tensor:
        """Register a trainable leaf; its gradient is returned by :meth:`backward`."""
        t = Tensor(value, self, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def const(self, value) -> Tensor:
        return Tensor(value, self)

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        return backward(self, loss)


def backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    """Accumulate d(loss)/d(param) for every registered parameter.

    Intermediate gradients and closures are released as the sweep passes
    them. Parameters not reached by the loss get zero gradients.
    """
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if node.grad is None or node.backward_fn is None:
            continue
        grads = node.backward_fn(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, dtype=np.float64, copy=True)
            else:
                parent.grad += g
        node.grad = None
        node.backward_fn = None
        node.parents = ()
    out = {}
    for name, p in tape.params.items():
        out[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
        p.grad = None
    return out


def _record(data: np.ndarray, parents: Sequence[Tensor], fn: Callable) -> Tensor:
    tape = next((p.tape for p in parents if p.tape is not None), None)
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, tape, requires_grad=needs)
    if needs:
        if tape is None:
            raise RuntimeError("differentiable operation outside a tape")
        out.parents = tuple(parents)
        out.backward_fn = fn
        tape.nodes.append(out)
    return out


def _same_shape(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _record(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _record(a.data - b.data, (a, b), lambda g: (g, -g))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("hadamard", a, b)
    return _record(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, c: float) -> Tensor:
    return _record(a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    on = a.data > 0
    return _record(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,))


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return _record(y, (a,), lambda g: (g * y * (1.0 - y),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add the vector ``b`` to every row (last axis) of ``x``."""
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: bias {b.shape} does not fit rows of {x.shape}")
    axes = tuple(range(x.data.ndim - 1))
    return _record(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=axes)))


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for (m,k)@(k,n), batched (B,m,k)@(B,k,n), or (B,m,k)@(k,n)."""
    da, db = a.data, b.data
    ok = (
        (da.ndim == 2 and db.ndim == 2 and da.shape[1] == db.shape[0])
        or (da.ndim == 3 and db.ndim == 3 and da.shape[0] == db.shape[0] and da.shape[2] == db.shape[1])
        or (da.ndim == 3 and db.ndim == 2 and da.shape[2] == db.shape[0])
    )
    if not ok:
        raise ShapeError(f"matmul: incompatible shapes {da.shape} @ {db.shape}")

    def fn(g):
        ga = g @ np.swapaxes(db, -1, -2)
        if da.ndim == 3 and db.ndim == 2:
            gb = da.reshape(-1, da.shape[2]).T @ g.reshape(-1, g.shape[2])
        else:
            gb = np.swapaxes(da, -1, -2) @ g
        return ga, gb

    return _record(da @ db, (a, b), fn)


def linear(x: Tensor, w: Tensor) -> Tensor:
    """``x @ w.T`` with ``w`` stored as (out, in); ``x`` is (m, in) or (B, m, in)."""
    if w.data.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {w.shape}")
    xd, wd = x.data, w.data

    def fn(g):
        return g @ wd, g.reshape(-1, g.shape[-1]).T @ xd.reshape(-1, xd.shape[-1])

    return _record(xd @ wd.T, (x, w), fn)


def sparse_linear(f: sp.csr_matrix, w: Tensor) -> Tensor:
    """``f @ w.T`` for a constant sparse ``f`` (m, in) and weight ``w`` (out, in)."""
    if f.shape[1] != w.shape[1]:
        raise ShapeError(f"sparse_linear: features {f.shape} do not match weight {w.shape}")
    out = np.asarray(f @ w.data.T)
    return _record(out, (w,), lambda g: (np.asarray((f.T @ g).T),))


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.data.ndim < 2:
        raise ShapeError("transpose needs rank >= 2")
    return _record(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not parts:
        raise ShapeError("concat of nothing")
    nd = parts[0].data.ndim
    ax = axis % nd
    for p in parts:
        if p.data.ndim != nd or any(p.shape[i] != parts[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {[q.shape for q in parts]}")
    sizes = np.cumsum([p.shape[ax] for p in parts])[:-1]
    return _record(np.concatenate([p.data for p in parts], axis=ax), tuple(parts),
                   lambda g: tuple(np.split(g, sizes, axis=ax)))


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    return concat(parts, axis=0)


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    shape = a.shape

    def fn(g):
        out = np.zeros(shape)
        out[..., start:stop] = g
        return (out,)

    return _record(a.data[..., start:stop], (a,), fn)


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Rows ``a[idx]`` of a 2-D tensor."""
    if a.data.ndim != 2:
        raise ShapeError("gather_rows expects a matrix")
    idx = np.asarray(idx, dtype=np.int64)
    shape = a.shape

    def fn(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _record(a.data[idx], (a,), fn)


def assemble_rows(parts: Sequence[Tensor], idxs: Sequence[np.ndarray], n_rows: int) -> Tensor:
    """Build an ``(n_rows, d)`` matrix with ``parts[k]`` written at rows ``idxs[k]``.

    Rows not covered by any index stay zero. Indices must not overlap.
    """
    d = parts[0].shape[1]
    out = np.zeros((n_rows, d))
    for p, ix in zip(parts, idxs):
        if p.data.ndim != 2 or p.shape != (len(ix), d):
            raise ShapeError(f"assemble_rows: part {p.shape} does not fit {len(ix)} rows of width {d}")
        out[ix] = p.data
    return _record(out, tuple(parts), lambda g: tuple(g[ix] for ix in idxs))


# ---------------------------------------------------------------- reductions

def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _record(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def mean_all(a: Tensor) -> Tensor:
    shape, n = a.shape, a.data.size
    return _record(np.array(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),))


def mean_rows(a: Tensor, weights: np.ndarray | None = None) -> Tensor:
    """Average over the row axis (-2): (n,d)->(d,) or (B,n,d)->(B,d).

    ``weights`` (shape ``a.shape[:-1]``) turns this into a weighted sum,
    used to average only the valid rows of padded batches.
    """
    x = a.data
    if x.ndim < 2:
        raise ShapeError("mean_rows expects rank >= 2")
    if weights is None:
        w = np.full(x.shape[:-1], 1.0 / x.shape[-2])
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != x.shape[:-1]:
            raise ShapeError(f"mean_rows: weights {w.shape} do not match rows {x.shape[:-1]}")
    out = (x * w[..., None]).sum(axis=-2)
    return _record(out, (a,), lambda g: (np.expand_dims(g, -2) * w[..., None],))


def row_norm(a: Tensor, ord: int = 2) -> Tensor:
    """L1 or L2 norm along the last axis; the subgradient at 0 is 0."""
    x = a.data
    if ord == 2:
        n = np.sqrt((x * x).sum(axis=-1))
        safe = np.where(n > 0, n, 1.0)
        return _record(n, (a,), lambda g: (np.where(n[..., None] > 0, x / safe[..., None], 0.0) * g[..., None],))
    if ord == 1:
        return _record(np.abs(x).sum(axis=-1), (a,), lambda g: (np.sign(x) * g[..., None],))
    raise ValueError("ord must be 1 or 2")


# ---------------------------------------------------------------- normalisation

def masked_softmax(logits: Tensor, mask: np.ndarray | Tensor) -> Tensor:
    """Row softmax of ``logits * mask`` restricted to the nonzero mask entries.

    Entries with mask 0 behave as -inf logits and come out exactly 0. Every
    row of the mask needs at least one nonzero entry.
    """
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=np.float64)
    x = logits.data
    if m.shape != x.shape:
        raise ShapeError(f"masked_softmax: mask {m.shape} vs logits {x.shape}")
    live = m != 0
    if not live.any(axis=-1).all():
        raise ValueError("masked_softmax: a mask row is entirely zero")
    z = np.where(live, x * m, NEG_INF)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(live, np.exp(z), 0.0)
    y = e / e.sum(axis=-1, keepdims=True)

    def fn(g):
        gz = y * (g - (g * y).sum(axis=-1, keepdims=True))
        return (gz * m,)

    return _record(y, (logits,), fn)


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalise each row (last axis) to zero mean and unit variance, then scale and shift."""
    d = x.shape[-1]
    if gain.shape != (d,) or shift.shape != (d,):
        raise ShapeError(f"layer_norm: gain/shift must be ({d},)")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    axes = tuple(range(xd.ndim - 1))

    def fn(g):
        gh = g * gain.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _record(xhat * gain.data + shift.data, (x, gain, shift), fn)


# ---------------------------------------------------------------- losses

def bce_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Elementwise binary cross-entropy of ``sigmoid(logits)`` against 0/1 labels."""
    y = np.asarray(labels, dtype=np.float64)
    x = logits.data
    if y.shape != x.shape:
        raise ShapeError(f"bce_with_logits: labels {y.shape} vs logits {x.shape}")
    # log(1 + exp(-|x|)) form avoids overflow
    out = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))
    p = _sigmoid(x)
    return _record(out, (logits,), lambda g: (g * (p - y),))


# ---------------------------------------------------------------- gradient check

def grad_check(f: Callable[[np.ndarray], float], theta: np.ndarray, analytic: np.ndarray,
               eps: float = 1e-5, coords: np.ndarray | None = None) -> float:
    """Max relative error between ``analytic`` and central differences of ``f``.

    The relative error of a coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``.
    ``theta`` is perturbed in place and restored. ``coords`` limits the check
    to a subset of flat indices.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    flat = theta.reshape(-1)
    a_flat = np.asarray(analytic, dtype=np.float64).reshape(-1)
    worst = 0.0
    for i in (range(flat.size) if coords is None else coords):
        old = flat[i]
        flat[i] = old + eps
        hi = f(theta)
        flat[i] = old - eps
        lo = f(theta)
        flat[i] = old
        num = (hi - lo) / (2 * eps)
        a = a_flat[i]
        worst = max(worst, abs(a - num) / max(abs(a), abs(num), 1e-8))
    return worst
