"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps a C-contiguous float64 ndarray. Operations execute eagerly;
when a Tape is active in the current thread and an input requires gradients,
the operation also records a backward closure. ``Tape.backward`` replays the
closures in exact reverse order and frees the recording.

Tensors that never touch a tape are plain immutable value holders and can be
shared freely across threads. A Tape itself is single-threaded; concurrent
training needs one tape per thread.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested operation."""


_ACTIVE = threading.local()


def _active_tape():
    return getattr(_ACTIVE, "tape", None)


class Tensor:
    """Dense float64 array participating in reverse-mode differentiation."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor has shape {self.data.shape}, expected a scalar")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.data.shape)}{flag})"

    # Arithmetic sugar; scalars become untracked constants.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def constant(data) -> Tensor:
    """Untracked tensor; gradients never flow into it."""
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    """Leaf tensor that accumulates gradients during backward."""
    return Tensor(data, requires_grad=True)


class Tape:
    """Eager single-graph recording of operations, freed after backward.

    Recording order is the execution order, which is a topological order of
    the computation by construction; backward visits it exactly reversed.
    Use as a context manager::

        with Tape() as tape:
            loss = ...
            tape.backward(loss)
    """

    def __init__(self):
        self._nodes: list = []

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise RuntimeError("a Tape is already active in this thread")
        _ACTIVE.tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE.tape = None

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ShapeError(f"backward: loss has shape {loss.data.shape}, expected a scalar")
        loss.grad = np.ones_like(loss.data)
        for fn in reversed(self._nodes):
            fn()
        self._nodes.clear()


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _emit(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    """Create the output tensor and record ``backward`` if anything needs it.

    ``backward`` receives the output gradient and is responsible for calling
    :func:`_accumulate` on each parent.
    """
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    tape = _active_tape()
    if tape is not None and out.requires_grad:

        def node():
            if out.grad is not None:
                backward(out.grad)

        tape._nodes.append(node)
    return out


# ---------------------------------------------------------------------------
# Elementwise and linear operations
# ---------------------------------------------------------------------------


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} do not broadcast") from None


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _emit(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _emit(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g * bd, a.data.shape))
        _accumulate(b, _unbroadcast(g * ad, b.data.shape))

    return _emit(ad * bd, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        _accumulate(a, g * c)

    return _emit(a.data * c, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: shapes {a.data.shape} @ {b.data.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        _accumulate(a, g @ bd.T)
        _accumulate(b, ad.T @ g)

    return _emit(ad @ bd, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: shape {a.data.shape}, expected 2-D")

    def backward(g):
        _accumulate(a, g.T)

    return _emit(a.data.T, (a,), backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"reshape: {a.data.shape} -> {shape}")
    old = a.data.shape

    def backward(g):
        _accumulate(a, g.reshape(old))

    return _emit(a.data.reshape(shape), (a,), backward)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * out_data)

    return _emit(out_data, (a,), backward)


def log(a: Tensor) -> Tensor:
    ad = a.data

    def backward(g):
        _accumulate(a, g / ad)

    return _emit(np.log(ad), (a,), backward)


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    mask = a.data >= 0.0
    factor = np.where(mask, 1.0, slope)

    def backward(g):
        _accumulate(a, g * factor)

    return _emit(a.data * factor, (a,), backward)


def relu(a: Tensor) -> Tensor:
    return leaky_relu(a, 0.0)


def reduce_sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    shape = a.data.shape

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, shape).copy())
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(ge, shape).copy())

    return _emit(a.data.sum(axis=axis, keepdims=keepdims if axis is not None else False), (a,), backward)


def reduce_mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    return scale(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Full contraction of two same-shape tensors to a scalar."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"dot: shapes {a.data.shape} and {b.data.shape} differ")
    return reduce_sum(mul(a, b))


def concat(parts: list[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeError("concat: empty input list")
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(p, g[tuple(idx)])

    return _emit(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), backward)


def softmax(a: Tensor, axis: int) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        _accumulate(a, (g - inner) * out_data)

    return _emit(out_data, (a,), backward)


def layer_norm(a: Tensor, axis: int = 0, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean / unit variance along ``axis`` (no affine part)."""
    mean = a.data.mean(axis=axis, keepdims=True)
    var = a.data.var(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (a.data - mean) * inv

    def backward(g):
        gm = g.mean(axis=axis, keepdims=True)
        gy = (g * y).mean(axis=axis, keepdims=True)
        _accumulate(a, inv * (g - gm - y * gy))

    return _emit(y, (a,), backward)


def take_columns(a: Tensor, idx: np.ndarray) -> Tensor:
    """Gather columns of a 2-D tensor; backward scatter-adds."""
    if a.data.ndim != 2:
        raise ShapeError(f"take_columns: shape {a.data.shape}, expected 2-D")
    idx = np.asarray(idx, dtype=np.intp)

    def backward(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            np.add.at(ga.T, idx, g.T)
            _accumulate(a, ga)

    return _emit(a.data[:, idx], (a,), backward)


def segment_sum_columns(a: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Sum columns of a 2-D tensor into ``num_segments`` buckets."""
    if a.data.ndim != 2:
        raise ShapeError(f"segment_sum_columns: shape {a.data.shape}, expected 2-D")
    segments = np.asarray(segments, dtype=np.intp)
    if segments.shape != (a.data.shape[1],):
        raise ShapeError(
            f"segment_sum_columns: {segments.shape[0]} segment ids for {a.data.shape[1]} columns"
        )
    out_data = np.zeros((a.data.shape[0], num_segments))
    np.add.at(out_data.T, segments, a.data.T)

    def backward(g):
        _accumulate(a, g[:, segments])

    return _emit(out_data, (a,), backward)


def pairwise_sqdist(x: Tensor, y: Tensor) -> Tensor:
    """Squared Euclidean distances between columns: out[i, j] = ||x_i - y_j||^2."""
    if x.data.ndim != 2 or y.data.ndim != 2 or x.data.shape[0] != y.data.shape[0]:
        raise ShapeError(f"pairwise_sqdist: shapes {x.data.shape} and {y.data.shape}")
    xd, yd = x.data, y.data
    x2 = (xd * xd).sum(axis=0)
    y2 = (yd * yd).sum(axis=0)
    out_data = x2[:, None] + y2[None, :] - 2.0 * (xd.T @ yd)
    np.maximum(out_data, 0.0, out=out_data)

    def backward(g):
        _accumulate(x, 2.0 * (xd * g.sum(axis=1) - yd @ g.T))
        _accumulate(y, 2.0 * (yd * g.sum(axis=0) - xd @ g))

    return _emit(out_data, (x, y), backward)


# ---------------------------------------------------------------------------
# 3x3 singular value decomposition
# ---------------------------------------------------------------------------


@dataclass
class Svd3:
    """Full SVD of a 3x3 matrix: input = U @ diag(S) @ V.T, S descending."""

    U: Tensor
    S: Tensor
    V: Tensor


_JACOBI_SWEEPS = 30
# Clamp for 1/(S_i^2 - S_j^2) in the backward pass; gradients are approximate
# when singular values nearly coincide.
_SVD_GAP_FLOOR = 1e-8


def _jacobi_eigh3(b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigendecomposition of a symmetric 3x3 matrix."""
    b = b.copy()
    v = np.eye(3)
    norm = np.linalg.norm(b)
    tol = 1e-15 * max(norm, 1.0)
    for _ in range(_JACOBI_SWEEPS):
        off = np.sqrt(b[0, 1] ** 2 + b[0, 2] ** 2 + b[1, 2] ** 2)
        if off <= tol:
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            if b[p, q] == 0.0:
                continue
            tau = (b[q, q] - b[p, p]) / (2.0 * b[p, q])
            t = np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau)) if tau != 0.0 else 1.0
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            rot = np.eye(3)
            rot[p, p] = c
            rot[q, q] = c
            rot[p, q] = s
            rot[q, p] = -s
            b = rot.T @ b @ rot
            v = v @ rot
    return np.diag(b).copy(), v


def _svd3_forward(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    evals, v = _jacobi_eigh3(a.T @ a)
    order = np.argsort(-evals, kind="stable")
    v = v[:, order]
    w = a @ v
    # Taking S from ||A v_i|| (not sqrt of eigenvalues) makes the
    # reconstruction A ~= U diag(S) V^T exact by construction.
    s = np.linalg.norm(w, axis=0)
    reorder = np.argsort(-s, kind="stable")
    s = s[reorder]
    v = v[:, reorder]
    w = w[:, reorder]
    u = np.zeros((3, 3))
    tiny = 1e-12 * max(s[0], 1.0)
    filled = []
    for i in range(3):
        if s[i] <= tiny:
            continue
        col = w[:, i] / s[i]
        for j in filled:
            col = col - np.dot(col, u[:, j]) * u[:, j]
        norm = np.linalg.norm(col)
        if norm > 0.5:
            u[:, i] = col / norm
            filled.append(i)
    missing = [i for i in range(3) if i not in filled]
    if len(missing) == 1:
        i, j = filled
        u[:, missing[0]] = np.cross(u[:, i], u[:, j])
    elif missing:
        # Rank <= 1: complete an orthonormal basis around any filled column.
        basis = [u[:, i] for i in filled]
        for cand in np.eye(3):
            if len(basis) == 3:
                break
            r = cand - sum(np.dot(cand, b) * b for b in basis)
            norm = np.linalg.norm(r)
            if norm > 1e-6:
                basis.append(r / norm)
        for i, col in zip(missing, basis[len(filled):]):
            u[:, i] = col
    return u, s, v


def _svd3_backward(
    u: np.ndarray, s: np.ndarray, v: np.ndarray,
    gu: np.ndarray, gs: np.ndarray, gv: np.ndarray,
) -> np.ndarray:
    """Adjoint of the full 3x3 SVD with clamped inverse spectral gaps."""
    s2 = s * s
    gap = s2[None, :] - s2[:, None]
    sign = np.where(gap >= 0.0, 1.0, -1.0)
    gap = sign * np.maximum(np.abs(gap), _SVD_GAP_FLOOR)
    f = 1.0 / gap
    np.fill_diagonal(f, 0.0)
    sdiag = np.diag(s)
    ju = f * (u.T @ gu - gu.T @ u)
    jv = f * (v.T @ gv - gv.T @ v)
    middle = ju @ sdiag + sdiag @ jv + np.diag(gs)
    return u @ middle @ v.T


def svd3(a: Tensor) -> Svd3:
    """Differentiable SVD of a 3x3 tensor.

    Forward runs cyclic Jacobi on ``a.T @ a``; backward applies the standard
    SVD adjoint with the spectral-gap denominators clamped away from zero.
    """
    if a.data.shape != (3, 3):
        raise ShapeError(f"svd3: shape {a.data.shape}, expected (3, 3)")
    if not np.all(np.isfinite(a.data)):
        raise ValueError("svd3: input has non-finite entries")
    ud, sd, vd = _svd3_forward(a.data)

    u_t = Tensor(ud, requires_grad=a.requires_grad)
    s_t = Tensor(sd, requires_grad=a.requires_grad)
    v_t = Tensor(vd, requires_grad=a.requires_grad)

    tape = _active_tape()
    if tape is not None and a.requires_grad:

        def node():
            if u_t.grad is None and s_t.grad is None and v_t.grad is None:
                return
            gu = u_t.grad if u_t.grad is not None else np.zeros((3, 3))
            gs = s_t.grad if s_t.grad is not None else np.zeros(3)
            gv = v_t.grad if v_t.grad is not None else np.zeros((3, 3))
            _accumulate(a, _svd3_backward(ud, sd, vd, gu, gs, gv))

        tape._nodes.append(node)
    return Svd3(u_t, s_t, v_t)


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------


def grad_check(f, params: list[Tensor], step: float = 1e-5) -> float:
    """Max relative error between analytic gradients of ``f()`` and central FD.

    ``f`` must rebuild its computation from ``params`` on every call and
    return a scalar Tensor. Relative error per entry is
    ``|analytic - fd| / (|analytic| + |fd| + 1e-8)``.
    """
    if step <= 0.0:
        raise ValueError("grad_check: step must be positive")
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        out = f()
        if out.data.size != 1:
            raise ShapeError(f"grad_check: f returned shape {out.data.shape}, expected a scalar")
        tape.backward(out)

    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            f_plus = f().item()
            flat[i] = saved - step
            f_minus = f().item()
            flat[i] = saved
            fd = (f_plus - f_minus) / (2.0 * step)
            err = abs(aflat[i] - fd) / (abs(aflat[i]) + abs(fd) + 1e-8)
            worst = max(worst, err)
    return worst
