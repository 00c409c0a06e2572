"""Reverse-mode autodiff over numpy arrays.

A ``Tensor`` wraps a float32 or float64 ndarray plus the bookkeeping needed
to run backpropagation: the tensors it was computed from and a closure that
routes the output gradient back to them.  Calling :func:`backward` on a
scalar tensor topologically sorts the graph and accumulates gradients into
every reachable leaf.

Values are immutable once built: no op mutates its inputs, and every op
checks its result for NaN/Inf and raises :class:`NonFiniteError` instead of
letting bad values propagate.  Parameters are the only tensors whose buffers
are rewritten, and only between graph constructions (optimizer steps,
finite-difference probes).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf, expit

__all__ = [
    "Tensor",
    "Parameter",
    "NonFiniteError",
    "ShapeError",
    "ZeroVectorError",
    "backward",
    "zero_grads",
    "matmul",
    "conv1d_temporal",
    "conv2d",
    "conv3d",
    "relu",
    "gelu",
    "sigmoid",
    "softmax",
    "batch_norm",
    "slice_axis",
    "l2_norm",
    "cosine_similarity",
    "rows_cosine",
    "concat",
    "stack",
    "grad_check",
    "GradCheckReport",
]

_DTYPES = {"f32": np.float32, "f64": np.float64}
_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT2PI = float(1.0 / np.sqrt(2.0 * np.pi))


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


class ShapeError(ValueError):
    """Operands have incompatible shapes or extents."""


class ZeroVectorError(ValueError):
    """A norm-dependent op received a (near-)zero vector."""


def _as_array(data, dtype):
    arr = np.asarray(data, dtype=dtype)
    return arr


def _check_finite(arr, op):
    # min/max both propagate NaN and expose Inf; two allocation-free reduces
    # beat isfinite().all() on every op call
    if arr.size and not (math.isfinite(float(arr.min())) and math.isfinite(float(arr.max()))):
        raise NonFiniteError(f"{op} produced a non-finite value")


class Tensor:
    """A node in the computation graph.

    ``data`` is a row-major ndarray (float32 by default, float64 for
    verification runs).  ``grad`` is allocated lazily during backward and
    always matches ``data`` in shape and dtype.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, dtype=None, requires_grad=False):
        if isinstance(data, Tensor):
            raise TypeError("wrap raw array data, not another Tensor")
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float32
        elif isinstance(dtype, str):
            dtype = _DTYPES[dtype]
        self.data = _as_array(data, dtype)
        _check_finite(self.data, "tensor construction")
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, grad={self.requires_grad})"

    # -- graph plumbing ------------------------------------------------

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- operators -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_coerce(other, self), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_scalar(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- shaping and reductions -----------------------------------------

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce_max(self, axis, keepdims)

    def sqrt(self):
        return sqrt(self)

    def exp(self):
        return exp(self)


class Parameter(Tensor):
    """A trainable leaf tensor.

    ``grad`` is pre-allocated so the invariant ``grad.shape == value.shape``
    holds from construction, and an untouched parameter reports an exactly
    zero gradient after any backward pass.
    """

    __slots__ = ("trainable", "name")

    def __init__(self, data, dtype=None, trainable=True, name=""):
        super().__init__(data, dtype=dtype, requires_grad=True)
        self.trainable = bool(trainable)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter(name={self.name!r}, shape={self.shape}, trainable={self.trainable})"


def _coerce(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _result_dtype(a: Tensor, b: Tensor):
    if a.data.dtype != b.data.dtype:
        raise ShapeError(
            f"dtype mismatch: {a.data.dtype.name} vs {b.data.dtype.name}; "
            "graphs are single-precision or double-precision, never mixed"
        )
    return a.data.dtype


_GRAD_ENABLED = [True]


class no_grad:
    """Context manager: ops built inside track no parents and no closures.

    Used where only values matter (finite-difference probes, evaluation), so
    the graph bookkeeping cost disappears."""

    def __enter__(self):
        self._prev = _GRAD_ENABLED[0]
        _GRAD_ENABLED[0] = False
        return self

    def __exit__(self, *exc):
        _GRAD_ENABLED[0] = self._prev
        return False


def _make(data, parents, backward_fn, op):
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = _GRAD_ENABLED[0] and any(p.requires_grad for p in parents)
    out._parents = tuple(parents) if out.requires_grad else ()
    out._backward_fn = backward_fn if out.requires_grad else None
    return out


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise binary ops
# ---------------------------------------------------------------------------


def _operands(a, b):
    """Wrap raw scalars/arrays with the dtype of the Tensor operand."""
    if isinstance(a, Tensor):
        return a, (b if isinstance(b, Tensor) else _coerce(b, a))
    if isinstance(b, Tensor):
        return _coerce(a, b), b
    a = Tensor(a)
    return a, _coerce(b, a)


def add(a, b):
    a, b = _operands(a, b)
    _result_dtype(a, b)
    out_data = a.data + b.data

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), backward_fn, "add")


def sub(a, b):
    a, b = _operands(a, b)
    _result_dtype(a, b)
    out_data = a.data - b.data

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), backward_fn, "sub")


def mul(a, b):
    a, b = _operands(a, b)
    _result_dtype(a, b)
    out_data = a.data * b.data

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), backward_fn, "mul")


def div(a, b):
    a, b = _operands(a, b)
    _result_dtype(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = a.data / b.data

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out_data, (a, b), backward_fn, "div")


def neg(a):
    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(-g)

    return _make(-a.data, (a,), backward_fn, "neg")


def pow_scalar(a, p):
    p = float(p)
    out_data = a.data**p

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g * p * a.data ** (p - 1.0))

    return _make(out_data, (a,), backward_fn, "pow")


def sqrt(a):
    with np.errstate(invalid="ignore"):
        out_data = np.sqrt(a.data)

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g * 0.5 / out_data)

    return _make(out_data, (a,), backward_fn, "sqrt")


def exp(a):
    with np.errstate(over="ignore"):
        out_data = np.exp(a.data)

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g * out_data)

    return _make(out_data, (a,), backward_fn, "exp")


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


_KINK_TRACKER = [None]


class track_kink_margins:
    """Record how close piecewise ops come to their kinks during a forward.

    Central differences are only valid where the graph is locally smooth; the
    verification harness uses these margins to pick measurement points that
    keep every ReLU preactivation and max-reduction gap clear of the probe
    step."""

    def __enter__(self):
        self._prev = _KINK_TRACKER[0]
        record = {"relu": float("inf"), "max_gap": float("inf")}
        _KINK_TRACKER[0] = record
        return record

    def __exit__(self, *exc):
        _KINK_TRACKER[0] = self._prev
        return False


def relu(a):
    out_data = np.maximum(a.data, 0.0)
    tracker = _KINK_TRACKER[0]
    if tracker is not None and a.data.size:
        tracker["relu"] = min(tracker["relu"], float(np.min(np.abs(a.data))))

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0))

    return _make(out_data, (a,), backward_fn, "relu")


def gelu(a):
    """Exact erf-based GELU: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    phi = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    out_data = a.data * phi

    def backward_fn(g):
        if a.requires_grad:
            pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT2PI
            a._accumulate(g * (phi + a.data * pdf))

    return _make(out_data.astype(a.data.dtype, copy=False), (a,), backward_fn, "gelu")


def sigmoid(a):
    out_data = expit(a.data).astype(a.data.dtype, copy=False)

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), backward_fn, "sigmoid")


def softmax(a, axis=-1):
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        if a.requires_grad:
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            a._accumulate(out_data * (g - dot))

    return _make(out_data, (a,), backward_fn, "softmax")


# ---------------------------------------------------------------------------
# shaping
# ---------------------------------------------------------------------------


def reshape(a, shape):
    out_data = a.data.reshape(shape)

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    return _make(out_data, (a,), backward_fn, "reshape")


def transpose(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out_data = np.transpose(a.data, axes)

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(np.transpose(g, inv))

    return _make(out_data, (a,), backward_fn, "transpose")


def slice_axis(a, axis, start, stop):
    """Contiguous sub-range [start, stop) along one axis."""
    axis = axis % a.ndim
    extent = a.shape[axis]
    if not (0 <= start < stop <= extent):
        raise ShapeError(f"slice [{start}, {stop}) invalid for extent {extent}")
    idx = tuple(slice(None) if i != axis else slice(start, stop) for i in range(a.ndim))
    out_data = a.data[idx].copy()

    def backward_fn(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[idx] = g
            a._accumulate(full)

    return _make(out_data, (a,), backward_fn, "slice")


def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of zero tensors")
    dtype = tensors[0].data.dtype
    for t in tensors[1:]:
        _result_dtype(tensors[0], t)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward_fn(g):
        pieces = np.split(g, splits, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t._accumulate(piece)

    return _make(out_data.astype(dtype, copy=False), tensors, backward_fn, "concat")


def stack(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("stack of zero tensors")
    for t in tensors[1:]:
        _result_dtype(tensors[0], t)
        if t.shape != tensors[0].shape:
            raise ShapeError("stack requires identical shapes")
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def backward_fn(g):
        moved = np.moveaxis(g, axis, 0)
        for t, piece in zip(tensors, moved):
            if t.requires_grad:
                t._accumulate(piece)

    return _make(out_data, tensors, backward_fn, "stack")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def reduce_sum(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    out_data = a.data.sum(axis=axes, keepdims=keepdims)

    def backward_fn(g):
        if a.requires_grad:
            gk = g if keepdims else np.expand_dims(g, axes)
            a._accumulate(np.broadcast_to(gk, a.shape).copy())

    return _make(out_data, (a,), backward_fn, "sum")


def reduce_mean(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    if count == 0:
        raise ShapeError("mean over an empty axis")
    out_data = a.data.mean(axis=axes, keepdims=keepdims)

    def backward_fn(g):
        if a.requires_grad:
            gk = g if keepdims else np.expand_dims(g, axes)
            a._accumulate(np.broadcast_to(gk / count, a.shape).copy())

    return _make(out_data, (a,), backward_fn, "mean")


def reduce_max(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    m = a.data.max(axis=axes, keepdims=True)
    tracker = _KINK_TRACKER[0]
    if tracker is not None:
        below = np.where(a.data == m, -np.inf, a.data).max(axis=axes)
        gaps = m.reshape(below.shape) - below
        finite = gaps[np.isfinite(gaps)]
        if finite.size:
            tracker["max_gap"] = min(tracker["max_gap"], float(finite.min()))
    out_data = m if keepdims else m.reshape(
        tuple(s for i, s in enumerate(a.shape) if i not in axes)
    )

    def backward_fn(g):
        if a.requires_grad:
            gk = g if keepdims else np.expand_dims(g, axes)
            mask = (a.data == m).astype(a.data.dtype)
            # ties share the incoming gradient equally
            mask /= mask.sum(axis=axes, keepdims=True)
            a._accumulate(mask * gk)

    return _make(out_data, (a,), backward_fn, "max")


# ---------------------------------------------------------------------------
# linear algebra and convolution
# ---------------------------------------------------------------------------


def matmul(a, b):
    _result_dtype(a, b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(out_data, (a, b), backward_fn, "matmul")


def _normalize_tuple(value, rank, name):
    if isinstance(value, int):
        return (value,) * rank
    value = tuple(int(v) for v in value)
    if len(value) != rank:
        raise ShapeError(f"{name} must have {rank} entries, got {value}")
    return value


def _conv_nd(x, w, stride, pad, rank, op_name):
    """Shared n-d cross-correlation core.

    ``x`` is (N, C_in, *S) or (C_in, *S); ``w`` is (C_out, C_in, *K).
    Loops over kernel offsets only; each step is a vectorized einsum over
    the whole batch, so both forward and backward stay exact for any
    stride/pad combination.
    """
    _result_dtype(x, w)
    stride = _normalize_tuple(stride, rank, "stride")
    pad = _normalize_tuple(pad, rank, "pad")
    if any(s < 1 for s in stride):
        raise ShapeError(f"stride must be positive, got {stride}")
    if any(p < 0 for p in pad):
        raise ShapeError(f"pad must be non-negative, got {pad}")

    batched = x.ndim == rank + 2
    if not batched and x.ndim != rank + 1:
        raise ShapeError(f"{op_name}: input rank {x.ndim} incompatible with {rank}-d conv")
    if w.ndim != rank + 2:
        raise ShapeError(f"{op_name}: weight must be rank {rank + 2}, got {w.shape}")

    xd = x.data if batched else x.data[None]
    n, c_in = xd.shape[:2]
    if w.shape[1] != c_in:
        raise ShapeError(f"{op_name}: input has {c_in} channels, weight expects {w.shape[1]}")
    ksp = w.shape[2:]
    in_sp = xd.shape[2:]
    padded_sp = tuple(s + 2 * p for s, p in zip(in_sp, pad))
    if any(ps < k for ps, k in zip(padded_sp, ksp)):
        raise ShapeError(
            f"{op_name}: kernel {ksp} does not fit padded input {padded_sp}"
        )
    out_sp = tuple((ps - k) // st + 1 for ps, k, st in zip(padded_sp, ksp, stride))

    if any(pad):
        xp = np.zeros((n, c_in) + padded_sp, dtype=xd.dtype)
        xp[(slice(None), slice(None)) + tuple(slice(p, p + s) for p, s in zip(pad, in_sp))] = xd
    else:
        xp = xd

    c_out = w.shape[0]
    # forward: one windowed tensordot (a single GEMM under the hood)
    windows = np.lib.stride_tricks.sliding_window_view(
        xp, ksp, axis=tuple(range(2, 2 + rank))
    )
    strided = windows[
        (slice(None), slice(None)) + tuple(slice(None, None, st) for st in stride)
    ]  # (n, c_in, *out_sp, *ksp)
    contract_x = [1] + list(range(2 + rank, 2 + 2 * rank))
    contract_w = [1] + list(range(2, 2 + rank))
    out_data = np.moveaxis(
        np.tensordot(strided, w.data, axes=(contract_x, contract_w)), -1, 1
    )
    out_data = np.ascontiguousarray(out_data)
    offsets = list(itertools.product(*[range(k) for k in ksp]))
    head = (slice(None), slice(None))

    def backward_fn(g):
        gb = g if batched else g[None]
        if w.requires_grad:
            # one call: contract batch and output positions -> (c_out, c_in, *ksp)
            out_axes = [0] + list(range(2, 2 + rank))
            gw = np.tensordot(gb, strided, axes=(out_axes, out_axes))
            w._accumulate(gw)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for offs in offsets:
                sl = tuple(
                    slice(o, o + st * (e - 1) + 1, st)
                    for o, st, e in zip(offs, stride, out_sp)
                )
                gxp[head + sl] += np.einsum("no...,oc->nc...", gb, w.data[head + offs])
            if any(pad):
                crop = head + tuple(slice(p, p + s) for p, s in zip(pad, in_sp))
                gx = gxp[crop]
            else:
                gx = gxp
            x._accumulate(gx if batched else gx[0])

    out = _make(out_data if batched else out_data[0], (x, w), backward_fn, op_name)
    return out


def conv1d_temporal(x, w, pad=None):
    """1-d convolution along the trailing time axis; stride fixed at 1.

    ``x``: (C, T) or (N, C, T); ``w``: (C_out, C_in, k).
    ``pad`` defaults to k // 2, which preserves T for odd kernels.
    """
    if pad is None:
        pad = w.shape[2] // 2
    return _conv_nd(x, w, 1, pad, 1, "conv1d_temporal")


def conv2d(x, w, stride=1, pad=0):
    """2-d cross-correlation. ``x``: (C, H, W) or (N, C, H, W); ``w``: (C_out, C_in, kh, kw)."""
    return _conv_nd(x, w, stride, pad, 2, "conv2d")


def conv3d(x, w, stride=1, pad=0):
    """3-d cross-correlation. ``x``: (C, T, H, W) or (N, C, T, H, W)."""
    return _conv_nd(x, w, stride, pad, 3, "conv3d")


# ---------------------------------------------------------------------------
# composites
# ---------------------------------------------------------------------------


def batch_norm(x, gamma, beta, eps=1e-5, axes=None):
    """Batch statistics normalization over ``axes`` (all but axis 1 by default).

    Training-mode semantics: per-channel zero mean / unit variance before the
    affine transform.  The reduction axes must together hold at least two
    elements; a degenerate axis is an error rather than a division rescue.
    Implemented as one fused node; the backward is the closed-form batch-norm
    gradient, cross-checked against finite differences in the test suite.
    """
    if axes is None:
        axes = (0,) + tuple(range(2, x.ndim))
    axes = _norm_axes(axes, x.ndim)
    count = int(np.prod([x.shape[ax] for ax in axes]))
    if count < 2:
        raise ShapeError(
            f"batch_norm requires >= 2 elements along normalization axes, got {count}"
        )
    bshape = tuple(x.shape[i] if i not in axes else 1 for i in range(x.ndim))
    xd = x.data
    mu = xd.mean(axis=axes, keepdims=True)
    centered = xd - mu
    var = np.mean(centered * centered, axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centered * inv_std
    gd = gamma.data.reshape(bshape)
    out_data = x_hat * gd + beta.data.reshape(bshape)

    def backward_fn(g):
        if gamma.requires_grad:
            gamma._accumulate((g * x_hat).sum(axis=axes).reshape(gamma.shape))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=axes).reshape(beta.shape))
        if x.requires_grad:
            g_hat = g * gd
            term_mean = g_hat.mean(axis=axes, keepdims=True)
            term_proj = (g_hat * x_hat).mean(axis=axes, keepdims=True)
            x._accumulate(inv_std * (g_hat - term_mean - x_hat * term_proj))

    return _make(out_data, (x, gamma, beta), backward_fn, "batch_norm")


def l2_norm(a):
    """Euclidean norm of the flattened tensor, as a scalar graph node."""
    return sqrt(reduce_sum(mul(a, a)))


def _require_nonzero(norm_value, what, eps=1e-12):
    if float(norm_value) <= eps:
        raise ZeroVectorError(f"{what} has (near-)zero norm; cosine undefined")


def cosine_similarity(a, b, eps=1e-12):
    """Cosine of two same-width vectors; raises on (near-)zero inputs."""
    if a.shape != b.shape:
        raise ShapeError(f"cosine_similarity shapes differ: {a.shape} vs {b.shape}")
    na = l2_norm(a)
    nb = l2_norm(b)
    _require_nonzero(na.item(), "first argument", eps)
    _require_nonzero(nb.item(), "second argument", eps)
    return div(reduce_sum(mul(a, b)), mul(na, nb))


def rows_cosine(a, b, eps=1e-12):
    """Cosine of each row of ``a`` (N, D) against the vector ``b`` (D,)."""
    if a.ndim != 2 or b.ndim != 1 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"rows_cosine expects (N, D) vs (D,), got {a.shape} vs {b.shape}")
    row_norms = sqrt(reduce_sum(mul(a, a), axis=1))
    nb = l2_norm(b)
    if float(row_norms.data.min()) <= eps:
        raise ZeroVectorError("a row has (near-)zero norm; cosine undefined")
    _require_nonzero(nb.item(), "reference vector", eps)
    return div(reduce_sum(mul(a, b), axis=1), mul(row_norms, nb))


# ---------------------------------------------------------------------------
# backward pass and gradient verification
# ---------------------------------------------------------------------------


def backward(loss: Tensor):
    """Populate ``grad`` on every tensor the scalar ``loss`` depends on."""
    if loss.data.size != 1:
        raise ShapeError(f"backward() needs a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    # iterative topological order; graphs are deep enough to overflow the
    # Python recursion limit otherwise
    order = []
    seen = {id(loss)}
    stack_ = [(loss, iter(loss._parents))]
    while stack_:
        node, parents = stack_[-1]
        advanced = False
        for parent in parents:
            if id(parent) not in seen and parent.requires_grad:
                seen.add(id(parent))
                stack_.append((parent, iter(parent._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack_.pop()

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


def zero_grads(params):
    for p in params:
        if isinstance(p, Parameter):
            p.grad = np.zeros_like(p.data)
        else:
            p.grad = None


@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    max_abs_err: float
    ok: bool


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry] = field(default_factory=list)
    tol: float = 1e-4

    @property
    def ok(self) -> bool:
        return all(e.ok for e in self.entries)

    @property
    def worst(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    def lines(self):
        for e in self.entries:
            status = "PASS" if e.ok else "FAIL"
            yield f"{e.name}: max_rel_err={e.max_rel_err:.3e} max_abs_err={e.max_abs_err:.3e} {status}"


def grad_check(build_loss, params, step=1e-5, tol=1e-4, atol=1e-7) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``build_loss`` reconstructs the scalar loss graph from the current
    parameter values; it is re-evaluated twice per parameter element.  The
    per-parameter relative error is the max elementwise discrepancy divided
    by the larger of the two gradients' max magnitudes, so a parameter whose
    true gradient is identically zero does not trip on difference noise.
    """
    params = list(params)
    zero_grads(params)
    loss = build_loss()
    backward(loss)
    analytic = [None if p.grad is None else p.grad.copy() for p in params]

    report = GradCheckReport(tol=tol)
    for p, a in zip(params, analytic):
        if a is None:
            a = np.zeros_like(p.data)
        fd = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        fd_flat = fd.reshape(-1)
        with no_grad():
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                f_plus = build_loss().item()
                flat[i] = orig - step
                f_minus = build_loss().item()
                flat[i] = orig
                fd_flat[i] = (f_plus - f_minus) / (2.0 * step)
        abs_err = float(np.max(np.abs(a - fd))) if a.size else 0.0
        scale = max(float(np.max(np.abs(a))) if a.size else 0.0,
                    float(np.max(np.abs(fd))) if fd.size else 0.0)
        rel_err = 0.0 if scale < atol else abs_err / scale
        name = getattr(p, "name", "") or f"tensor{p.shape}"
        report.entries.append(
            GradCheckEntry(name=name, max_rel_err=rel_err, max_abs_err=abs_err, ok=rel_err < tol)
        )
    return report
