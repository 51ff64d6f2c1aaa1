"""Dense tensors with a reverse-mode automatic differentiation tape.

Every value flowing through the network is a :class:`Tensor`: a C-contiguous
numpy array plus gradient bookkeeping. Operations record themselves onto the
innermost active :class:`Tape` (a ``with Tape():`` block); :func:`backward`
replays the records in reverse and accumulates gradients into every tensor
that has ``requires_grad`` set. A tape can be consumed exactly once.

Tapes and the tensors recorded on them are confined to a single thread or
process; nothing here synchronizes shared state. Reductions delegate to
numpy's pairwise summation, so results are order-independent well below the
documented 1e-12 tolerance. Set ``TSRM_DEBUG=1`` to assert finiteness of
every op output (slow; for debugging numeric escapes only).
"""

from __future__ import annotations

import math
import os

import numpy as np
from scipy.special import erf as _erf

from . import kernels
from .errors import ConfigError, ContractError, DimensionError, NumericError

_DTYPES = {"float32": np.float32, "float64": np.float64}
_default_dtype = np.float64

DEBUG_CHECK_FINITE = os.environ.get("TSRM_DEBUG", "") not in ("", "0")


def set_default_dtype(name):
    """Select the dtype new tensors default to ("float32" or "float64")."""
    global _default_dtype
    if name not in _DTYPES:
        raise ConfigError(f"unsupported dtype {name!r}; expected float32 or float64")
    _default_dtype = _DTYPES[name]


def get_default_dtype():
    return np.dtype(_default_dtype).name


_tape_stack = []


class Tape:
    """Ordered record of one forward pass, consumed by a single backward.

    Backward releases the recorded graph, so the arrays a pass allocates die
    with it rather than lingering until a full garbage collection.
    """

    __slots__ = ("_nodes", "consumed")

    def __init__(self):
        self._nodes = []
        self.consumed = False

    def __enter__(self):
        _tape_stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack.pop()
        if popped is not self:
            raise ContractError("tape context exited out of order")
        return False

    def __len__(self):
        return len(self._nodes)

    def backward(self, loss):
        _run_backward(self, loss)


def _active_tape():
    return _tape_stack[-1] if _tape_stack else None


class Tensor:
    """A numpy-backed value tracked by the autodiff tape.

    Tensors are treated as immutable by every operation; only optimizer
    updates mutate ``data`` in place, and only between tapes. ``grad`` is
    populated (as a plain ndarray) by :func:`backward` and stays ``None``
    until then.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else _default_dtype)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None

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

    def numpy(self):
        """Copy of the underlying array, detached from the graph."""
        return self.data.copy()

    def item(self):
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"

    # arithmetic sugar

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return negative(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __abs__(self):
        return absolute(self)

    def abs(self):
        return absolute(self)

    def exp(self):
        return exp(self)

    def sqrt(self):
        return sqrt(self)

    def sum(self, axis=None, keepdims=False):
        return reduce(self, "sum", axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce(self, "mean", axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


def tensor(data, requires_grad=False, dtype=None):
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, requires_grad=False, dtype=None):
    return Tensor(np.zeros(shape, dtype=dtype if dtype is not None else _default_dtype),
                  requires_grad=requires_grad, dtype=dtype if dtype is not None else _default_dtype)


def ones(shape, requires_grad=False, dtype=None):
    return Tensor(np.ones(shape, dtype=dtype if dtype is not None else _default_dtype),
                  requires_grad=requires_grad, dtype=dtype if dtype is not None else _default_dtype)


def full(shape, value, requires_grad=False, dtype=None):
    return Tensor(np.full(shape, value, dtype=dtype if dtype is not None else _default_dtype),
                  requires_grad=requires_grad, dtype=dtype if dtype is not None else _default_dtype)


def _as_tensor(value, like=None):
    if isinstance(value, Tensor):
        return value
    dtype = like.data.dtype if isinstance(like, Tensor) else _default_dtype
    return Tensor(np.asarray(value, dtype=dtype), dtype=dtype)


def _record(out, inputs, bwd):
    """Attach ``out`` to the active tape; ``bwd(g)`` yields one grad per input."""
    if DEBUG_CHECK_FINITE and not np.all(np.isfinite(out.data)):
        raise NumericError("non-finite value produced by a forward op")
    tape = _active_tape()
    if tape is not None:
        out._tape = tape
        if not tape.consumed and any(
            isinstance(t, Tensor) and t.requires_grad for t in inputs
        ):
            out.requires_grad = True
            tape._nodes.append((out, inputs, bwd))
    return out


def _run_backward(tape, loss):
    if not isinstance(loss, Tensor):
        raise ContractError("backward needs a Tensor loss")
    if loss._tape is not tape:
        raise ContractError("loss was not produced under this tape")
    if tape.consumed:
        raise ContractError("tape was already backpropagated; record a new forward pass")
    if loss.data.shape != ():
        raise ContractError(f"loss must be a scalar, got shape {loss.data.shape}")
    tape.consumed = True
    loss.grad = np.ones((), dtype=loss.data.dtype)
    for out, inputs, bwd in reversed(tape._nodes):
        g = out.grad
        if g is None:
            continue
        for t, dg in zip(inputs, bwd(g)):
            if dg is None or not (isinstance(t, Tensor) and t.requires_grad):
                continue
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            t.grad += dg
    # the node list closes a reference cycle (tape -> out tensor -> tape)
    # that refcounting alone cannot free; a consumed tape can never replay,
    # so release the recorded graph here instead of waiting on the gc
    tape._nodes.clear()


def backward(loss):
    """Run one reverse pass from ``loss`` over the tape that produced it."""
    if not isinstance(loss, Tensor) or loss._tape is None:
        raise ContractError("loss was not produced under an active tape")
    _run_backward(loss._tape, loss)


def _materialize(g):
    """Fresh C-order copy; keeps 0-d shapes (ascontiguousarray forces ndim >= 1)."""
    return np.array(g, order="C")


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape``, inverting numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# elementwise arithmetic


def _broadcast_check(a, b, opname):
    try:
        return np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise DimensionError(
            f"{opname}: shapes {a.data.shape} and {b.data.shape} do not broadcast"
        ) from None


def add(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    _broadcast_check(a, b, "add")
    out = Tensor(a.data + b.data, dtype=a.data.dtype)

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record(out, (a, b), bwd)


def subtract(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    _broadcast_check(a, b, "subtract")
    out = Tensor(a.data - b.data, dtype=a.data.dtype)

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _record(out, (a, b), bwd)


def multiply(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    _broadcast_check(a, b, "multiply")
    ad, bd = a.data, b.data
    out = Tensor(ad * bd, dtype=ad.dtype)

    def bwd(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _record(out, (a, b), bwd)


def divide(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    _broadcast_check(a, b, "divide")
    ad, bd = a.data, b.data
    if np.any(bd == 0):
        raise NumericError("division by exact zero")
    out = Tensor(ad / bd, dtype=ad.dtype)

    def bwd(g):
        return (
            _unbroadcast(g / bd, ad.shape),
            _unbroadcast(-g * ad / (bd * bd), bd.shape),
        )

    return _record(out, (a, b), bwd)


_ELEMENTWISE = {"add": add, "subtract": subtract, "multiply": multiply, "divide": divide}


def elementwise(a, b, kind):
    """Dispatch table entry point for the four broadcasting binary ops."""
    if kind not in _ELEMENTWISE:
        raise ContractError(f"unknown elementwise kind {kind!r}")
    return _ELEMENTWISE[kind](a, b)


def negative(a):
    a = _as_tensor(a)
    out = Tensor(-a.data, dtype=a.data.dtype)

    def bwd(g):
        return (-g,)

    return _record(out, (a,), bwd)


def absolute(a):
    a = _as_tensor(a)
    sign = np.sign(a.data)
    out = Tensor(np.abs(a.data), dtype=a.data.dtype)

    def bwd(g):
        return (g * sign,)

    return _record(out, (a,), bwd)


def exp(a):
    a = _as_tensor(a)
    val = np.exp(a.data)
    out = Tensor(val, dtype=a.data.dtype)

    def bwd(g):
        return (g * val,)

    return _record(out, (a,), bwd)


def sqrt(a):
    a = _as_tensor(a)
    if np.any(a.data < 0):
        raise NumericError("sqrt of a negative value")
    val = np.sqrt(a.data)
    out = Tensor(val, dtype=a.data.dtype)

    def bwd(g):
        return (g * (0.5 / val),)

    return _record(out, (a,), bwd)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a):
    """Exact (erf-based) GELU: x * Phi(x)."""
    a = _as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + _erf(x * _INV_SQRT2))
    out = Tensor(x * cdf, dtype=x.dtype)

    def bwd(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        return (g * (cdf + x * pdf),)

    return _record(out, (a,), bwd)


# linear algebra


def matmul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul requires at least 2-D operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(
            f"matmul inner dimensions differ: {a.data.shape} @ {b.data.shape}"
        )
    try:
        val = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(
            f"matmul batch dimensions do not broadcast: {a.data.shape} @ {b.data.shape}"
        ) from None
    out = Tensor(val, dtype=a.data.dtype)
    ad, bd = a.data, b.data

    def bwd(g):
        da = _unbroadcast(np.matmul(g, bd.swapaxes(-1, -2)), ad.shape)
        db = _unbroadcast(np.matmul(ad.swapaxes(-1, -2), g), bd.shape)
        return da, db

    return _record(out, (a, b), bwd)


# reductions and shape ops


def reduce(a, kind, axis=None, keepdims=False):
    """Sum or mean over one axis (or all); backward broadcasts the seed back."""
    a = _as_tensor(a)
    if kind not in ("sum", "mean"):
        raise ContractError(f"unknown reduction kind {kind!r}")
    if axis is not None:
        if not isinstance(axis, int):
            raise ContractError("reduce supports a single integer axis or None")
        if not -a.ndim <= axis < a.ndim:
            raise DimensionError(f"axis {axis} out of range for shape {a.data.shape}")
        axis = axis % a.ndim
        n = a.data.shape[axis]
    else:
        n = a.data.size
    fn = np.sum if kind == "sum" else np.mean
    val = fn(a.data, axis=axis, keepdims=keepdims)
    out = Tensor(val, dtype=a.data.dtype)
    in_shape = a.data.shape

    def bwd(g):
        if axis is None or keepdims:
            gg = np.broadcast_to(g, in_shape)
        else:
            gg = np.broadcast_to(np.expand_dims(g, axis), in_shape)
        if kind == "mean":
            gg = gg / n
        return (_materialize(gg),)

    return _record(out, (a,), bwd)


def reshape(a, shape):
    a = _as_tensor(a)
    shape = tuple(shape)
    try:
        val = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {a.data.shape} to {shape}") from None
    out = Tensor(val, dtype=a.data.dtype)
    in_shape = a.data.shape

    def bwd(g):
        return (g.reshape(in_shape),)

    return _record(out, (a,), bwd)


def transpose(a, axes=None):
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(ax % a.ndim for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"transpose axes {axes} are not a permutation for ndim {a.ndim}")
    out = Tensor(np.transpose(a.data, axes), dtype=a.data.dtype)
    inverse = tuple(np.argsort(axes))

    def bwd(g):
        return (_materialize(np.transpose(g, inverse)),)

    return _record(out, (a,), bwd)


def swapaxes(a, axis_a, axis_b):
    a = _as_tensor(a)
    axes = list(range(a.ndim))
    axes[axis_a], axes[axis_b] = axes[axis_b % a.ndim], axes[axis_a % a.ndim]
    return transpose(a, axes)


def _slice_axis(a, axis, lo, hi):
    idx = tuple(slice(lo, hi) if i == axis else slice(None) for i in range(a.ndim))
    out = Tensor(a.data[idx], dtype=a.data.dtype)
    in_shape = a.data.shape

    def bwd(g):
        z = np.zeros(in_shape, dtype=g.dtype)
        z[idx] = g
        return (z,)

    return _record(out, (a,), bwd)


def concat(tensors, axis):
    """Concatenate along ``axis``; other dimensions must match exactly."""
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat of an empty sequence")
    if len(ts) == 1:
        return ts[0]
    axis = axis % ts[0].ndim
    ref = list(ts[0].data.shape)
    for t in ts[1:]:
        other = list(t.data.shape)
        if len(other) != len(ref) or any(
            i != axis and other[i] != ref[i] for i in range(len(ref))
        ):
            raise DimensionError(
                f"concat shapes differ off axis {axis}: {ts[0].data.shape} vs {t.data.shape}"
            )
    val = np.concatenate([t.data for t in ts], axis=axis)
    out = Tensor(val, dtype=ts[0].data.dtype)
    sizes = [t.data.shape[axis] for t in ts]
    bounds = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, bounds, axis=axis))

    return _record(out, tuple(ts), bwd)


def split(a, sizes, axis):
    """Inverse of concat: returns one tensor per entry of ``sizes``."""
    a = _as_tensor(a)
    axis = axis % a.ndim
    if sum(sizes) != a.data.shape[axis]:
        raise DimensionError(
            f"split sizes {list(sizes)} do not sum to axis length {a.data.shape[axis]}"
        )
    parts = []
    lo = 0
    for s in sizes:
        parts.append(_slice_axis(a, axis, lo, lo + s))
        lo += s
    return parts


# normalizing maps


def softmax(a, axis=-1):
    a = _as_tensor(a)
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, dtype=x.dtype)

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - dot) * y,)

    return _record(out, (a,), bwd)


def _entmax15_values(z):
    """Exact entmax-1.5 along the last axis via the sorted threshold.

    With x = z/2 sorted descending, the threshold restricted to support size
    k is tau_k = mean_k - sqrt((1 - k*(meansq_k - mean_k^2)) / k); the true
    support is the largest k with x_(k) > tau_k, and p = max(0, x - tau)^2.
    """
    x = z / 2.0
    x = x - x.max(axis=-1, keepdims=True)
    xs = np.sort(x, axis=-1)[..., ::-1]
    n = x.shape[-1]
    k = np.arange(1, n + 1, dtype=x.dtype)
    cumsum = np.cumsum(xs, axis=-1)
    cumsq = np.cumsum(xs * xs, axis=-1)
    mean = cumsum / k
    ss = k * (cumsq / k - mean * mean)
    delta = (1.0 - ss) / k
    tau = mean - np.sqrt(np.clip(delta, 0.0, None))
    support = np.sum(xs >= tau, axis=-1, keepdims=True)
    tau_star = np.take_along_axis(tau, support - 1, axis=-1)
    p = np.maximum(x - tau_star, 0.0)
    return p * p


def entmax15(a, axis=-1):
    """Sparse attention map (alpha = 1.5): exact solution, can hit zeros."""
    a = _as_tensor(a)
    axis = axis % a.ndim
    moved = axis != a.ndim - 1
    x = np.moveaxis(a.data, axis, -1) if moved else a.data
    p_last = _entmax15_values(x)
    p = np.moveaxis(p_last, -1, axis) if moved else p_last
    out = Tensor(np.ascontiguousarray(p), dtype=a.data.dtype)
    s = np.sqrt(p_last)

    def bwd(g):
        gm = np.moveaxis(g, axis, -1) if moved else g
        gs = gm * s
        q = gs.sum(axis=-1, keepdims=True) / s.sum(axis=-1, keepdims=True)
        dz = gs - q * s
        if moved:
            dz = np.moveaxis(dz, -1, axis)
        return (np.ascontiguousarray(dz),)

    return _record(out, (a,), bwd)


# convolution ops


def conv_output_length(length, kernel_size, stride, dilation):
    """Window count for a valid (unpadded) strided, dilated 1D convolution."""
    if kernel_size < 1 or stride < 1 or dilation < 1:
        raise ConfigError(
            f"kernel_size, stride, dilation must be >= 1, got "
            f"({kernel_size}, {stride}, {dilation})"
        )
    receptive = dilation * (kernel_size - 1) + 1
    if receptive > length:
        raise ConfigError(
            f"receptive field {receptive} exceeds input length {length} "
            f"(kernel_size={kernel_size}, dilation={dilation})"
        )
    return (length - dilation * (kernel_size - 1) - 1) // stride + 1


def _fold_leading(x):
    lead = x.shape[:-2]
    n = int(np.prod(lead)) if lead else 1
    return x.reshape((n,) + x.shape[-2:]), lead


def conv1d(x, weight, bias=None, *, stride, dilation=1, groups=1):
    """Valid 1D convolution over the second-to-last axis.

    x: [..., L, C_in], weight: [C_out, C_in // groups, K] -> [..., D, C_out].
    """
    x = _as_tensor(x)
    weight = _as_tensor(weight, like=x)
    if x.ndim < 2:
        raise DimensionError(f"conv1d input needs [..., L, C], got shape {x.data.shape}")
    c_out, c_in_g, ksize = weight.data.shape
    length, c_in = x.data.shape[-2:]
    if c_in != c_in_g * groups or c_out % groups:
        raise DimensionError(
            f"conv1d channels mismatch: input C={c_in}, weight {weight.data.shape}, groups={groups}"
        )
    d_out = conv_output_length(length, ksize, stride, dilation)
    xf, lead = _fold_leading(x.data)
    cols = kernels.gather_windows(np.ascontiguousarray(xf), ksize, stride, dilation, d_out)
    if groups == 1:
        val = np.einsum("ndkc,ock->ndo", cols, weight.data, optimize=True)
    else:
        colsg = cols.reshape(cols.shape[0], d_out, ksize, groups, c_in_g)
        wg = weight.data.reshape(groups, c_out // groups, c_in_g, ksize)
        val = np.einsum("ndkgc,gock->ndgo", colsg, wg, optimize=True)
        val = val.reshape(cols.shape[0], d_out, c_out)
    if bias is not None:
        bias = _as_tensor(bias, like=x)
        if bias.data.shape != (c_out,):
            raise DimensionError(f"conv1d bias must have shape ({c_out},), got {bias.data.shape}")
        val = val + bias.data
    out = Tensor(val.reshape(lead + (d_out, c_out)), dtype=x.data.dtype)
    wd = weight.data

    def bwd(g):
        gf = g.reshape(-1, d_out, c_out)
        if groups == 1:
            dw = np.einsum("ndkc,ndo->ock", cols, gf, optimize=True)
            dcols = np.einsum("ndo,ock->ndkc", gf, wd, optimize=True)
        else:
            gg = gf.reshape(-1, d_out, groups, c_out // groups)
            colsg2 = cols.reshape(cols.shape[0], d_out, ksize, groups, c_in_g)
            wg2 = wd.reshape(groups, c_out // groups, c_in_g, ksize)
            dw = np.einsum("ndkgc,ndgo->gock", colsg2, gg, optimize=True).reshape(wd.shape)
            dcols = np.einsum("ndgo,gock->ndkgc", gg, wg2, optimize=True)
            dcols = dcols.reshape(cols.shape[0], d_out, ksize, c_in)
        dx = kernels.scatter_windows(np.ascontiguousarray(dcols), stride, dilation, length)
        grads = [dx.reshape(x.data.shape), dw]
        if bias is not None:
            grads.append(gf.sum(axis=(0, 1)))
        return tuple(grads)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _record(out, inputs, bwd)


def conv_transpose1d(x, weight, bias=None, *, stride, dilation=1, groups=1, output_len=None):
    """Adjoint of :func:`conv1d`, zero-padded on the right up to ``output_len``.

    x: [..., D, C_in], weight: [C_in, C_out // groups, K] -> [..., T, C_out].
    The natural length (D-1)*stride + dilation*(K-1) + 1 must not exceed
    ``output_len``; extra positions receive no contribution (bias still adds).
    """
    x = _as_tensor(x)
    weight = _as_tensor(weight, like=x)
    if x.ndim < 2:
        raise DimensionError(f"conv_transpose1d input needs [..., D, C], got {x.data.shape}")
    c_in_w, c_out_g, ksize = weight.data.shape
    d_in, c_in = x.data.shape[-2:]
    if c_in != c_in_w or c_in % groups:
        raise DimensionError(
            f"conv_transpose1d channels mismatch: input C={c_in}, weight {weight.data.shape}, groups={groups}"
        )
    c_out = c_out_g * groups
    natural = (d_in - 1) * stride + dilation * (ksize - 1) + 1
    if output_len is None:
        output_len = natural
    if natural > output_len:
        raise ConfigError(
            f"transposed conv natural length {natural} exceeds target length {output_len}"
        )
    xf, lead = _fold_leading(x.data)
    wd = weight.data
    if groups == 1:
        cols = np.einsum("ndc,cok->ndko", xf, wd, optimize=True)
    else:
        xg = xf.reshape(xf.shape[0], d_in, groups, c_in // groups)
        wg = wd.reshape(groups, c_in // groups, c_out_g, ksize)
        cols = np.einsum("ndgc,gcok->ndkgo", xg, wg, optimize=True)
        cols = cols.reshape(xf.shape[0], d_in, ksize, c_out)
    val = kernels.scatter_windows(np.ascontiguousarray(cols), stride, dilation, natural)
    if natural < output_len:
        pad = np.zeros((val.shape[0], output_len - natural, c_out), dtype=val.dtype)
        val = np.concatenate([val, pad], axis=1)
    if bias is not None:
        bias = _as_tensor(bias, like=x)
        if bias.data.shape != (c_out,):
            raise DimensionError(
                f"conv_transpose1d bias must have shape ({c_out},), got {bias.data.shape}"
            )
        val = val + bias.data
    out = Tensor(val.reshape(lead + (output_len, c_out)), dtype=x.data.dtype)

    def bwd(g):
        gf = np.ascontiguousarray(g.reshape(-1, output_len, c_out)[:, :natural, :])
        gcols = kernels.gather_windows(gf, ksize, stride, dilation, d_in)
        if groups == 1:
            dx = np.einsum("ndko,cok->ndc", gcols, wd, optimize=True)
            dw = np.einsum("ndc,ndko->cok", xf, gcols, optimize=True)
        else:
            gcolsg = gcols.reshape(gcols.shape[0], d_in, ksize, groups, c_out_g)
            xg2 = xf.reshape(xf.shape[0], d_in, groups, c_in // groups)
            wg2 = wd.reshape(groups, c_in // groups, c_out_g, ksize)
            dx = np.einsum("ndkgo,gcok->ndgc", gcolsg, wg2, optimize=True)
            dx = dx.reshape(xf.shape[0], d_in, c_in)
            dw = np.einsum("ndgc,ndkgo->gcok", xg2, gcolsg, optimize=True).reshape(wd.shape)
        grads = [dx.reshape(x.data.shape), dw]
        if bias is not None:
            grads.append(g.reshape(-1, output_len, c_out).sum(axis=(0, 1)))
        return tuple(grads)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _record(out, inputs, bwd)
