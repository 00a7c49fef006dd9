"""Dense tensors with reverse-mode automatic differentiation.

A small define-by-run engine over numpy arrays.  Every primitive op records
itself on the output tensor; ``ComputationTape.from_output`` recovers the
executed op sequence in topological order and ``backward`` walks it once in
reverse, accumulating gradients over fan-out.  Values are float32 by default;
float64 is selectable for finite-difference verification.

Broadcasting is deliberately limited: binary elementwise ops accept equal
shapes or a plain python scalar.  Row-vector bias addition has its own
primitive (``add_rowvec``) so linear layers do not need general broadcasting.
"""
from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(ValueError):
    """Non-finite or out-of-domain values where finite ones are required."""


class ContractError(ValueError):
    """A call violated an operation's precondition."""


_grad_enabled = True

# Test hook: names of ops whose backward rule is sign-flipped.  Used to verify
# that gradient checking actually detects a corrupted backward rule.
_backward_faults: set[str] = set()


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (pure forward evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class TapeOp:
    """One executed primitive: inputs, output and the local backward rule."""

    __slots__ = ("name", "inputs", "output", "backward_fn")

    def __init__(self, name, inputs, output, backward_fn):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn

    def __repr__(self):
        return f"TapeOp({self.name}, out={self.output.shape})"


class Tensor:
    """A dense n-d array plus gradient bookkeeping.

    ``data`` is a contiguous numpy array, ``grad`` (same shape) is populated
    by ``backward``.  Tensors produced by ops keep a reference to the creating
    ``TapeOp``; leaf tensors have ``op is None``.  Tensors that never join a
    tape are plain immutable values and safe to share across threads.
    """

    __slots__ = ("data", "requires_grad", "grad", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        keep = isinstance(data, (np.ndarray, np.generic)) and data.dtype in (np.float32, np.float64)
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not keep:
            arr = arr.astype(DEFAULT_DTYPE)
        if arr.ndim > 0 and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Run reverse-mode differentiation from this (scalar) tensor."""
        ComputationTape.from_output(self).backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(scale(self, -1.0), other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class ComputationTape:
    """Topologically ordered record of the ops that produced one output.

    Rebuilt from the op graph on demand (define-by-run): each forward pass
    creates fresh ops, so a tape is only valid for the output it was traced
    from.  ``ops`` is ordered so that every op's inputs are produced by
    earlier ops (or are leaves).
    """

    __slots__ = ("ops",)

    def __init__(self, ops: list):
        self.ops = ops

    @classmethod
    def from_output(cls, out: Tensor) -> "ComputationTape":
        ops = []
        seen = set()
        stack = [(out, False)]
        while stack:
            t, expanded = stack.pop()
            if t.op is None:
                continue
            oid = id(t.op)
            if expanded:
                ops.append(t.op)
                continue
            if oid in seen:
                continue
            seen.add(oid)
            stack.append((t, True))
            for inp in t.op.inputs:
                if inp.op is not None and id(inp.op) not in seen:
                    stack.append((inp, False))
        return cls(ops)

    def backward(self, root: Tensor):
        """Populate ``grad`` on every reachable requires_grad tensor.

        ``root`` must be a single-element tensor; its seed gradient is 1.
        Gradients accumulate over fan-out within this pass, and add onto any
        pre-existing ``grad`` across passes.
        """
        if root.data.size != 1:
            raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
        if not np.isfinite(root.data).all():
            raise NumericError("backward root is not finite")
        pending: dict[int, list] = {}
        pending[id(root)] = [root, np.ones_like(root.data)]

        def settle(t: Tensor, g: np.ndarray):
            if t.requires_grad:
                t.grad = g.copy() if t.grad is None else t.grad + g

        for op in reversed(self.ops):
            entry = pending.pop(id(op.output), None)
            if entry is None:
                continue
            settle(op.output, entry[1])
            grads_in = op.backward_fn(entry[1])
            for inp, gi in zip(op.inputs, grads_in):
                if gi is None or not inp.requires_grad:
                    continue
                slot = pending.get(id(inp))
                if slot is None:
                    pending[id(inp)] = [inp, gi]
                else:
                    slot[1] = slot[1] + gi
        # anything still pending is a leaf (no producing op)
        for t, g in pending.values():
            settle(t, g)


def _record(name: str, inputs: tuple, out_data: np.ndarray, backward_fn) -> Tensor:
    out = Tensor(out_data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        if _backward_faults:
            inner, tag = backward_fn, name

            def backward_fn(g, _inner=inner, _tag=tag):
                grads = _inner(g)
                if _tag in _backward_faults:
                    grads = tuple(None if gi is None else -gi for gi in grads)
                return grads

        out.op = TapeOp(name, inputs, out, backward_fn)
    return out


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _check_same_shape(name, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise DimensionError(f"{name}: shape mismatch {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise DimensionError(f"{name}: dtype mismatch {a.dtype} vs {b.dtype}")


# -- binary elementwise ------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    """Elementwise a + b; b may be a same-shape tensor or a python scalar."""
    if not isinstance(b, Tensor):
        c = float(b)
        return _record("add", (a,), a.data + a.dtype.type(c), lambda g: (g,))
    _check_same_shape("add", a, b)
    return _record("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b) -> Tensor:
    """Elementwise a - b; b may be a same-shape tensor or a python scalar."""
    if not isinstance(b, Tensor):
        c = float(b)
        return _record("sub", (a,), a.data - a.dtype.type(c), lambda g: (g,))
    _check_same_shape("sub", a, b)
    return _record("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product of two same-shape tensors."""
    _check_same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _record("mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    c = a.dtype.type(c)
    return _record("scale", (a,), a.data * c, lambda g: (g * c,))


def add_rowvec(x: Tensor, row: Tensor) -> Tensor:
    """Add a row vector to every row of a 2-d tensor (bias addition)."""
    if x.ndim != 2:
        raise DimensionError(f"add_rowvec: x must be 2-d, got {x.shape}")
    r = row.data.reshape(-1)
    if r.shape[0] != x.shape[1]:
        raise DimensionError(f"add_rowvec: row length {r.shape[0]} vs {x.shape[1]} columns")
    rshape = row.shape

    def bwd(g):
        return g, g.sum(axis=0).reshape(rshape)

    return _record("add_rowvec", (x, row), x.data + r[None, :], bwd)


# -- unary elementwise -------------------------------------------------

def relu(a: Tensor) -> Tensor:
    """max(x, 0); the derivative at exactly 0 is taken as 0."""
    mask = a.data > 0
    return _record("relu", (a,), np.where(mask, a.data, a.dtype.type(0)), lambda g: (g * mask,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _record("square", (a,), ad * ad, lambda g: (g * (2.0 * ad),))


def sqrt(a: Tensor) -> Tensor:
    """Elementwise square root; negative input is a numeric error.

    The derivative at 0 is taken as 0 so that distance-style losses stay
    finite when a prediction coincides with its target.
    """
    if (a.data < 0).any():
        raise NumericError("sqrt: negative input")
    r = np.sqrt(a.data)

    def bwd(g):
        out = np.zeros_like(r)
        nz = r > 0
        out[nz] = g[nz] * 0.5 / r[nz]
        return (out,)

    return _record("sqrt", (a,), r, bwd)


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), numerically stable for large |x|."""
    ad = a.data
    out = np.where(ad > 30, ad, np.log1p(np.exp(np.minimum(ad, 30))))
    sig = 1.0 / (1.0 + np.exp(-np.clip(ad, -500, 500)))
    return _record("softplus", (a,), out.astype(a.dtype, copy=False), lambda g: (g * sig,))


def reciprocal(a: Tensor) -> Tensor:
    """Elementwise 1 / x; zero input is a numeric error."""
    if (a.data == 0).any():
        raise NumericError("reciprocal: zero input")
    inv = 1.0 / a.data

    def bwd(g):
        return (-g * inv * inv,)

    return _record("reciprocal", (a,), inv.astype(a.dtype, copy=False), bwd)


# -- softmax / normalization ------------------------------------------

def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-d tensor; rows sum to 1.

    Invariant to adding a constant to a whole row.  NaN input raises
    NumericError rather than propagating.
    """
    if x.ndim != 2:
        raise DimensionError(f"softmax_rows: expected 2-d input, got {x.shape}")
    if np.isnan(x.data).any():
        raise NumericError("softmax_rows: NaN input")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return (y * (g - dot),)

    return _record("softmax_rows", (x,), y.astype(x.dtype, copy=False), bwd)


def layernorm_rows(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row layer normalization with learned gain and bias.

    Each row is shifted to zero mean and unit variance (eps-stabilized), then
    scaled by ``gain`` and shifted by ``bias`` (both length = columns).
    """
    if x.ndim != 2:
        raise DimensionError(f"layernorm_rows: expected 2-d input, got {x.shape}")
    n = x.shape[1]
    gshape, bshape = gain.shape, bias.shape
    gvec = gain.data.reshape(-1)
    bvec = bias.data.reshape(-1)
    if gvec.shape[0] != n or bvec.shape[0] != n:
        raise DimensionError("layernorm_rows: gain/bias length must equal column count")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    out = xhat * gvec[None, :] + bvec[None, :]

    def bwd(g):
        dgain = (g * xhat).sum(axis=0).reshape(gshape)
        dbias = g.sum(axis=0).reshape(bshape)
        dxhat = g * gvec[None, :]
        term = dxhat - dxhat.mean(axis=1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        return term * inv_std, dgain, dbias

    return _record("layernorm_rows", (x, gain, bias), out.astype(x.dtype, copy=False), bwd)


# -- reductions --------------------------------------------------------

def _normalize_axes(ndim: int, axes) -> tuple:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(a + ndim if a < 0 else a for a in axes)
    for a in axes:
        if not 0 <= a < ndim:
            raise DimensionError(f"reduce: axis {a} out of range for ndim {ndim}")
    if len(set(axes)) != len(axes):
        raise DimensionError("reduce: duplicate axes")
    return axes


def reduce_sum(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    """Sum over the given axes (all axes when None; empty tuple is identity)."""
    ax = _normalize_axes(x.ndim, axes)
    if len(ax) == 0:
        return _record("reduce_sum", (x,), x.data.copy(), lambda g: (g,))
    out = x.data.sum(axis=ax, keepdims=keepdims)
    shape = x.shape

    def bwd(g):
        gb = g
        if not keepdims:
            gb = np.expand_dims(g, ax)
        return (np.broadcast_to(gb, shape).copy(),)

    return _record("reduce_sum", (x,), out, bwd)


def reduce_mean(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    """Mean over the given axes (all axes when None; empty tuple is identity)."""
    ax = _normalize_axes(x.ndim, axes)
    if len(ax) == 0:
        return _record("reduce_mean", (x,), x.data.copy(), lambda g: (g,))
    count = 1
    for a in ax:
        count *= x.shape[a]
    if count == 0:
        raise DimensionError("reduce_mean: zero-size reduction")
    out = x.data.mean(axis=ax, keepdims=keepdims)
    shape = x.shape
    inv = 1.0 / count

    def bwd(g):
        gb = g
        if not keepdims:
            gb = np.expand_dims(g, ax)
        return (np.broadcast_to(gb * inv, shape).astype(g.dtype, copy=False).copy(),)

    return _record("reduce_mean", (x,), out, bwd)


# -- shape / gather ----------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")
    old = x.shape
    return _record("reshape", (x,), x.data.reshape(shape).copy(), lambda g: (g.reshape(old),))


def transpose2d(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"transpose2d: expected 2-d input, got {x.shape}")
    return _record("transpose2d", (x,), x.data.T.copy(), lambda g: (g.T.copy(),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate tensors along ``axis``; other dims must agree."""
    if len(tensors) == 0:
        raise DimensionError("concat: empty input list")
    nd = tensors[0].ndim
    if axis < 0:
        axis += nd
    for t in tensors[1:]:
        if t.ndim != nd:
            raise DimensionError("concat: rank mismatch")
        for d in range(nd):
            if d != axis and t.shape[d] != tensors[0].shape[d]:
                raise DimensionError(f"concat: shape mismatch {t.shape} vs {tensors[0].shape} on axis {d}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=axis))

    return _record("concat", tuple(tensors), out, bwd)


def take_rows(x: Tensor, indices) -> Tensor:
    """Gather rows of ``x`` by integer index; backward scatters with accumulation."""
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if x.ndim < 1:
        raise DimensionError("take_rows: input must have at least 1 dimension")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise DimensionError(f"take_rows: index out of range for {x.shape[0]} rows")
    shape = x.shape

    def bwd(g):
        dx = np.zeros(shape, dtype=g.dtype)
        np.add.at(dx, idx, g)
        return (dx,)

    return _record("take_rows", (x,), x.data[idx].copy(), bwd)


# -- matmul / conv -----------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-d matrix product a @ b."""
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul: expected 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    if a.dtype != b.dtype:
        raise DimensionError(f"matmul: dtype mismatch {a.dtype} vs {b.dtype}")
    ad, bd = a.data, b.data

    def bwd(g):
        return g @ bd.T, ad.T @ g

    return _record("matmul", (a, b), ad @ bd, bwd)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d convolution of a single image.

    Parameters
    ----------
    x : Tensor, shape (C_in, H, W)
    w : Tensor, shape (C_out, C_in, k, k)
    b : Tensor or None, shape (C_out,)
    stride, padding : int

    Returns shape (C_out, H_out, W_out) with H_out = (H + 2p - k)//stride + 1.
    Implemented by patch extraction (im2col) and one matmul.
    """
    if x.ndim != 3 or w.ndim != 4:
        raise DimensionError(f"conv2d: expected x (C,H,W) and w (O,C,k,k), got {x.shape}, {w.shape}")
    c_in, h, wd = x.shape
    c_out, c_in_w, kh, kw = w.shape
    if c_in_w != c_in:
        raise DimensionError(f"conv2d: channel mismatch, x has {c_in}, w expects {c_in_w}")
    if kh != kw:
        raise DimensionError("conv2d: kernel must be square")
    k = kh
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (wd + 2 * padding - k) // stride + 1
    if h_out < 1 or w_out < 1:
        raise DimensionError(f"conv2d: kernel {k} with stride {stride} does not fit input {x.shape}")

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (padding, padding), (padding, padding)))
    cols4 = np.empty((c_in, k, k, h_out * w_out), dtype=x.data.dtype)
    for ki in range(k):
        for kj in range(k):
            patch = xp[:, ki:ki + stride * h_out:stride, kj:kj + stride * w_out:stride]
            cols4[:, ki, kj, :] = patch.reshape(c_in, -1)
    cols = cols4.reshape(c_in * k * k, h_out * w_out)
    wmat = w.data.reshape(c_out, -1)
    out = wmat @ cols
    if b is not None:
        if b.data.reshape(-1).shape[0] != c_out:
            raise DimensionError("conv2d: bias length must equal output channels")
        out = out + b.data.reshape(-1)[:, None]
    out = out.reshape(c_out, h_out, w_out)
    pad_shape = xp.shape
    wshape = w.shape

    def bwd(g):
        gm = g.reshape(c_out, -1)
        dw = (gm @ cols.T).reshape(wshape)
        db = None if b is None else gm.sum(axis=1).reshape(b.shape)
        dcols = (wmat.T @ gm).reshape(c_in, k, k, h_out * w_out)
        dxp = np.zeros(pad_shape, dtype=g.dtype)
        for ki in range(k):
            for kj in range(k):
                dxp[:, ki:ki + stride * h_out:stride, kj:kj + stride * w_out:stride] += \
                    dcols[:, ki, kj, :].reshape(c_in, h_out, w_out)
        dx = dxp[:, padding:padding + h, padding:padding + wd] if padding else dxp
        if b is None:
            return np.ascontiguousarray(dx), dw
        return np.ascontiguousarray(dx), dw, db

    inputs = (x, w) if b is None else (x, w, b)
    return _record("conv2d", inputs, out, bwd)


# -- finite differences ------------------------------------------------

def fd_grad(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> Tensor:
    """Central-difference gradient of a scalar function at ``x``.

    Perturbs each element of ``x`` in place by +-eps and evaluates
    ``f(x)`` (which must return a single-element tensor), restoring the
    original value afterwards.  Run in float64 for trustworthy digits.
    """
    flat = x.data.reshape(-1)
    out = np.zeros(flat.shape, dtype=np.float64)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f(x).item()
            flat[i] = orig - eps
            lo = f(x).item()
            flat[i] = orig
            out[i] = (hi - lo) / (2.0 * eps)
    return Tensor(out.reshape(x.shape), dtype=np.float64)


def max_rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Worst-case elementwise deviation between two gradient estimates.

    Elements where both magnitudes are at most 1e-6 are compared absolutely
    (their difference is negligible by construction); all others are compared
    relative to the larger magnitude.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DimensionError(f"max_rel_error: shape mismatch {a.shape} vs {b.shape}")
    diff = np.abs(a - b)
    denom = np.maximum(np.abs(a), np.abs(b))
    small = denom <= 1e-6
    err = np.where(small, diff, diff / np.where(small, 1.0, denom))
    return float(err.max()) if err.size else 0.0


def gradcheck(build_loss: Callable[[], Tensor], params: Mapping[str, Tensor],
              eps: float = 1e-5) -> dict[str, float]:
    """Compare reverse-mode gradients against central differences.

    ``build_loss`` must rebuild the forward computation from the live values
    in ``params`` and return a scalar tensor.  Returns the worst relative
    error per parameter name (see ``max_rel_error``).
    """
    for p in params.values():
        p.grad = None
    loss = build_loss()
    loss.backward()
    analytic = {}
    for name, p in params.items():
        analytic[name] = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        p.grad = None
    report = {}
    for name, p in params.items():
        fd = fd_grad(lambda _t: build_loss(), p, eps=eps)
        report[name] = max_rel_error(analytic[name], fd.data)
    return report


# -- initializers ------------------------------------------------------

def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=DEFAULT_DTYPE) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def param(data, dtype=None) -> Tensor:
    """Shorthand for a trainable leaf tensor."""
    return Tensor(data, requires_grad=True, dtype=dtype)
