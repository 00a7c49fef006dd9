"""Scaled dot-product attention and a pre-norm transformer encoder block.

The block maps a sequence of frame embeddings (N x f) to temporally mixed
context vectors (N x f): learned position embeddings are added, then one
multi-head self-attention sublayer and one feed-forward sublayer, each with
layer normalization applied before the sublayer and a residual connection
around it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import ContractError, DimensionError, Tensor


class CapacityError(ContractError):
    """Sequence longer than the learned position table."""


MASK_VALUE = -1e9  # effectively -inf for softmax, finite so backward stays clean


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor,
                                 scale: float | None = None,
                                 length: int | None = None,
                                 return_weights: bool = False):
    """softmax(q k^T * scale) v for one head.

    q: (n, d_k), k: (m, d_k), v: (m, d_v).  ``scale`` defaults to
    1/sqrt(d_k).  If ``length`` is given, keys/values past that index are
    masked out of the softmax (ragged sequences).
    """
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise DimensionError("attention operands must be 2-d")
    if q.shape[1] != k.shape[1]:
        raise DimensionError(f"query dim {q.shape[1]} != key dim {k.shape[1]}")
    if k.shape[0] != v.shape[0]:
        raise DimensionError(f"key count {k.shape[0]} != value count {v.shape[0]}")
    if scale is None:
        scale = 1.0 / math.sqrt(q.shape[1])
    scores = T.scale(q @ T.transpose2d(k), scale)
    if length is not None:
        m = k.shape[0]
        if not 0 < length <= m:
            raise ContractError(f"length {length} out of range for {m} keys")
        if length < m:
            mask = np.zeros((q.shape[0], m), dtype=q.dtype)
            mask[:, length:] = MASK_VALUE
            scores = scores + Tensor(mask)
    weights = T.softmax_rows(scores)
    out = weights @ v
    if return_weights:
        return out, weights
    return out


@dataclass
class AttentionParams:
    """Per-head projections plus the shared output projection.

    wq/wk: (f, d_qk) per head, wv: (f, d_v) per head,
    w_out: (heads * d_v, out_dim).
    """
    wq: list
    wk: list
    wv: list
    w_out: Tensor

    def __post_init__(self):
        h = len(self.wq)
        if h == 0 or len(self.wk) != h or len(self.wv) != h:
            raise ContractError("attention needs the same (nonzero) number of q/k/v projections")
        f = self.wq[0].shape[0]
        d_qk = self.wq[0].shape[1]
        d_v = self.wv[0].shape[1]
        for m in self.wq + self.wk:
            if m.shape != (f, d_qk):
                raise DimensionError(f"q/k projection shape {m.shape}, expected {(f, d_qk)}")
        for m in self.wv:
            if m.shape != (f, d_v):
                raise DimensionError(f"v projection shape {m.shape}, expected {(f, d_v)}")
        if self.w_out.shape[0] != h * d_v:
            raise DimensionError(
                f"output projection rows {self.w_out.shape[0]} != heads*d_v = {h * d_v}")

    @property
    def heads(self) -> int:
        return len(self.wq)

    @classmethod
    def init(cls, rng: np.random.Generator, f: int, heads: int,
             d_qk: int | None = None, d_v: int | None = None,
             out_dim: int | None = None, dtype=T.DEFAULT_DTYPE) -> "AttentionParams":
        """Glorot-initialized parameters; head dims default to f // heads."""
        if d_qk is None or d_v is None:
            if f % heads != 0:
                raise ContractError(f"embed dim {f} not divisible by {heads} heads")
        d_qk = d_qk or f // heads
        d_v = d_v or f // heads
        out_dim = out_dim or f
        mk = lambda fi, fo: T.param(T.glorot_uniform(rng, (fi, fo), fi, fo, dtype))
        return cls(wq=[mk(f, d_qk) for _ in range(heads)],
                   wk=[mk(f, d_qk) for _ in range(heads)],
                   wv=[mk(f, d_v) for _ in range(heads)],
                   w_out=mk(heads * d_v, out_dim))

    def named_params(self, prefix: str = "attn"):
        for i in range(self.heads):
            yield f"{prefix}.h{i}.wq", self.wq[i]
            yield f"{prefix}.h{i}.wk", self.wk[i]
            yield f"{prefix}.h{i}.wv", self.wv[i]
        yield f"{prefix}.w_out", self.w_out


def multi_head_attention(x: Tensor, params: AttentionParams,
                         length: int | None = None) -> Tensor:
    """Concatenate per-head attention outputs and project: (n, f) -> (n, out)."""
    if x.ndim != 2:
        raise DimensionError(f"multi_head_attention: expected 2-d input, got {x.shape}")
    if x.shape[1] != params.wq[0].shape[0]:
        raise DimensionError(
            f"input dim {x.shape[1]} != projection dim {params.wq[0].shape[0]}")
    heads = []
    for wq, wk, wv in zip(params.wq, params.wk, params.wv):
        heads.append(scaled_dot_product_attention(x @ wq, x @ wk, x @ wv, length=length))
    return T.concat(heads, axis=1) @ params.w_out


@dataclass
class EncoderBlockParams:
    """One pre-norm encoder block (attention + feed-forward sublayers)."""
    attn: AttentionParams
    pos_table: Tensor          # (n_max, f) learned position embeddings
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    ff_w1: Tensor              # (f, f_ff)
    ff_b1: Tensor
    ff_w2: Tensor              # (f_ff, f)
    ff_b2: Tensor
    use_pos: bool = True

    def __post_init__(self):
        f = self.pos_table.shape[1]
        if self.ff_w1.shape[0] != f or self.ff_w2.shape[1] != f:
            raise DimensionError("feed-forward dims must match embed dim on both ends")
        if self.ff_w1.shape[1] != self.ff_w2.shape[0]:
            raise DimensionError("feed-forward hidden dims disagree")
        if self.attn.w_out.shape[1] != f:
            raise DimensionError("attention output dim must equal embed dim for the residual")

    @property
    def n_max(self) -> int:
        return self.pos_table.shape[0]

    @classmethod
    def init(cls, rng: np.random.Generator, f: int, heads: int, n_max: int,
             ff_dim: int | None = None, use_pos: bool = True,
             residual_scale: float = 0.1,
             dtype=T.DEFAULT_DTYPE) -> "EncoderBlockParams":
        """Glorot init with the two residual-branch output projections scaled
        down by ``residual_scale`` so a fresh block starts close to the
        identity map (stabilizes fine-tuning stacks built on top of it)."""
        ff_dim = ff_dim or 2 * f
        mk = lambda fi, fo: T.param(T.glorot_uniform(rng, (fi, fo), fi, fo, dtype))
        attn = AttentionParams.init(rng, f, heads, out_dim=f, dtype=dtype)
        attn.w_out.data *= residual_scale
        return cls(
            attn=attn,
            pos_table=T.param((0.02 * rng.standard_normal((n_max, f))).astype(dtype)),
            ln1_gain=T.param(np.ones(f, dtype=dtype)),
            ln1_bias=T.param(np.zeros(f, dtype=dtype)),
            ln2_gain=T.param(np.ones(f, dtype=dtype)),
            ln2_bias=T.param(np.zeros(f, dtype=dtype)),
            ff_w1=mk(f, ff_dim),
            ff_b1=T.param(np.zeros(ff_dim, dtype=dtype)),
            ff_w2=T.param(residual_scale * T.glorot_uniform(rng, (ff_dim, f), ff_dim, f, dtype)),
            ff_b2=T.param(np.zeros(f, dtype=dtype)),
            use_pos=use_pos,
        )

    def named_params(self, prefix: str = "seq"):
        yield from self.attn.named_params(prefix + ".attn")
        yield f"{prefix}.pos_table", self.pos_table
        yield f"{prefix}.ln1_gain", self.ln1_gain
        yield f"{prefix}.ln1_bias", self.ln1_bias
        yield f"{prefix}.ln2_gain", self.ln2_gain
        yield f"{prefix}.ln2_bias", self.ln2_bias
        yield f"{prefix}.ff_w1", self.ff_w1
        yield f"{prefix}.ff_b1", self.ff_b1
        yield f"{prefix}.ff_w2", self.ff_w2
        yield f"{prefix}.ff_b2", self.ff_b2


def encoder_block_forward(x: Tensor, params: EncoderBlockParams,
                          positions=None, length: int | None = None) -> Tensor:
    """Apply the pre-norm encoder block to a sequence of embeddings.

    x: (n, f).  ``positions`` are integer indices into the position table,
    defaulting to 0..n-1; a sequence longer than the table raises
    CapacityError.  Output keeps shape (n, f).
    """
    if x.ndim != 2:
        raise DimensionError(f"encoder block: expected 2-d input, got {x.shape}")
    n = x.shape[0]
    if positions is None:
        positions = np.arange(n)
    positions = np.asarray(positions, dtype=np.int64)
    if positions.shape != (n,):
        raise DimensionError(f"positions shape {positions.shape}, expected ({n},)")
    if params.use_pos:
        if positions.size and positions.max() >= params.n_max:
            raise CapacityError(
                f"position {int(positions.max())} exceeds table size {params.n_max}")
        h = x + T.take_rows(params.pos_table, positions)
    else:
        h = x
    a = h + multi_head_attention(
        T.layernorm_rows(h, params.ln1_gain, params.ln1_bias), params.attn, length=length)
    ff_in = T.layernorm_rows(a, params.ln2_gain, params.ln2_bias)
    ff = T.add_rowvec(T.relu(T.add_rowvec(ff_in @ params.ff_w1, params.ff_b1)) @ params.ff_w2,
                      params.ff_b2)
    return a + ff
