"""Graph convolutions over a learned joint graph, and a Graph U-Net.

The adjacency is a free parameter: raw values pass through softplus (strict
positivity), the identity is added for self-loops, and the result is
symmetrically normalized by node degree.  The U-Net lifts 2D joint positions
(21 x 2) to 3D (21 x 3) through a pool/unpool hierarchy with additive skip
connections; node count changes use learned dense projection matrices.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ContractError, DimensionError, Tensor

# raw value r with softplus(r) = 0.5, used as the uniform adjacency init
RAW_HALF = math.log(math.expm1(0.5))


@dataclass
class LearnableAdjacency:
    """Free K x K adjacency parameter (pre-softplus)."""
    raw: Tensor

    def __post_init__(self):
        if self.raw.ndim != 2 or self.raw.shape[0] != self.raw.shape[1]:
            raise DimensionError(f"adjacency must be square, got {self.raw.shape}")

    @property
    def k(self) -> int:
        return self.raw.shape[0]

    @classmethod
    def init(cls, k: int, dtype=T.DEFAULT_DTYPE) -> "LearnableAdjacency":
        """Uniform start: every directed edge strength softplus(raw) = 0.5."""
        return cls(raw=T.param(np.full((k, k), RAW_HALF, dtype=dtype)))


def normalize_adjacency(adj: LearnableAdjacency) -> Tensor:
    """Degree-normalized adjacency with self-loops.

    A_hat = softplus(raw) + I;  D = diag(row sums of A_hat);
    returns D^(-1/2) A_hat D^(-1/2).  Differentiable w.r.t. raw; all entries
    are strictly positive so the normalization is always defined.
    """
    k = adj.k
    eye = Tensor(np.eye(k, dtype=adj.raw.dtype))
    a_hat = T.softplus(adj.raw) + eye
    deg = T.reduce_sum(a_hat, axes=1, keepdims=True)          # (k, 1)
    inv_sqrt = T.reciprocal(T.sqrt(deg))
    return T.mul(a_hat, inv_sqrt @ T.transpose2d(inv_sqrt))


@dataclass
class GCLayerParams:
    """One graph convolution: activation(A_norm @ x @ w)."""
    w: Tensor
    activation: str = "relu"

    def __post_init__(self):
        if self.w.ndim != 2:
            raise DimensionError(f"gc weight must be 2-d, got {self.w.shape}")
        if self.activation not in ("relu", "identity"):
            raise ContractError(f"unknown activation '{self.activation}'")

    @classmethod
    def init(cls, rng, f_in: int, f_out: int, activation: str = "relu",
             dtype=T.DEFAULT_DTYPE) -> "GCLayerParams":
        return cls(w=T.param(T.glorot_uniform(rng, (f_in, f_out), f_in, f_out, dtype)),
                   activation=activation)


def gc_layer_forward(x: Tensor, a_norm: Tensor, params: GCLayerParams) -> Tensor:
    """x: (k, f_in) -> (k, f_out) through the normalized adjacency."""
    if x.shape[0] != a_norm.shape[0]:
        raise DimensionError(f"gc layer: {x.shape[0]} nodes vs {a_norm.shape[0]} adjacency")
    out = (a_norm @ x) @ params.w
    if params.activation == "relu":
        out = T.relu(out)
    return out


def graph_pool(x: Tensor, p: Tensor) -> Tensor:
    """Reduce node count with a learned projection: (k, f) -> (k', f), k' < k."""
    if p.shape[1] != x.shape[0]:
        raise DimensionError(f"pool: projection {p.shape} does not fit {x.shape[0]} nodes")
    if p.shape[0] >= p.shape[1]:
        raise ContractError(f"pool must reduce node count, got {p.shape}")
    return p @ x


def graph_unpool(x: Tensor, u: Tensor) -> Tensor:
    """Expand node count with a learned projection: (k', f) -> (k, f), k > k'."""
    if u.shape[1] != x.shape[0]:
        raise DimensionError(f"unpool: projection {u.shape} does not fit {x.shape[0]} nodes")
    if u.shape[0] <= u.shape[1]:
        raise ContractError(f"unpool must increase node count, got {u.shape}")
    return u @ x


@dataclass
class GraphUNetParams:
    """Encoder/decoder graph convolution stack with one adjacency per resolution.

    ``nodes`` is the strictly decreasing resolution schedule (first entry is
    the joint count); ``enc`` / ``dec`` hold one GC layer per non-bottom
    level, ``bottleneck`` operates at the smallest resolution.  Skip
    connections add encoder outputs to decoder inputs at matching
    resolution and width.
    """
    nodes: list
    adjacencies: list          # LearnableAdjacency per entry of nodes
    enc: list                  # GCLayerParams, level i: width[i-1] -> width[i]
    pools: list                # Tensor (nodes[i+1], nodes[i])
    bottleneck: GCLayerParams
    unpools: list              # Tensor (nodes[i], nodes[i+1])
    dec: list                  # GCLayerParams mirroring enc
    out_dim: int = 3

    def __post_init__(self):
        n = self.nodes
        if len(n) < 2:
            raise ContractError("node schedule needs at least two levels")
        for a, b in zip(n, n[1:]):
            if b >= a:
                raise ContractError(f"node schedule must strictly decrease, got {n}")
        levels = len(n) - 1
        if not (len(self.enc) == len(self.dec) == len(self.pools)
                == len(self.unpools) == levels):
            raise ContractError("per-level parameter lists disagree with node schedule")
        if len(self.adjacencies) != len(n):
            raise ContractError("need one adjacency per node resolution")
        for adj, k in zip(self.adjacencies, n):
            if adj.k != k:
                raise DimensionError(f"adjacency size {adj.k} != resolution {k}")

    @property
    def joint_count(self) -> int:
        return self.nodes[0]

    @classmethod
    def init(cls, rng, nodes, widths, in_dim: int = 2, out_dim: int = 3,
             dtype=T.DEFAULT_DTYPE) -> "GraphUNetParams":
        """Build the hierarchy for a node schedule and per-level widths.

        ``widths[i]`` is the encoder output width at resolution ``nodes[i]``;
        the bottleneck keeps the last width.  The decoder mirrors widths back
        down and the final layer maps to ``out_dim`` with identity activation.
        """
        nodes = list(nodes)
        widths = list(widths)
        if len(widths) != len(nodes) - 1:
            raise ContractError(
                f"need one width per non-bottom level: {len(nodes) - 1}, got {len(widths)}")
        levels = len(nodes) - 1
        enc, dec, pools, unpools = [], [], [], []
        prev = in_dim
        for i in range(levels):
            enc.append(GCLayerParams.init(rng, prev, widths[i], "relu", dtype))
            prev = widths[i]
            scale_p = 1.0 / math.sqrt(nodes[i])
            scale_u = 1.0 / math.sqrt(nodes[i + 1])
            pools.append(T.param(
                (scale_p * rng.standard_normal((nodes[i + 1], nodes[i]))).astype(dtype)))
            unpools.append(T.param(
                (scale_u * rng.standard_normal((nodes[i], nodes[i + 1]))).astype(dtype)))
        bottleneck = GCLayerParams.init(rng, widths[-1], widths[-1], "relu", dtype)
        for i in range(levels - 1, -1, -1):
            target = out_dim if i == 0 else widths[i - 1]
            act = "identity" if i == 0 else "relu"
            dec.append(GCLayerParams.init(rng, widths[i], target, act, dtype))
        dec.reverse()
        adjacencies = [LearnableAdjacency.init(k, dtype) for k in nodes]
        return cls(nodes=nodes, adjacencies=adjacencies, enc=enc, pools=pools,
                   bottleneck=bottleneck, unpools=unpools, dec=dec, out_dim=out_dim)

    def named_params(self, prefix: str = "lifter"):
        for i, adj in enumerate(self.adjacencies):
            yield f"{prefix}.adj{i}.raw", adj.raw
        for i, layer in enumerate(self.enc):
            yield f"{prefix}.enc{i}.w", layer.w
        for i, p in enumerate(self.pools):
            yield f"{prefix}.pool{i}", p
        yield f"{prefix}.bottleneck.w", self.bottleneck.w
        for i, u in enumerate(self.unpools):
            yield f"{prefix}.unpool{i}", u
        for i, layer in enumerate(self.dec):
            yield f"{prefix}.dec{i}.w", layer.w


def normalized_adjacencies(params: GraphUNetParams) -> list:
    """Normalize every resolution's adjacency once (reusable within a batch)."""
    return [normalize_adjacency(a) for a in params.adjacencies]


def graph_unet_forward(z: Tensor, params: GraphUNetParams,
                       norm_cache: list | None = None) -> Tensor:
    """Lift per-joint features (nodes[0], in_dim) to (nodes[0], out_dim).

    ``norm_cache`` may hold precomputed normalized adjacencies (from
    ``normalized_adjacencies``) so one normalization serves many frames.
    """
    if z.shape[0] != params.nodes[0]:
        raise DimensionError(f"expected {params.nodes[0]} nodes, got {z.shape[0]}")
    a_norm = norm_cache if norm_cache is not None else normalized_adjacencies(params)
    levels = len(params.nodes) - 1
    skips = []
    h = z
    for i in range(levels):
        h = gc_layer_forward(h, a_norm[i], params.enc[i])
        skips.append(h)
        h = graph_pool(h, params.pools[i])
    h = gc_layer_forward(h, a_norm[levels], params.bottleneck)
    for i in range(levels - 1, -1, -1):
        h = graph_unpool(h, params.unpools[i])
        h = h + skips[i]
        h = gc_layer_forward(h, a_norm[i], params.dec[i])
    return h
