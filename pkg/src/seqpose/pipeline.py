"""End-to-end pose pipeline: image encoder, sequence model, 2D head, 3D lifter.

Per frame, a small strided conv encoder produces an embedding; a transformer
encoder block mixes the N frame embeddings of a sequence into context
vectors; an MLP regresses 21 2D joints from each context vector; a Graph
U-Net lifts each 2D pose to 3D.  The single-frame ablation path replaces
the transformer with a per-frame fully connected bridge.

Training runs in two stages: stage 1 trains encoder + bridge + head +
lifter on individual frames (weighted 2D loss plus 3D loss); stage 2
freezes the image encoder bit-exactly, trains the transformer from fresh
initialization and fine-tunes head + lifter on whole sequences (3D loss).
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .attention import EncoderBlockParams, encoder_block_forward
from .data import HandSequenceSample, JOINT_COUNT
from .graph import (GraphUNetParams, graph_pool, graph_unpool,
                    graph_unet_forward, normalized_adjacencies)
from .metrics import PckCurve, auc as curve_auc, epe as epe_metric, pck_curve
from .tensor import ContractError, DimensionError, Tensor


class DivergenceError(RuntimeError):
    """Training loss became non-finite or exploded past the guard factor."""


DIVERGENCE_FACTOR = 1e3


# ----------------------------------------------------------------- config

@dataclass
class ModelConfig:
    """Architecture and optimizer settings (flat, file-serializable)."""
    n_frames: int = 5
    img_h: int = 32
    img_w: int = 32
    embed_dim: int = 64          # per-frame embedding width f
    ctx_dim: int = 64            # context width L (must equal embed_dim)
    heads: int = 8
    ff_dim: int = 0              # 0 -> 2 * embed_dim
    pos_table_size: int = 16
    use_pos: bool = True
    conv_channels: tuple = (8, 16, 32, 64)
    conv_kernel: int = 3
    conv_stride: int = 2
    head_hidden: int = 128
    unet_nodes: tuple = (21, 12, 6, 3)
    unet_widths: tuple = (32, 64, 128)
    unet_shared: bool = True
    joints: int = JOINT_COUNT
    alpha: float = 0.1
    loss_reduction: str = "mean"
    batch_size: int = 8
    step1_batch: int = 0         # 0 -> batch_size
    step2_batch: int = 0         # 0 -> batch_size
    seed: int = 1
    step1_lr: float = 0.001
    step1_decay: float = 0.1
    step1_decay_every: int = 100
    step1_decay_unit: str = "epoch"
    step1_steps: int = 2000
    step1_stop_loss: float = 0.0
    step2_lr: float = 0.001
    step2_decay: float = 0.9
    step2_decay_every: int = 100
    step2_decay_unit: str = "epoch"
    step2_steps: int = 2000
    step2_stop_epe: float = 0.0
    step2_reinit_head: bool = False

    def __post_init__(self):
        self.conv_channels = tuple(self.conv_channels)
        self.unet_nodes = tuple(self.unet_nodes)
        self.unet_widths = tuple(self.unet_widths)
        self.validate()

    def validate(self):
        if self.joints != JOINT_COUNT:
            raise ContractError(f"joint count is fixed at {JOINT_COUNT}")
        if self.ctx_dim != self.embed_dim:
            raise ContractError(
                "ctx_dim must equal embed_dim (residual connections in the "
                "sequence encoder tie the two widths together)")
        if self.embed_dim % self.heads != 0:
            raise ContractError(f"embed_dim {self.embed_dim} not divisible by "
                                f"{self.heads} heads")
        if self.n_frames < 1:
            raise ContractError("n_frames must be positive")
        if self.use_pos and self.pos_table_size < self.n_frames:
            raise ContractError(f"position table ({self.pos_table_size}) shorter "
                                f"than sequences ({self.n_frames})")
        if not self.unet_shared:
            raise ContractError("per-frame lifter weights are reserved but not "
                                "implemented; unet_shared must stay true")
        if self.unet_nodes[0] != self.joints:
            raise ContractError("lifter schedule must start at the joint count")
        if self.alpha < 0:
            raise ContractError("alpha must be non-negative")
        if self.loss_reduction not in ("mean", "sum"):
            raise ContractError(f"unknown loss_reduction '{self.loss_reduction}'")
        if len(self.conv_channels) < 1:
            raise ContractError("need at least one conv stage")
        for name in ("step1", "step2"):
            if getattr(self, f"{name}_lr") <= 0:
                raise ContractError(f"{name}_lr must be positive")
            if not 0 < getattr(self, f"{name}_decay") <= 1:
                raise ContractError(f"{name}_decay must lie in (0, 1]")
            if getattr(self, f"{name}_decay_every") < 1:
                raise ContractError(f"{name}_decay_every must be positive")
            if getattr(self, f"{name}_decay_unit") not in ("epoch", "step"):
                raise ContractError(f"{name}_decay_unit must be 'epoch' or 'step'")
            if getattr(self, f"{name}_steps") < 0:
                raise ContractError(f"{name}_steps must be non-negative")

    def ff_width(self) -> int:
        return self.ff_dim if self.ff_dim else 2 * self.embed_dim


def reduced_config(**overrides) -> ModelConfig:
    """A small configuration for gradient checks and fast tests."""
    base = dict(n_frames=2, img_h=8, img_w=8, embed_dim=8, ctx_dim=8, heads=2,
                pos_table_size=4, conv_channels=(4,), head_hidden=16,
                unet_nodes=(21, 4), unet_widths=(6,), batch_size=4)
    base.update(overrides)
    return ModelConfig(**base)


# ------------------------------------------------------------- parameters

@dataclass
class ConvEncoderParams:
    """Strided conv stack plus a linear map from pooled features to f."""
    conv_w: list
    conv_b: list
    lin_w: Tensor
    lin_b: Tensor

    @classmethod
    def init(cls, rng, in_ch: int, channels, kernel: int, embed_dim: int,
             dtype=T.DEFAULT_DTYPE) -> "ConvEncoderParams":
        conv_w, conv_b = [], []
        prev = in_ch
        for ch in channels:
            fan_in = prev * kernel * kernel
            fan_out = ch * kernel * kernel
            conv_w.append(T.param(T.glorot_uniform(
                rng, (ch, prev, kernel, kernel), fan_in, fan_out, dtype)))
            conv_b.append(T.param(np.zeros(ch, dtype=dtype)))
            prev = ch
        lin_w = T.param(T.glorot_uniform(rng, (prev, embed_dim), prev, embed_dim, dtype))
        lin_b = T.param(np.zeros(embed_dim, dtype=dtype))
        return cls(conv_w=conv_w, conv_b=conv_b, lin_w=lin_w, lin_b=lin_b)

    def named_params(self, prefix: str = "encoder"):
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b)):
            yield f"{prefix}.conv{i}.w", w
            yield f"{prefix}.conv{i}.b", b
        yield f"{prefix}.lin.w", self.lin_w
        yield f"{prefix}.lin.b", self.lin_b


@dataclass
class ModelParams:
    """All trainable parameters plus the config they were built for."""
    cfg: ModelConfig
    encoder: ConvEncoderParams
    bridge_w: Tensor
    bridge_b: Tensor
    seq: EncoderBlockParams
    head_w1: Tensor
    head_b1: Tensor
    head_w2: Tensor
    head_b2: Tensor
    lifter: GraphUNetParams
    dtype: np.dtype = np.dtype(np.float32)
    stage: int = 0

    @classmethod
    def build(cls, cfg: ModelConfig, dtype=np.float32) -> "ModelParams":
        """Deterministic initialization from cfg.seed."""
        f = cfg.embed_dim
        mk_rng = lambda tag: np.random.default_rng([cfg.seed, tag])
        enc = ConvEncoderParams.init(mk_rng(1), 3, cfg.conv_channels,
                                     cfg.conv_kernel, f, dtype)
        rngb = mk_rng(2)
        # identity + noise: the stage-2 sequence encoder starts near the
        # identity map, so a near-identity bridge keeps the head's input
        # distribution consistent across the stage switch
        bridge_w = T.param(np.eye(f, cfg.ctx_dim, dtype=dtype)
                           + 0.1 * T.glorot_uniform(rngb, (f, cfg.ctx_dim), f, cfg.ctx_dim, dtype))
        bridge_b = T.param(np.zeros(cfg.ctx_dim, dtype=dtype))
        seq = EncoderBlockParams.init(mk_rng(3), f, cfg.heads, cfg.pos_table_size,
                                      cfg.ff_width(), use_pos=cfg.use_pos, dtype=dtype)
        rngh = mk_rng(4)
        hid, out = cfg.head_hidden, 2 * cfg.joints
        head_w1 = T.param(T.glorot_uniform(rngh, (cfg.ctx_dim, hid), cfg.ctx_dim, hid, dtype))
        head_b1 = T.param(np.zeros(hid, dtype=dtype))
        head_w2 = T.param(T.glorot_uniform(rngh, (hid, out), hid, out, dtype))
        head_b2 = T.param(np.full(out, (cfg.img_w - 1) / 2.0, dtype=dtype))
        lifter = GraphUNetParams.init(mk_rng(5), cfg.unet_nodes, cfg.unet_widths,
                                      in_dim=2, out_dim=3, dtype=dtype)
        return cls(cfg=cfg, encoder=enc, bridge_w=bridge_w, bridge_b=bridge_b,
                   seq=seq, head_w1=head_w1, head_b1=head_b1, head_w2=head_w2,
                   head_b2=head_b2, lifter=lifter, dtype=np.dtype(dtype))

    def reinit_seq(self):
        """Fresh transformer parameters (used at the start of stage 2)."""
        cfg = self.cfg
        self.seq = EncoderBlockParams.init(
            np.random.default_rng([cfg.seed, 23]), cfg.embed_dim, cfg.heads,
            cfg.pos_table_size, cfg.ff_width(), use_pos=cfg.use_pos, dtype=self.dtype)

    def reinit_head_lifter(self):
        cfg = self.cfg
        rngh = np.random.default_rng([cfg.seed, 24])
        hid, out = cfg.head_hidden, 2 * cfg.joints
        self.head_w1 = T.param(T.glorot_uniform(rngh, (cfg.ctx_dim, hid), cfg.ctx_dim, hid, self.dtype))
        self.head_b1 = T.param(np.zeros(hid, dtype=self.dtype))
        self.head_w2 = T.param(T.glorot_uniform(rngh, (hid, out), hid, out, self.dtype))
        self.head_b2 = T.param(np.full(out, (cfg.img_w - 1) / 2.0, dtype=self.dtype))
        self.lifter = GraphUNetParams.init(np.random.default_rng([cfg.seed, 25]),
                                           cfg.unet_nodes, cfg.unet_widths,
                                           in_dim=2, out_dim=3, dtype=self.dtype)

    # -- parameter groups ---------------------------------------------
    def encoder_params(self) -> dict:
        return dict(self.encoder.named_params())

    def head_params(self) -> dict:
        return {"head.w1": self.head_w1, "head.b1": self.head_b1,
                "head.w2": self.head_w2, "head.b2": self.head_b2}

    def bridge_params(self) -> dict:
        return {"bridge.w": self.bridge_w, "bridge.b": self.bridge_b}

    def named_params(self) -> dict:
        out = dict(self.encoder.named_params())
        out.update(self.bridge_params())
        out.update(self.seq.named_params())
        out.update(self.head_params())
        out.update(self.lifter.named_params())
        return out

    def step1_params(self) -> dict:
        out = dict(self.encoder.named_params())
        out.update(self.bridge_params())
        out.update(self.head_params())
        out.update(self.lifter.named_params())
        return out

    def step2_params(self) -> dict:
        out = dict(self.seq.named_params())
        if not self.cfg.use_pos:
            out.pop("seq.pos_table")
        out.update(self.head_params())
        out.update(self.lifter.named_params())
        return out

    def param_count(self) -> int:
        return sum(p.size for p in self.named_params().values())


# ---------------------------------------------------------------- forward

def _const(model: ModelParams, arr: np.ndarray) -> Tensor:
    return Tensor(np.asarray(arr, dtype=model.dtype))


def image_encode(frame, model: ModelParams) -> Tensor:
    """One frame (3, h, w) -> one embedding row (1, f)."""
    cfg = model.cfg
    x = frame if isinstance(frame, Tensor) else _const(model, frame)
    if x.shape != (3, cfg.img_h, cfg.img_w):
        raise DimensionError(f"expected frame (3, {cfg.img_h}, {cfg.img_w}), got {x.shape}")
    pad = cfg.conv_kernel // 2
    for w, b in zip(model.encoder.conv_w, model.encoder.conv_b):
        x = T.relu(T.conv2d(x, w, b, stride=cfg.conv_stride, padding=pad))
    pooled = T.reshape(T.reduce_mean(x, axes=(1, 2)), (1, x.shape[0]))
    return T.add_rowvec(pooled @ model.encoder.lin_w, model.encoder.lin_b)


def joints2d_head(ctx: Tensor, model: ModelParams) -> Tensor:
    """One context row (1, L) -> 2D joint estimate (21, 2) in pixels."""
    h = T.relu(T.add_rowvec(ctx @ model.head_w1, model.head_b1))
    out = T.add_rowvec(h @ model.head_w2, model.head_b2)
    return T.reshape(out, (model.cfg.joints, 2))


def lifter_input(z: Tensor, model: ModelParams) -> Tensor:
    """Map pixel coordinates to roughly [-1, 1] before the graph net.

    The lifter's targets live in normalized bone-length units (order one);
    feeding it raw pixel values would force the first layer to absorb a
    ~img_w/2 scale factor.
    """
    half = (model.cfg.img_w - 1) / 2.0
    return T.scale(z - half, 1.0 / half)


def lift_to_3d(z: Tensor, model: ModelParams, norm_cache=None) -> Tensor:
    return graph_unet_forward(lifter_input(z, model), model.lifter,
                              norm_cache=norm_cache)


def forward_ablation(frame, model: ModelParams, norm_cache=None):
    """Single-frame path: conv encoder -> FC bridge -> 2D head -> lifter."""
    e = image_encode(frame, model)
    ctx = T.add_rowvec(e @ model.bridge_w, model.bridge_b)
    z = joints2d_head(ctx, model)
    p = lift_to_3d(z, model, norm_cache=norm_cache)
    return z, p


def forward_full(frames, model: ModelParams, norm_cache=None, embeds=None):
    """Sequence path: returns per-frame ([2D tensors], [3D tensors]).

    ``frames`` is (N, 3, h, w); ``embeds`` may supply precomputed embedding
    rows (N, f) to skip the conv encoder (stage-2 caching, valid while the
    encoder is frozen).
    """
    cfg = model.cfg
    if embeds is not None:
        x = embeds if isinstance(embeds, Tensor) else _const(model, embeds)
        n = x.shape[0]
    else:
        n = len(frames)
        rows = [image_encode(frames[t], model) for t in range(n)]
        x = T.concat(rows, axis=0)
    if n != cfg.n_frames:
        raise DimensionError(f"expected {cfg.n_frames} frames, got {n}")
    ctx = encoder_block_forward(x, model.seq, positions=np.arange(n))
    if norm_cache is None:
        norm_cache = normalized_adjacencies(model.lifter)
    z_list, p_list = [], []
    for t in range(n):
        z = joints2d_head(T.take_rows(ctx, [t]), model)
        z_list.append(z)
        p_list.append(lift_to_3d(z, model, norm_cache=norm_cache))
    return z_list, p_list


def predict_sequence(frames, model: ModelParams, ablation: bool = False):
    """Numpy predictions for one sequence: (pred2d (N,21,2), pred3d (N,21,3))."""
    with T.no_grad():
        if ablation:
            cache = normalized_adjacencies(model.lifter)
            pairs = [forward_ablation(frames[t], model, norm_cache=cache)
                     for t in range(len(frames))]
            z_list = [z for z, _ in pairs]
            p_list = [p for _, p in pairs]
        else:
            z_list, p_list = forward_full(frames, model)
    return (np.stack([z.numpy() for z in z_list]),
            np.stack([p.numpy() for p in p_list]))


# ------------------------------------------------ batched training forward
#
# The reference paths above process one pose at a time through the lifter.
# Training instead stacks the whole batch along the feature axis: node-axis
# operators (adjacency matmul, pooling, unpooling) act identically on every
# pose, and the per-pose weight multiplication folds the block structure
# into the row axis via reshape.  One graph pass then serves the entire
# batch, which matters because each pass costs a fixed tape overhead.

_PERM_CACHE: dict = {}


def _pose_perm(n_poses: int, joints: int) -> np.ndarray:
    """Row permutation taking (pose, joint)-ordered rows to (joint, pose)."""
    key = (n_poses, joints)
    if key not in _PERM_CACHE:
        b = np.arange(n_poses)
        j = np.arange(joints)
        _PERM_CACHE[key] = (b[None, :] * joints + j[:, None]).reshape(-1)
    return _PERM_CACHE[key]


def _gc_blocked(x: Tensor, a_norm: Tensor, layer, n_poses: int) -> Tensor:
    """Graph convolution over ``n_poses`` stacked poses: (k, B*f) -> (k, B*f')."""
    k = x.shape[0]
    f_in, f_out = layer.w.shape
    h = a_norm @ x
    h = T.reshape(T.reshape(h, (k * n_poses, f_in)) @ layer.w,
                  (k, n_poses * f_out))
    if layer.activation == "relu":
        h = T.relu(h)
    return h


def _unet_blocked(zcat: Tensor, model: ModelParams, n_poses: int,
                  norm_cache) -> Tensor:
    """Stacked lifter: (joints, B*2) -> (joints*B, out_dim), rows (joint, pose)."""
    params = model.lifter
    a_norm = norm_cache if norm_cache is not None else normalized_adjacencies(params)
    levels = len(params.nodes) - 1
    skips = []
    h = zcat
    for i in range(levels):
        h = _gc_blocked(h, a_norm[i], params.enc[i], n_poses)
        skips.append(h)
        h = graph_pool(h, params.pools[i])
    h = _gc_blocked(h, a_norm[levels], params.bottleneck, n_poses)
    for i in range(levels - 1, -1, -1):
        h = graph_unpool(h, params.unpools[i])
        h = h + skips[i]
        h = _gc_blocked(h, a_norm[i], params.dec[i], n_poses)
    return T.reshape(h, (params.nodes[0] * n_poses, params.out_dim))


def _heads_batch(ctx: Tensor, model: ModelParams) -> Tensor:
    """2D head over many context rows at once: (B, L) -> (B, 2*joints)."""
    h = T.relu(T.add_rowvec(ctx @ model.head_w1, model.head_b1))
    return T.add_rowvec(h @ model.head_w2, model.head_b2)


def _lift_batch(h42: Tensor, model: ModelParams, norm_cache=None):
    """Head outputs (B, 2*joints) -> (2D rows (pose, joint), 3D rows (joint, pose))."""
    n_poses = h42.shape[0]
    j = model.cfg.joints
    z_flat = T.reshape(h42, (n_poses * j, 2))
    z_jb = T.take_rows(z_flat, _pose_perm(n_poses, j))
    zcat = lifter_input(T.reshape(z_jb, (j, n_poses * 2)), model)
    return z_flat, _unet_blocked(zcat, model, n_poses, norm_cache)


def _gt_rows_2d(gt2_stack: np.ndarray, dtype) -> np.ndarray:
    """(B, j, 2) ground truth -> (B*j, 2) rows ordered (pose, joint)."""
    return np.ascontiguousarray(gt2_stack.reshape(-1, 2), dtype=dtype)


def _gt_rows_3d(gt3_stack: np.ndarray, dtype) -> np.ndarray:
    """(B, j, 3) ground truth -> (j*B, 3) rows ordered (joint, pose)."""
    return np.ascontiguousarray(
        gt3_stack.transpose(1, 0, 2).reshape(-1, 3), dtype=dtype)


def _unstack_3d(p_flat: np.ndarray, n_poses: int, joints: int) -> np.ndarray:
    """(joints*B, 3) rows (joint, pose) -> (B, joints, 3)."""
    return p_flat.reshape(joints, n_poses, 3).transpose(1, 0, 2)


def _predict_many(model: ModelParams, samples, ablation: bool = False,
                  embeds_list=None):
    """Batched no-grad predictions: (S, N, 21, 2) and (S, N, 21, 3)."""
    cfg = model.cfg
    with T.no_grad():
        cache = normalized_adjacencies(model.lifter)
        if embeds_list is None:
            embeds_list = []
            for s in samples:
                rows = [image_encode(s.frames[t], model) for t in range(s.n_frames)]
                embeds_list.append(T.concat(rows, axis=0))
        else:
            embeds_list = [e if isinstance(e, Tensor) else _const(model, e)
                           for e in embeds_list]
        if ablation:
            ctx = T.concat([T.add_rowvec(e @ model.bridge_w, model.bridge_b)
                            for e in embeds_list], axis=0)
        else:
            ctx = T.concat([encoder_block_forward(e, model.seq,
                                                  positions=np.arange(e.shape[0]))
                            for e in embeds_list], axis=0)
        h42 = _heads_batch(ctx, model)
        _, p_flat = _lift_batch(h42, model, norm_cache=cache)
    n_total = h42.shape[0]
    pred2 = h42.numpy().reshape(len(samples), -1, cfg.joints, 2)
    pred3 = _unstack_3d(p_flat.numpy(), n_total, cfg.joints) \
        .reshape(len(samples), -1, cfg.joints, 3)
    return pred2, pred3


# ----------------------------------------------------------------- losses

def joint_loss(pred: Tensor, gt, model_dtype=np.float32, reduction: str = "mean") -> Tensor:
    """Euclidean distance per joint, reduced over joints (mean or sum)."""
    target = gt if isinstance(gt, Tensor) else Tensor(np.asarray(gt, dtype=model_dtype))
    if pred.shape != target.shape:
        raise DimensionError(f"loss shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    d2 = T.reduce_sum(T.square(diff), axes=1, keepdims=True)
    dist = T.sqrt(d2)
    if reduction == "sum":
        return T.reduce_sum(dist)
    return T.reduce_mean(dist)


def loss_step1(pred2d: Tensor, gt2d, pred3d: Tensor, gt3d, alpha: float,
               model_dtype=np.float32, reduction: str = "mean") -> Tensor:
    """Stage-1 frame loss: alpha * 2D distance + 3D distance."""
    l2 = joint_loss(pred2d, gt2d, model_dtype, reduction)
    l3 = joint_loss(pred3d, gt3d, model_dtype, reduction)
    return T.scale(l2, alpha) + l3


def loss_step2(pred3d_list, gt3d, model_dtype=np.float32,
               reduction: str = "mean") -> Tensor:
    """Stage-2 sequence loss: mean over frames of the 3D distance loss."""
    n = len(pred3d_list)
    if n == 0 or len(gt3d) != n:
        raise DimensionError(f"sequence length mismatch: {n} preds vs {len(gt3d)} targets")
    acc = joint_loss(pred3d_list[0], gt3d[0], model_dtype, reduction)
    for t in range(1, n):
        acc = acc + joint_loss(pred3d_list[t], gt3d[t], model_dtype, reduction)
    return T.scale(acc, 1.0 / n)


# -------------------------------------------------------------- optimizer

class Adam:
    """Adam with bias correction; parameters update in place."""

    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float | None = None):
        """One update; every managed parameter must hold a gradient."""
        rate = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                raise ContractError(f"missing gradient for parameter '{k}'")
            g = p.grad
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= (rate / c1) * m / (np.sqrt(v / c2) + self.eps)


# ----------------------------------------------------------------- training

def _schedule_rate(lr0: float, decay: float, every: int, unit: str,
                   step: int, steps_per_epoch: int) -> float:
    """Step-wise exponential decay counted in epochs or optimizer steps."""
    if unit == "epoch":
        k = (step // max(steps_per_epoch, 1)) // every
    else:
        k = step // every
    return lr0 * (decay ** k)


def _write_log(path, history):
    if path is None:
        return
    lines = ["step,loss,rate"]
    for step, loss, rate in history:
        lines.append(f"{step},{loss:.8f},{rate:.8g}")
    Path(path).write_text("\n".join(lines) + "\n")


def _guard(loss_val: float, initial: float, step: int):
    if not np.isfinite(loss_val):
        raise DivergenceError(f"non-finite loss at step {step}")
    if loss_val > DIVERGENCE_FACTOR * max(initial, 1e-12):
        raise DivergenceError(
            f"loss {loss_val:.4g} at step {step} exceeded {DIVERGENCE_FACTOR:.0g}x "
            f"the initial loss {initial:.4g}")


def train_step1(model: ModelParams, samples, log_path=None, progress=None):
    """Stage 1: per-frame supervision of encoder, bridge, head and lifter.

    Every frame of every training sequence is an independent sample.
    Returns the loss history [(step, loss, rate), ...]; mutates the model.
    """
    cfg = model.cfg
    frames, gt2, gt3 = [], [], []
    for s in samples:
        for t in range(s.n_frames):
            frames.append(s.frames[t])
            gt2.append(s.gt2d[t])
            gt3.append(s.gt3d[t])
    n = len(frames)
    if n == 0:
        raise ContractError("no training frames")
    gt2_arr = np.stack(gt2).astype(model.dtype)
    gt3_arr = np.stack(gt3).astype(model.dtype)
    bs = cfg.step1_batch or cfg.batch_size
    bs = bs if 0 < bs < n else n
    steps_per_epoch = max(n // bs, 1)
    rng = np.random.default_rng([cfg.seed, 77])
    opt = Adam(model.step1_params(), lr=cfg.step1_lr)
    history = []
    initial = None
    order = rng.permutation(n)
    cursor = 0
    for step in range(cfg.step1_steps):
        if cursor + bs > n:
            order = rng.permutation(n)
            cursor = 0
        batch = order[cursor:cursor + bs]
        cursor += bs
        rate = _schedule_rate(cfg.step1_lr, cfg.step1_decay, cfg.step1_decay_every,
                              cfg.step1_decay_unit, step, steps_per_epoch)
        opt.zero_grad()
        cache = normalized_adjacencies(model.lifter)
        embeds = T.concat([image_encode(frames[i], model) for i in batch], axis=0)
        ctx = T.add_rowvec(embeds @ model.bridge_w, model.bridge_b)
        h42 = _heads_batch(ctx, model)
        z_flat, p_flat = _lift_batch(h42, model, cache)
        l2 = joint_loss(z_flat, _gt_rows_2d(gt2_arr[batch], model.dtype),
                        model.dtype, cfg.loss_reduction)
        l3 = joint_loss(p_flat, _gt_rows_3d(gt3_arr[batch], model.dtype),
                        model.dtype, cfg.loss_reduction)
        if cfg.loss_reduction == "sum":
            l2 = T.scale(l2, 1.0 / len(batch))
            l3 = T.scale(l3, 1.0 / len(batch))
        loss = T.scale(l2, cfg.alpha) + l3
        loss_val = loss.item()
        if initial is None:
            initial = loss_val
        _guard(loss_val, initial, step + 1)
        loss.backward()
        opt.step(rate)
        history.append((step + 1, loss_val, rate))
        if progress:
            progress(step + 1, loss_val, rate)
        if cfg.step1_stop_loss > 0 and loss_val < cfg.step1_stop_loss:
            break
    model.stage = max(model.stage, 1)
    _write_log(log_path, history)
    return history


def _sequence_epe(model: ModelParams, samples, embeds=None) -> float:
    _, pred3 = _predict_many(model, samples, embeds_list=embeds)
    return epe_metric(pred3, np.stack([s.gt3d for s in samples]))


def train_step2(model: ModelParams, samples, log_path=None, progress=None,
                eval_every: int = 25):
    """Stage 2: sequence-level supervision with a frozen image encoder.

    Requires stage 1 to have run.  The transformer starts from fresh
    parameters; head and lifter continue from stage 1 (or restart when
    cfg.step2_reinit_head is set).  The encoder is excluded from the
    optimizer and its weights are verified bit-identical afterwards; frame
    embeddings are therefore constant and get precomputed once.
    """
    cfg = model.cfg
    if model.stage < 1:
        raise ContractError("stage 2 requires a stage-1 trained model")
    for s in samples:
        if s.n_frames != cfg.n_frames:
            raise ContractError(f"sample has {s.n_frames} frames, config expects "
                                f"{cfg.n_frames}")
    model.reinit_seq()
    if cfg.step2_reinit_head:
        model.reinit_head_lifter()
    elif model.stage == 1:
        # Fold the stage-1 bridge into the head's first layer.  The fresh
        # sequence encoder starts near the identity, so with the fold the
        # stage-2 pipeline begins as (almost exactly) the stage-1 function
        # and fine-tunes from there instead of re-learning the head's input
        # distribution.  The bridge itself keeps its weights for the
        # ablation path.
        w1 = model.bridge_w.data @ model.head_w1.data
        b1 = model.bridge_b.data @ model.head_w1.data + model.head_b1.data
        model.head_w1 = T.param(w1.astype(model.dtype))
        model.head_b1 = T.param(b1.astype(model.dtype))
    frozen = {k: p.data.copy() for k, p in model.encoder_params().items()}
    enc_params = list(model.encoder_params().values()) + list(model.bridge_params().values())
    for p in enc_params:
        p.requires_grad = False
    try:
        with T.no_grad():
            embeds = []
            for s in samples:
                rows = [image_encode(s.frames[t], model).numpy() for t in range(s.n_frames)]
                embeds.append(np.concatenate(rows, axis=0))
        n = len(samples)
        gt3_arr = np.stack([s.gt3d for s in samples]).astype(model.dtype)
        positions = np.arange(cfg.n_frames)
        bs = cfg.step2_batch or cfg.batch_size
        bs = bs if 0 < bs < n else n
        steps_per_epoch = max(n // bs, 1)
        rng = np.random.default_rng([cfg.seed, 78])
        opt = Adam(model.step2_params(), lr=cfg.step2_lr)
        history = []
        initial = None
        order = rng.permutation(n)
        cursor = 0
        for step in range(cfg.step2_steps):
            if cursor + bs > n:
                order = rng.permutation(n)
                cursor = 0
            batch = order[cursor:cursor + bs]
            cursor += bs
            rate = _schedule_rate(cfg.step2_lr, cfg.step2_decay, cfg.step2_decay_every,
                                  cfg.step2_decay_unit, step, steps_per_epoch)
            opt.zero_grad()
            cache = normalized_adjacencies(model.lifter)
            ctx = T.concat([encoder_block_forward(_const(model, embeds[i]), model.seq,
                                                  positions=positions)
                            for i in batch], axis=0)
            h42 = _heads_batch(ctx, model)
            _, p_flat = _lift_batch(h42, model, cache)
            gt_flat = _gt_rows_3d(gt3_arr[batch].reshape(-1, cfg.joints, 3), model.dtype)
            loss = joint_loss(p_flat, gt_flat, model.dtype, cfg.loss_reduction)
            if cfg.loss_reduction == "sum":
                loss = T.scale(loss, 1.0 / (len(batch) * cfg.n_frames))
            loss_val = loss.item()
            if initial is None:
                initial = loss_val
            _guard(loss_val, initial, step + 1)
            loss.backward()
            opt.step(rate)
            history.append((step + 1, loss_val, rate))
            if progress:
                progress(step + 1, loss_val, rate)
            if cfg.step2_stop_epe > 0 and (step + 1) % eval_every == 0:
                if _sequence_epe(model, samples, embeds) < cfg.step2_stop_epe:
                    break
    finally:
        for p in enc_params:
            p.requires_grad = True
    for k, p in model.encoder_params().items():
        if p.data.tobytes() != frozen[k].tobytes():
            raise ContractError(f"frozen encoder parameter '{k}' changed during stage 2")
    model.stage = 2
    _write_log(log_path, history)
    return history


# --------------------------------------------------------------- evaluation

# PCK range for wrist-relative coordinates scaled so the reference bone has
# length 1; the mm-scale default in metrics is meant for real captures.  The
# lower edge is nonzero because PCK uses a strict inequality.
NORMALIZED_THRESHOLDS = np.linspace(0.01, 0.5, 100)


def evaluate(model: ModelParams, samples, ablation: bool = False,
             use_gt: bool = False, thresholds=None):
    """Sequence-level metrics over a sample list.

    Returns a dict with 3D epe/auc/curve plus 2D epe.  ``use_gt`` swaps the
    predictions for ground truth (debug path: epe 0, auc 1).
    """
    if not samples:
        raise ContractError("nothing to evaluate")
    if thresholds is None:
        thresholds = NORMALIZED_THRESHOLDS
    g2 = np.stack([s.gt2d for s in samples])
    g3 = np.stack([s.gt3d for s in samples])
    if use_gt:
        p2, p3 = g2.copy(), g3.copy()
    else:
        p2, p3 = _predict_many(model, samples, ablation=ablation)
    curve = pck_curve(p3, g3, thresholds=thresholds)
    return {
        "epe3d": epe_metric(p3, g3),
        "epe2d": epe_metric(p2, g2),
        "auc": curve_auc(curve),
        "curve": curve,
        "pred3d": p3,
        "gt3d": g3,
    }


# -------------------------------------------------------------- checkpoint

CHECKPOINT_MAGIC = b"STHP"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, model: ModelParams):
    """Serialize all named parameters (float32 LE) with a trailing CRC-32."""
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    records = dict(model.named_params())
    records["meta.stage"] = Tensor(np.array([float(model.stage)], dtype=np.float32))
    for name, p in records.items():
        nb = name.encode("utf-8")
        blob += struct.pack("<I", len(nb))
        blob += nb
        arr = np.ascontiguousarray(p.data, dtype="<f4")
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)) & 0xFFFFFFFF)
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path) -> dict:
    """Read a checkpoint into {name: float32 array}; verifies the checksum."""
    from .data import FormatError
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError("checkpoint truncated")
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    stored = struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != stored:
        raise FormatError("checkpoint checksum mismatch")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    off = 8
    state = {}
    end = len(raw) - 4
    while off < end:
        (nlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", raw, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", raw, off)
        off += 4 * rank
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        state[name] = np.frombuffer(raw, dtype="<f4", count=count, offset=off) \
            .reshape(dims).copy()
        off += 4 * count
    if off != end:
        raise FormatError("checkpoint record layout inconsistent with file size")
    return state


def apply_state(model: ModelParams, state: dict):
    """Load checkpoint arrays into the model; mismatches name the tensor."""
    params = model.named_params()
    for name, p in params.items():
        if name not in state:
            raise ContractError(f"checkpoint is missing tensor '{name}'")
        arr = state[name]
        if tuple(arr.shape) != tuple(p.shape):
            raise ContractError(
                f"checkpoint/config shape mismatch for '{name}': "
                f"file has {tuple(arr.shape)}, model expects {tuple(p.shape)}")
        p.data = arr.astype(model.dtype)
    extras = [k for k in state if k not in params and not k.startswith("meta.")]
    if extras:
        raise ContractError(f"checkpoint holds unknown tensor '{extras[0]}'")
    if "meta.stage" in state:
        model.stage = int(state["meta.stage"].reshape(-1)[0])
