"""Finite-difference verification of every trainable component.

Each check builds a tiny float64 instance of one parameter group, drives a
scalar loss through it, and compares reverse-mode gradients against central
differences.  ``run_suite`` returns the worst relative error per group; the
CLI surfaces it as the ``gradcheck`` command.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .attention import AttentionParams, EncoderBlockParams, encoder_block_forward, \
    multi_head_attention, scaled_dot_product_attention
from .graph import (GCLayerParams, GraphUNetParams, LearnableAdjacency,
                    gc_layer_forward, graph_pool, graph_unpool,
                    graph_unet_forward, normalize_adjacency)
from .pipeline import (ModelParams, forward_ablation, forward_full,
                       loss_step1, loss_step2, reduced_config)
from .tensor import Tensor, gradcheck

F64 = np.float64


def _sq(x: Tensor) -> Tensor:
    """Smooth scalar readout used as the generic check loss."""
    return T.reduce_sum(T.square(x))


def check_conv_encoder(rng) -> float:
    """Strided conv stack + pooling + linear on an 8x8 frame."""
    cfg = reduced_config()
    model = ModelParams.build(cfg, dtype=F64)
    frame = Tensor(rng.uniform(0.0, 1.0, size=(3, cfg.img_h, cfg.img_w)), dtype=F64)
    params = dict(model.encoder.named_params())
    from .pipeline import image_encode
    report = gradcheck(lambda: _sq(image_encode(frame, model)), params)
    return max(report.values())


def check_attention(rng) -> float:
    """Multi-head scaled dot-product attention, two heads."""
    attn = AttentionParams.init(rng, f=6, heads=2, dtype=F64)
    x = Tensor(rng.standard_normal((4, 6)), dtype=F64)
    params = dict(attn.named_params())
    report = gradcheck(lambda: _sq(multi_head_attention(x, attn)), params)
    return max(report.values())


def check_encoder_block(rng) -> float:
    """Full pre-norm transformer block with positions."""
    blk = EncoderBlockParams.init(rng, f=6, heads=2, n_max=5, dtype=F64)
    x = Tensor(rng.standard_normal((3, 6)), dtype=F64)
    params = dict(blk.named_params())
    report = gradcheck(lambda: _sq(encoder_block_forward(x, blk)), params)
    return max(report.values())


def check_gc_layer(rng) -> float:
    """One graph convolution through a normalized learnable adjacency."""
    adj = LearnableAdjacency(raw=T.param(rng.standard_normal((5, 5)), dtype=F64))
    layer = GCLayerParams.init(rng, 3, 4, dtype=F64)
    x = Tensor(rng.standard_normal((5, 3)), dtype=F64)
    params = {"adj.raw": adj.raw, "gc.w": layer.w}
    report = gradcheck(
        lambda: _sq(gc_layer_forward(x, normalize_adjacency(adj), layer)), params)
    return max(report.values())


def check_adjacency(rng) -> float:
    """Adjacency normalization in isolation (softplus, degrees, rescale)."""
    adj = LearnableAdjacency(raw=T.param(rng.standard_normal((6, 6)), dtype=F64))
    report = gradcheck(lambda: _sq(normalize_adjacency(adj)), {"raw": adj.raw})
    return max(report.values())


def check_pooling(rng) -> float:
    """Learned pool and unpool projections back to back."""
    pool = T.param(rng.standard_normal((3, 7)) * 0.5, dtype=F64)
    unpool = T.param(rng.standard_normal((7, 3)) * 0.5, dtype=F64)
    x = Tensor(rng.standard_normal((7, 4)), dtype=F64)
    params = {"pool": pool, "unpool": unpool}
    report = gradcheck(
        lambda: _sq(graph_unpool(graph_pool(x, pool), unpool)), params)
    return max(report.values())


def check_graph_unet(rng) -> float:
    """Whole lifter at a reduced node schedule."""
    unet = GraphUNetParams.init(rng, nodes=(6, 3), widths=(4,), in_dim=2,
                                out_dim=3, dtype=F64)
    z = Tensor(rng.standard_normal((6, 2)), dtype=F64)
    params = dict(unet.named_params())
    report = gradcheck(lambda: _sq(graph_unet_forward(z, unet)), params)
    return max(report.values())


def check_head_mlp(rng) -> float:
    """2D joint head on one context row."""
    cfg = reduced_config()
    model = ModelParams.build(cfg, dtype=F64)
    ctx = Tensor(rng.standard_normal((1, cfg.ctx_dim)), dtype=F64)
    from .pipeline import joints2d_head
    report = gradcheck(lambda: _sq(joints2d_head(ctx, model)),
                       model.head_params())
    return max(report.values())


def check_bridge_fc(rng) -> float:
    """Single-frame bridge layer (the stage-1 stand-in for the transformer)."""
    cfg = reduced_config()
    model = ModelParams.build(cfg, dtype=F64)
    e = Tensor(rng.standard_normal((1, cfg.embed_dim)), dtype=F64)
    build = lambda: _sq(T.add_rowvec(e @ model.bridge_w, model.bridge_b))
    report = gradcheck(build, model.bridge_params())
    return max(report.values())


def check_full_pipeline(rng) -> float:
    """End-to-end sequence forward and stage losses at reduced sizes."""
    cfg = reduced_config(unet_nodes=(21, 4), unet_widths=(4,))
    model = ModelParams.build(cfg, dtype=F64)
    frames = rng.uniform(0.0, 1.0, size=(cfg.n_frames, 3, cfg.img_h, cfg.img_w))
    gt2 = rng.uniform(0.0, cfg.img_w - 1.0, size=(cfg.n_frames, cfg.joints, 2))
    gt3 = rng.standard_normal((cfg.n_frames, cfg.joints, 3))

    def build():
        z_list, p_list = forward_full(frames, model)
        seq = loss_step2(p_list, gt3, F64)
        frame = loss_step1(z_list[0], gt2[0], p_list[0], gt3[0], cfg.alpha, F64)
        return seq + frame

    params = model.named_params()
    params.pop("bridge.w")
    params.pop("bridge.b")
    report = gradcheck(build, params)

    def build_ablation():
        z, p = forward_ablation(frames[0], model)
        return loss_step1(z, gt2[0], p, gt3[0], cfg.alpha, F64)

    ab = gradcheck(build_ablation, {**model.bridge_params(),
                                    **model.encoder_params()})
    return max(max(report.values()), max(ab.values()))


CHECKS = {
    "conv_encoder": check_conv_encoder,
    "attention": check_attention,
    "encoder_block": check_encoder_block,
    "gc_layer": check_gc_layer,
    "adjacency": check_adjacency,
    "pooling": check_pooling,
    "graph_unet": check_graph_unet,
    "head_mlp": check_head_mlp,
    "bridge_fc": check_bridge_fc,
    "full_pipeline": check_full_pipeline,
}


def run_suite(seed: int = 0, groups=None) -> dict[str, float]:
    """Run the finite-difference suite; returns worst error per group."""
    names = list(CHECKS) if groups is None else list(groups)
    out = {}
    for name in names:
        if name not in CHECKS:
            raise T.ContractError(f"unknown gradcheck group '{name}'")
        rng = np.random.default_rng([seed, sum(name.encode())])
        out[name] = CHECKS[name](rng)
    return out
