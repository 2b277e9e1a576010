"""Multi-scale deformable attention layer.

Each query row predicts, per head and per pyramid level, a small set of
sampling offsets around its reference point; values read there by
bilinear interpolation are combined with query-conditioned attention
weights (softmax taken jointly over all levels x points of a head),
heads are concatenated and projected, and the result goes through
dropout + residual, layer norm, and a feed-forward block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .rng import RngState
from .tensor import Tensor

OFFSET_INIT_SCALE = 0.01  # keeps early sampling near the reference points


@dataclass
class DeformLayerParams:
    heads: int
    points: int  # sampling points per level per head
    channels: int
    levels: int
    offset_w: list[list[Tensor]]  # [head][level] (c, 2*points)
    offset_b: list[list[Tensor]]
    attn_w: list[Tensor]  # [head] (c, levels*points)
    attn_b: list[Tensor]
    value_w: list[Tensor]  # [head] (c, c // heads)
    value_b: list[Tensor]
    out_w: Tensor  # (c, c)
    out_b: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    norm_scale: Tensor
    norm_shift: Tensor

    def named(self, prefix: str):
        for m in range(self.heads):
            for li in range(self.levels):
                yield f"{prefix}.h{m}.l{li}.offset_w", self.offset_w[m][li]
                yield f"{prefix}.h{m}.l{li}.offset_b", self.offset_b[m][li]
            yield f"{prefix}.h{m}.attn_w", self.attn_w[m]
            yield f"{prefix}.h{m}.attn_b", self.attn_b[m]
            yield f"{prefix}.h{m}.value_w", self.value_w[m]
            yield f"{prefix}.h{m}.value_b", self.value_b[m]
        yield f"{prefix}.out_w", self.out_w
        yield f"{prefix}.out_b", self.out_b
        yield f"{prefix}.ffn_w1", self.ffn_w1
        yield f"{prefix}.ffn_b1", self.ffn_b1
        yield f"{prefix}.ffn_w2", self.ffn_w2
        yield f"{prefix}.ffn_b2", self.ffn_b2
        yield f"{prefix}.norm_scale", self.norm_scale
        yield f"{prefix}.norm_shift", self.norm_shift


def uniform_init(rng: RngState, fan_in: int, fan_out: int, shape) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(bound * (2.0 * rng.uniform(*shape) - 1.0), requires_grad=True)


def zeros_param(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def init_deform_params(channels: int, heads: int, points: int, levels: int,
                       ffn_ratio: int, rng: RngState) -> DeformLayerParams:
    if channels % heads:
        raise ShapeError("channels must divide evenly across heads")
    head_dim = channels // heads
    hidden = ffn_ratio * channels
    offset_w = [[Tensor(OFFSET_INIT_SCALE * (2.0 * rng.uniform(channels, 2 * points) - 1.0),
                        requires_grad=True)
                 for _ in range(levels)] for _ in range(heads)]
    offset_b = [[zeros_param(2 * points) for _ in range(levels)] for _ in range(heads)]
    return DeformLayerParams(
        heads=heads, points=points, channels=channels, levels=levels,
        offset_w=offset_w, offset_b=offset_b,
        attn_w=[uniform_init(rng, channels, levels * points, (channels, levels * points))
                for _ in range(heads)],
        attn_b=[zeros_param(levels * points) for _ in range(heads)],
        value_w=[uniform_init(rng, channels, head_dim, (channels, head_dim))
                 for _ in range(heads)],
        value_b=[zeros_param(head_dim) for _ in range(heads)],
        out_w=uniform_init(rng, channels, channels, (channels, channels)),
        out_b=zeros_param(channels),
        ffn_w1=uniform_init(rng, channels, hidden, (channels, hidden)),
        ffn_b1=zeros_param(hidden),
        ffn_w2=uniform_init(rng, hidden, channels, (hidden, channels)),
        ffn_b2=zeros_param(channels),
        norm_scale=Tensor(np.ones(channels), requires_grad=True),
        norm_shift=zeros_param(channels),
    )


def deform_layer(queries: Tensor, maps: list[Tensor], ref_points: np.ndarray,
                 params: DeformLayerParams, rng: RngState, training: bool = False,
                 dropout_rate: float = 0.1, ffn_residual: bool = False) -> Tensor:
    """One deformable attention block; output replaces the queries row-for-row.

    maps: per-level (h_l, w_l, c) value maps. ref_points: one normalized
    (y, x) anchor per query row.
    """
    rows = queries.shape[0]
    if ref_points.shape != (rows, 2):
        raise ContractError("one reference point per query row is required")
    if len(maps) != params.levels:
        raise ShapeError(f"expected {params.levels} level maps, got {len(maps)}")
    c = params.channels
    P = params.points

    rep_idx = np.repeat(np.arange(rows), P)
    base = Tensor(ref_points[rep_idx])  # (rows*P, 2) constant anchors

    head_outputs = []
    for m in range(params.heads):
        weights = T.softmax(T.linear(queries, params.attn_w[m], params.attn_b[m]), axis=1)
        acc = None
        for li, fmap in enumerate(maps):
            offsets = T.linear(queries, params.offset_w[m][li], params.offset_b[m][li])
            pts = T.add(base, T.reshape(offsets, (rows * P, 2)))
            sampled = T.reshape(T.bilinear_sample(fmap, pts), (rows, P, c))
            w_l = T.reshape(T.slice_cols(weights, li * P, (li + 1) * P), (rows, P, 1))
            level_sum = T.tsum(T.mul(w_l, sampled), axis=1)  # (rows, c)
            acc = level_sum if acc is None else T.add(acc, level_sum)
        head_outputs.append(T.linear(acc, params.value_w[m], params.value_b[m]))

    combined = T.linear(T.concat_cols(head_outputs), params.out_w, params.out_b)
    dropped = T.dropout(combined, dropout_rate, rng, training)
    normed = T.layer_norm(T.add(combined, dropped), params.norm_scale, params.norm_shift,
                          axis=1)
    ffn = T.linear(T.relu(T.linear(normed, params.ffn_w1, params.ffn_b1)),
                   params.ffn_w2, params.ffn_b2)
    return T.add(normed, ffn) if ffn_residual else ffn


def stack_encoder(queries: Tensor, maps: list[Tensor], ref_points: np.ndarray,
                  layers: list[DeformLayerParams], rng: RngState, training: bool = False,
                  dropout_rate: float = 0.1, ffn_residual: bool = False) -> Tensor:
    """Apply the layers sequentially; an empty stack is the identity."""
    out = queries
    for params in layers:
        out = deform_layer(out, maps, ref_points, params, rng, training,
                           dropout_rate, ffn_residual)
    return out
