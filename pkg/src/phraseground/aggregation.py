"""Multi-round top-k feature aggregation.

Each round: pick the k pixels most similar to each phrase, push the
phrase vector (plus positional encoding) into those pixel features,
re-encode just those rows with deformable attention over the frozen
encoder maps, pull the refined rows back into the phrase through
multi-head cross-attention, then refresh the similarity map. Phrases
are processed sequentially, so overlapping selections see earlier
updates within the round.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .deform import DeformLayerParams, deform_layer, uniform_init, zeros_param
from .errors import ConfigError, ShapeError
from .matching import similarity, upsample_probs
from .rng import RngState
from .tensor import Tensor


@dataclass
class CrossAttnParams:
    heads: int
    channels: int
    wq: list[Tensor]  # [head] (c/M, c/M)
    wk: list[Tensor]
    wv: list[Tensor]
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
            yield f"{prefix}.h{m}.wq", self.wq[m]
            yield f"{prefix}.h{m}.wk", self.wk[m]
            yield f"{prefix}.h{m}.wv", self.wv[m]
        yield f"{prefix}.out_w", self.out_w
        yield f"{prefix}.out_b", self.out_b
        yield f"{prefix}.ffn_w1", self.ffn_w1
        yield f"{prefix}.ffn_b1", self.ffn_b1
        yield f"{prefix}.ffn_w2", self.ffn_w2
        yield f"{prefix}.ffn_b2", self.ffn_b2
        yield f"{prefix}.norm_scale", self.norm_scale
        yield f"{prefix}.norm_shift", self.norm_shift


def init_cross_attn_params(channels: int, heads: int, ffn_ratio: int,
                           rng: RngState) -> CrossAttnParams:
    if channels % heads:
        raise ShapeError("channels must divide evenly across heads")
    head_dim = channels // heads
    hidden = ffn_ratio * channels

    def proj():
        return uniform_init(rng, head_dim, head_dim, (head_dim, head_dim))

    return CrossAttnParams(
        heads=heads, channels=channels,
        wq=[proj() for _ in range(heads)],
        wk=[proj() for _ in range(heads)],
        wv=[proj() for _ in range(heads)],
        out_w=uniform_init(rng, channels, channels, (channels, channels)),
        out_b=zeros_param(channels),
        ffn_w1=uniform_init(rng, channels, hidden, (channels, hidden)),
        ffn_b1=zeros_param(hidden),
        ffn_w2=uniform_init(rng, hidden, channels, (hidden, channels)),
        ffn_b2=zeros_param(channels),
        norm_scale=Tensor(np.ones(channels), requires_grad=True),
        norm_shift=zeros_param(channels),
    )


@dataclass
class MatchState:
    """Mutable state of the aggregation loop for one scene."""

    pixels: Tensor  # fused benchmark-scale pixel features (cells, c)
    phrases: Tensor  # projected phrase features (n, c)
    maps: list[Tensor]  # frozen encoder output maps for re-encoding
    points: np.ndarray  # benchmark-scale reference points (cells, 2)
    pos_rows: np.ndarray  # positional encodings of those points (cells, c)
    selected: np.ndarray | None = None  # latest (n, k) top-k index matrix
    round_index: int = 0
    history: list[Tensor] = field(default_factory=list)


def topk_select(scores: np.ndarray, k: int) -> np.ndarray:
    """Per row, indices of the k largest entries in descending score order,
    ties broken toward the smaller flat index."""
    scores = np.asarray(scores)
    if k > scores.shape[1]:
        raise ConfigError(f"top_k={k} exceeds {scores.shape[1]} available pixels")
    order = np.argsort(-scores, axis=1, kind="stable")
    return order[:, :k].astype(np.int64)


def inject_phrase(pixels: Tensor, idx: np.ndarray, pos_rows: np.ndarray,
                  phrase_row: Tensor) -> Tensor:
    """Add the phrase vector and the rows' positional encodings onto the
    selected rows; everything else is untouched."""
    sel = T.take_rows(pixels, idx)
    updated = T.add(T.add(sel, Tensor(pos_rows[idx])), phrase_row)
    return T.set_rows(pixels, idx, updated)


def refine_pixels(pixels: Tensor, idx: np.ndarray, maps: list[Tensor],
                  points: np.ndarray, params: DeformLayerParams, rng: RngState,
                  training: bool, dropout_rate: float, ffn_residual: bool) -> Tensor:
    """Re-encode only the selected rows against the frozen multi-scale maps."""
    sel = T.take_rows(pixels, idx)
    refined = deform_layer(sel, maps, points[idx], params, rng, training,
                           dropout_rate, ffn_residual)
    return T.set_rows(pixels, idx, refined)


def cross_attend(phrase_row: Tensor, keys: Tensor, params: CrossAttnParams,
                 rng: RngState, training: bool, dropout_rate: float) -> Tensor:
    """Update one phrase row from its selected pixel rows.

    Multi-head attention over channel blocks, then residual + dropout,
    layer norm, and the feed-forward block.
    """
    c = params.channels
    hd = c // params.heads
    scale = T.constant(1.0 / np.sqrt(hd))
    heads = []
    for m in range(params.heads):
        q = T.matmul(T.slice_cols(phrase_row, m * hd, (m + 1) * hd), params.wq[m])
        kk = T.matmul(T.slice_cols(keys, m * hd, (m + 1) * hd), params.wk[m])
        vv = T.matmul(T.slice_cols(keys, m * hd, (m + 1) * hd), params.wv[m])
        logits = T.mul(T.matmul(q, T.transpose(kk)), scale)  # (1, k)
        attn = T.softmax(logits, axis=1)
        heads.append(T.matmul(attn, vv))  # (1, hd)
    attended = T.linear(T.concat_cols(heads), params.out_w, params.out_b)
    mixed = T.dropout(T.add(attended, phrase_row), dropout_rate, rng, training)
    normed = T.layer_norm(T.add(phrase_row, mixed), params.norm_scale,
                          params.norm_shift, axis=1)
    return T.linear(T.relu(T.linear(normed, params.ffn_w1, params.ffn_b1)),
                    params.ffn_w2, params.ffn_b2)


def run_rounds(state: MatchState, rounds: int, k: int,
               refine_params: DeformLayerParams, cross_params: CrossAttnParams,
               level_shape: tuple[int, int], image_shape: tuple[int, int],
               rng: RngState, training: bool = False, dropout_rate: float = 0.1,
               ffn_residual: bool = False) -> list[Tensor]:
    """Run the aggregation loop; history gets the initial similarity map plus
    one refreshed map per round, all upsampled to image resolution."""
    scores = similarity(state.phrases, state.pixels)
    state.history.append(upsample_probs(scores, level_shape, image_shape))
    n = state.phrases.shape[0]
    for _ in range(rounds):
        state.selected = topk_select(scores.data, k)
        for j in range(n):
            idx = state.selected[j]
            phrase_row = T.take_rows(state.phrases, [j])
            state.pixels = inject_phrase(state.pixels, idx, state.pos_rows, phrase_row)
            state.pixels = refine_pixels(state.pixels, idx, state.maps, state.points,
                                         refine_params, rng, training, dropout_rate,
                                         ffn_residual)
            new_row = cross_attend(T.take_rows(state.phrases, [j]),
                                   T.take_rows(state.pixels, idx), cross_params,
                                   rng, training, dropout_rate)
            state.phrases = T.set_rows(state.phrases, [j], new_row)
        scores = similarity(state.phrases, state.pixels)
        state.history.append(upsample_probs(scores, level_shape, image_shape))
        state.round_index += 1
    return state.history
