"""Full pipeline assembly: parameters, per-scene forward pass, checkpoints.

Forward pass for one scene: add positional encodings to the pyramid
features, run the deformable encoder stack over all levels jointly,
split the result back into per-level maps, fuse them at the benchmark
scale, project the phrase embeddings, then run the aggregation rounds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .aggregation import CrossAttnParams, MatchState, init_cross_attn_params, run_rounds
from .config import RunConfig, config_from_dict
from .deform import DeformLayerParams, init_deform_params, stack_encoder, uniform_init
from .dtf import read_dtf, write_dtf
from .errors import ConfigError
from .features import BENCHMARK_LEVEL, LEVELS, FeaturePyramid, PosEncoder
from .matching import fuse, project_phrases, resample_level
from .rng import RngState
from .tensor import Tensor


@dataclass
class ModelParams:
    encoder: list[DeformLayerParams]
    refine: DeformLayerParams | None  # None when reusing the last encoder layer
    cross: CrossAttnParams
    phrase_proj: Tensor  # (d, c)


def init_model(cfg: RunConfig, rng: RngState) -> ModelParams:
    n_levels = len(LEVELS)
    encoder = [init_deform_params(cfg.channels, cfg.heads, cfg.sample_points,
                                  n_levels, cfg.ffn_ratio, rng.spawn(100 + t))
               for t in range(cfg.encoder_layers)]
    refine = None
    if cfg.refine_sharing == "refine":
        refine = init_deform_params(cfg.channels, cfg.heads, cfg.sample_points,
                                    n_levels, cfg.ffn_ratio, rng.spawn(200))
    cross = init_cross_attn_params(cfg.channels, cfg.heads, cfg.ffn_ratio, rng.spawn(300))
    proj = uniform_init(rng.spawn(400), cfg.phrase_dim, cfg.channels,
                        (cfg.phrase_dim, cfg.channels))
    return ModelParams(encoder=encoder, refine=refine, cross=cross, phrase_proj=proj)


def refine_layer_of(params: ModelParams) -> DeformLayerParams:
    if params.refine is not None:
        return params.refine
    if not params.encoder:
        raise ConfigError("no refinement layer: sharing with an empty encoder")
    return params.encoder[-1]


def named_parameters(params: ModelParams) -> dict[str, Tensor]:
    out: dict[str, Tensor] = {}
    for t, layer in enumerate(params.encoder):
        out.update(layer.named(f"encoder{t}"))
    if params.refine is not None:
        out.update(params.refine.named("refine"))
    out.update(params.cross.named("cross"))
    out["phrase_proj"] = params.phrase_proj
    return out


def forward_scene(params: ModelParams, pyramid: FeaturePyramid,
                  phrase_feats: np.ndarray, cfg: RunConfig, rng: RngState,
                  training: bool = False) -> list[Tensor]:
    """Similarity-map history for one scene (round 0 plus cfg.rounds more),
    each at image resolution."""
    penc = PosEncoder(cfg.channels, cfg.pos_temperature)
    levels = sorted(pyramid.features)

    raw_maps = []
    queries_parts = []
    ref_parts = []
    for level in levels:
        hl, wl = pyramid.shapes[level]
        feat = Tensor(pyramid.features[level])
        raw_maps.append(T.reshape(feat, (hl, wl, cfg.channels)))
        queries_parts.append(T.add(feat, Tensor(penc(pyramid.points[level]))))
        ref_parts.append(pyramid.points[level])
    queries = T.concat_rows(queries_parts)
    ref_points = np.concatenate(ref_parts, axis=0)

    encoded = stack_encoder(queries, raw_maps, ref_points, params.encoder, rng,
                            training, cfg.dropout, cfg.ffn_residual)

    bench_shape = pyramid.shapes[BENCHMARK_LEVEL]
    offsets = np.cumsum([0] + [pyramid.features[l].shape[0] for l in levels])
    enc_maps = []
    resampled = []
    for i, level in enumerate(levels):
        hl, wl = pyramid.shapes[level]
        part = T.take_rows(encoded, np.arange(offsets[i], offsets[i + 1]))
        enc_maps.append(T.reshape(part, (hl, wl, cfg.channels)))
        resampled.append(resample_level(part, (hl, wl), bench_shape))
    fused = fuse(resampled)

    phrases = project_phrases(Tensor(phrase_feats), params.phrase_proj)
    bench_points = pyramid.points[BENCHMARK_LEVEL]
    state = MatchState(pixels=fused, phrases=phrases, maps=enc_maps,
                       points=bench_points, pos_rows=penc(bench_points))
    image_shape = (bench_shape[0] * 8, bench_shape[1] * 8)
    return run_rounds(state, cfg.rounds, cfg.top_k, refine_layer_of(params),
                      params.cross, bench_shape, image_shape, rng, training,
                      cfg.dropout, cfg.ffn_residual)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(out_dir: Path, params: ModelParams, cfg: RunConfig) -> None:
    out_dir = Path(out_dir)
    (out_dir / "params").mkdir(parents=True, exist_ok=True)
    named = named_parameters(params)
    for name, tensor in named.items():
        write_dtf(out_dir / "params" / f"{name}.dtf", tensor.data)
    manifest = {
        "config": cfg.to_dict(),
        "params": {name: list(t.shape) for name, t in sorted(named.items())},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1),
                                           encoding="utf-8")


def load_checkpoint(ckpt_dir: Path) -> tuple[ModelParams, RunConfig]:
    ckpt_dir = Path(ckpt_dir)
    manifest_path = ckpt_dir / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"{ckpt_dir}: no checkpoint manifest found")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    cfg = config_from_dict(manifest["config"])
    params = init_model(cfg, RngState(cfg.seed))
    named = named_parameters(params)
    if set(named) != set(manifest["params"]):
        raise ConfigError(f"{ckpt_dir}: parameter names do not match this configuration")
    for name, tensor in named.items():
        data = read_dtf(ckpt_dir / "params" / f"{name}.dtf")
        if data.shape != tensor.shape:
            raise ConfigError(f"{ckpt_dir}: {name} has shape {data.shape}, "
                              f"expected {tensor.shape}")
        tensor.data = data
    return params, cfg
