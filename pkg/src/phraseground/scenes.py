"""Procedural scenes: geometric objects, exact masks, phrase embeddings.

Discs and rectangles play the role of countable foreground objects,
full-width/height stripes the role of amorphous background regions.
Each phrase refers to one object, or (for plurals) to the union of
several; its embedding is a fixed nonlinear image of the referenced
class vector, so the mapping is learnable but not trivially linear.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .dtf import read_dtf, write_dtf
from .errors import ConfigError
from .features import LEVELS, FeaturePyramid, build_pyramid, pyramid_grids
from .rng import RngState

_EMBED_TAG = 0x50485245  # dataset-level stream for the embedding map

THING_KINDS = ("disc", "rectangle")
STUFF_KINDS = ("stripe",)


@dataclass
class SceneObject:
    kind: str
    params: dict
    class_vec: np.ndarray


@dataclass
class Phrase:
    thing: bool
    plural: bool
    members: list[int]


@dataclass
class SyntheticScene:
    height: int
    width: int
    seed: int
    objects: list[SceneObject]
    object_masks: np.ndarray  # (n_objects, h*w) binary
    masks: np.ndarray  # (n_phrases, h*w) binary ground truth
    phrases: np.ndarray  # (n_phrases, d) embeddings
    phrase_meta: list[Phrase] = field(default_factory=list)


def rasterize(kind: str, params: dict, h: int, w: int) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    if kind == "disc":
        d2 = (yy - params["cy"]) ** 2 + (xx - params["cx"]) ** 2
        return d2 <= params["r"] ** 2
    if kind == "rectangle":
        return ((yy >= params["y0"]) & (yy < params["y1"])
                & (xx >= params["x0"]) & (xx < params["x1"]))
    if kind == "stripe":
        if params["orient"] == "h":
            return (yy >= params["start"]) & (yy < params["start"] + params["thickness"])
        return (xx >= params["start"]) & (xx < params["start"] + params["thickness"])
    raise ConfigError(f"unknown object kind: {kind}")


def embedding_map(dataset_seed: int, channels: int, dim: int) -> np.ndarray:
    """Class-vector -> phrase-embedding map, fixed per dataset seed."""
    rng = RngState(dataset_seed).spawn(_EMBED_TAG)
    return 1.5 * rng.normal(channels, dim)


def embed_class_vec(class_vec: np.ndarray, emap: np.ndarray) -> np.ndarray:
    return np.tanh(class_vec @ emap)


def _random_object(cfg: RunConfig, rng: RngState) -> SceneObject:
    h, w, c = cfg.image_h, cfg.image_w, cfg.channels
    if rng.uniform() < cfg.stripe_prob:
        orient = "h" if rng.uniform() < 0.5 else "v"
        extent = h if orient == "h" else w
        thickness = rng.randint(max(2, extent // 8), max(3, extent // 3))
        start = rng.randint(0, extent - thickness)
        params = {"orient": orient, "start": start, "thickness": thickness}
        kind = "stripe"
    elif rng.uniform() < 0.5:
        r = rng.randint(max(2, min(h, w) // 8), max(3, min(h, w) // 4))
        params = {
            "cy": rng.randint(r, h - r),
            "cx": rng.randint(r, w - r),
            "r": r,
        }
        kind = "disc"
    else:
        hh = rng.randint(max(2, h // 6), max(3, h // 2))
        ww = rng.randint(max(2, w // 6), max(3, w // 2))
        y0 = rng.randint(0, h - hh)
        x0 = rng.randint(0, w - ww)
        params = {"y0": y0, "y1": y0 + hh, "x0": x0, "x1": x0 + ww}
        kind = "rectangle"
    vec = rng.normal(c)
    vec = vec / np.linalg.norm(vec)
    return SceneObject(kind=kind, params=params, class_vec=vec)


def gen_scene(cfg: RunConfig, rng: RngState, scene_seed: int = 0) -> SyntheticScene:
    """Build one reproducible scene from the given stream."""
    if cfg.min_objects < 1:
        raise ConfigError("need at least one object per scene")
    h, w = cfg.image_h, cfg.image_w
    n_obj = rng.randint(cfg.min_objects, cfg.max_objects + 1)
    objects = [_random_object(cfg, rng) for _ in range(n_obj)]
    object_masks = np.stack([rasterize(o.kind, o.params, h, w).reshape(-1) for o in objects])
    assert object_masks.any(axis=1).all(), "object produced an empty mask"

    emap = embedding_map(cfg.seed, cfg.channels, cfg.phrase_dim)
    masks = [object_masks[i].astype(np.float64) for i in range(n_obj)]
    embeds = [embed_class_vec(o.class_vec, emap) for o in objects]
    meta = [Phrase(thing=o.kind in THING_KINDS, plural=False, members=[i])
            for i, o in enumerate(objects)]

    if n_obj >= 2 and rng.uniform() < cfg.plural_prob:
        members = _plural_members(objects, rng)
        union = object_masks[members].any(axis=0).astype(np.float64)
        class_vec = np.mean([objects[i].class_vec for i in members], axis=0)
        masks.append(union)
        embeds.append(embed_class_vec(class_vec, emap))
        meta.append(Phrase(thing=all(objects[i].kind in THING_KINDS for i in members),
                           plural=True, members=list(members)))

    return SyntheticScene(
        height=h, width=w, seed=scene_seed, objects=objects,
        object_masks=object_masks.astype(np.float64),
        masks=np.stack(masks), phrases=np.stack(embeds), phrase_meta=meta,
    )


def _plural_members(objects: list[SceneObject], rng: RngState) -> list[int]:
    """Two distinct member objects, same thing/stuff kind when possible."""
    things = [i for i, o in enumerate(objects) if o.kind in THING_KINDS]
    stuff = [i for i, o in enumerate(objects) if o.kind in STUFF_KINDS]
    for pool in (things, stuff):
        if len(pool) >= 2:
            picks = rng.pick_distinct(len(pool), 2)
            return sorted(pool[p] for p in picks)
    return sorted(rng.pick_distinct(len(objects), 2))


# ---------------------------------------------------------------------------
# on-disk layout
# ---------------------------------------------------------------------------

_GEN_KEYS = ("image_h", "image_w", "channels", "phrase_dim", "scenes", "seed",
             "noise_sigma", "min_objects", "max_objects", "plural_prob", "stripe_prob")


@dataclass
class LoadedScene:
    height: int
    width: int
    masks: np.ndarray
    phrases: np.ndarray
    phrase_meta: list[Phrase]
    pyramid: FeaturePyramid


def save_scene(scene_dir: Path, scene: SyntheticScene, pyramid: FeaturePyramid) -> None:
    scene_dir.mkdir(parents=True, exist_ok=True)
    write_dtf(scene_dir / "masks.dtf", scene.masks)
    write_dtf(scene_dir / "phrases.dtf", scene.phrases)
    for level in LEVELS:
        write_dtf(scene_dir / f"features_l{level}.dtf", pyramid.features[level])
    meta = {
        "height": scene.height,
        "width": scene.width,
        "seed": scene.seed,
        "objects": [{"kind": o.kind, "params": o.params} for o in scene.objects],
        "phrases": [{"thing": p.thing, "plural": p.plural, "members": p.members}
                    for p in scene.phrase_meta],
    }
    (scene_dir / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1),
                                         encoding="utf-8")


def load_scene(scene_dir: Path) -> LoadedScene:
    meta = json.loads((scene_dir / "meta.json").read_text(encoding="utf-8"))
    h, w = int(meta["height"]), int(meta["width"])
    features = {l: read_dtf(scene_dir / f"features_l{l}.dtf") for l in LEVELS}
    shapes, points = pyramid_grids(h, w)
    pyramid = FeaturePyramid(features=features, shapes=shapes, points=points,
                             channels=features[LEVELS[0]].shape[1])
    return LoadedScene(
        height=h, width=w,
        masks=read_dtf(scene_dir / "masks.dtf"),
        phrases=read_dtf(scene_dir / "phrases.dtf"),
        phrase_meta=[Phrase(thing=p["thing"], plural=p["plural"], members=list(p["members"]))
                     for p in meta["phrases"]],
        pyramid=pyramid,
    )


def build_dataset(cfg: RunConfig, out_dir: Path) -> None:
    """Generate cfg.scenes scenes under out_dir; reproducible from cfg alone."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    root = RngState(cfg.seed)
    for i in range(cfg.scenes):
        rng = root.spawn(i)
        scene = gen_scene(cfg, rng, scene_seed=i)
        pyramid = build_pyramid(scene, cfg.noise_sigma, rng)
        save_scene(out_dir / f"scene_{i:05d}", scene, pyramid)
    manifest = {"scenes": cfg.scenes, "seed": cfg.seed,
                "config": {k: getattr(cfg, k) for k in _GEN_KEYS}}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1),
                                           encoding="utf-8")


def load_dataset(data_dir: Path) -> tuple[dict, list[LoadedScene]]:
    data_dir = Path(data_dir)
    manifest_path = data_dir / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"{data_dir}: no dataset manifest found")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    scenes = [load_scene(data_dir / f"scene_{i:05d}") for i in range(int(manifest["scenes"]))]
    return manifest, scenes
