"""Multi-scale feature pyramids, reference grids, positional encodings.

Pyramid levels follow strides 4/8/16/32 (levels 2..5), each level flat
row-major with one normalized (y, x) reference point per cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .rng import RngState

LEVELS = (2, 3, 4, 5)
BENCHMARK_LEVEL = 3  # matching happens at this level's resolution


def level_shape(h: int, w: int, level: int) -> tuple[int, int]:
    return h // (1 << level), w // (1 << level)


def make_grid(shape: tuple[int, int]) -> np.ndarray:
    """Row-major flattened normalized cell centres ((i+0.5)/rows, (j+0.5)/cols)."""
    rows, cols = shape
    if rows < 1 or cols < 1:
        raise ConfigError("grid extents must be >= 1")
    ys = (np.arange(rows) + 0.5) / rows
    xs = (np.arange(cols) + 0.5) / cols
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([yy.reshape(-1), xx.reshape(-1)], axis=1)


class PosEncoder:
    """2-D sinusoidal positional encoding.

    Half the channels encode y, half x; within an axis sin/cos are
    interleaved over geometrically spaced frequencies. Channel 0 is
    sin(y) at temperature exponent 0.
    """

    def __init__(self, dim: int, temperature: float = 10000.0):
        if dim % 4:
            raise ConfigError("positional encoding dim must be divisible by 4")
        self.dim = dim
        self.temperature = temperature
        nfreq = dim // 4
        self._freqs = temperature ** (-4.0 * np.arange(nfreq) / dim)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        out = np.empty((pts.shape[0], self.dim))
        half = self.dim // 2
        for axis in range(2):
            ang = pts[:, axis:axis + 1] * self._freqs[None, :]
            block = out[:, axis * half:(axis + 1) * half]
            block[:, 0::2] = np.sin(ang)
            block[:, 1::2] = np.cos(ang)
        return out


@dataclass
class FeaturePyramid:
    """Per-level flat features, level shapes, and reference points."""

    features: dict[int, np.ndarray]  # level -> (rows_l, c)
    shapes: dict[int, tuple[int, int]]
    points: dict[int, np.ndarray]  # level -> (rows_l, 2)
    channels: int

    @property
    def levels(self) -> tuple[int, ...]:
        return tuple(sorted(self.features))


def pyramid_grids(h: int, w: int) -> tuple[dict, dict]:
    shapes = {l: level_shape(h, w, l) for l in LEVELS}
    points = {l: make_grid(shapes[l]) for l in LEVELS}
    return shapes, points


def background_vector(channels: int) -> np.ndarray:
    """Fixed, non-learnable vector marking cells no object covers."""
    signs = np.where(np.arange(channels) % 2 == 0, 1.0, -1.0)
    return 0.25 * signs


def build_pyramid(scene, sigma: float, rng: RngState) -> FeaturePyramid:
    """Features for each level cell: mean class vector of the objects whose
    mask touches the cell's pixel block, plus N(0, sigma^2) noise; empty
    cells carry the background vector."""
    h, w = scene.height, scene.width
    if h % 32 or w % 32:
        raise ConfigError("scene size must be a multiple of 32")
    c = scene.objects[0].class_vec.shape[0]
    shapes, points = pyramid_grids(h, w)
    bg = background_vector(c)

    object_masks = [obj_mask.reshape(h, w) for obj_mask in scene.object_masks]
    features: dict[int, np.ndarray] = {}
    for level in LEVELS:
        hl, wl = shapes[level]
        stride = 1 << level
        acc = np.zeros((hl, wl, c))
        count = np.zeros((hl, wl))
        for obj, mask in zip(scene.objects, object_masks):
            covers = mask.reshape(hl, stride, wl, stride).any(axis=(1, 3))
            acc += covers[:, :, None] * obj.class_vec[None, None, :]
            count += covers
        feat = np.where(count[:, :, None] > 0, acc / np.maximum(count, 1)[:, :, None],
                        bg[None, None, :])
        if sigma > 0:
            feat = feat + sigma * rng.normal(hl, wl, c)
        features[level] = feat.reshape(hl * wl, c)
    return FeaturePyramid(features=features, shapes=shapes, points=points, channels=c)
