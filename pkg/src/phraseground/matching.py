"""Scale fusion and phrase-to-pixel similarity maps.

All pyramid levels are resampled to the benchmark (level-3) grid with a
centre-aligned bilinear kernel, averaged into one fused map, and scored
against projected phrase features through a sigmoid. Resampling clamps
to the border so constant maps stay constant under any scale factor.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor


@lru_cache(maxsize=None)
def resample_weights(in_shape: tuple[int, int], out_shape: tuple[int, int]) -> np.ndarray:
    """(out_pixels, in_pixels) interpolation matrix between cell-centre grids."""

    def axis_weights(n_in: int, n_out: int) -> np.ndarray:
        w = np.zeros((n_out, n_in))
        centers = (np.arange(n_out) + 0.5) / n_out * n_in - 0.5
        centers = np.clip(centers, 0.0, n_in - 1.0)
        lo = np.floor(centers).astype(int)
        lo = np.minimum(lo, n_in - 1)
        frac = centers - lo
        hi = np.minimum(lo + 1, n_in - 1)
        for i in range(n_out):
            w[i, lo[i]] += 1.0 - frac[i]
            w[i, hi[i]] += frac[i]
        return w

    wy = axis_weights(in_shape[0], out_shape[0])
    wx = axis_weights(in_shape[1], out_shape[1])
    return np.kron(wy, wx)


def resample_level(flat_map: Tensor, in_shape: tuple[int, int],
                   out_shape: tuple[int, int]) -> Tensor:
    """Resample a flat (pixels, c) map between grid shapes."""
    if flat_map.shape[0] != in_shape[0] * in_shape[1]:
        raise ShapeError("flat map row count does not match its shape")
    if in_shape == out_shape:
        return flat_map
    return T.matmul(Tensor(resample_weights(in_shape, out_shape)), flat_map)


def fuse(resampled: list[Tensor]) -> Tensor:
    """Arithmetic mean of same-shape flat maps."""
    first = resampled[0].shape
    for m in resampled[1:]:
        if m.shape != first:
            raise ShapeError("fuse requires maps of identical shape")
    acc = resampled[0]
    for m in resampled[1:]:
        acc = T.add(acc, m)
    return T.mul(acc, T.constant(1.0 / len(resampled)))


def project_phrases(phrases: Tensor, projection: Tensor) -> Tensor:
    return T.matmul(phrases, projection)


def similarity(phrases: Tensor, pixels: Tensor) -> Tensor:
    """Sigmoid of the phrase/pixel inner products: (n, pixels) in (0, 1)."""
    return T.sigmoid(T.matmul(phrases, T.transpose(pixels)))


def upsample_probs(probs: Tensor, in_shape: tuple[int, int],
                   out_shape: tuple[int, int]) -> Tensor:
    """Resample an (n, in_pixels) map stack to out_shape resolution."""
    w = resample_weights(in_shape, out_shape)
    return T.matmul(probs, Tensor(w.T))
