"""BCE + Dice objective with supervision on every refinement round."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor

_PROB_FLOOR = 1e-12  # keeps log() finite if a probability saturates


@dataclass
class LossConfig:
    lambda_bce: float = 1.0
    lambda_dice: float = 1.0
    dice_eps: float = 1e-6


def bce_loss(probs: Tensor, targets: Tensor) -> Tensor:
    """Mean cross-entropy over all phrase-pixel pairs."""
    if probs.shape != targets.shape:
        raise ShapeError(f"probs {probs.shape} vs targets {targets.shape}")
    p = T.clip(probs, _PROB_FLOOR, 1.0 - _PROB_FLOOR)
    y = targets
    ce = T.neg(T.add(T.mul(y, T.log(p)),
                     T.mul(T.sub(1.0, y), T.log(T.sub(1.0, p)))))
    return T.tmean(ce)


def dice_loss(probs: Tensor, targets: Tensor, eps: float = 1e-6) -> Tensor:
    """Per-phrase overlap loss 1 - 2|H.Y| / (|H| + |Y| + eps), averaged."""
    if probs.shape != targets.shape:
        raise ShapeError(f"probs {probs.shape} vs targets {targets.shape}")
    inter = T.tsum(T.mul(probs, targets), axis=1)
    denom = T.add(T.add(T.tsum(probs, axis=1), T.tsum(targets, axis=1)), eps)
    per_phrase = T.sub(1.0, T.div(T.mul(inter, 2.0), denom))
    return T.tmean(per_phrase)


def total_loss(history: list[Tensor], targets: Tensor,
               cfg: LossConfig) -> tuple[Tensor, dict]:
    """Weighted BCE+Dice summed over every round's map (intermediate
    supervision). Also returns per-component floats for tracing."""
    if not history:
        raise ShapeError("history must contain at least one map")
    total = None
    bce_sum = 0.0
    dice_sum = 0.0
    per_round = []
    for probs in history:
        b = bce_loss(probs, targets)
        d = dice_loss(probs, targets, cfg.dice_eps)
        round_term = T.add(T.mul(b, cfg.lambda_bce), T.mul(d, cfg.lambda_dice))
        total = round_term if total is None else T.add(total, round_term)
        bce_sum += float(b.data)
        dice_sum += float(d.data)
        per_round.append(float(round_term.data))
    parts = {"bce": bce_sum, "dice": dice_sum, "per_round": per_round}
    return total, parts


def infer_masks(probs: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Binary masks; the boundary value is included (>= threshold)."""
    return np.asarray(probs) >= threshold
