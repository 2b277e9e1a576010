"""Adam training loop with per-step loss tracing."""

from __future__ import annotations

import numpy as np

from .config import RunConfig
from .errors import DivergenceError
from .losses import LossConfig, total_loss
from .model import ModelParams, forward_scene, named_parameters
from .rng import RngState
from .scenes import LoadedScene
from .tensor import Tensor, backward

_TRAIN_TAG = 0x7261494E


class Adam:
    """Standard adaptive-moment optimizer over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            mhat = self.m[name] / b1c
            vhat = self.v[name] / b2c
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def train(scenes: list[LoadedScene], params: ModelParams, cfg: RunConfig,
          rng: RngState | None = None) -> list[dict]:
    """Train in place; returns one trace row per optimizer step.

    Deterministic given cfg.seed. Aborts with step context if any
    computation goes non-finite.
    """
    if not scenes:
        raise ValueError("training needs at least one scene")
    rng = rng or RngState(cfg.seed).spawn(_TRAIN_TAG)
    named = named_parameters(params)
    opt = Adam(named, lr=cfg.learning_rate)
    loss_cfg = LossConfig(cfg.lambda_bce, cfg.lambda_dice, cfg.dice_eps)

    trace: list[dict] = []
    step = 0
    for epoch in range(cfg.epochs):
        for start in range(0, len(scenes), cfg.batch_size):
            batch = scenes[start:start + cfg.batch_size]
            opt.zero_grad()
            row = {"step": step, "total": 0.0, "bce": 0.0, "dice": 0.0,
                   "per_round": None}
            try:
                for scene in batch:
                    history = forward_scene(params, scene.pyramid, scene.phrases,
                                            cfg, rng, training=True)
                    loss, parts = total_loss(history, Tensor(scene.masks), loss_cfg)
                    backward(loss)
                    row["total"] += float(loss.data) / len(batch)
                    row["bce"] += parts["bce"] / len(batch)
                    row["dice"] += parts["dice"] / len(batch)
                    per = [v / len(batch) for v in parts["per_round"]]
                    row["per_round"] = per if row["per_round"] is None else \
                        [a + b for a, b in zip(row["per_round"], per)]
            except DivergenceError as exc:
                raise DivergenceError(
                    f"training diverged at step {step} (epoch {epoch}): {exc}") from exc
            if len(batch) > 1:
                for p in named.values():
                    if p.grad is not None:
                        p.grad = p.grad / len(batch)
            opt.step()
            trace.append(row)
            step += 1
    return trace
