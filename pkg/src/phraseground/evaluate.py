"""Checkpoint evaluation: per-phrase IoUs and recall summaries per round."""

from __future__ import annotations

from dataclasses import dataclass

from .config import RunConfig
from .losses import infer_masks
from .metrics import CATEGORY_FILTERS, EvalRecord, average_recall
from .model import ModelParams, forward_scene
from .rng import RngState
from .scenes import LoadedScene


@dataclass
class PhraseResult:
    scene: int
    phrase: int
    round: int
    thing: bool
    plural: bool
    iou: float


def evaluate_scenes(params: ModelParams, scenes: list[LoadedScene],
                    cfg: RunConfig, map_sink=None) -> list[PhraseResult]:
    """Forward every scene in eval mode and score all rounds' predictions.

    `map_sink(scene_index, round_index, probs)` receives every round's
    image-resolution similarity map when provided (e.g. for DTF export).
    """
    from .metrics import iou as mask_iou

    results: list[PhraseResult] = []
    rng = RngState(cfg.seed)  # unused in eval mode; keeps the signature uniform
    for si, scene in enumerate(scenes):
        history = forward_scene(params, scene.pyramid, scene.phrases, cfg, rng,
                                training=False)
        gt = scene.masks >= 0.5
        for rnd, probs in enumerate(history):
            if map_sink is not None:
                map_sink(si, rnd, probs.data)
            pred = infer_masks(probs.data, cfg.threshold)
            for pj, meta in enumerate(scene.phrase_meta):
                results.append(PhraseResult(
                    scene=si, phrase=pj, round=rnd, thing=meta.thing,
                    plural=meta.plural, iou=mask_iou(pred[pj], gt[pj])))
    return results


def round_count(results: list[PhraseResult]) -> int:
    return max(r.round for r in results) + 1 if results else 0


def ar_table(results: list[PhraseResult]) -> list[dict]:
    """One row per round with the AR of each category (None when empty)."""
    rows = []
    for rnd in range(round_count(results)):
        records = [EvalRecord(iou=r.iou, thing=r.thing, plural=r.plural)
                   for r in results if r.round == rnd]
        curves = average_recall(records)
        row: dict = {"round": rnd}
        for name in CATEGORY_FILTERS:
            row[name] = None if curves[name] is None else curves[name].area
        rows.append(row)
    return rows
