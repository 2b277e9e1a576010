"""Phrase-to-pixel grounding on procedural scenes, desk scale.

Multi-scale deformable-attention encoding, iterative top-k phrase/pixel
aggregation, BCE+Dice training, an alternating clustering solver, and an
average-recall evaluation harness, all on a small float64 autodiff core.
"""

from .tensor import Tensor, backward
from .rng import RngState

__all__ = ["Tensor", "backward", "RngState"]
__version__ = "0.1.0"
