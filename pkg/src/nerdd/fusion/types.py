"""Tensor-bearing value types exchanged between the fusion stages."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CLASS_DRONE = 0
CLASS_NO_OBJECT = 1


@dataclass(frozen=True)
class TokenSet:
    """An N x d matrix of spatial feature tokens."""

    tokens: np.ndarray

    def __post_init__(self):
        if self.tokens.ndim != 2 or min(self.tokens.shape) < 1:
            raise ValueError("tokens must be a non-empty N x d matrix")
        if not np.all(np.isfinite(self.tokens)):
            raise ValueError("tokens must be finite")

    @property
    def n(self) -> int:
        return self.tokens.shape[0]

    @property
    def d(self) -> int:
        return self.tokens.shape[1]


@dataclass(frozen=True)
class DetectionSet:
    """Per-query class probabilities and normalized (cx, cy, w, h) boxes.

    probs[:, 0] is p(drone), probs[:, 1] is p(no-object); rows sum to 1 by
    construction (softmax head). Box components lie in (0, 1) (sigmoid head).
    """

    probs: np.ndarray
    boxes: np.ndarray

    def __post_init__(self):
        if self.probs.ndim != 2 or self.probs.shape[1] != 2:
            raise ValueError("probs must be N_q x 2")
        if self.boxes.shape != (self.probs.shape[0], 4):
            raise ValueError("boxes must be N_q x 4")

    @property
    def n_queries(self) -> int:
        return self.probs.shape[0]

    def scores(self) -> np.ndarray:
        return self.probs[:, CLASS_DRONE]
