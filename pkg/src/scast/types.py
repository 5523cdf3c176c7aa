"""Dense per-pixel value types.

All grids are numpy-backed. Labels use IGNORE (-1) for pixels that
contribute to no loss and no metric denominator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

IGNORE = -1


@dataclass
class PixelGrid:
    """H x W grid of per-pixel feature vectors, float32 [H, W, D]."""

    features: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        if self.features.ndim != 3:
            raise ValueError(f"features must be [H, W, D], got shape {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")

    @property
    def height(self) -> int:
        return self.features.shape[0]

    @property
    def width(self) -> int:
        return self.features.shape[1]

    @property
    def feat_dim(self) -> int:
        return self.features.shape[2]


@dataclass
class PredictionMap:
    """Per-pixel probability distributions, float32 [H, W, C], C >= 2.

    Each pixel's channel values lie in [0, 1] and sum to 1 within 1e-5.
    """

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float32)
        if self.probs.ndim != 3 or self.probs.shape[2] < 2:
            raise ValueError(f"probs must be [H, W, C>=2], got shape {self.probs.shape}")
        if np.any(self.probs < -1e-6) or np.any(self.probs > 1 + 1e-6):
            raise ValueError("probabilities outside [0, 1]")
        sums = self.probs.sum(axis=2)
        if np.any(np.abs(sums - 1.0) > 1e-5):
            worst = float(np.max(np.abs(sums - 1.0)))
            raise ValueError(f"per-pixel probabilities do not sum to 1 (max dev {worst:.2e})")

    @property
    def height(self) -> int:
        return self.probs.shape[0]

    @property
    def width(self) -> int:
        return self.probs.shape[1]

    @property
    def num_channels(self) -> int:
        return self.probs.shape[2]


@dataclass
class LabelMask:
    """Per-pixel integer labels, int32 [H, W]; IGNORE = -1, else [0, num_classes)."""

    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int32)
        if self.labels.ndim != 2:
            raise ValueError(f"labels must be [H, W], got shape {self.labels.shape}")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        bad = (self.labels != IGNORE) & ((self.labels < 0) | (self.labels >= self.num_classes))
        if np.any(bad):
            raise ValueError(
                f"labels must be {IGNORE} or in [0, {self.num_classes}); "
                f"found {np.unique(self.labels[bad])}"
            )

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def valid(self) -> np.ndarray:
        """Boolean [H, W] of non-IGNORE pixels."""
        return self.labels != IGNORE
