"""Diagnostics: score histograms, confidence summaries, dense and
region-level precision/recall/F-score, pseudo-label error rate, and a
chance-corrected cluster agreement score.

Conventions: text (label 1) is always the positive class; IGNORE pixels are
excluded from every denominator; zero denominators yield 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .model import PROB_CLAMP, _probs_array
from .types import IGNORE, LabelMask

DEFAULT_BINS = 100

SCOPE_TEXT = "text"
SCOPE_BACK = "back"
SCOPE_ALL = "all"


@dataclass
class Histogram:
    edges: np.ndarray       # [bins + 1], uniform on [0, 1]
    counts: np.ndarray      # [bins], int64

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.edges.ndim != 1 or self.edges.size != self.counts.size + 1:
            raise ValueError("need exactly bins+1 edges")
        if np.any(np.diff(self.edges) <= 0):
            raise ValueError("edges must be strictly increasing")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    @property
    def bins(self) -> int:
        return self.counts.size

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def edge_mass(self) -> float:
        """Fraction of mass in the first and last bins — the bimodality score."""
        t = self.total
        return 0.0 if t == 0 else float(self.counts[0] + self.counts[-1]) / t


@dataclass
class OverfitReport:
    entropy: float      # mean nats per pixel
    err_rate: float
    likelihood: float   # sum of winning probabilities
    scope: str


def _labels_of(mask) -> np.ndarray:
    return mask.labels if isinstance(mask, LabelMask) else np.asarray(mask)


def scope_mask(y_true, scope: str) -> np.ndarray:
    """Boolean pixel selector for a named scope of the ground truth."""
    labels = _labels_of(y_true)
    if scope == SCOPE_TEXT:
        return labels == 1
    if scope == SCOPE_BACK:
        return labels == 0
    if scope == SCOPE_ALL:
        return labels != IGNORE
    raise ValueError(f"unknown scope {scope!r}")


def score_histogram(p, channel: int, bins: int = DEFAULT_BINS,
                    where: np.ndarray | None = None) -> Histogram:
    """Histogram of one channel's probabilities over uniform bins on [0, 1].

    The last bin is closed on the right, so a probability of exactly 1.0
    lands in it rather than overflowing.
    """
    arr = _probs_array(p)
    if not 0 <= channel < arr.shape[2]:
        raise ValueError(f"channel {channel} out of range for C={arr.shape[2]}")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    vals = arr[..., channel]
    if where is not None:
        vals = vals[where]
    idx = np.minimum(np.floor(vals * bins).astype(np.int64), bins - 1)
    counts = np.bincount(idx.ravel(), minlength=bins)
    return Histogram(np.linspace(0.0, 1.0, bins + 1), counts)


def mean_entropy(p, where: np.ndarray | None = None) -> float:
    """Mean per-pixel entropy in nats, probabilities clamped before the log."""
    arr = _probs_array(p)
    if where is not None:
        arr = arr[where]
    else:
        arr = arr.reshape(-1, arr.shape[-1])
    if arr.shape[0] == 0:
        raise ValueError("entropy scope selects no pixels")
    q = np.clip(arr, PROB_CLAMP, 1 - PROB_CLAMP)
    return float(np.mean(-(q * np.log(q)).sum(axis=-1)))


def likelihood_metric(p, where: np.ndarray | None = None) -> float:
    """Sum of winning-class probabilities over scoped pixels.

    A saturated model scores near the pixel count; a maximally uncertain one
    scores count/C — so the value moves with overconfidence.
    """
    arr = _probs_array(p)
    if where is not None:
        arr = arr[where]
    else:
        arr = arr.reshape(-1, arr.shape[-1])
    if arr.shape[0] == 0:
        raise ValueError("likelihood scope selects no pixels")
    return float(arr.max(axis=-1).sum())


def pseudo_error_rate(y_pseudo, y_true, parent=None) -> float:
    """Fraction of selected (non-IGNORE) pseudo pixels that contradict truth.

    For subcategory masks, pass the parent map so a pseudo label counts as
    correct when its parent class matches the binary truth. No selected
    pixels -> 0.0.
    """
    pred = _labels_of(y_pseudo)
    true = _labels_of(y_true)
    if pred.shape != true.shape:
        raise ValueError("masks are not aligned")
    sel = (pred != IGNORE) & (true != IGNORE)
    if not sel.any():
        return 0.0
    chosen = pred[sel]
    if parent is not None:
        chosen = np.asarray(parent, dtype=np.int32)[chosen]
    return float(np.mean(chosen != true[sel]))


def dense_prf(y_pred, y_true) -> tuple[float, float, float]:
    """Pixel precision/recall/F with text as the positive class."""
    pred = _labels_of(y_pred)
    true = _labels_of(y_true)
    if pred.shape != true.shape:
        raise ValueError("masks are not aligned")
    valid = true != IGNORE
    tp = int(((pred == 1) & (true == 1) & valid).sum())
    fp = int(((pred == 1) & (true == 0) & valid).sum())
    fn = int(((pred != 1) & (true == 1) & valid).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f


def _regions(binary: np.ndarray):
    lab, n = ndimage.label(binary)   # default structure = 4-connectivity
    return lab, n


def region_prf_iou50(y_pred, y_true) -> tuple[float, float, float]:
    """Region-level P/R/F: 4-connected text components, greedy one-to-one
    matching in descending IoU order, a match requiring IoU >= 0.5."""
    pred = _labels_of(y_pred)
    true = _labels_of(y_true)
    if pred.shape != true.shape:
        raise ValueError("masks are not aligned")
    valid = true != IGNORE
    pred_lab, n_pred = _regions((pred == 1) & valid)
    true_lab, n_true = _regions((true == 1) & valid)
    if n_pred == 0 or n_true == 0:
        return 0.0, 0.0, 0.0

    pairs = []
    pred_sizes = np.bincount(pred_lab.ravel(), minlength=n_pred + 1)
    true_sizes = np.bincount(true_lab.ravel(), minlength=n_true + 1)
    both = (pred_lab > 0) & (true_lab > 0)
    overlap_keys = pred_lab[both] * (n_true + 1) + true_lab[both]
    for key, inter in zip(*np.unique(overlap_keys, return_counts=True)):
        pi, ti = divmod(int(key), n_true + 1)
        union = pred_sizes[pi] + true_sizes[ti] - inter
        iou = inter / union
        if iou >= 0.5:
            pairs.append((-iou, pi, ti))
    pairs.sort()

    used_pred, used_true = set(), set()
    matches = 0
    for _, pi, ti in pairs:
        if pi in used_pred or ti in used_true:
            continue
        used_pred.add(pi)
        used_true.add(ti)
        matches += 1
    precision = matches / n_pred
    recall = matches / n_true
    f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f


def clustering_ari(pred, truth, where: np.ndarray | None = None) -> float:
    """Adjusted Rand index between two labelings over scoped pixels."""
    a = _labels_of(pred).ravel()
    b = _labels_of(truth).ravel()
    if a.shape != b.shape:
        raise ValueError("masks are not aligned")
    keep = (a != IGNORE) & (b != IGNORE)
    if where is not None:
        keep &= np.asarray(where, dtype=bool).ravel()
    a, b = a[keep], b[keep]
    n = a.size
    if n == 0:
        raise ValueError("ARI scope selects no pixels")

    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    n_a = ai.max() + 1
    n_b = bi.max() + 1
    contingency = np.zeros((n_a, n_b), dtype=np.int64)
    np.add.at(contingency, (ai, bi), 1)

    def comb2(x):
        return x * (x - 1) // 2

    sum_ij = comb2(contingency).sum()
    sum_a = comb2(contingency.sum(axis=1)).sum()
    sum_b = comb2(contingency.sum(axis=0)).sum()
    total = comb2(n)
    expected = sum_a * sum_b / total if total else 0.0
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))
