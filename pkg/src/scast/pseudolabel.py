"""Class-balanced pseudo-label selection and confidence co-regularization.

Thresholds come from per-class descending sorts of argmax-pixel confidences
(the class-balanced "top rho percent" rule); assignment keeps a pixel only if
its winning probability clears its class threshold, everything else IGNORE.
Co-regularization then drops the selected pixels on which the binary head and
the parent-marginalized subcategory head disagree the most.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .model import PROB_CLAMP, _probs_array
from .types import IGNORE, LabelMask

log = logging.getLogger(__name__)


@dataclass
class ThresholdSet:
    thresholds: np.ndarray    # [C], one per class, in [0, 1]
    rho: float

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        if np.any(self.thresholds < 0) or np.any(self.thresholds > 1):
            raise ValueError("thresholds must lie in [0, 1]")


@dataclass
class CoRegConfig:
    rho_reg: float
    per_image: bool = False    # pooled (dataset-level) drop unless set

    def __post_init__(self):
        if not 0 <= self.rho_reg < 100:
            raise ValueError("rho_reg must be in [0, 100)")


def _stacked_probs(p) -> np.ndarray:
    """Accept one prediction map or a list; return [n_pixels, C] float64."""
    maps = p if isinstance(p, (list, tuple)) else [p]
    if len(maps) == 0:
        raise ValueError("no prediction maps given")
    flats = []
    c = None
    for m in maps:
        arr = _probs_array(m)
        if arr.ndim != 3:
            raise ValueError(f"prediction map must be [H, W, C], got {arr.shape}")
        if c is None:
            c = arr.shape[2]
        elif arr.shape[2] != c:
            raise ValueError("prediction maps disagree on channel count")
        flats.append(arr.reshape(-1, c))
    stacked = np.concatenate(flats)
    if stacked.shape[0] == 0:
        raise ValueError("prediction maps contain no pixels")
    return stacked


def compute_thresholds(p, rho: float) -> ThresholdSet:
    """Per-class confidence cutoffs selecting the top rho percent.

    For each class k, take the probabilities of the pixels whose argmax is k,
    sort descending into M, and set the threshold to M[l] (1-based) with
    l = max(1, floor(|M| * rho / 100)). A class that wins nowhere gets
    threshold 1.0: since no pixel has it as winner, nothing gets selected.

    `p` may be a single map or a list of maps — passing the whole target
    split implements the dataset-level balanced selection.
    """
    if not 0 < rho <= 100:
        raise ValueError("rho must be in (0, 100]")
    flat = _stacked_probs(p)
    c = flat.shape[1]
    winner = np.argmax(flat, axis=1)
    theta = np.ones(c, dtype=np.float64)
    for k in range(c):
        m = flat[winner == k, k]
        if m.size == 0:
            continue
        m = np.sort(m)[::-1]
        l = max(1, math.floor(m.size * rho / 100.0))
        theta[k] = m[l - 1]
    return ThresholdSet(theta, rho)


def assign_pseudo_labels(p, theta: ThresholdSet) -> LabelMask:
    """Argmax label where the winning probability clears its class threshold."""
    arr = _probs_array(p)
    c = arr.shape[2]
    if theta.thresholds.shape[0] != c:
        raise ValueError(
            f"threshold count {theta.thresholds.shape[0]} != channel count {c}")
    winner = np.argmax(arr, axis=2)
    p_win = np.take_along_axis(arr, winner[..., None], axis=2)[..., 0]
    keep = p_win >= theta.thresholds[winner]
    labels = np.where(keep, winner, IGNORE).astype(np.int32)
    return LabelMask(labels, num_classes=c)


def coreg_distance(p_bi, p_sub, parent) -> np.ndarray:
    """Cross-entropy between the parent-marginalized subcategory prediction
    and the binary prediction, per pixel.

    The subcategory distribution is collapsed onto {back, text} through the
    parent map; the result is -sum_c q(c) log p_bi(c), with p_bi clamped.
    """
    pb = _probs_array(p_bi)
    ps = _probs_array(p_sub)
    parent = np.asarray(parent, dtype=np.int32)
    if pb.shape[:2] != ps.shape[:2]:
        raise ValueError("prediction maps are not aligned")
    if parent.shape[0] != ps.shape[2]:
        raise ValueError("parent map does not cover all subcategories")
    q_text = ps[..., parent == 1].sum(axis=2)
    q = np.stack([1.0 - q_text, q_text], axis=2)
    logp = np.log(np.clip(pb, PROB_CLAMP, 1 - PROB_CLAMP))
    return -(q * logp).sum(axis=2)


def _labels_of(mask) -> np.ndarray:
    return mask.labels if isinstance(mask, LabelMask) else np.asarray(mask)


@dataclass
class CoRegReport:
    theta_reg: float | None
    n_candidates: int
    n_dropped: int


def coreg_filter_pooled(masks_bi, masks_sub, dists, cfg: CoRegConfig):
    """Drop the top rho_reg percent most-disagreeing candidates, pooled.

    Candidates are pixels carrying either pseudo label. The cutoff is the
    distance at the 1-based position max(1, floor(n * rho_reg / 100)) of the
    descending pooled sort; every candidate with distance >= cutoff loses both
    labels (ties at the cutoff all drop). Returns (masks_bi', masks_sub',
    report). rho_reg = 0 leaves everything untouched.
    """
    if len(masks_bi) != len(masks_sub) or len(masks_bi) != len(dists):
        raise ValueError("mask and distance lists must align")
    cand = [
        (_labels_of(b) != IGNORE) | (_labels_of(s) != IGNORE)
        for b, s in zip(masks_bi, masks_sub)
    ]
    pooled = np.concatenate([np.asarray(d, dtype=np.float64)[c]
                             for d, c in zip(dists, cand)])
    n = pooled.size
    out_bi = [LabelMask(_labels_of(b).copy(), b.num_classes) for b in masks_bi]
    out_sub = [LabelMask(_labels_of(s).copy(), s.num_classes) for s in masks_sub]
    if n == 0:
        log.warning("co-regularization skipped: no pseudo-labelled pixels")
        return out_bi, out_sub, CoRegReport(None, 0, 0)
    if cfg.rho_reg == 0:
        return out_bi, out_sub, CoRegReport(None, n, 0)

    order = np.sort(pooled)[::-1]
    l = max(1, math.floor(n * cfg.rho_reg / 100.0))
    theta_reg = float(order[l - 1])
    dropped = 0
    for b, s, d, c in zip(out_bi, out_sub, dists, cand):
        drop = c & (np.asarray(d, dtype=np.float64) >= theta_reg)
        dropped += int(drop.sum())
        b.labels[drop] = IGNORE
        s.labels[drop] = IGNORE
    return out_bi, out_sub, CoRegReport(theta_reg, n, dropped)


def coreg_filter(y_bi: LabelMask, y_sub: LabelMask, dist, cfg: CoRegConfig):
    """Single-sample form of the pooled filter; returns (y_bi', y_sub')."""
    out_bi, out_sub, _ = coreg_filter_pooled([y_bi], [y_sub], [dist], cfg)
    return out_bi[0], out_sub[0]
