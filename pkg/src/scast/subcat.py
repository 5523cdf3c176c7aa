"""Subcategory discovery: density clustering over downsampled feature maps.

Feature maps from the trained extractor are block-averaged, L2-normalized,
split by the binary ground truth, and clustered per class with exact DBSCAN.
Clusters become subcategories (text first, then background); cluster noise
becomes IGNORE so it never contaminates the subcategory loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DiscoveryError
from .types import IGNORE, LabelMask

METRIC = "euclidean-l2norm"


@dataclass
class ClusterParams:
    eps: float
    min_pts: int
    downsample: int
    metric: str = METRIC

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be > 0")
        if self.min_pts < 1:
            raise ValueError("min_pts must be >= 1")
        if self.downsample < 1:
            raise ValueError("downsample must be >= 1")
        if self.metric != METRIC:
            raise ValueError(f"unsupported metric {self.metric!r}")


@dataclass
class SubcategoryModel:
    k_text: int
    k_back: int
    centroids: np.ndarray          # [k, d_h], unit length
    parent: np.ndarray             # [k] of {1=text, 0=back}; text indices first
    params: ClusterParams = field(repr=False)

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        self.parent = np.asarray(self.parent, dtype=np.int32)
        k = self.k_text + self.k_back
        if k < 2:
            raise ValueError("need at least two subcategories in total")
        if self.centroids.shape[0] != k or self.parent.shape != (k,):
            raise ValueError("centroid/parent counts disagree with k")
        if not np.all(np.isfinite(self.centroids)):
            raise ValueError("centroids must be finite")
        norms = np.linalg.norm(self.centroids, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("centroids must be unit-norm")
        expect = np.array([1] * self.k_text + [0] * self.k_back, dtype=np.int32)
        if not np.array_equal(self.parent, expect):
            raise ValueError("parent map must list text subcategories first")

    @property
    def k(self) -> int:
        return self.k_text + self.k_back


def dbscan(points, eps: float, min_pts: int) -> np.ndarray:
    """Exact DBSCAN; returns one integer label per point, -1 for noise.

    A point is core when its eps-ball (self included) holds >= min_pts points.
    Clusters are grown breadth-first in ascending index order, so a border
    point in reach of several clusters joins the earliest-created one —
    deterministic by construction. No spatial index: every neighborhood query
    is a full scan, which is exact and fast enough at this scale.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("points must be a non-empty [n, d] array")
    if eps <= 0:
        raise ValueError("eps must be > 0")
    n = pts.shape[0]
    eps2 = eps * eps
    labels = np.full(n, -1, dtype=np.int32)
    assigned = np.zeros(n, dtype=bool)
    queued = np.zeros(n, dtype=bool)

    def neighbors(i: int) -> np.ndarray:
        d2 = ((pts - pts[i]) ** 2).sum(axis=1)
        return np.flatnonzero(d2 <= eps2)

    cluster = -1
    for i in range(n):
        if assigned[i]:
            continue
        nb = neighbors(i)
        if nb.size < min_pts:
            continue
        cluster += 1
        labels[i] = cluster
        assigned[i] = True
        queue = [j for j in nb.tolist() if j != i]
        queued[nb] = True
        head = 0
        while head < len(queue):
            j = queue[head]
            head += 1
            if assigned[j]:
                continue
            labels[j] = cluster
            assigned[j] = True
            nb_j = neighbors(j)
            if nb_j.size >= min_pts:
                fresh = nb_j[~queued[nb_j]]
                queue.extend(fresh.tolist())
                queued[fresh] = True
        queued[:] = False
    return labels


def downsample_features(fmap: np.ndarray, d: int) -> np.ndarray:
    """Block-mean then L2-normalize: [H, W, c] -> [H/d, W/d, c] of unit vectors."""
    fmap = np.asarray(fmap, dtype=np.float64)
    h, w, c = fmap.shape
    if h % d or w % d:
        raise ValueError(f"downsample ratio {d} must divide grid {h}x{w}")
    cells = fmap.reshape(h // d, d, w // d, d, c).mean(axis=(1, 3))
    norms = np.linalg.norm(cells, axis=2, keepdims=True)
    return cells / np.maximum(norms, 1e-12)


def downsample_labels(mask, d: int) -> np.ndarray:
    """Majority binary label per d x d block; ties go to text (1)."""
    labels = mask.labels if isinstance(mask, LabelMask) else np.asarray(mask)
    h, w = labels.shape
    if h % d or w % d:
        raise ValueError(f"downsample ratio {d} must divide grid {h}x{w}")
    blocks = labels.reshape(h // d, d, w // d, d)
    n_text = (blocks == 1).sum(axis=(1, 3))
    n_back = (blocks == 0).sum(axis=(1, 3))
    out = np.where(n_text >= n_back, 1, 0).astype(np.int32)
    out[(n_text + n_back) == 0] = IGNORE
    return out


def _cluster_class(points: np.ndarray, name: str, params: ClusterParams):
    labels = dbscan(points, params.eps, params.min_pts)
    count = int(labels.max()) + 1
    if count == 0:
        raise DiscoveryError(
            f"no {name} cluster found ({points.shape[0]} points, eps={params.eps}, "
            f"min_pts={params.min_pts}); try a larger eps or smaller min_pts")
    return labels, count


def discover_subcategories(features, masks, params: ClusterParams):
    """Cluster pooled source cells per class; label every pixel by its cell.

    `features` are trained-extractor maps [H, W, d_h]; `masks` the aligned
    binary ground truth. Returns the subcategory model and one full-resolution
    subcategory mask per sample (noise cells IGNORE).
    """
    if len(features) == 0 or len(features) != len(masks):
        raise ValueError("need equally many feature maps and masks")
    d = params.downsample
    cell_feats = [downsample_features(f, d) for f in features]
    cell_labels = [downsample_labels(m, d) for m in masks]

    pooled = {1: [], 0: []}
    for cf, cl in zip(cell_feats, cell_labels):
        for cls in (1, 0):
            pooled[cls].append(cf[cl == cls])
    text_pts = np.concatenate(pooled[1]) if pooled[1] else np.empty((0, 1))
    back_pts = np.concatenate(pooled[0]) if pooled[0] else np.empty((0, 1))
    if text_pts.shape[0] == 0:
        raise DiscoveryError("no text cells to cluster (masks contain no text)")
    if back_pts.shape[0] == 0:
        raise DiscoveryError("no background cells to cluster (masks contain no background)")

    text_cl, k_text = _cluster_class(text_pts, "text", params)
    back_cl, k_back = _cluster_class(back_pts, "background", params)
    k = k_text + k_back

    centroids = np.empty((k, text_pts.shape[1]), dtype=np.float64)
    for c in range(k_text):
        centroids[c] = text_pts[text_cl == c].mean(axis=0)
    for c in range(k_back):
        centroids[k_text + c] = back_pts[back_cl == c].mean(axis=0)
    centroids /= np.maximum(np.linalg.norm(centroids, axis=1, keepdims=True), 1e-12)

    model = SubcategoryModel(
        k_text=k_text,
        k_back=k_back,
        centroids=centroids,
        parent=np.array([1] * k_text + [0] * k_back, dtype=np.int32),
        params=params,
    )

    y_sub = []
    ti = bi = 0
    for cf, cl in zip(cell_feats, cell_labels):
        cells = np.full(cl.shape, IGNORE, dtype=np.int32)
        n_t = int((cl == 1).sum())
        n_b = int((cl == 0).sum())
        t_lab = text_cl[ti:ti + n_t]
        b_lab = back_cl[bi:bi + n_b]
        ti += n_t
        bi += n_b
        cells[cl == 1] = np.where(t_lab >= 0, t_lab, IGNORE)
        cells[cl == 0] = np.where(b_lab >= 0, k_text + b_lab, IGNORE)
        full = np.kron(cells, np.ones((d, d), dtype=np.int32))
        y_sub.append(LabelMask(full, num_classes=k))
    return model, y_sub


def assign_subcategory(model: SubcategoryModel, feature) -> int:
    """Nearest centroid after normalizing the query; ties pick the lowest index."""
    x = np.asarray(feature, dtype=np.float64)
    x = x / max(float(np.linalg.norm(x)), 1e-12)
    d2 = ((model.centroids - x) ** 2).sum(axis=1)
    return int(np.argmin(d2))
