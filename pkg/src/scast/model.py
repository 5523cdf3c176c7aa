"""A pixelwise micro-network: shared extractor, twin softmax heads.

The extractor is one hidden ReLU layer applied independently per pixel; the
binary head is always present and a multi-class subcategory head can be
attached once the number of subcategories is known. Everything is computed
in float64 so analytic gradients can be held to finite-difference accuracy;
float32 appears only on disk.

Losses and gradients are defined over a *pixel pool*: the mean is taken over
all non-IGNORE pixels pooled across the samples of a batch, so loss
magnitudes do not depend on grid resolution or batch composition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ScheduleExhaustedError, TrainingDivergedError, UndefinedLossError
from .types import IGNORE, LabelMask, PredictionMap

PROB_CLAMP = 1e-7   # probabilities enter any log() clipped to [PROB_CLAMP, 1-PROB_CLAMP]

LOSS_BCE = "bce"
LOSS_DICE = "dice"


@dataclass
class LossWeights:
    lambda_bi: float = 1.0
    lambda_sub: float = 1.0

    def __post_init__(self):
        if self.lambda_bi < 0 or self.lambda_sub < 0:
            raise ValueError("loss weights must be >= 0")


@dataclass
class OptimConfig:
    lr0: float
    momentum: float
    weight_decay: float
    power: float
    max_iter: int

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.power <= 0:
            raise ValueError("power must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")

    def lr_at(self, iteration: int) -> float:
        return self.lr0 * (1.0 - iteration / self.max_iter) ** self.power


class ModelParams:
    """Parameters plus optimizer state (velocity buffers, iteration count)."""

    def __init__(self, w1, b1, w_bi, b_bi, w_sub=None, b_sub=None, iteration=0):
        self.w1 = np.asarray(w1, dtype=np.float64)
        self.b1 = np.asarray(b1, dtype=np.float64)
        self.w_bi = np.asarray(w_bi, dtype=np.float64)
        self.b_bi = np.asarray(b_bi, dtype=np.float64)
        self.w_sub = None if w_sub is None else np.asarray(w_sub, dtype=np.float64)
        self.b_sub = None if b_sub is None else np.asarray(b_sub, dtype=np.float64)
        self.iteration = int(iteration)
        self.velocity = {name: np.zeros_like(arr) for name, arr in self.param_items()}
        self._check()

    def _check(self):
        if self.w1.shape != (self.d_in, self.d_h) or self.b1.shape != (self.d_h,):
            raise ValueError("extractor parameter shapes are inconsistent")
        if self.w_bi.shape != (self.d_h, 2) or self.b_bi.shape != (2,):
            raise ValueError("binary head must map d_h -> 2")
        if (self.w_sub is None) != (self.b_sub is None):
            raise ValueError("subcategory head weights and bias must come together")
        if self.w_sub is not None:
            if self.w_sub.shape[0] != self.d_h or self.b_sub.shape != (self.w_sub.shape[1],):
                raise ValueError("subcategory head shapes are inconsistent")
        for name, arr in self.param_items():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"parameter {name} contains non-finite values")

    @property
    def d_in(self) -> int:
        return self.w1.shape[0]

    @property
    def d_h(self) -> int:
        return self.w1.shape[1]

    @property
    def has_sub(self) -> bool:
        return self.w_sub is not None

    @property
    def k_sub(self) -> int | None:
        return None if self.w_sub is None else self.w_sub.shape[1]

    def param_items(self):
        items = [("w1", self.w1), ("b1", self.b1), ("w_bi", self.w_bi), ("b_bi", self.b_bi)]
        if self.w_sub is not None:
            items += [("w_sub", self.w_sub), ("b_sub", self.b_sub)]
        return items

    def get(self, name: str) -> np.ndarray:
        return dict(self.param_items())[name]

    def set(self, name: str, value: np.ndarray) -> None:
        setattr(self, name, np.asarray(value, dtype=np.float64))

    def clone(self) -> "ModelParams":
        dup = ModelParams(
            self.w1.copy(), self.b1.copy(), self.w_bi.copy(), self.b_bi.copy(),
            None if self.w_sub is None else self.w_sub.copy(),
            None if self.b_sub is None else self.b_sub.copy(),
            iteration=self.iteration,
        )
        dup.velocity = {k: v.copy() for k, v in self.velocity.items()}
        return dup


def init_params(d_in: int, d_h: int, rng: np.random.Generator) -> ModelParams:
    """Uniform [-a, a] with a = 1/sqrt(fan_in), drawn in a fixed order."""
    a1 = 1.0 / math.sqrt(d_in)
    ah = 1.0 / math.sqrt(d_h)
    w1 = rng.uniform(-a1, a1, size=(d_in, d_h))
    b1 = rng.uniform(-a1, a1, size=d_h)
    w_bi = rng.uniform(-ah, ah, size=(d_h, 2))
    b_bi = rng.uniform(-ah, ah, size=2)
    return ModelParams(w1, b1, w_bi, b_bi)


def allocate_sub_head(params: ModelParams, k: int, rng: np.random.Generator) -> None:
    """Attach a k-way subcategory head with a fresh velocity buffer."""
    if k < 2:
        raise ValueError("subcategory head needs k >= 2")
    a = 1.0 / math.sqrt(params.d_h)
    params.w_sub = rng.uniform(-a, a, size=(params.d_h, k))
    params.b_sub = rng.uniform(-a, a, size=k)
    params.velocity["w_sub"] = np.zeros_like(params.w_sub)
    params.velocity["b_sub"] = np.zeros_like(params.b_sub)
    params._check()


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _grid_array(grid) -> np.ndarray:
    feats = grid.features if hasattr(grid, "features") else grid
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 3:
        raise ValueError(f"pixel grid must be [H, W, D], got shape {feats.shape}")
    return feats


def _probs_array(p) -> np.ndarray:
    arr = p.probs if isinstance(p, PredictionMap) else p
    return np.asarray(arr, dtype=np.float64)


def _labels_array(y) -> np.ndarray:
    return y.labels if isinstance(y, LabelMask) else np.asarray(y, dtype=np.int32)


def forward(params: ModelParams, grid, want_sub: bool | None = None):
    """Apply extractor and heads to every pixel.

    Returns (features, p_bi, p_sub): post-ReLU hidden activations [H, W, d_h]
    (the vectors clustering operates on), per-pixel binary probabilities
    [H, W, 2], and per-pixel subcategory probabilities [H, W, k] or None.
    """
    x = _grid_array(grid)
    if x.shape[2] != params.d_in:
        raise ValueError(f"grid feature dim {x.shape[2]} != model d_in {params.d_in}")
    if want_sub is None:
        want_sub = params.has_sub
    if want_sub and not params.has_sub:
        raise ValueError("subcategory head requested but not allocated")
    h = np.maximum(x @ params.w1 + params.b1, 0.0)
    p_bi = _softmax(h @ params.w_bi + params.b_bi)
    p_sub = _softmax(h @ params.w_sub + params.b_sub) if want_sub else None
    return h, p_bi, p_sub


def loss_bi(p_bi, y, kind: str = LOSS_BCE) -> float:
    """Binary loss over non-IGNORE pixels: mean negative log-likelihood, or
    one minus the overlap ratio of the text channel (soft Dice)."""
    p = _probs_array(p_bi)
    labels = _labels_array(y)
    if p.shape[:2] != labels.shape:
        raise ValueError(f"prediction {p.shape[:2]} and mask {labels.shape} differ")
    valid = labels != IGNORE
    if not valid.any():
        raise UndefinedLossError("binary loss over a fully-IGNORE mask")
    if kind == LOSS_BCE:
        py = np.take_along_axis(p, np.maximum(labels, 0)[..., None], axis=2)[..., 0]
        return float(np.mean(-np.log(np.clip(py[valid], PROB_CLAMP, 1 - PROB_CLAMP))))
    if kind == LOSS_DICE:
        p1 = p[..., 1][valid]
        t = (labels[valid] == 1).astype(np.float64)
        denom = p1.sum() + t.sum()
        if denom == 0.0:
            return 1.0
        return float(1.0 - 2.0 * (p1 * t).sum() / denom)
    raise ValueError(f"unknown binary loss kind {kind!r}")


def loss_sub(p_sub, y_sub) -> float:
    """Cross-entropy against subcategory labels, mean over non-IGNORE pixels."""
    p = _probs_array(p_sub)
    labels = _labels_array(y_sub)
    if p.shape[:2] != labels.shape:
        raise ValueError(f"prediction {p.shape[:2]} and mask {labels.shape} differ")
    if labels.max(initial=-1) >= p.shape[2]:
        raise ValueError(f"subcategory label {labels.max()} >= k={p.shape[2]}")
    valid = labels != IGNORE
    if not valid.any():
        raise UndefinedLossError("subcategory loss over a fully-IGNORE mask")
    py = np.take_along_axis(p, np.maximum(labels, 0)[..., None], axis=2)[..., 0]
    return float(np.mean(-np.log(np.clip(py[valid], PROB_CLAMP, 1 - PROB_CLAMP))))


def loss_target(p_bi, p_sub, y_bi, y_sub, w: LossWeights, kind: str = LOSS_BCE) -> float:
    """Weighted joint objective for one sample: both heads, one pixel pool each."""
    return w.lambda_sub * loss_sub(p_sub, y_sub) + w.lambda_bi * loss_bi(p_bi, y_bi, kind)


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def _dz_ce(p: np.ndarray, labels: np.ndarray, scale: float) -> np.ndarray:
    """d(mean CE)/dlogits for flat p [N, C], labels [N] (no IGNORE).

    The standard softmax cross-entropy gradient. The probability clamp exists
    only to keep the reported loss value finite; the gradient ignores it so a
    saturated pixel still pulls back toward its label instead of going dead.
    """
    n = labels.shape[0]
    dz = p.copy()
    dz[np.arange(n), labels] -= 1.0
    dz *= scale
    return dz


def _dz_dice(p: np.ndarray, labels: np.ndarray, scale: float) -> np.ndarray:
    """d(Dice loss)/dlogits for flat binary p [N, 2], labels [N] (no IGNORE)."""
    p1 = p[:, 1]
    t = (labels == 1).astype(np.float64)
    a = (p1 * t).sum()
    b = p1.sum() + t.sum()
    if b == 0.0:
        return np.zeros_like(p)
    g = (2.0 * a / (b * b) - 2.0 * t / b) * scale     # dL/dp1
    dz = np.empty_like(p)
    dz[:, 1] = g * p1 * (1.0 - p1)
    dz[:, 0] = -g * p1 * p[:, 0]
    return dz


def pooled_backward(params: ModelParams, batch, w: LossWeights, kind: str = LOSS_BCE):
    """Gradients of the pooled batch objective.

    `batch` is a list of (grid, y_bi or None, y_sub or None). The objective is
    lambda_bi * mean-BCE (or Dice) over all non-IGNORE binary pixels pooled
    across the batch, plus lambda_sub * mean-CE over all non-IGNORE
    subcategory pixels pooled across the batch. A pool that is empty simply
    contributes zero, which is what lets sparsely pseudo-labeled samples ride
    along in a batch.

    Returns (grads dict, bi-loss value, sub-loss value).
    """
    xs, ybs, yss = [], [], []
    for grid, y_bi, y_sub in batch:
        x = _grid_array(grid)
        n = x.shape[0] * x.shape[1]
        xs.append(x.reshape(n, -1))
        ybs.append(np.full(n, IGNORE, np.int32) if y_bi is None
                   else _labels_array(y_bi).reshape(n))
        yss.append(np.full(n, IGNORE, np.int32) if y_sub is None
                   else _labels_array(y_sub).reshape(n))
    x = np.concatenate(xs)
    y_bi = np.concatenate(ybs)
    y_sub = np.concatenate(yss)

    z1 = x @ params.w1 + params.b1
    h = np.maximum(z1, 0.0)
    p_bi = _softmax(h @ params.w_bi + params.b_bi)

    grads = {name: np.zeros_like(arr) for name, arr in params.param_items()}
    dh = np.zeros_like(h)
    bi_val = 0.0
    sub_val = 0.0

    vb = y_bi != IGNORE
    if w.lambda_bi != 0.0 and vb.any():
        pb, lb = p_bi[vb], y_bi[vb]
        if kind == LOSS_BCE:
            py = np.clip(pb[np.arange(lb.size), lb], PROB_CLAMP, 1 - PROB_CLAMP)
            bi_val = float(np.mean(-np.log(py)))
            dzb = _dz_ce(pb, lb, w.lambda_bi / lb.size)
        elif kind == LOSS_DICE:
            t = (lb == 1).astype(np.float64)
            denom = pb[:, 1].sum() + t.sum()
            bi_val = 1.0 if denom == 0.0 else float(1.0 - 2.0 * (pb[:, 1] * t).sum() / denom)
            dzb = _dz_dice(pb, lb, w.lambda_bi)
        else:
            raise ValueError(f"unknown binary loss kind {kind!r}")
        grads["w_bi"] = h[vb].T @ dzb
        grads["b_bi"] = dzb.sum(axis=0)
        dh[vb] += dzb @ params.w_bi.T

    vs = y_sub != IGNORE
    if w.lambda_sub != 0.0 and vs.any():
        if not params.has_sub:
            raise ValueError("subcategory labels supplied but no subcategory head")
        p_sub = _softmax(h[vs] @ params.w_sub + params.b_sub)
        ls = y_sub[vs]
        if ls.max() >= p_sub.shape[1]:
            raise ValueError(f"subcategory label {ls.max()} >= k={p_sub.shape[1]}")
        py = np.clip(p_sub[np.arange(ls.size), ls], PROB_CLAMP, 1 - PROB_CLAMP)
        sub_val = float(np.mean(-np.log(py)))
        dzs = _dz_ce(p_sub, ls, w.lambda_sub / ls.size)
        grads["w_sub"] = h[vs].T @ dzs
        grads["b_sub"] = dzs.sum(axis=0)
        dh[vs] += dzs @ params.w_sub.T

    dz1 = dh * (z1 > 0.0)
    grads["w1"] = x.T @ dz1
    grads["b1"] = dz1.sum(axis=0)
    return grads, bi_val, sub_val


def backward(params: ModelParams, grid, y_bi, y_sub=None,
             w: LossWeights | None = None, kind: str = LOSS_BCE) -> dict:
    """Analytic gradients of the total loss for one sample.

    The value differentiated is lambda_bi*loss_bi(+ lambda_sub*loss_sub when a
    subcategory mask is given), exactly as the loss functions define them.
    """
    weights = w if w is not None else LossWeights()
    grads, _, _ = pooled_backward(params, [(grid, y_bi, y_sub)], weights, kind)
    return grads


def sgd_step(params: ModelParams, grads: dict, cfg: OptimConfig) -> ModelParams:
    """Momentum step with coupled weight decay under polynomial LR decay."""
    if params.iteration >= cfg.max_iter:
        raise ScheduleExhaustedError(
            f"iteration {params.iteration} reached max_iter {cfg.max_iter}")
    lr = cfg.lr_at(params.iteration)
    for name, arr in params.param_items():
        v = params.velocity[name]
        v *= cfg.momentum
        v += grads[name] + cfg.weight_decay * arr
        arr -= lr * v
    params.iteration += 1
    return params


def shuffled_batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    return [order[i:i + size] for i in range(0, n, size)]


def train_source(params: ModelParams, samples, y_sub, w: LossWeights,
                 optim: OptimConfig, *, kind: str = LOSS_BCE, epochs: int,
                 batch_size: int, rng: np.random.Generator):
    """Mini-batch SGD over labelled source samples.

    y_sub is either None (binary head only) or a list of subcategory masks
    aligned with `samples`. Returns (params, trace) where trace holds one
    row per epoch: epoch, loss_bi, loss_sub, lr.
    """
    trace = []
    for epoch in range(epochs):
        bi_vals, sub_vals = [], []
        for idx in shuffled_batches(len(samples), batch_size, rng):
            batch = [(samples[i].grid, samples[i].biclass,
                      None if y_sub is None else y_sub[i]) for i in idx]
            grads, bi_val, sub_val = pooled_backward(params, batch, w, kind)
            total = w.lambda_bi * bi_val + w.lambda_sub * sub_val
            if not math.isfinite(total):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}: bi={bi_val} sub={sub_val}")
            sgd_step(params, grads, optim)
            bi_vals.append(bi_val)
            sub_vals.append(sub_val)
        trace.append({
            "epoch": epoch,
            "loss_bi": float(np.mean(bi_vals)),
            "loss_sub": float(np.mean(sub_vals)),
            "lr": optim.lr_at(params.iteration - 1),
        })
    return params, trace


def to_prediction_map(probs: np.ndarray) -> PredictionMap:
    """Wrap raw per-pixel probabilities in the storage type (float32)."""
    return PredictionMap(np.asarray(probs, dtype=np.float32))
