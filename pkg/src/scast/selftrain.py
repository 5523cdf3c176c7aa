"""Multi-round self-training driver.

The loop alternates two steps per round: (1) with parameters frozen, predict
the target split and select pseudo labels at the round's selection
percentage, optionally dropping head-disagreement outliers; (2) retrain on
mixed batches — half source with true labels, half target with pseudo labels.
The selection percentage follows the easy-to-hard schedule, and the learning
rate decays polynomially over the whole run (source phases plus all rounds).

Ablation switches select which ingredients are active, from the plain
source-only baseline up to the full method.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .errors import ScheduleExhaustedError, TrainingDivergedError
from .metrics import dense_prf, likelihood_metric, mean_entropy, pseudo_error_rate
from .model import (
    LossWeights,
    ModelParams,
    OptimConfig,
    allocate_sub_head,
    forward,
    init_params,
    pooled_backward,
    sgd_step,
    shuffled_batches,
    train_source,
)
from .pseudolabel import (
    CoRegConfig,
    CoRegReport,
    assign_pseudo_labels,
    compute_thresholds,
    coreg_distance,
    coreg_filter_pooled,
)
from .rng import stream
from .subcat import ClusterParams, SubcategoryModel, discover_subcategories
from .synthgen import Domain, default_world, generate_domain
from .types import IGNORE


@dataclass(frozen=True)
class AblationMode:
    use_sc_k: bool = False   # subcategory head trained on source clusters
    use_st_2: bool = False   # binary pseudo-label self-training
    use_st_k: bool = False   # subcategory pseudo-label self-training
    use_reg: bool = False    # head-disagreement filtering

    def __post_init__(self):
        if self.use_st_k and not self.use_sc_k:
            raise ValueError("subcategory self-training requires the subcategory head")
        if self.use_reg and not (self.use_st_k and self.use_st_2):
            raise ValueError("co-regularization requires both pseudo-label heads")

    @property
    def any_rounds(self) -> bool:
        return self.use_st_2 or self.use_st_k


MODES = {
    "baseline": AblationMode(),
    "sck": AblationMode(use_sc_k=True),
    "st2": AblationMode(use_st_2=True),
    "st2_sck": AblationMode(use_sc_k=True, use_st_2=True),
    "st2_sck_stk": AblationMode(use_sc_k=True, use_st_2=True, use_st_k=True),
    "full": AblationMode(use_sc_k=True, use_st_2=True, use_st_k=True, use_reg=True),
}


def parse_mode(name: str) -> AblationMode:
    try:
        return MODES[name]
    except KeyError:
        raise ValueError(f"unknown mode {name!r}; choose one of {sorted(MODES)}") from None


@dataclass
class SelfTrainState:
    round_index: int
    params: ModelParams
    submodel: SubcategoryModel | None
    optim: OptimConfig
    pseudo_bi: list | None = None
    pseudo_sub: list | None = None
    last_coreg: object = None
    log: list = field(default_factory=list)


def source_phase_epochs(cfg: RunConfig, mode: AblationMode) -> tuple[int, int]:
    """Split the source budget into (before, after) discovery.

    The total is always cfg.source_epochs, so ablations with and without the
    subcategory head see the same amount of source supervision and stay
    comparable; without the head the second phase is empty. Discovery sits at
    the halfway mark: late enough that features carry the planted structure,
    early enough that the subcategory objective still reshapes a model whose
    binary head has not finished hardening.
    """
    if not mode.use_sc_k:
        return cfg.source_epochs, 0
    second = cfg.source_epochs // 2
    return cfg.source_epochs - second, second


def planned_iterations(cfg: RunConfig, mode: AblationMode,
                       n_source: int, n_target: int) -> int:
    """Exact SGD step count of a run, so the LR schedule spans it precisely."""
    per_src = math.ceil(n_source / cfg.batch_size)
    phase_a, phase_b = source_phase_epochs(cfg, mode)
    iters = per_src * (phase_a + phase_b)
    if mode.any_rounds:
        per_round = math.ceil(n_target / (cfg.batch_size // 2))
        iters += per_round * cfg.epochs_per_round * len(cfg.rho_schedule)
    return max(iters, 1)


class _Cycler:
    """Endless shuffled index stream; reshuffles each time it wraps."""

    def __init__(self, n: int, rng: np.random.Generator):
        self._n = n
        self._rng = rng
        self._order = rng.permutation(n)
        self._pos = 0

    def take(self, count: int) -> list[int]:
        out = []
        while len(out) < count:
            if self._pos == self._n:
                self._order = self._rng.permutation(self._n)
                self._pos = 0
            out.append(int(self._order[self._pos]))
            self._pos += 1
        return out


def _select_pseudo_labels(state: SelfTrainState, target_samples, cfg: RunConfig,
                          mode: AblationMode, coreg_per_image: bool):
    """Round step 1: frozen-parameter prediction and label selection."""
    rho = cfg.rho_schedule[state.round_index]
    p_bis, p_subs = [], []
    for s in target_samples:
        _, p_bi, p_sub = forward(state.params, s.grid, want_sub=mode.use_st_k)
        p_bis.append(p_bi)
        p_subs.append(p_sub)

    y_bi = y_sub = None
    if mode.use_st_2:
        theta_bi = compute_thresholds(p_bis, rho)
        y_bi = [assign_pseudo_labels(p, theta_bi) for p in p_bis]
    if mode.use_st_k:
        theta_sub = compute_thresholds(p_subs, rho)
        y_sub = [assign_pseudo_labels(p, theta_sub) for p in p_subs]

    report = None
    if mode.use_reg:
        parent = state.submodel.parent
        dists = [coreg_distance(pb, ps, parent) for pb, ps in zip(p_bis, p_subs)]
        coreg = CoRegConfig(cfg.rho_reg, per_image=coreg_per_image)
        if coreg.per_image:
            new_bi, new_sub = [], []
            candidates = dropped = 0
            for b, s, d in zip(y_bi, y_sub, dists):
                fb, fs, rep = coreg_filter_pooled([b], [s], [d], coreg)
                new_bi.append(fb[0])
                new_sub.append(fs[0])
                candidates += rep.n_candidates
                dropped += rep.n_dropped
            y_bi, y_sub = new_bi, new_sub
            report = CoRegReport(theta_reg=None, n_candidates=candidates,
                                 n_dropped=dropped)
        else:
            y_bi, y_sub, report = coreg_filter_pooled(y_bi, y_sub, dists, coreg)

    state.pseudo_bi = y_bi
    state.pseudo_sub = y_sub
    state.last_coreg = report


def run_round(state: SelfTrainState, source_samples, source_ysub, target_samples,
              cfg: RunConfig, mode: AblationMode, *, coreg_per_image: bool = False):
    """One alternation: pseudo-label selection, then retraining.

    With neither self-training flag set the target side is untouched and the
    round degenerates to more source training.
    """
    if state.round_index >= len(cfg.rho_schedule):
        raise ScheduleExhaustedError(
            f"round {state.round_index} exceeds schedule of {len(cfg.rho_schedule)}")
    if mode.any_rounds:
        _select_pseudo_labels(state, target_samples, cfg, mode, coreg_per_image)

    w = LossWeights(cfg.lambda_bi, cfg.lambda_sub)
    rng = stream(cfg.seed, "round", state.round_index, "batches")
    half = cfg.batch_size // 2

    def step(src_batch, tgt_batch):
        grads, bi_s, sub_s = pooled_backward(state.params, src_batch, w, cfg.loss)
        total = w.lambda_bi * bi_s + w.lambda_sub * sub_s
        if tgt_batch:
            g_t, bi_t, sub_t = pooled_backward(state.params, tgt_batch, w, cfg.loss)
            for name in grads:
                grads[name] = grads[name] + g_t[name]
            total += w.lambda_bi * bi_t + w.lambda_sub * sub_t
        if not math.isfinite(total):
            raise TrainingDivergedError(
                f"non-finite loss in round {state.round_index}")
        sgd_step(state.params, grads, state.optim)

    if mode.any_rounds:
        src_rng = stream(cfg.seed, "round", state.round_index, "source")
        cycler = _Cycler(len(source_samples), src_rng)
        for _ in range(cfg.epochs_per_round):
            for chunk in shuffled_batches(len(target_samples), half, rng):
                tgt_batch = [
                    (target_samples[j].grid,
                     state.pseudo_bi[j] if mode.use_st_2 else None,
                     state.pseudo_sub[j] if mode.use_st_k else None)
                    for j in chunk
                ]
                src_batch = [
                    (source_samples[j].grid, source_samples[j].biclass,
                     source_ysub[j] if source_ysub is not None else None)
                    for j in cycler.take(len(chunk))
                ]
                step(src_batch, tgt_batch)
    else:
        for _ in range(cfg.epochs_per_round):
            for chunk in shuffled_batches(len(source_samples), cfg.batch_size, rng):
                src_batch = [
                    (source_samples[j].grid, source_samples[j].biclass,
                     source_ysub[j] if source_ysub is not None else None)
                    for j in chunk
                ]
                step(src_batch, [])

    state.round_index += 1
    return state


def _masks_selected(masks) -> int:
    if masks is None:
        return 0
    return int(sum((m.labels != IGNORE).sum() for m in masks))


def _eval_row(state: SelfTrainState, target_train, target_eval, label):
    """Metrics over the held-out target split plus pseudo-label quality."""
    preds, truths = [], []
    p_flat = []
    for s in target_eval:
        _, p_bi, _ = forward(state.params, s.grid, want_sub=False)
        preds.append(np.argmax(p_bi, axis=2).astype(np.int32))
        truths.append(s.biclass.labels)
        p_flat.append(p_bi.reshape(-1, 2))
    pred = np.stack(preds)
    true = np.stack(truths)
    pooled = np.concatenate(p_flat)[None, :, :]   # [1, n_pixels, 2]
    precision, recall, f_score = dense_prf(pred, true)

    if state.pseudo_bi is not None:
        pseudo = np.stack([m.labels for m in state.pseudo_bi])
        truth_train = np.stack([s.biclass.labels for s in target_train])
        err = pseudo_error_rate(pseudo, truth_train)
    else:
        err = float("nan")

    return {
        "round": label,
        "rho": state.log[-1]["rho"] if label == "final" and state.log else None,
        "precision": precision,
        "recall": recall,
        "f_score": f_score,
        "entropy": mean_entropy(pooled),
        "likelihood": likelihood_metric(pooled),
        "err_rate": err,
        "selected_bi": _masks_selected(state.pseudo_bi),
        "selected_sub": _masks_selected(state.pseudo_sub),
        "dropped": state.last_coreg.n_dropped if state.last_coreg else 0,
    }


@dataclass
class RunResult:
    state: SelfTrainState
    rows: list
    world: object
    source_train: list
    source_eval: list
    target_train: list
    target_eval: list
    source_ysub: list | None
    source_trace: list


def run(cfg: RunConfig, mode: AblationMode, *, coreg_per_image: bool = False,
        round_hook=None) -> RunResult:
    """Generate the paired domains and execute the selected pipeline.

    Source training always happens; discovery and the subcategory head only
    under use_sc_k; self-training rounds only when a pseudo-label flag is on
    (the baseline stops after source training, matching its definition as
    "source-only"). Returns the final state plus one metrics row per executed
    round and a final row. ``round_hook``, if given, is called with the state
    after each completed round (for snapshotting).
    """
    world = default_world(cfg)
    n = cfg.world.n_train + cfg.world.n_eval
    src = generate_domain(world, Domain.SOURCE, n)
    tgt = generate_domain(world, Domain.TARGET, n)
    source_train, source_eval = src[:cfg.world.n_train], src[cfg.world.n_train:]
    target_train, target_eval = tgt[:cfg.world.n_train], tgt[cfg.world.n_train:]

    params = init_params(cfg.d_in, cfg.d_h, stream(cfg.seed, "init"))
    optim = OptimConfig(
        lr0=cfg.lr0, momentum=cfg.momentum, weight_decay=cfg.weight_decay,
        power=cfg.power,
        max_iter=planned_iterations(cfg, mode, len(source_train), len(target_train)),
    )
    w = LossWeights(cfg.lambda_bi, cfg.lambda_sub)

    phase_a, phase_b = source_phase_epochs(cfg, mode)
    _, trace = train_source(
        params, source_train, None, w, optim, kind=cfg.loss,
        epochs=phase_a, batch_size=cfg.batch_size,
        rng=stream(cfg.seed, "train", "src"))

    submodel = None
    source_ysub = None
    if mode.use_sc_k:
        feats = [forward(params, s.grid, want_sub=False)[0] for s in source_train]
        submodel, source_ysub = discover_subcategories(
            feats, [s.biclass for s in source_train],
            ClusterParams(cfg.eps, cfg.min_pts, cfg.downsample))
        allocate_sub_head(params, submodel.k, stream(cfg.seed, "subhead"))
        _, trace_b = train_source(
            params, source_train, source_ysub, w, optim, kind=cfg.loss,
            epochs=phase_b, batch_size=cfg.batch_size,
            rng=stream(cfg.seed, "train", "src-sub"))
        trace = trace + trace_b

    state = SelfTrainState(0, params, submodel, optim)
    rows = []
    if mode.any_rounds:
        for i in range(len(cfg.rho_schedule)):
            run_round(state, source_train, source_ysub, target_train, cfg, mode,
                      coreg_per_image=coreg_per_image)
            state.log.append({"round": i + 1, "rho": cfg.rho_schedule[i]})
            row = _eval_row(state, target_train, target_eval, str(i + 1))
            row["rho"] = cfg.rho_schedule[i]
            rows.append(row)
            if round_hook is not None:
                round_hook(state)
    rows.append(_eval_row(state, target_train, target_eval, "final"))

    return RunResult(state, rows, world, source_train, source_eval,
                     target_train, target_eval, source_ysub, trace)
