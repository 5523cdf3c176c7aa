"""Acceptance gates: nine end-to-end checks, one verdict line each.

Run `pytest tests/test_acceptance.py -v -s` to watch the verdict lines
stream. Gates 4-7 train multi-seed ablations at the default configuration
and dominate the runtime (roughly 30-45 minutes on one core); everything
else finishes in seconds. Each gate prints `[gate N] PASS/FAIL - detail`
before asserting, so a red run still reports every measured number.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from _oracles import dbscan_reference, random_point_cloud, threshold_reference
from test_model import _fd_check, _grid, _mask

from scast import (
    ClusterParams,
    CoRegConfig,
    IGNORE,
    LossWeights,
    OptimConfig,
    RunConfig,
    allocate_sub_head,
    assign_pseudo_labels,
    clustering_ari,
    compute_thresholds,
    coreg_distance,
    coreg_filter_pooled,
    dbscan,
    default_world,
    dense_prf,
    discover_subcategories,
    forward,
    generate_domain,
    init_params,
    likelihood_metric,
    mean_entropy,
    parse_mode,
    pseudo_error_rate,
    read_tensor,
    run,
    scope_mask,
    score_histogram,
    stream,
    train_source,
    validate,
    write_tensor,
)
from scast.cli import main
from scast.selftrain import planned_iterations, source_phase_epochs

SEEDS = range(5)
FIXTURE = Path(__file__).parent / "fixtures" / "known.scst"


def _gate(num: int, body):
    """Run one gate, print its verdict line, re-raise on failure."""
    try:
        detail = body()
    except AssertionError as exc:
        print(f"[gate {num}] FAIL - {exc}", flush=True)
        raise
    print(f"[gate {num}] PASS - {detail}", flush=True)


def _cfg(seed: int) -> RunConfig:
    return validate(RunConfig(seed=seed))


# ----------------------------------------------------------------- fixtures

@pytest.fixture(scope="module")
def paired_runs():
    """Per seed: (baseline run, subcategory-head run) at the defaults."""
    out = {}
    for seed in SEEDS:
        cfg = _cfg(seed)
        out[seed] = (run(cfg, parse_mode("baseline")), run(cfg, parse_mode("sck")))
    return out


@pytest.fixture(scope="module")
def ablation_scores():
    """Final target dense F and wall time for every self-training mode."""
    fs, secs = {}, {}
    for mode in ("st2", "st2_sck", "full"):
        for seed in SEEDS:
            t0 = time.monotonic()
            res = run(_cfg(seed), parse_mode(mode))
            secs[mode, seed] = time.monotonic() - t0
            fs[mode, seed] = res.rows[-1]["f_score"]
    return fs, secs


def _eval_stats(res):
    """Pooled target-eval text-pixel entropy, likelihood, and edge mass."""
    probs, truth = [], []
    for s in res.target_eval:
        _, p_bi, _ = forward(res.state.params, s.grid, want_sub=False)
        probs.append(np.asarray(p_bi, dtype=np.float64).reshape(-1, 2))
        truth.append(s.biclass.labels.ravel())
    pooled = np.concatenate(probs)[None, :, :]
    text = scope_mask(np.concatenate(truth)[None, :], "text")
    return (mean_entropy(pooled, text),
            likelihood_metric(pooled, text),
            score_histogram(pooled, 1, 100, where=text).edge_mass())


# -------------------------------------------------------------------- gates

def test_gate_1_gradients_match_finite_differences():
    def body():
        t0 = time.monotonic()
        rng = np.random.default_rng(101)
        sweeps = 0
        for trial in range(20):
            params = init_params(3, 5, stream(9001, "fd", trial))
            allocate_sub_head(params, 4, stream(9001, "fdsub", trial))
            grid = _grid(rng.normal(size=(4, 4, 3)))
            y_bi = rng.integers(0, 2, size=(4, 4))
            y_bi[rng.random((4, 4)) < 0.15] = IGNORE
            y_bi.flat[0] = 1  # keep the binary loss defined
            y_bi.flat[1] = 0
            y_sub = rng.integers(0, 4, size=(4, 4))
            y_sub[rng.random((4, 4)) < 0.15] = IGNORE
            y_sub.flat[0] = 2
            bi, sub = _mask(y_bi), _mask(y_sub, num_classes=4)
            kind_t = "dice" if trial % 2 else "bce"
            # binary loss alone (both kinds), subcategory loss alone, and the
            # weighted two-head objective
            _fd_check(params, grid, bi, None, LossWeights(), "bce")
            _fd_check(params, grid, bi, None, LossWeights(), "dice")
            _fd_check(params, grid, bi, sub, LossWeights(0.0, 1.0), "bce")
            _fd_check(params, grid, bi, sub, LossWeights(1.0, 1.0), kind_t)
            sweeps += 4
        elapsed = time.monotonic() - t0
        assert elapsed < 10.0, f"gradient sweeps took {elapsed:.1f}s (cap 10s)"
        return (f"{sweeps} finite-difference sweeps on 20 random 4x4 "
                f"instances within 1e-4 in {elapsed:.1f}s")
    _gate(1, body)


def test_gate_2_dbscan_matches_density_connectivity_reference():
    def body():
        t0 = time.monotonic()
        rng = np.random.default_rng(202)
        for i in range(200):
            pts, eps, min_pts = random_point_cloud(rng)
            got = dbscan(pts, eps, min_pts)
            ref = dbscan_reference(pts, eps, min_pts)
            assert np.array_equal(got, ref), (
                f"instance {i}: labels diverge from the reference "
                f"(n={len(pts)}, eps={eps:.3f}, min_pts={min_pts})")
        elapsed = time.monotonic() - t0
        assert elapsed < 30.0, f"clustering took {elapsed:.1f}s (cap 30s)"
        return (f"200 point clouds, exact label equality with the "
                f"union-find reference in {elapsed:.1f}s")
    _gate(2, body)


def test_gate_3_threshold_selection_matches_sort_reference():
    def body():
        rng = np.random.default_rng(303)
        rungs = (20.0, 40.0, 60.0, 80.0, 100.0)
        maps = []
        for _ in range(100):
            c = int(rng.choice([2, 3, 5]))
            side = int(rng.integers(4, 13))
            logits = rng.normal(size=(side, side, c))
            e = np.exp(logits - logits.max(axis=2, keepdims=True))
            maps.append(e / e.sum(axis=2, keepdims=True))
        for i, p in enumerate(maps):
            flat = p.reshape(-1, p.shape[2])
            winner = flat.argmax(axis=1)
            for rho in rungs:
                th = compute_thresholds(p, rho)
                ref_theta, ref_counts = threshold_reference([p], rho)
                assert np.array_equal(th.thresholds, ref_theta), (
                    f"map {i} rho {rho}: thresholds diverge from reference")
                labels = assign_pseudo_labels(p, th).labels
                for k in range(p.shape[2]):
                    n_k = int((winner == k).sum())
                    expect = 0 if n_k == 0 else max(1, math.floor(n_k * rho / 100.0))
                    got = int((labels == k).sum())
                    assert got == expect == ref_counts[k], (
                        f"map {i} rho {rho} class {k}: "
                        f"{got} selected, floor rule says {expect}")
        # the pooled (dataset-level) path agrees with the same reference
        two_ch = [p for p in maps if p.shape[2] == 2]
        for rho in rungs:
            pooled_theta, _ = threshold_reference(two_ch, rho)
            assert np.array_equal(
                compute_thresholds(two_ch, rho).thresholds, pooled_theta)
        return ("100 random maps x 5 rungs: thresholds and per-class counts "
                "match the sort-and-index reference exactly")
    _gate(3, body)


def test_gate_4_subcategory_recovery_on_default_world():
    def body():
        t0 = time.monotonic()
        recovered = []
        mode = parse_mode("sck")
        for seed in SEEDS:
            cfg = _cfg(seed)
            world = default_world(cfg)
            train = generate_domain(world, "source", cfg.world.n_train)
            params = init_params(cfg.d_in, cfg.d_h, stream(seed, "init"))
            optim = OptimConfig(
                lr0=cfg.lr0, momentum=cfg.momentum,
                weight_decay=cfg.weight_decay, power=cfg.power,
                max_iter=planned_iterations(cfg, mode, cfg.world.n_train,
                                            cfg.world.n_train))
            phase_a, _ = source_phase_epochs(cfg, mode)
            params, _ = train_source(params, train, None, LossWeights(), optim,
                                     kind=cfg.loss, epochs=phase_a,
                                     batch_size=cfg.batch_size,
                                     rng=stream(seed, "train", "src"))
            feats = [forward(params, s.grid, want_sub=False)[0] for s in train]
            model, y_sub = discover_subcategories(
                feats, [s.biclass for s in train],
                ClusterParams(eps=cfg.eps, min_pts=cfg.min_pts,
                              downsample=cfg.downsample))
            ari = clustering_ari(np.stack([y.labels for y in y_sub]),
                                 np.stack([s.true_subpop.labels for s in train]))
            recovered.append((seed, model.k_text, model.k_back, ari))
        elapsed = time.monotonic() - t0
        ok = [s for s, kt, kb, a in recovered if kt == 3 and kb == 3 and a >= 0.9]
        rows = "; ".join(f"seed {s}: k=({kt},{kb}) ari={a:.4f}"
                         for s, kt, kb, a in recovered)
        assert len(ok) >= 4, f"only {len(ok)}/5 seeds recovered (3,3): {rows}"
        assert elapsed < 300.0, f"recovery took {elapsed:.0f}s (cap 300s)"
        return f"{len(ok)}/5 seeds recover k=(3,3) with ari>=0.9 in {elapsed:.0f}s ({rows})"
    _gate(4, body)


def test_gate_5_subcategory_head_softens_target_confidence(paired_runs):
    def body():
        ent_up = lik_down = mass_down = 0
        rows = []
        for seed in SEEDS:
            base, sck = paired_runs[seed]
            b_ent, b_lik, b_mass = _eval_stats(base)
            s_ent, s_lik, s_mass = _eval_stats(sck)
            ent_up += s_ent > b_ent
            lik_down += s_lik < b_lik
            mass_down += s_mass < b_mass
            rows.append(f"seed {seed}: ent {b_ent:.3f}->{s_ent:.3f} "
                        f"lik {b_lik:.0f}->{s_lik:.0f} "
                        f"mass {b_mass:.4f}->{s_mass:.4f}")
        detail = "; ".join(rows)
        assert ent_up >= 4, f"entropy rose on {ent_up}/5 seeds ({detail})"
        assert lik_down >= 4, f"likelihood fell on {lik_down}/5 seeds ({detail})"
        assert mass_down >= 4, f"edge mass fell on {mass_down}/5 seeds ({detail})"
        return (f"text-pixel entropy up {ent_up}/5, likelihood down "
                f"{lik_down}/5, first+last-bin mass down {mass_down}/5")
    _gate(5, body)


def test_gate_6_disagreement_filter_never_raises_error(paired_runs):
    def body():
        improved = 0
        rows = []
        for seed in SEEDS:
            _, sck = paired_runs[seed]
            cfg = _cfg(seed)
            rho = cfg.rho_schedule[0]
            p_bi, p_sub = [], []
            for s in sck.target_train:
                _, pb, ps = forward(sck.state.params, s.grid, want_sub=True)
                p_bi.append(pb)
                p_sub.append(ps)
            th_bi = compute_thresholds(p_bi, rho)
            th_sub = compute_thresholds(p_sub, rho)
            m_bi = [assign_pseudo_labels(p, th_bi) for p in p_bi]
            m_sub = [assign_pseudo_labels(p, th_sub) for p in p_sub]
            dists = [coreg_distance(pb, ps, sck.state.submodel.parent)
                     for pb, ps in zip(p_bi, p_sub)]
            f_bi, _, rep = coreg_filter_pooled(m_bi, m_sub, dists,
                                               CoRegConfig(cfg.rho_reg))

            # the drop is exactly rho_reg percent of candidates, up to ties
            # at the cutoff distance
            cand = np.concatenate([
                np.asarray(d)[(b.labels != IGNORE) | (s.labels != IGNORE)]
                for b, s, d in zip(m_bi, m_sub, dists)])
            quota = max(1, math.floor(cand.size * cfg.rho_reg / 100.0))
            at_least = int((cand >= rep.theta_reg).sum())
            above = int((cand > rep.theta_reg).sum())
            assert rep.n_candidates == cand.size
            assert rep.n_dropped == at_least, "drop count != pixels at/over cutoff"
            assert above < quota <= rep.n_dropped, (
                f"seed {seed}: dropped {rep.n_dropped}, quota {quota}, "
                f"{above} strictly above the cutoff")

            truth = np.stack([s.biclass.labels for s in sck.target_train])
            e_raw = pseudo_error_rate(np.stack([m.labels for m in m_bi]), truth)
            e_fil = pseudo_error_rate(np.stack([m.labels for m in f_bi]), truth)
            improved += e_fil <= e_raw
            rows.append(f"seed {seed}: err {e_raw:.4f}->{e_fil:.4f} "
                        f"drop {rep.n_dropped}/{rep.n_candidates}")
        detail = "; ".join(rows)
        assert improved >= 4, f"filtered error worse on {5 - improved}/5 seeds ({detail})"
        return f"filtered error <= unfiltered on {improved}/5 seeds ({detail})"
    _gate(6, body)


def test_gate_7_ablation_ordering_of_target_f(paired_runs, ablation_scores):
    def body():
        fs, secs = ablation_scores
        mean = {m: float(np.mean([fs[m, s] for s in SEEDS]))
                for m in ("st2", "st2_sck", "full")}
        mean["baseline"] = float(np.mean(
            [paired_runs[s][0].rows[-1]["f_score"] for s in SEEDS]))
        slowest = max(secs.values())
        chain = (f"baseline {mean['baseline']:.4f} < st2 {mean['st2']:.4f} "
                 f"<= st2_sck {mean['st2_sck']:.4f} <= full {mean['full']:.4f}")
        assert mean["baseline"] < mean["st2"], f"5-seed means violate the chain: {chain}"
        assert mean["st2"] <= mean["st2_sck"], f"5-seed means violate the chain: {chain}"
        assert mean["st2_sck"] <= mean["full"], f"5-seed means violate the chain: {chain}"
        assert slowest < 900.0, f"slowest self-training run took {slowest:.0f}s (cap 900s)"
        return f"{chain}; slowest run {slowest:.0f}s"
    _gate(7, body)


def test_gate_8_identical_configs_are_byte_identical(tmp_path):
    def body():
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(
            '{"seed": 0, "source_epochs": 6, "epochs_per_round": 1,'
            ' "world": {"n_train": 8, "n_eval": 4}}')
        trees = []
        for tag in ("a", "b"):
            world = tmp_path / f"world-{tag}"
            out = tmp_path / f"run-{tag}"
            assert main(["gen", "--config", str(cfg_path),
                         "--out", str(world)]) == 0
            assert main(["selftrain", "--config", str(cfg_path),
                         "--out", str(out), "--mode", "full"]) == 0
            tree = {}
            for root in (world, out):
                for f in sorted(root.rglob("*")):
                    if f.is_file():
                        tree[f"{root.name.split('-')[0]}/{f.relative_to(root)}"] = \
                            f.read_bytes()
            trees.append(tree)
        first, second = trees
        assert first.keys() == second.keys(), (
            f"file sets differ: {sorted(set(first) ^ set(second))}")
        diff = [k for k in first if first[k] != second[k]]
        assert not diff, f"bytes differ in {diff}"
        return (f"{len(first)} files (checkpoints, masks, CSVs, manifests) "
                f"byte-identical across two end-to-end runs")
    _gate(8, body)


def test_gate_9_tensor_format_round_trip_and_fixture(tmp_path):
    def body():
        rng = np.random.default_rng(909)
        dtypes = (np.float32, np.uint8, np.int32)
        for i in range(1000):
            ndim = int(rng.integers(1, 5))
            dims = tuple(int(rng.integers(1, 6)) for _ in range(ndim))
            dt = dtypes[int(rng.integers(0, 3))]
            if dt is np.float32:
                arr = rng.normal(size=dims).astype(np.float32)
            else:
                arr = rng.integers(0, 200, size=dims).astype(dt)
            path = tmp_path / "t.scst"
            write_tensor(arr, path)
            back = read_tensor(path)
            assert back.dtype == arr.dtype and back.shape == arr.shape
            assert np.array_equal(back, arr), f"tensor {i} round trip diverged"
            write_tensor(back, tmp_path / "t2.scst")
            assert (tmp_path / "t2.scst").read_bytes() == path.read_bytes(), (
                f"tensor {i}: rewrite is not byte-stable")
        known = read_tensor(FIXTURE)
        assert np.array_equal(known, np.array([[1, 2], [3, 4]], dtype=np.int32))
        write_tensor(known, tmp_path / "fixture-again.scst")
        assert (tmp_path / "fixture-again.scst").read_bytes() == FIXTURE.read_bytes()
        return "1000 random tensors round-trip byte-stably; fixture bytes reproduced"
    _gate(9, body)
