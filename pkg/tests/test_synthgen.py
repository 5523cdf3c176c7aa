"""Synthetic world generator: layouts, labels, shift mechanics, posterior."""

import math

import numpy as np
import pytest

from scast.config import RunConfig, WorldConfig, validate
from scast.errors import GenerationError
from scast.synthgen import (
    TEXT_FRAC_HI,
    TEXT_FRAC_LO,
    Domain,
    WorldSpec,
    bayes_posterior,
    default_world,
    generate_domain,
)


def _cfg(**world_kw):
    return validate(RunConfig(world=WorldConfig(**world_kw)))


def _tiny_spec(shift=(0.0, 0.0), seed=0, sigma=0.1):
    """One text and one background subpopulation in a 2-D feature space."""
    return WorldSpec(
        s_text=1,
        s_back=1,
        means=np.array([[4.0, 0.0], [-4.0, 0.0]]),
        noise_sigma=sigma,
        shift=np.asarray(shift, dtype=np.float64),
        height=16,
        width=16,
        block=4,
        text_regions=(1, 2),
        region_size=(4, 8),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# default world geometry
# ---------------------------------------------------------------------------

def test_default_world_echoes_config():
    cfg = _cfg()
    spec = default_world(cfg)
    assert spec.s_text == 3 and spec.s_back == 3
    assert spec.means.shape == (6, 8)
    assert spec.height == 64 and spec.width == 64
    assert spec.block == cfg.downsample
    assert spec.seed == cfg.seed


def test_default_world_separation_is_exact():
    spec = default_world(_cfg())
    sep = 10.0 * 0.5
    d = np.sqrt(((spec.means[:, None] - spec.means[None, :]) ** 2).sum(-1))
    off = d[~np.eye(6, dtype=bool)]
    np.testing.assert_allclose(off, sep, atol=1e-12)


def test_default_world_shift_has_requested_norm():
    spec = default_world(_cfg())
    assert np.linalg.norm(spec.shift) == pytest.approx(1.5, abs=1e-12)


def test_default_world_zero_shift_norm_gives_zero_vector():
    spec = default_world(_cfg(shift_norm=0.0))
    np.testing.assert_array_equal(spec.shift, 0.0)


def test_default_world_shift_touches_one_text_one_back_axis():
    spec = default_world(_cfg())
    nz = np.flatnonzero(spec.shift)
    assert list(nz) == [0, spec.s_text]


# ---------------------------------------------------------------------------
# spec validation
# ---------------------------------------------------------------------------

def test_spec_rejects_duplicate_means():
    kw = dict(s_text=1, s_back=1, noise_sigma=0.5, shift=np.zeros(2),
              height=16, width=16, block=4, text_regions=(1, 2),
              region_size=(4, 8), seed=0)
    with pytest.raises(GenerationError):
        WorldSpec(means=np.array([[1.0, 0.0], [1.0, 0.0]]), **kw)


def test_spec_rejects_bad_block_and_sigma():
    base = dict(s_text=1, s_back=1, means=np.array([[4.0, 0.0], [-4.0, 0.0]]),
                shift=np.zeros(2), text_regions=(1, 2), region_size=(4, 8), seed=0)
    with pytest.raises(GenerationError):
        WorldSpec(noise_sigma=0.5, height=15, width=16, block=4, **base)
    with pytest.raises(GenerationError):
        WorldSpec(noise_sigma=0.0, height=16, width=16, block=4, **base)


def test_spec_rejects_region_without_walkway():
    base = dict(s_text=1, s_back=1, means=np.array([[4.0, 0.0], [-4.0, 0.0]]),
                noise_sigma=0.5, shift=np.zeros(2), seed=0)
    with pytest.raises(GenerationError):
        WorldSpec(height=16, width=16, block=4, text_regions=(1, 1),
                  region_size=(4, 16), **base)


def test_generate_rejects_negative_count():
    with pytest.raises(GenerationError):
        generate_domain(_tiny_spec(), "source", -1)


# ---------------------------------------------------------------------------
# sample structure
# ---------------------------------------------------------------------------

def test_labels_and_features_are_consistent():
    spec = default_world(_cfg())
    for s in generate_domain(spec, "source", 4):
        assert s.grid.features.shape == (64, 64, 8)
        assert s.grid.features.dtype == np.float32
        sub = s.true_subpop.labels
        assert sub.min() >= 0 and sub.max() < spec.n_subpops
        np.testing.assert_array_equal(s.biclass.labels, (sub < spec.s_text))


def test_cells_are_block_pure():
    spec = default_world(_cfg())
    (s,) = generate_domain(spec, "target", 1)
    sub = s.true_subpop.labels
    b = spec.block
    tiles = sub.reshape(64 // b, b, 64 // b, b).transpose(0, 2, 1, 3)
    flat = tiles.reshape(-1, b * b)
    assert (flat == flat[:, :1]).all()


def test_text_fraction_stays_in_band():
    spec = default_world(_cfg())
    for s in generate_domain(spec, "source", 8):
        frac = float((s.biclass.labels == 1).mean())
        assert TEXT_FRAC_LO <= frac <= TEXT_FRAC_HI


def test_every_background_subpopulation_appears():
    spec = default_world(_cfg())
    for s in generate_domain(spec, "source", 6):
        present = set(np.unique(s.true_subpop.labels))
        assert set(range(spec.s_text, spec.n_subpops)) <= present


def test_all_text_subpopulations_appear_across_a_batch():
    spec = default_world(_cfg())
    seen = set()
    for s in generate_domain(spec, "source", 16):
        seen |= set(np.unique(s.true_subpop.labels))
    assert seen == set(range(spec.n_subpops))


def test_feature_noise_matches_planted_means():
    spec = _tiny_spec(sigma=0.05)
    (s,) = generate_domain(spec, "source", 1)
    sub = s.true_subpop.labels
    resid = s.grid.features - spec.means[sub]
    assert np.abs(resid).max() < 0.05 * 6  # six sigma


# ---------------------------------------------------------------------------
# determinism and domain mechanics
# ---------------------------------------------------------------------------

def test_generation_is_bitwise_deterministic():
    spec = default_world(_cfg())
    a = generate_domain(spec, "source", 3)
    b = generate_domain(spec, "source", 3)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.grid.features, y.grid.features)
        np.testing.assert_array_equal(x.true_subpop.labels, y.true_subpop.labels)


def test_samples_are_indexed_not_sequential():
    spec = default_world(_cfg())
    long = generate_domain(spec, "target", 5)
    short = generate_domain(spec, "target", 3)
    for x, y in zip(short, long):
        np.testing.assert_array_equal(x.grid.features, y.grid.features)


def test_domains_use_independent_streams():
    spec = _tiny_spec()
    (src,) = generate_domain(spec, "source", 1)
    (tgt,) = generate_domain(spec, "target", 1)
    assert not np.array_equal(src.grid.features, tgt.grid.features)


def test_shift_moves_target_features_only():
    shift = np.array([0.7, -0.2])
    plain = _tiny_spec(shift=(0.0, 0.0), seed=5)
    moved = _tiny_spec(shift=tuple(shift), seed=5)
    src0 = generate_domain(plain, "source", 2)
    src1 = generate_domain(moved, "source", 2)
    for a, b in zip(src0, src1):
        np.testing.assert_array_equal(a.grid.features, b.grid.features)
    tgt0 = generate_domain(plain, "target", 2)
    tgt1 = generate_domain(moved, "target", 2)
    for a, b in zip(tgt0, tgt1):
        np.testing.assert_array_equal(a.true_subpop.labels, b.true_subpop.labels)
        np.testing.assert_allclose(
            b.grid.features, a.grid.features + shift.astype(np.float32), atol=1e-4)


def test_domain_accepts_enum_and_string():
    spec = _tiny_spec()
    (a,) = generate_domain(spec, Domain.SOURCE, 1)
    (b,) = generate_domain(spec, "SOURCE", 1)
    np.testing.assert_array_equal(a.grid.features, b.grid.features)


# ---------------------------------------------------------------------------
# exact posterior
# ---------------------------------------------------------------------------

def test_posterior_midpoint_is_even_odds():
    spec = _tiny_spec()
    mid = spec.means.mean(axis=0)
    np.testing.assert_allclose(bayes_posterior(spec, "source", mid),
                               [0.5, 0.5], atol=1e-12)


def test_posterior_at_means_is_confident():
    spec = _tiny_spec(sigma=0.5)
    np.testing.assert_allclose(
        bayes_posterior(spec, "source", spec.means[0]), [0.0, 1.0], atol=1e-10)
    np.testing.assert_allclose(
        bayes_posterior(spec, "source", spec.means[1]), [1.0, 0.0], atol=1e-10)


def test_posterior_sums_to_one():
    spec = default_world(_cfg())
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.normal(size=spec.d_in) * 10
        p = bayes_posterior(spec, "target", x)
        assert p.shape == (2,)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)
        assert (p >= 0).all()


def test_posterior_monotone_along_the_margin():
    spec = _tiny_spec(sigma=2.0)  # wide noise keeps the curve off 0 and 1
    ts = np.linspace(0.0, 1.0, 9)
    vals = [bayes_posterior(spec, "source",
                            (1 - t) * spec.means[1] + t * spec.means[0])[1]
            for t in ts]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_posterior_target_is_source_shifted():
    spec = _tiny_spec(shift=(0.9, -0.4))
    rng = np.random.default_rng(1)
    for _ in range(10):
        x = rng.normal(size=2) * 4
        np.testing.assert_allclose(
            bayes_posterior(spec, "target", x + spec.shift),
            bayes_posterior(spec, "source", x), atol=1e-12)


def test_posterior_shape_checked():
    spec = _tiny_spec()
    with pytest.raises(GenerationError):
        bayes_posterior(spec, "source", np.zeros(3))


def test_posterior_classifies_generated_pixels():
    # 10-sigma class separation: the exact posterior recovers the labels
    spec = default_world(_cfg())
    (s,) = generate_domain(spec, "source", 1)
    rng = np.random.default_rng(2)
    hh = rng.integers(0, 64, size=100)
    ww = rng.integers(0, 64, size=100)
    for r, c in zip(hh, ww):
        p = bayes_posterior(spec, "source", s.grid.features[r, c])
        assert int(p.argmax()) == int(s.biclass.labels[r, c])
