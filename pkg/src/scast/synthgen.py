"""Synthetic paired-domain generator with planted subpopulations.

Each sample is a feature grid: axis-aligned rectangular "text" regions over a
background split into vertical strips, every region carrying one planted
subpopulation. Pixel features are the subpopulation mean (shifted by a fixed
vector in the target domain) plus isotropic Gaussian noise, so the exact
class posterior is available in closed form (`bayes_posterior`).

Region edges snap to the `block` grid so that every downsampled cell is pure:
cluster recovery scores are then limited by the method, not by mixed cells.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .config import RunConfig
from .errors import GenerationError
from .rng import stream
from .types import LabelMask, PixelGrid

TEXT_FRAC_LO = 0.05
TEXT_FRAC_HI = 0.30

_PLACE_TRIES = 500
_LAYOUT_RESTARTS = 50


class Domain(enum.Enum):
    SOURCE = "source"
    TARGET = "target"


def _as_domain(domain) -> Domain:
    if isinstance(domain, Domain):
        return domain
    return Domain(str(domain).lower())


@dataclass
class WorldSpec:
    """Full description of the paired-domain generative process."""

    s_text: int
    s_back: int
    means: np.ndarray        # [s_text + s_back, d_in], text rows first
    noise_sigma: float
    shift: np.ndarray        # [d_in], added to every target-domain feature
    height: int
    width: int
    block: int               # region edges snap to this pixel grid
    text_regions: tuple[int, int]
    region_size: tuple[int, int]   # rectangle side range, pixels
    seed: int

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.shift = np.asarray(self.shift, dtype=np.float64)
        s = self.s_text + self.s_back
        if self.s_text < 1 or self.s_back < 1:
            raise GenerationError("need at least one subpopulation per class")
        if self.means.shape != (s, self.d_in):
            raise GenerationError(
                f"means must be [{s}, d_in], got {self.means.shape}")
        if self.noise_sigma <= 0:
            raise GenerationError("noise_sigma must be > 0")
        diffs = self.means[:, None, :] - self.means[None, :, :]
        dist = np.sqrt((diffs ** 2).sum(axis=2))
        off = dist[~np.eye(s, dtype=bool)]
        if off.size and off.min() == 0.0:
            raise GenerationError("subpopulation means must be pairwise distinct")
        if self.height % self.block or self.width % self.block:
            raise GenerationError("block must divide height and width")
        lo, hi = self.region_size
        if self._cell_side_range() is None:
            raise GenerationError(
                f"region_size {self.region_size} admits no block-aligned side")
        if hi > min(self.height, self.width) - self.block:
            raise GenerationError(
                "max region side leaves no background walkway around regions")

    @property
    def d_in(self) -> int:
        return self.means.shape[1]

    @property
    def n_subpops(self) -> int:
        return self.s_text + self.s_back

    def _cell_side_range(self):
        lo = max(1, math.ceil(self.region_size[0] / self.block))
        hi = self.region_size[1] // self.block
        if hi < lo:
            return None
        return lo, hi

    def to_dict(self) -> dict:
        return {
            "s_text": self.s_text,
            "s_back": self.s_back,
            "means": self.means.tolist(),
            "noise_sigma": self.noise_sigma,
            "shift": self.shift.tolist(),
            "height": self.height,
            "width": self.width,
            "block": self.block,
            "text_regions": list(self.text_regions),
            "region_size": list(self.region_size),
            "seed": self.seed,
        }


def default_world(cfg: RunConfig) -> WorldSpec:
    """Place subpopulation means on a far shell with fixed pairwise separation.

    Mean i sits at C + (sep/sqrt(2)) * e_i, where C = base_offset * 1/sqrt(d)
    and sep = sep_sigma * noise_sigma, so every pair of means is exactly `sep`
    apart. The large common offset keeps L2-normalized feature clusters tight
    (their angular size shrinks as 1/base_offset) without changing the
    class-separation geometry.

    The domain shift is a common translation of every target feature along
    the text_0/back_0 axis. Pairwise geometry inside the target domain is
    unchanged; what moves is the target data relative to any boundary fitted
    on source, with back_0 drifting toward the text side. Against a fixed
    source model this displaces the operating point: well-fit models lose
    precision on target, while underfit ones (conservative text recall) can
    even gain -- the headroom self-training works against is on target either
    way.
    """
    w = cfg.world
    d = cfg.d_in
    s = w.s_text + w.s_back
    sep = w.sep_sigma * w.noise_sigma
    center = np.full(d, w.base_offset / math.sqrt(d), dtype=np.float64)
    means = np.tile(center, (s, 1))
    means[np.arange(s), np.arange(s)] += sep / math.sqrt(2.0)
    shift = np.zeros(d, dtype=np.float64)
    if w.shift_norm > 0:
        shift[0] = w.shift_norm / math.sqrt(2.0)
        shift[w.s_text] = -w.shift_norm / math.sqrt(2.0)
    return WorldSpec(
        s_text=w.s_text,
        s_back=w.s_back,
        means=means,
        noise_sigma=w.noise_sigma,
        shift=shift,
        height=cfg.height,
        width=cfg.width,
        block=cfg.downsample,
        text_regions=w.text_regions,
        region_size=w.region_size,
        seed=cfg.seed,
    )


@dataclass
class DomainSample:
    grid: PixelGrid
    biclass: LabelMask
    true_subpop: LabelMask


def _strip_widths(n_cols: int, n_strips: int, rng) -> list[int]:
    min_w = 2 if n_cols >= 2 * n_strips else 1
    widths = [min_w] * n_strips
    for _ in range(n_cols - min_w * n_strips):
        widths[int(rng.integers(n_strips))] += 1
    return widths


def _layout_cells(spec: WorldSpec, rng) -> np.ndarray:
    """Subpopulation index per downsampled cell, or raise if nothing fits."""
    hc = spec.height // spec.block
    wc = spec.width // spec.block
    n_cells = hc * wc
    lo_cell, hi_cell = spec._cell_side_range()
    lo_total = math.ceil(TEXT_FRAC_LO * n_cells)
    hi_total = math.floor(TEXT_FRAC_HI * n_cells)

    for _ in range(_LAYOUT_RESTARTS):
        # background: vertical strips, one per background subpopulation
        widths = _strip_widths(wc, spec.s_back, rng)
        order = rng.permutation(spec.s_back)
        cells = np.empty((hc, wc), dtype=np.int32)
        col = 0
        for k, width in enumerate(widths):
            cells[:, col:col + width] = spec.s_text + int(order[k])
            col += width

        # text rectangles: sizes drawn until the planted fraction lands in band
        n_regions = int(rng.integers(spec.text_regions[0], spec.text_regions[1] + 1))
        sizes = None
        for _ in range(200):
            cand = rng.integers(lo_cell, hi_cell + 1, size=(n_regions, 2))
            area = int((cand[:, 0] * cand[:, 1]).sum())
            if lo_total <= area <= hi_total:
                sizes = cand
                break
        if sizes is None:
            continue

        # place with a one-cell halo between rectangles
        occupied = np.zeros((hc, wc), dtype=bool)
        placed = []
        ok = True
        for rh, rw in sizes:
            rh, rw = int(rh), int(rw)
            for _ in range(_PLACE_TRIES):
                r = int(rng.integers(0, hc - rh + 1))
                c = int(rng.integers(0, wc - rw + 1))
                if not occupied[max(0, r - 1):r + rh + 1, max(0, c - 1):c + rw + 1].any():
                    occupied[r:r + rh, c:c + rw] = True
                    placed.append((r, c, rh, rw))
                    break
            else:
                ok = False
                break
        if not ok:
            continue

        for r, c, rh, rw in placed:
            cells[r:r + rh, c:c + rw] = int(rng.integers(spec.s_text))
        return cells

    raise GenerationError(
        f"could not place {spec.text_regions} regions of {spec.region_size}px "
        f"on a {spec.height}x{spec.width} grid within the text-fraction band")


def _one_sample(spec: WorldSpec, domain: Domain, index: int) -> DomainSample:
    layout_rng = stream(spec.seed, "gen", domain.value, index, "layout")
    noise_rng = stream(spec.seed, "gen", domain.value, index, "noise")

    cells = _layout_cells(spec, layout_rng)
    subpop = np.kron(cells, np.ones((spec.block, spec.block), dtype=np.int32))
    biclass = (subpop < spec.s_text).astype(np.int32)

    mu = spec.means[subpop]                       # [H, W, d_in]
    if domain is Domain.TARGET:
        mu = mu + spec.shift
    noise = noise_rng.standard_normal(size=mu.shape, dtype=np.float64)
    feats = (mu + spec.noise_sigma * noise).astype(np.float32)

    return DomainSample(
        grid=PixelGrid(feats),
        biclass=LabelMask(biclass, num_classes=2),
        true_subpop=LabelMask(subpop, num_classes=spec.n_subpops),
    )


def generate_domain(spec: WorldSpec, domain, n: int) -> list[DomainSample]:
    """Draw n samples; sample i depends only on (spec.seed, domain, i)."""
    dom = _as_domain(domain)
    if n < 0:
        raise GenerationError("sample count must be >= 0")
    return [_one_sample(spec, dom, i) for i in range(n)]


def bayes_posterior(spec: WorldSpec, domain, feature) -> np.ndarray:
    """Exact class posterior [P(back), P(text)] under the generative mixture.

    Subpopulations carry equal mixture weight; with equal isotropic
    covariances the posterior reduces to a softmax over squared distances.
    Entry order matches label encoding (0 = background, 1 = text).
    """
    dom = _as_domain(domain)
    x = np.asarray(feature, dtype=np.float64)
    if x.shape != (spec.d_in,):
        raise GenerationError(f"feature must be a {spec.d_in}-vector, got {x.shape}")
    mu = spec.means
    if dom is Domain.TARGET:
        mu = mu + spec.shift
    logp = -((x - mu) ** 2).sum(axis=1) / (2.0 * spec.noise_sigma ** 2)
    log_all = logsumexp(logp)
    p_text = math.exp(logsumexp(logp[:spec.s_text]) - log_all)
    return np.array([1.0 - p_text, p_text], dtype=np.float64)
