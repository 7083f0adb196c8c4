"""
Property suites for the interpolation inequalities behind the sup-norm bounds:

* ``||f||_inf <~ (||f||_2^2 ||f||_{H^3}^3)^{1/5}`` in 3d,
* ``||f||_inf <~ ||f||_2^{2/5} ||∇f||_2^{6/25} ||f||_{H^4}^{9/25}`` in 3d,
* the gradient embedding ``||∇f||_inf <= C ||f||_{H^3}``.

The hidden constants are measured as maximum ratios over seeded random
band-limited fields on a large torus.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Union

import numpy as np
import pandas as pd

from nls_decay_lab.exceptions import ValidationError
from nls_decay_lab.grid import (
    ComplexField,
    GridSpec,
    SpectralField,
    inverse_transform,
    lattice_for,
    upsample,
)
from nls_decay_lab.norms import gradient_l2, gradient_sup, lp_norm, sobolev_norm, sup_norm
from nls_decay_lab.utils import atomic_write


logger = logging.getLogger(__name__)

ELE_EXPONENTS: Dict[str, Fraction] = {"L2": Fraction(2, 5), "H3": Fraction(3, 5)}
ELE2_EXPONENTS: Dict[str, Fraction] = {
    "L2": Fraction(2, 5),
    "grad_L2": Fraction(6, 25),
    "H4": Fraction(9, 25),
}
SUITES = ("ele", "ele2", "gradient-embedding")
HISTOGRAM_BINS = 20


def homogeneity_degree(exponents: Mapping[str, Fraction]) -> Fraction:
    """Degree of the denominator under f -> λf (each norm is 1-homogeneous)."""
    return sum(exponents.values(), Fraction(0))


for _name, _exponents in (("ele", ELE_EXPONENTS), ("ele2", ELE2_EXPONENTS)):
    if homogeneity_degree(_exponents) != 1:
        raise RuntimeError(f"{_name} exponents are not 1-homogeneous")


@dataclass(frozen=True)
class RandomFieldSpec:
    """
    Seeded random band-limited field.

    Attributes:
        grid: Grid.
        spectral_cutoff: K; coefficients vanish for |k| > K.
        spectral_decay: α; coefficient amplitude ``(1+|k|)^{-α}``.
        seed: 64-bit seed.
    """

    grid: GridSpec
    spectral_cutoff: float
    spectral_decay: float = 3.0
    seed: int = 0

    def with_seed(self, seed: int) -> "RandomFieldSpec":
        return RandomFieldSpec(self.grid, self.spectral_cutoff, self.spectral_decay, seed)


def random_band_limited(spec: RandomFieldSpec) -> ComplexField:
    """
    Deterministic random field with spectrum supported in ``|k| <= K``.

    Noise is drawn on the index box ``[-m_K, m_K]^d`` only, so the same seed
    gives the same function on any grid with the same box size.

    Raises:
        ValidationError: If K is negative or exceeds the largest lattice wavenumber.
    """
    grid = spec.grid
    lattice = lattice_for(grid)
    K = spec.spectral_cutoff
    if K < 0 or K > lattice.max_wavenumber:
        raise ValidationError(f"Cutoff {K} outside [0, {lattice.max_wavenumber}] for this grid")
    n = grid.points_per_axis
    m_max = min(int(math.floor(K / lattice.dk + 1e-12)), n // 2 - 1)

    rng = np.random.default_rng(spec.seed)
    box = (2 * m_max + 1,) * grid.dimension
    noise = (rng.standard_normal(box) + 1j * rng.standard_normal(box)) / math.sqrt(2.0)

    offsets = np.arange(-m_max, m_max + 1)
    axes = np.meshgrid(*([offsets * lattice.dk] * grid.dimension), indexing="ij", sparse=True)
    modulus = np.sqrt(sum(k ** 2 for k in axes))
    coefficients = np.where(modulus <= K, noise * (1.0 + modulus) ** (-spec.spectral_decay), 0.0)

    spectrum = np.zeros(grid.shape, dtype=np.complex128)
    positions = np.ix_(*([offsets % n] * grid.dimension))
    spectrum[positions] = coefficients
    return inverse_transform(SpectralField(grid, spectrum))


def _require_3d_nonzero(f: ComplexField) -> float:
    if f.grid.dimension != 3:
        raise ValidationError(f"Lemma ratios are defined in 3d, got d={f.grid.dimension}")
    l2 = lp_norm(f, 2)
    if l2 == 0:
        raise ValidationError("Lemma ratio of the zero field is undefined")
    return l2


def lemma_ele_ratio(f: ComplexField, refine: bool = True) -> float:
    """``||f||_inf / (||f||_2^2 ||f||_{H^3}^3)^{1/5}``."""
    l2 = _require_3d_nonzero(f)
    norms = {"L2": l2, "H3": sobolev_norm(f, 3)}
    denominator = math.prod(norms[k] ** float(e) for k, e in ELE_EXPONENTS.items())
    return sup_norm(f, refine) / denominator


def lemma_ele2_ratio(f: ComplexField, refine: bool = True) -> float:
    """``||f||_inf / (||f||_2^{2/5} ||∇f||_2^{6/25} ||f||_{H^4}^{9/25})``."""
    l2 = _require_3d_nonzero(f)
    norms = {"L2": l2, "grad_L2": gradient_l2(f), "H4": sobolev_norm(f, 4)}
    denominator = math.prod(norms[k] ** float(e) for k, e in ELE2_EXPONENTS.items())
    if denominator == 0:
        raise ValidationError("Constant field: gradient norm vanishes")
    return sup_norm(f, refine) / denominator


def gradient_embedding_ratio(f: ComplexField, refine: bool = True) -> float:
    """``||∇f||_inf / ||f||_{H^3}``."""
    h3 = sobolev_norm(f, 3)
    if h3 == 0:
        raise ValidationError("Gradient embedding ratio of the zero field is undefined")
    g = upsample(f) if refine else f
    return gradient_sup(g) / h3


def ele2_composition(f: ComplexField, refine: bool = True) -> Dict[str, float]:
    """
    The two steps behind the H^4 inequality.

    ``gradient_step`` is the H^3 inequality applied to ∇f (with
    ``||∇f||_{H^3} <= ||f||_{H^4}``); ``scale_step`` is the ball argument with
    the gradient bound as the scale. Their product
    ``scale_step * gradient_step^{3/5}`` equals the direct ratio.
    """
    l2 = _require_3d_nonzero(f)
    g = upsample(f) if refine else f
    grad_sup = gradient_sup(g)
    grad_l2 = gradient_l2(f)
    h4 = sobolev_norm(f, 4)
    gradient_step = grad_sup / (grad_l2 ** 0.4 * h4 ** 0.6)
    scale_step = sup_norm(g) / (l2 ** 0.4 * grad_sup ** 0.6)
    return {
        "gradient_step": gradient_step,
        "scale_step": scale_step,
        "composed": scale_step * gradient_step ** 0.6,
    }


RATIO_FUNCTIONS: Dict[str, Callable[[ComplexField], float]] = {
    "ele": lemma_ele_ratio,
    "ele2": lemma_ele2_ratio,
    "gradient-embedding": gradient_embedding_ratio,
}


@dataclass
class LemmaReport:
    """
    Outcome of a suite.

    Attributes:
        which: Suite name.
        sample_count: Number of fields evaluated.
        max_ratio: Largest ratio observed.
        offending_seed: Seed of the field attaining max_ratio.
        ratio_histogram: Bin counts.
        bin_edges: Histogram edges (len = counts + 1).
        ratios: Ratio per seed, in seed order.
        composition: For ele2, the suite maxima of the two composition steps.
    """

    which: str
    sample_count: int
    max_ratio: float
    offending_seed: int
    ratio_histogram: List[int]
    bin_edges: List[float]
    ratios: List[float] = field(default_factory=list)
    composition: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "which": self.which,
            "sample_count": self.sample_count,
            "max_ratio": self.max_ratio,
            "offending_seed": self.offending_seed,
            "ratio_histogram": self.ratio_histogram,
            "bin_edges": self.bin_edges,
            "composition": self.composition,
        }

    def histogram_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "bin_lo": self.bin_edges[:-1],
            "bin_hi": self.bin_edges[1:],
            "count": self.ratio_histogram,
        })

    def histogram_csv(self, path: Union[str, Path]) -> Path:
        frame = self.histogram_frame()
        return atomic_write(path, lambda tmp: frame.to_csv(tmp, index=False, float_format="%.17g"))


def run_lemma_suite(which: str, spec: RandomFieldSpec, n_samples: int,
                    workers: int = 1) -> LemmaReport:
    """
    Evaluate a ratio over seeds ``spec.seed .. spec.seed + n_samples - 1``.

    Args:
        which: One of "ele", "ele2", "gradient-embedding".
        spec: Field spec; its seed starts the sweep.
        n_samples: Number of seeds, at least 1.
        workers: Threads evaluating samples; results are reduced in seed order.

    Returns:
        LemmaReport: Maximum ratio, its seed, and the histogram.
    """
    if which not in RATIO_FUNCTIONS:
        raise ValidationError(f"Unknown suite '{which}', expected one of {SUITES}")
    if n_samples < 1:
        raise ValidationError(f"n_samples must be >= 1, got {n_samples}")
    ratio = RATIO_FUNCTIONS[which]
    seeds = [spec.seed + i for i in range(n_samples)]

    def evaluate(seed: int) -> Dict[str, float]:
        f = random_band_limited(spec.with_seed(seed))
        result = {"ratio": ratio(f)}
        if which == "ele2":
            result.update(ele2_composition(f))
        return result

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(evaluate, seeds))

    ratios = np.array([r["ratio"] for r in results])
    best = int(np.argmax(ratios))
    counts, edges = np.histogram(ratios, bins=HISTOGRAM_BINS)
    composition: Dict[str, float] = {}
    if which == "ele2":
        composition = {
            "max_gradient_step": max(r["gradient_step"] for r in results),
            "max_scale_step": max(r["scale_step"] for r in results),
        }
        composition["composed_bound"] = (
            composition["max_scale_step"] * composition["max_gradient_step"] ** 0.6
        )
    logger.info(f"Suite {which}: {n_samples} samples, max ratio {ratios[best]:.6g} at seed {seeds[best]}")
    return LemmaReport(
        which=which,
        sample_count=n_samples,
        max_ratio=float(ratios[best]),
        offending_seed=seeds[best],
        ratio_histogram=[int(c) for c in counts],
        bin_edges=[float(e) for e in edges],
        ratios=[float(r) for r in ratios],
        composition=composition,
    )


def witness_ratio(report: LemmaReport, spec: RandomFieldSpec) -> float:
    """Recompute the maximum ratio from the report's offending seed."""
    return RATIO_FUNCTIONS[report.which](random_band_limited(spec.with_seed(report.offending_seed)))


__all__ = [
    "ELE_EXPONENTS",
    "ELE2_EXPONENTS",
    "SUITES",
    "homogeneity_degree",
    "RandomFieldSpec",
    "random_band_limited",
    "lemma_ele_ratio",
    "lemma_ele2_ratio",
    "gradient_embedding_ratio",
    "ele2_composition",
    "LemmaReport",
    "run_lemma_suite",
    "witness_ratio",
]
