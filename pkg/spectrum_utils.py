"""
Spectrum Utilities

Symmetric/antisymmetric decomposition, the purely imaginary spectrum of the
antisymmetric part, the correlated Gaussian (Sommers) ensemble and the
generalized semicircle law used to compare empirical spectra with random ones.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy import linalg, stats

from errors import ConfigError, DimensionError, PreconditionError, RescaleError

logger = logging.getLogger(__name__)

ANTISYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class SommersConfig:
    """N x N Gaussian ensemble with <M_ij M_ji> = c."""

    n: int
    c: float
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError(f"Sommers ensemble needs N >= 2, got {self.n}")
        if not -1 <= self.c <= 1:
            raise ConfigError(f"correlation c must lie in [-1, 1], got {self.c}")


@dataclass
class SpectrumHistogram:
    edges: np.ndarray
    density: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return (self.edges[:-1] + self.edges[1:]) / 2

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    def density_at_zero(self) -> float:
        index = int(np.searchsorted(self.edges, 0.0, side="right") - 1)
        if index < 0 or index >= len(self.density):
            return 0.0
        return float(self.density[index])


@dataclass
class SpectralResult:
    """Imaginary parts of the antisymmetric spectrum with its histogram and rescaled b."""

    case: str
    values: np.ndarray
    histogram: SpectrumHistogram
    b: Optional[float]

    def values_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"im_lambda": self.values})

    def histogram_frame(self) -> pd.DataFrame:
        centers = self.histogram.centers
        overlay = semicircle_density(centers, self.b) if self.b else np.full(len(centers), np.nan)
        return pd.DataFrame({
            "left": self.histogram.edges[:-1],
            "right": self.histogram.edges[1:],
            "density": self.histogram.density,
            "semicircle": overlay,
        })


def _check_square(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {x.shape}")
    return x


def decompose(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Split X into its symmetric part (X + X^T)/2 and antisymmetric part (X - X^T)/2."""
    x = _check_square(x)
    return (x + x.T) / 2, (x - x.T) / 2


def is_antisymmetric(x: np.ndarray, tol: float = ANTISYMMETRY_TOL) -> bool:
    x = _check_square(x)
    scale = max(1.0, float(np.max(np.abs(x))) if x.size else 1.0)
    return bool(np.max(np.abs(x + x.T), initial=0.0) <= tol * scale)


def antisym_eigs(x_a: np.ndarray) -> np.ndarray:
    """
    Imaginary parts of the eigenvalues of an antisymmetric matrix, sorted ascending.

    The singular values of X_A come in equal pairs sigma_k; the eigenvalues are
    +/- i sigma_k, plus an exact zero when N is odd.

    Raises:
        PreconditionError: If X_A is not antisymmetric within tolerance
    """
    x_a = _check_square(x_a)
    if not is_antisymmetric(x_a):
        raise PreconditionError("matrix is not antisymmetric")
    n = x_a.shape[0]
    singular = linalg.svd(x_a, compute_uv=False)
    pairs = n // 2
    sigma = np.sqrt((singular[0:2 * pairs:2] ** 2 + singular[1:2 * pairs:2] ** 2) / 2)
    values = np.concatenate([-sigma, sigma, np.zeros(n % 2)])
    return np.sort(values)


def antisym_eigvecs(x_a: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Complex eigenvalues and eigenvectors of X_A (columns), computed on demand."""
    x_a = _check_square(x_a)
    if not is_antisymmetric(x_a):
        raise PreconditionError("matrix is not antisymmetric")
    return linalg.eig(x_a)


def general_eigs(x: np.ndarray) -> np.ndarray:
    """Eigenvalues from the general (non-symmetric) solver."""
    return np.linalg.eigvals(_check_square(x))


def sommers_sample(config: SommersConfig, normalize: bool = False) -> np.ndarray:
    """
    Draw one matrix of the correlated Gaussian ensemble.

    Off-diagonal pairs (M_ij, M_ji) are bivariate normal with unit variances and
    correlation c; the diagonal is standard normal. With normalize=True the
    matrix is divided by sqrt(N).
    """
    rng = np.random.default_rng(config.seed)
    n, c = config.n, config.c
    upper_i, upper_j = np.triu_indices(n, k=1)
    u = rng.standard_normal(len(upper_i))
    v = rng.standard_normal(len(upper_i))

    m = np.zeros((n, n))
    m[upper_i, upper_j] = u
    m[upper_j, upper_i] = c * u + np.sqrt(1 - c ** 2) * v
    m[np.diag_indices(n)] = rng.standard_normal(n)
    return m / np.sqrt(n) if normalize else m


def semicircle_density(y: Union[float, np.ndarray], b: float) -> Union[float, np.ndarray]:
    """Generalized semicircle (2/(pi b^2)) sqrt(b^2 - y^2) on [-b, b], zero outside."""
    if not b > 0:
        raise PreconditionError(f"semicircle radius b must be positive, got {b}")
    y = np.asarray(y, dtype=float)
    inside = np.abs(y) <= b
    density = np.where(inside, 2 / (np.pi * b ** 2) * np.sqrt(np.clip(b ** 2 - y ** 2, 0, None)), 0.0)
    return float(density) if density.ndim == 0 else density


def semicircle_cdf(y: Union[float, np.ndarray], b: float) -> Union[float, np.ndarray]:
    if not b > 0:
        raise PreconditionError(f"semicircle radius b must be positive, got {b}")
    y = np.clip(np.asarray(y, dtype=float), -b, b)
    cdf = 0.5 + y * np.sqrt(b ** 2 - y ** 2) / (np.pi * b ** 2) + np.arcsin(y / b) / np.pi
    cdf = np.clip(cdf, 0.0, 1.0)
    return float(cdf) if cdf.ndim == 0 else cdf


def spectrum_histogram(values: np.ndarray, bins: Optional[int] = None) -> SpectrumHistogram:
    """
    Normalized histogram with one bin centred on zero.

    Args:
        values (np.ndarray): Spectrum values
        bins (int, optional): Bin count (rounded up to odd); Freedman-Diaconis width when None

    Returns:
        SpectrumHistogram: Edges and densities integrating to 1
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise PreconditionError("cannot histogram an empty spectrum")
    max_abs = float(np.max(np.abs(values)))

    if bins is not None:
        if bins < 1:
            raise PreconditionError(f"bin count must be positive, got {bins}")
        bins = bins if bins % 2 == 1 else bins + 1
        width = 2 * max_abs / bins if max_abs > 0 else 1.0
    else:
        q25, q75 = np.percentile(values, [25, 75])
        width = 2 * (q75 - q25) * values.size ** (-1 / 3)
        if width <= 0:
            width = 2 * max_abs / max(1, int(np.ceil(np.sqrt(values.size)))) if max_abs > 0 else 1.0

    half = int(np.ceil(max_abs / width - 0.5))
    edges = width * (np.arange(-half, half + 2) - 0.5)
    density, edges = np.histogram(values, bins=edges, density=True)
    return SpectrumHistogram(edges=edges, density=density)


def fit_b_from_histogram(histogram: SpectrumHistogram) -> float:
    """
    Rescaled semicircle radius b = 2 / (pi p(0)).

    Raises:
        RescaleError: If the bin containing 0 is empty
    """
    p0 = histogram.density_at_zero()
    if p0 <= 0:
        raise RescaleError("density at zero is 0; semicircle radius undefined")
    return 2 / (np.pi * p0)


def ks_distance(values: np.ndarray, b: float) -> float:
    """Kolmogorov-Smirnov distance between a spectrum and the semicircle of radius b."""
    result = stats.kstest(np.asarray(values, dtype=float), lambda y: semicircle_cdf(y, b))
    return float(result.statistic)


def tail_mass(values: np.ndarray, b: float) -> float:
    """Fraction of the spectrum beyond |y| > b, where the semicircle has no mass."""
    values = np.asarray(values, dtype=float)
    return float(np.mean(np.abs(values) > b)) if values.size else 0.0


def spectrum_analysis(x: np.ndarray, case: str = "", bins: Optional[int] = None) -> SpectralResult:
    """Antisymmetric spectrum of X with histogram and rescaled b (None when undefined)."""
    _, x_a = decompose(x)
    values = antisym_eigs(x_a)
    histogram = spectrum_histogram(values, bins)
    try:
        b = fit_b_from_histogram(histogram)
    except RescaleError as e:
        logger.warning("%s: %s", case or "spectrum", e)
        b = None
    return SpectralResult(case=case, values=values, histogram=histogram, b=b)
