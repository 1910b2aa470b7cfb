"""
Stable Distribution Utilities

Characteristic function, Fourier-inversion density and distribution function,
Chambers-Mallows-Stuck sampling and maximum-likelihood fitting of stable laws.

The parameterization is continuous in alpha (location mu0 is the mode-adjacent
"S0" location), so for alpha != 1

    phi(k) = exp(-g^a [1 + i b sgn(k) tan(pi a / 2) (g^(1-a) - 1)] + i mu0 k),   g = gamma |k|

and for alpha = 1

    phi(k) = exp(-g [1 + i b (2/pi) sgn(k) log g] + i mu0 k).

With alpha = 2 the law is N(mu0, 2 gamma^2).
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy import integrate, optimize, special, stats

from errors import FitError, PreconditionError, QuadratureError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

ALPHA_ONE_TOL = 1e-3
CF_FLOOR = 1e-12
QUAD_EPSABS = 1e-9
QUAD_EPSREL = 1e-10
QUAD_LIMIT = 10_000
MIN_FIT_SAMPLES = 100

ALPHA_BOUNDS = (0.5, 2.0)
BETA_BOUNDS = (-1.0, 1.0)
BOUNDARY_TOL = 1e-4

# Standardized log-density grid used by the likelihood. The FFT grid repeats
# with period GRID_PERIOD, so only its central half is kept.
GRID_HALF_WIDTH = 50.0
GRID_PERIOD = 4 * GRID_HALF_WIDTH
GRID_MIN_POWER = 14
GRID_MAX_POWER = 17
LOG_DENSITY_FLOOR = np.log(1e-300)

# McCulloch quantile table: (x95 - x05) / (x75 - x25) for alpha = 2.0, 1.9, ..., 0.5
# (rows) and beta = 0, 0.25, 0.5, 0.75, 1 (columns).
_NU_ALPHA = np.array([
    [2.4388, 2.4388, 2.4388, 2.4388, 2.4388],
    [2.5120, 2.5117, 2.5125, 2.5129, 2.5148],
    [2.6080, 2.6093, 2.6101, 2.6131, 2.6174],
    [2.7369, 2.7376, 2.7387, 2.7420, 2.7464],
    [2.9115, 2.9090, 2.9037, 2.8998, 2.9016],
    [3.1480, 3.1363, 3.1119, 3.0919, 3.0888],
    [3.4635, 3.4361, 3.3778, 3.3306, 3.3161],
    [3.8824, 3.8337, 3.7199, 3.6257, 3.5997],
    [4.4468, 4.3651, 4.1713, 4.0052, 3.9635],
    [5.2172, 5.0840, 4.7778, 4.5122, 4.4506],
    [6.3140, 6.0978, 5.6241, 5.2195, 5.1256],
    [7.9098, 7.5900, 6.8606, 6.2598, 6.1239],
    [10.4480, 9.9336, 8.7790, 7.9005, 7.6874],
    [14.8378, 13.9540, 12.0419, 10.7219, 10.3704],
    [23.4831, 21.7682, 18.3320, 16.2163, 15.5841],
    [44.2813, 40.1367, 33.0018, 29.1399, 27.7822],
])
_NU_ALPHA_GRID = np.round(np.arange(2.0, 0.45, -0.1), 1)


@dataclass(frozen=True)
class StableParams:
    """Stable-law parameters (alpha, beta, gamma, mu0)."""

    alpha: float
    beta: float
    gamma: float
    mu0: float

    def __post_init__(self):
        if not 0 < self.alpha <= 2:
            raise PreconditionError(f"alpha must lie in (0, 2], got {self.alpha}")
        if not -1 <= self.beta <= 1:
            raise PreconditionError(f"beta must lie in [-1, 1], got {self.beta}")
        if not self.gamma > 0:
            raise PreconditionError(f"gamma must be positive, got {self.gamma}")
        if not np.isfinite(self.mu0):
            raise PreconditionError(f"mu0 must be finite, got {self.mu0}")

    @property
    def is_gaussian(self) -> bool:
        return self.alpha == 2.0

    def to_dict(self) -> Dict[str, float]:
        return {k: float(v) for k, v in asdict(self).items()}


@dataclass
class StableFit:
    """Outcome of `fit_stable`."""

    params: StableParams
    loglik: float
    n: int
    boundary_flags: Dict[str, bool] = field(default_factory=dict)
    converged: bool = True
    initial: Optional[StableParams] = None

    @property
    def at_boundary(self) -> bool:
        return any(self.boundary_flags.values())

    def to_dict(self) -> Dict:
        result = self.params.to_dict()
        result.update({
            "loglik": float(self.loglik),
            "n": int(self.n),
            "boundary_flags": dict(self.boundary_flags),
            "converged": bool(self.converged),
        })
        return result

    @classmethod
    def from_dict(cls, data: Dict) -> "StableFit":
        params = StableParams(data["alpha"], data["beta"], data["gamma"], data["mu0"])
        return cls(
            params=params,
            loglik=data["loglik"],
            n=data["n"],
            boundary_flags=dict(data.get("boundary_flags", {})),
            converged=data.get("converged", True),
        )


@dataclass(frozen=True)
class DistStats:
    """Summary of an empirical response distribution."""

    mode: float
    mean: float
    median: float
    skewness: float
    std: float

    def to_dict(self) -> Dict[str, float]:
        return {k: float(v) for k, v in asdict(self).items()}


def _near_one(alpha: float) -> bool:
    return abs(alpha - 1.0) < ALPHA_ONE_TOL


def _tan_term(alpha: float) -> float:
    return 0.0 if alpha == 2.0 else float(np.tan(np.pi * alpha / 2))


def _phase(kappa: np.ndarray, alpha: float, beta: float) -> np.ndarray:
    """Phase of the standardized characteristic function for kappa >= 0."""
    if beta == 0:
        return np.zeros_like(kappa)
    if _near_one(alpha):
        return beta * (2 / np.pi) * special.xlogy(kappa, kappa)
    return beta * _tan_term(alpha) * (kappa - kappa ** alpha)


def _kappa_max(alpha: float) -> float:
    """Frequency above which |phi| < CF_FLOOR for the standardized law."""
    return float((-np.log(CF_FLOOR)) ** (1.0 / alpha))


def _split_points(z: np.ndarray, k_max: float, max_points: int = 32) -> Optional[list]:
    scales = np.unique(1.0 / np.maximum(np.abs(z), 1.0))
    if len(scales) > max_points:
        scales = np.geomspace(scales.min(), scales.max(), max_points)
    scales = scales[scales < k_max]
    return list(scales) if len(scales) else None


def _invert(integrand, z: np.ndarray, alpha: float) -> np.ndarray:
    k_max = _kappa_max(alpha)
    result, error, info = integrate.quad_vec(
        integrand,
        0.0,
        k_max,
        epsabs=QUAD_EPSABS,
        epsrel=QUAD_EPSREL,
        norm="max",
        limit=QUAD_LIMIT,
        points=_split_points(z, k_max),
        full_output=True,
    )
    if not info.success:
        raise QuadratureError(
            f"Fourier inversion failed for alpha={alpha:.4f} (status {info.status})", achieved=float(error)
        )
    return np.asarray(result)


def standard_pdf(z: ArrayLike, alpha: float, beta: float) -> np.ndarray:
    """Density of the standardized law (gamma=1, mu0=0) by Fourier inversion."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if alpha == 2.0:
        return stats.norm.pdf(z, scale=np.sqrt(2.0))

    def integrand(kappa):
        return np.exp(-kappa ** alpha) * np.cos(kappa * z + _phase(np.asarray(kappa), alpha, beta))

    return _invert(integrand, z, alpha) / np.pi


def standard_cdf(z: ArrayLike, alpha: float, beta: float) -> np.ndarray:
    """Gil-Pelaez distribution function of the standardized law."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if alpha == 2.0:
        return stats.norm.cdf(z, scale=np.sqrt(2.0))

    def integrand(kappa):
        return np.exp(-kappa ** alpha) * np.sin(kappa * z + _phase(np.asarray(kappa), alpha, beta)) / kappa

    return np.clip(0.5 + _invert(integrand, z, alpha) / np.pi, 0.0, 1.0)


def stable_cf(kappa: ArrayLike, p: StableParams) -> np.ndarray:
    """
    Characteristic function phi(kappa).

    Args:
        kappa: Real frequency or array of frequencies
        p (StableParams): Law parameters

    Returns:
        np.ndarray: Complex values, same shape as kappa
    """
    kappa = np.asarray(kappa, dtype=float)
    g = p.gamma * np.abs(kappa)
    sgn = np.sign(kappa)
    if _near_one(p.alpha):
        exponent = -g - 1j * p.beta * (2 / np.pi) * sgn * special.xlogy(g, g)
    else:
        g_alpha = g ** p.alpha
        exponent = -g_alpha - 1j * p.beta * _tan_term(p.alpha) * sgn * (g - g_alpha)
    return np.exp(exponent + 1j * p.mu0 * kappa)


def stable_pdf(x: ArrayLike, p: StableParams) -> ArrayLike:
    """
    Stable density at x via adaptive Gauss-Kronrod inversion of phi.

    Raises:
        QuadratureError: If the requested absolute tolerance is not met
    """
    scalar = np.ndim(x) == 0
    z = (np.asarray(x, dtype=float) - p.mu0) / p.gamma
    density = standard_pdf(z, p.alpha, p.beta) / p.gamma
    return float(density[0]) if scalar else density.reshape(np.shape(x))


def stable_cdf(x: ArrayLike, p: StableParams) -> ArrayLike:
    scalar = np.ndim(x) == 0
    flat = np.atleast_1d((np.asarray(x, dtype=float) - p.mu0) / p.gamma)
    # Infinite arguments are resolved without quadrature.
    finite = np.isfinite(flat)
    out = np.where(flat > 0, 1.0, 0.0)
    if finite.any():
        out[finite] = standard_cdf(flat[finite], p.alpha, p.beta)
    return float(out[0]) if scalar else out.reshape(np.shape(x))


def stable_rvs(p: StableParams, size: int, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    Draw stable variates with the Chambers-Mallows-Stuck transform.

    The transform yields the classical (discontinuous) parameterization; the
    draws are shifted by -beta*tan(pi*alpha/2) to the continuous one before
    scaling, so alpha=2 gives N(mu0, 2 gamma^2).
    """
    rng = rng if rng is not None else np.random.default_rng()
    v = rng.uniform(-np.pi / 2, np.pi / 2, size)
    w = rng.exponential(1.0, size)
    alpha, beta = p.alpha, p.beta

    if _near_one(alpha):
        half_pi_bv = np.pi / 2 + beta * v
        z = (2 / np.pi) * (half_pi_bv * np.tan(v) - beta * np.log((np.pi / 2) * w * np.cos(v) / half_pi_bv))
    else:
        zeta = beta * _tan_term(alpha)
        b = np.arctan(zeta) / alpha
        s = (1 + zeta ** 2) ** (1 / (2 * alpha))
        z = (
            s * np.sin(alpha * (v + b)) / np.cos(v) ** (1 / alpha)
            * (np.cos(v - alpha * (v + b)) / w) ** ((1 - alpha) / alpha)
        )
        z = z - zeta
    return p.gamma * z + p.mu0


# ----------------------
# Initialization
# ----------------------
def _alpha_from_quantiles(nu: float, beta: float) -> float:
    """Interpolate alpha from the McCulloch table at the given |beta| column."""
    columns = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
    table = np.array([np.interp(min(abs(beta), 1.0), columns, row) for row in _NU_ALPHA])
    if nu <= table[0]:
        return 2.0
    if nu >= table[-1]:
        return float(_NU_ALPHA_GRID[-1])
    # table increases as alpha decreases
    return float(np.interp(nu, table, _NU_ALPHA_GRID))


def _empirical_cf(x: np.ndarray, k: float) -> complex:
    return complex(np.mean(np.exp(1j * k * x)))


def quantile_init(samples: np.ndarray) -> StableParams:
    """
    Quantile-based starting point for the likelihood search.

    alpha comes from the McCulloch ratio (x95 - x05)/(x75 - x25), gamma from the
    Fama-Roll fractile (x72 - x28)/1.654, and beta/mu0 from the empirical
    characteristic function at two frequencies.
    """
    x = np.asarray(samples, dtype=float)
    q05, q25, q28, q72, q75, q95 = np.percentile(x, [5, 25, 28, 72, 75, 95])
    gamma = (q72 - q28) / 1.654
    if gamma <= 0:
        gamma = float(np.std(x)) or 1.0

    nu = (q95 - q05) / (q75 - q25) if q75 > q25 else _NU_ALPHA[0, 0]
    alpha = _alpha_from_quantiles(nu, 0.0)

    k0, k1 = 0.2 / gamma, 1.0 / gamma
    y0 = np.angle(_empirical_cf(x, k0))
    y1 = np.angle(_empirical_cf(x, k1))
    if abs(alpha - 1.0) < 0.01:
        beta = (np.pi / 2) * (k1 * y0 - k0 * y1) / (gamma * k0 * k1 * (np.log(k1) - np.log(k0)))
        delta = None
    elif alpha >= 2.0:
        beta, delta = 0.0, None
    else:
        tan_term = np.tan(np.pi * alpha / 2)
        beta = (k1 * y0 - k0 * y1) / (gamma ** alpha * tan_term * (k0 ** alpha * k1 - k1 ** alpha * k0))
        delta = (k1 ** alpha * y0 - k0 ** alpha * y1) / (k0 * k1 ** alpha - k1 * k0 ** alpha)
    beta = float(np.clip(beta, -1.0, 1.0)) if np.isfinite(beta) else 0.0

    # Refine alpha with the beta column of the table once beta is known.
    alpha = float(np.clip(_alpha_from_quantiles(nu, beta), *ALPHA_BOUNDS))

    trimmed = float(stats.trim_mean(x, 0.25))
    mu0 = trimmed
    if delta is not None and alpha < 2.0:
        candidate = delta + beta * _tan_term(alpha) * gamma
        if np.isfinite(candidate) and q05 <= candidate <= q95:
            mu0 = float(candidate)

    return StableParams(alpha, beta, float(gamma), mu0)


# ----------------------
# Likelihood
# ----------------------
def density_from_cf_fft(cf, h: float, q: int, level: int = 3) -> Tuple[np.ndarray, np.ndarray]:
    """
    Density on an equispaced grid from a characteristic function by FFT.

    The inverse transform is integrated over [-2**q h / 2, 2**q h / 2) with
    composite `level`-point Newton-Cotes panels of width h.

    Args:
        cf: Vectorized characteristic function of a real frequency
        h (float): Panel width in frequency
        q (int): log2 of the number of panels
        level (int): Newton-Cotes points per panel (3 is Simpson)

    Returns:
        Tuple[np.ndarray, np.ndarray]: 2**q points from -pi/h up to pi/h and the density there
    """
    n_panels = 2 ** q
    steps = np.arange(n_panels)
    half_span = n_panels * h / 2
    x = np.pi * (steps - n_panels / 2) / half_span
    sign = (-1.0) ** steps

    if level > 1:
        weights = integrate.newton_cotes(level - 1, 1)[0]
        weights = weights / weights.sum()
    else:
        weights = np.ones(1)

    total = np.zeros(n_panels, dtype=complex)
    for index, weight in enumerate(weights):
        fraction = index / (level - 1) if level > 1 else 0.0
        values = cf(-half_span + h * (steps + fraction))
        twiddle = np.exp(1j * np.pi * fraction - 2j * np.pi * fraction * steps / n_panels)
        total += weight * np.fft.fft(sign * values) * twiddle
    return x, np.real(h * sign * total / (2 * np.pi))


def standard_logpdf_grid(alpha: float, beta: float) -> Tuple[np.ndarray, np.ndarray]:
    """Standardized log-density on the FFT grid, cut to [-GRID_HALF_WIDTH, GRID_HALF_WIDTH]."""
    h = 2 * np.pi / GRID_PERIOD
    needed = 2 * _kappa_max(alpha) / h
    q = int(np.clip(np.ceil(np.log2(needed)), GRID_MIN_POWER, GRID_MAX_POWER))
    standard = StableParams(alpha, beta, 1.0, 0.0)
    z, density = density_from_cf_fft(lambda kappa: stable_cf(kappa, standard), h, q)
    inside = np.abs(z) <= GRID_HALF_WIDTH
    return z[inside], np.log(np.maximum(density[inside], np.exp(LOG_DENSITY_FLOOR)))


def standard_logpdf(z: np.ndarray, alpha: float, beta: float) -> np.ndarray:
    """
    Interpolated standardized log-density.

    Inside the grid the log-density is interpolated linearly; beyond it a
    power-law tail |z|^(-1-alpha) is anchored at the grid edge.
    """
    z = np.asarray(z, dtype=float)
    if alpha == 2.0:
        return stats.norm.logpdf(z, scale=np.sqrt(2.0))

    grid, log_density = standard_logpdf_grid(alpha, beta)
    out = np.interp(z, grid, log_density)
    upper = z > grid[-1]
    lower = z < grid[0]
    if upper.any():
        out[upper] = log_density[-1] - (1 + alpha) * np.log(z[upper] / grid[-1])
    if lower.any():
        out[lower] = log_density[0] - (1 + alpha) * np.log(z[lower] / grid[0])
    return np.maximum(out, LOG_DENSITY_FLOOR)


def stable_loglik(samples: np.ndarray, p: StableParams) -> float:
    x = np.asarray(samples, dtype=float)
    z = (x - p.mu0) / p.gamma
    return float(np.sum(standard_logpdf(z, p.alpha, p.beta)) - len(x) * np.log(p.gamma))


def _boundary_flags(p: StableParams) -> Dict[str, bool]:
    return {
        "alpha_lower": p.alpha <= ALPHA_BOUNDS[0] + BOUNDARY_TOL,
        "alpha_upper": p.alpha >= ALPHA_BOUNDS[1] - BOUNDARY_TOL,
        "beta_lower": p.beta <= BETA_BOUNDS[0] + BOUNDARY_TOL,
        "beta_upper": p.beta >= BETA_BOUNDS[1] - BOUNDARY_TOL,
    }


def fit_stable(samples: np.ndarray, max_iter: int = 2000) -> StableFit:
    """
    Maximum-likelihood stable fit.

    The sample is standardized by its median and half inter-quartile range,
    initialized with `quantile_init`, and the likelihood is maximized with
    bounded Nelder-Mead over (alpha, beta, log gamma, mu0). Results are mapped
    back to the original units.

    Args:
        samples (np.ndarray): At least MIN_FIT_SAMPLES finite values
        max_iter (int): Optimizer iteration cap

    Returns:
        StableFit: Parameters, log-likelihood and boundary flags

    Raises:
        PreconditionError: Too few samples
        FitError: Degenerate sample or failed optimization
    """
    x = np.asarray(samples, dtype=float)
    x = x[np.isfinite(x)]
    if len(x) < MIN_FIT_SAMPLES:
        raise PreconditionError(f"stable fit needs at least {MIN_FIT_SAMPLES} samples, got {len(x)}")

    loc = float(np.median(x))
    q25, q75 = np.percentile(x, [25, 75])
    scale = (q75 - q25) / 2
    if scale <= 0:
        scale = float(np.std(x))
    if scale <= 0:
        raise FitError("degenerate sample: all values are equal")

    y = (x - loc) / scale
    start = quantile_init(y)

    def objective(theta):
        alpha, beta, log_gamma, mu0 = theta
        try:
            p = StableParams(float(alpha), float(beta), float(np.exp(log_gamma)), float(mu0))
            value = -stable_loglik(y, p)
        except (QuadratureError, PreconditionError, FloatingPointError):
            return np.inf
        return value if np.isfinite(value) else np.inf

    theta0 = np.array([start.alpha, start.beta, np.log(start.gamma), start.mu0])
    bounds = [ALPHA_BOUNDS, BETA_BOUNDS, (np.log(start.gamma) - 5, np.log(start.gamma) + 5), (y.min(), y.max())]
    with np.errstate(all="ignore"):
        result = optimize.minimize(
            objective,
            theta0,
            method="Nelder-Mead",
            bounds=bounds,
            options={"maxiter": max_iter, "xatol": 1e-4, "fatol": 1e-6},
        )
    if not np.isfinite(result.fun):
        raise FitError(f"likelihood maximization failed: {result.message}")

    alpha, beta, log_gamma, mu0 = result.x
    params = StableParams(
        alpha=float(np.clip(alpha, *ALPHA_BOUNDS)),
        beta=float(np.clip(beta, *BETA_BOUNDS)),
        gamma=float(np.exp(log_gamma) * scale),
        mu0=float(mu0 * scale + loc),
    )
    fit = StableFit(
        params=params,
        loglik=float(-result.fun - len(x) * np.log(scale)),
        n=len(x),
        boundary_flags=_boundary_flags(params),
        converged=bool(result.success),
        initial=StableParams(start.alpha, start.beta, start.gamma * scale, start.mu0 * scale + loc),
    )
    if fit.at_boundary:
        logger.warning("Stable fit reached a parameter bound: %s", [k for k, v in fit.boundary_flags.items() if v])
    if not fit.converged:
        logger.warning("Stable fit did not converge: %s", result.message)
    return fit


def stable_mode(p: StableParams) -> float:
    """Argmax of the density: the FFT grid maximum refined by a parabola through its neighbours."""
    if p.is_gaussian or p.beta == 0:
        return p.mu0
    z, log_density = standard_logpdf_grid(p.alpha, p.beta)
    k = int(np.clip(np.argmax(log_density), 1, len(z) - 2))
    left, centre, right = log_density[k - 1:k + 2]
    curvature = left - 2 * centre + right
    offset = 0.5 * (left - right) / curvature if curvature < 0 else 0.0
    return float(p.mu0 + p.gamma * (z[k] + offset * (z[k + 1] - z[k])))


def dist_stats(samples: np.ndarray, fitted: StableParams) -> DistStats:
    x = np.asarray(samples, dtype=float)
    x = x[np.isfinite(x)]
    if len(x) < 2:
        raise PreconditionError("distribution statistics need at least 2 samples")
    std = float(np.std(x))
    if std == 0:
        raise PreconditionError("skewness undefined for a sample with zero spread")
    return DistStats(
        mode=stable_mode(fitted),
        mean=float(np.mean(x)),
        median=float(np.median(x)),
        skewness=float(stats.skew(x, bias=True)),
        std=std,
    )


def histogram_table(samples: np.ndarray, fitted: StableParams, bins="fd") -> pd.DataFrame:
    """
    Plot-ready histogram of a sample with the fitted density at each bin centre.

    Returns:
        pd.DataFrame: Columns left, right, count, density, fitted_density
    """
    x = np.asarray(samples, dtype=float)
    x = x[np.isfinite(x)]
    edges = np.histogram_bin_edges(x, bins=bins)
    counts, edges = np.histogram(x, bins=edges)
    widths = np.diff(edges)
    centers = (edges[:-1] + edges[1:]) / 2
    return pd.DataFrame({
        "left": edges[:-1],
        "right": edges[1:],
        "count": counts,
        "density": counts / (len(x) * widths),
        "fitted_density": stable_pdf(centers, fitted),
    })
