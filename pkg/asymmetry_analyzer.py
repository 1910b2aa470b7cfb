"""
Asymmetry Analyzer

Quantifies how far a square matrix is from being symmetric with

    Lambda(X) = ||X - X^T|| / (2 ||Y||),   Y = X with its diagonal zeroed,

and averages Lambda over every diagonal-anchored k x k sub-matrix.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from errors import DimensionError, PreconditionError, UndefinedAsymmetryError

logger = logging.getLogger(__name__)


@dataclass
class AsymmetryReport:
    """Per-k average asymmetry and the overall value for one matrix."""

    label: str
    per_k: np.ndarray
    overall: float
    imputed: int = 0

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({
            "k": [str(k) for k in range(1, len(self.per_k) + 1)],
            "avg_lambda": self.per_k,
        })
        footer = pd.DataFrame({"k": ["overall"], "avg_lambda": [self.overall]})
        return pd.concat([frame, footer], ignore_index=True)


def _check_square(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {x.shape}")
    if x.shape[0] < 2:
        raise PreconditionError("asymmetry needs N >= 2")
    return x


def impute_missing(x: np.ndarray) -> Tuple[np.ndarray, int]:
    """Replace missing (NaN) cells by 0 and report how many were replaced."""
    x = np.asarray(x, dtype=float)
    missing = np.isnan(x)
    count = int(missing.sum())
    if count:
        logger.info("Imputed %d missing cells with 0", count)
    return np.where(missing, 0.0, x), count


def asymmetry_lambda(x: np.ndarray) -> float:
    """
    Asymmetry of a full matrix.

    Raises:
        UndefinedAsymmetryError: If every off-diagonal entry is zero
    """
    x = _check_square(x)
    y = x - np.diag(np.diag(x))
    y_norm = np.sqrt(np.sum(y ** 2))
    if y_norm == 0:
        raise UndefinedAsymmetryError("off-diagonal part is zero")
    return float(np.sqrt(np.sum((x - x.T) ** 2)) / (2 * y_norm))


def _block_sums(prefix: np.ndarray, k: int) -> np.ndarray:
    """Sums of every diagonal-anchored k x k block from a zero-padded 2-D prefix sum."""
    n = prefix.shape[0] - 1
    start = np.arange(n - k + 1)
    stop = start + k
    return prefix[stop, stop] - prefix[start, stop] - prefix[stop, start] + prefix[start, start]


def _prefix(values: np.ndarray) -> np.ndarray:
    padded = np.zeros((values.shape[0] + 1, values.shape[1] + 1))
    padded[1:, 1:] = values.cumsum(axis=0).cumsum(axis=1)
    return padded


def _sub_lambdas(x: np.ndarray, k: int, prefixes: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> np.ndarray:
    """Lambda of every k x k diagonal-anchored sub-matrix; NaN where undefined."""
    if prefixes is None:
        y = x - np.diag(np.diag(x))
        prefixes = (_prefix((x - x.T) ** 2), _prefix(y ** 2))
    diff_prefix, y_prefix = prefixes
    # Prefix-sum differences of an all-zero block can leave rounding residue.
    floor = 1e-12 * y_prefix[-1, -1]
    diff = np.maximum(_block_sums(diff_prefix, k), 0.0)
    ysq = np.maximum(_block_sums(y_prefix, k), 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        lambdas = np.sqrt(diff) / (2 * np.sqrt(ysq))
    return np.where(ysq > floor, np.minimum(lambdas, 1.0), np.nan)


def avg_lambda_k(x: np.ndarray, k: int) -> float:
    """
    Mean asymmetry over the N-k+1 diagonal-anchored k x k sub-matrices.

    Sub-matrices whose off-diagonal part is zero are skipped; k=1 gives 0.

    Raises:
        PreconditionError: If k is outside [1, N]
        UndefinedAsymmetryError: If every sub-matrix is undefined
    """
    x = _check_square(x)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise PreconditionError(f"k must lie in [1, {n}], got {k}")
    if k == 1:
        return 0.0
    lambdas = _sub_lambdas(x, k)
    if np.all(np.isnan(lambdas)):
        raise UndefinedAsymmetryError(f"every {k}x{k} sub-matrix has a zero off-diagonal part")
    return float(np.nanmean(lambdas))


def asymmetry_curve(x: np.ndarray) -> np.ndarray:
    """Average asymmetry for k = 1..N (index k-1)."""
    x = _check_square(x)
    n = x.shape[0]
    y = x - np.diag(np.diag(x))
    prefixes = (_prefix((x - x.T) ** 2), _prefix(y ** 2))
    curve = np.zeros(n)
    for k in range(2, n + 1):
        lambdas = _sub_lambdas(x, k, prefixes)
        if np.all(np.isnan(lambdas)):
            raise UndefinedAsymmetryError(f"every {k}x{k} sub-matrix has a zero off-diagonal part")
        curve[k - 1] = np.nanmean(lambdas)
    return curve


def overall_asymmetry(x: np.ndarray) -> float:
    """Stabilized overall asymmetry: the mean of the per-k averages over k = 1..N."""
    return float(np.mean(asymmetry_curve(x)))


def asymmetry_report(x: np.ndarray, label: str = "") -> AsymmetryReport:
    """Impute missing cells, then compute the per-k curve and the overall value."""
    filled, imputed = impute_missing(x)
    curve = asymmetry_curve(filled)
    return AsymmetryReport(label=label, per_k=curve, overall=float(np.mean(curve)), imputed=imputed)


def write_asymmetry_csv(path: str, report: AsymmetryReport) -> str:
    report.to_frame().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return path
