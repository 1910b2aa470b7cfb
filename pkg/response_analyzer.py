"""
Event-Time Response Analyzer

This module pairs every trade of stock j with the last quote of stock i before
the trade millisecond and the first quote after it, labels each pairing as a
single- or multiple-trade case and averages the signed log-midpoint changes
into N x N response matrices.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from errors import ConfigError, DimensionError, PreconditionError
from itch_utils import QuoteRecord, TradeEvent

logger = logging.getLogger(__name__)

SINGLE = "single"
MULTIPLE = "multiple"
CASES = ("all", "single", "multiple", "weighted", "random")
OBSERVED_CASES = ("all", "single", "multiple")

_CASE_SLOT = {SINGLE: 0, MULTIPLE: 1}


@dataclass(frozen=True)
class QuoteTape:
    """Quote times and midpoints of one stock; one-sided quotes carry a NaN midpoint."""

    times: np.ndarray
    midpoints: np.ndarray

    @classmethod
    def from_records(cls, quotes: Sequence[QuoteRecord]) -> "QuoteTape":
        times = np.fromiter((q.timestamp for q in quotes), dtype=np.int64, count=len(quotes))
        mids = np.array([np.nan if q.midpoint is None else q.midpoint for q in quotes], dtype=float)
        return cls(times, mids)

    @property
    def log_midpoints(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.log(self.midpoints)

    def __len__(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class TradeTape:
    times: np.ndarray
    signs: np.ndarray

    @classmethod
    def from_records(cls, trades: Sequence[TradeEvent]) -> "TradeTape":
        times = np.fromiter((t.timestamp for t in trades), dtype=np.int64, count=len(trades))
        signs = np.fromiter((t.sign for t in trades), dtype=np.int64, count=len(trades))
        return cls(times, signs)

    def __len__(self) -> int:
        return len(self.times)


def _as_quote_tape(quotes: Union[QuoteTape, Sequence[QuoteRecord]]) -> QuoteTape:
    return quotes if isinstance(quotes, QuoteTape) else QuoteTape.from_records(quotes)


def _as_trade_tape(trades: Union[TradeTape, Sequence[TradeEvent]]) -> TradeTape:
    return trades if isinstance(trades, TradeTape) else TradeTape.from_records(trades)


@dataclass(frozen=True)
class PairedObservation:
    """One trade of stock j paired with the surrounding quotes of stock i."""

    j: int
    i: int
    t: int
    sign: int
    m_prev: float
    m_foll: float
    case: str

    @property
    def value(self) -> float:
        return (np.log(self.m_foll) - np.log(self.m_prev)) * self.sign


def _quote_indices(trade_times: np.ndarray, quote_times: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Index of the last quote <= t-1, index of the first quote >= t+1 and their validity."""
    prev = np.searchsorted(quote_times, trade_times - 1, side="right") - 1
    foll = np.searchsorted(quote_times, trade_times + 1, side="left")
    valid = (prev >= 0) & (foll < len(quote_times))
    return prev, foll, valid


def pair_trade_with_quotes(
    t: int, quotes: Union[QuoteTape, Sequence[QuoteRecord]]
) -> Optional[Tuple[float, float]]:
    """
    Select the midpoints around a trade.

    Args:
        t (int): Trade timestamp in ms
        quotes: Time-ordered quotes of the impacted stock

    Returns:
        Optional[Tuple[float, float]]: (m_prev, m_foll), or None if either quote
        is missing or one-sided
    """
    tape = _as_quote_tape(quotes)
    prev, foll, valid = _quote_indices(np.array([t], dtype=np.int64), tape.times)
    if not valid[0]:
        return None
    m_prev, m_foll = tape.midpoints[prev[0]], tape.midpoints[foll[0]]
    if np.isnan(m_prev) or np.isnan(m_foll):
        return None
    return float(m_prev), float(m_foll)


def _case_labels(prev: np.ndarray, foll: np.ndarray, valid: np.ndarray) -> np.ndarray:
    labels = np.full(len(prev), None, dtype=object)
    if not valid.any():
        return labels
    pairs = np.stack([prev[valid], foll[valid]], axis=1)
    _, inverse, counts = np.unique(pairs, axis=0, return_inverse=True, return_counts=True)
    shared = counts[np.ravel(inverse)] >= 2
    labels[valid] = np.where(shared, MULTIPLE, SINGLE)
    return labels


def classify_cases(
    trades: Union[TradeTape, Sequence[TradeEvent]], quotes: Union[QuoteTape, Sequence[QuoteRecord]]
) -> List[Optional[str]]:
    """
    Label each trade of j as 'single' or 'multiple' with respect to the quotes of i.

    Trades of j that map to the identical (previous, following) quote pair of i
    are 'multiple'; trades without both surrounding quotes get None.
    """
    trade_tape = _as_trade_tape(trades)
    quote_tape = _as_quote_tape(quotes)
    prev, foll, valid = _quote_indices(trade_tape.times, quote_tape.times)
    return list(_case_labels(prev, foll, valid))


def _cell_values(trade_tape: TradeTape, quote_tape: QuoteTape) -> Tuple[np.ndarray, np.ndarray]:
    """Signed log-returns of every usable pairing and their case labels."""
    prev, foll, valid = _quote_indices(trade_tape.times, quote_tape.times)
    labels = _case_labels(prev, foll, valid)
    if not valid.any():
        return np.empty(0), np.empty(0, dtype=object)
    log_mid = quote_tape.log_midpoints
    values = np.full(len(prev), np.nan)
    values[valid] = (log_mid[foll[valid]] - log_mid[prev[valid]]) * trade_tape.signs[valid]
    usable = valid & np.isfinite(values)
    return values[usable], labels[usable]


def pair_observations(
    j: int,
    i: int,
    trades_j: Union[TradeTape, Sequence[TradeEvent]],
    quotes_i: Union[QuoteTape, Sequence[QuoteRecord]],
) -> List[PairedObservation]:
    """List every usable pairing of cell (i, j)."""
    trade_tape = _as_trade_tape(trades_j)
    quote_tape = _as_quote_tape(quotes_i)
    prev, foll, valid = _quote_indices(trade_tape.times, quote_tape.times)
    labels = _case_labels(prev, foll, valid)
    observations = []
    for k in np.flatnonzero(valid):
        m_prev = quote_tape.midpoints[prev[k]]
        m_foll = quote_tape.midpoints[foll[k]]
        if np.isnan(m_prev) or np.isnan(m_foll):
            continue
        observations.append(PairedObservation(
            j=j, i=i, t=int(trade_tape.times[k]), sign=int(trade_tape.signs[k]),
            m_prev=float(m_prev), m_foll=float(m_foll), case=labels[k],
        ))
    return observations


class ObservationStore:
    """
    Per-cell aggregates (count, sum, sum of squares) of the single and multiple cases.

    Cell (i, j) holds the responses of stock i to trades of stock j. Each cell is
    written once; the 'all' case pools both cases per trade.
    """

    def __init__(self, symbols: Sequence[str]):
        self.symbols = list(symbols)
        n = len(self.symbols)
        self.counts = np.zeros((2, n, n), dtype=np.int64)
        self.sums = np.zeros((2, n, n))
        self.sumsq = np.zeros((2, n, n))
        self._written = np.zeros((n, n), dtype=bool)

    @property
    def n(self) -> int:
        return len(self.symbols)

    def add_cell(self, i: int, j: int, values: np.ndarray, labels: np.ndarray):
        if self._written[i, j]:
            raise PreconditionError(f"cell ({self.symbols[i]}, {self.symbols[j]}) already written")
        self._written[i, j] = True
        for case, slot in _CASE_SLOT.items():
            selected = values[labels == case]
            self.counts[slot, i, j] = len(selected)
            self.sums[slot, i, j] = float(np.sum(selected))
            self.sumsq[slot, i, j] = float(np.sum(selected ** 2))

    def aggregates(self, case: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        if case == "all":
            return self.counts.sum(axis=0), self.sums.sum(axis=0), self.sumsq.sum(axis=0)
        if case not in _CASE_SLOT:
            raise PreconditionError(f"no observations are stored for case '{case}'")
        slot = _CASE_SLOT[case]
        return self.counts[slot], self.sums[slot], self.sumsq[slot]

    def to_frame(self) -> pd.DataFrame:
        """Long-format table of all aggregates (one row per cell)."""
        rows = []
        for i, impacted in enumerate(self.symbols):
            for j, impacting in enumerate(self.symbols):
                rows.append({
                    "impacted": impacted,
                    "impacting": impacting,
                    "n_single": int(self.counts[0, i, j]),
                    "sum_single": self.sums[0, i, j],
                    "sumsq_single": self.sumsq[0, i, j],
                    "n_multiple": int(self.counts[1, i, j]),
                    "sum_multiple": self.sums[1, i, j],
                    "sumsq_multiple": self.sumsq[1, i, j],
                })
        return pd.DataFrame(rows)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "ObservationStore":
        symbols = list(dict.fromkeys(frame["impacted"]))
        store = cls(symbols)
        index = {s: k for k, s in enumerate(symbols)}
        for row in frame.itertuples(index=False):
            i, j = index[row.impacted], index[row.impacting]
            store.counts[:, i, j] = (row.n_single, row.n_multiple)
            store.sums[:, i, j] = (row.sum_single, row.sum_multiple)
            store.sumsq[:, i, j] = (row.sumsq_single, row.sumsq_multiple)
            store._written[i, j] = True
        return store


def _column_cells(trades_j: TradeTape, quote_tapes: List[QuoteTape]) -> List[Tuple[np.ndarray, np.ndarray]]:
    return [_cell_values(trades_j, quotes_i) for quotes_i in quote_tapes]


def build_observations(
    tapes: Dict[str, Tuple[Sequence[QuoteRecord], Sequence[TradeEvent]]],
    symbols: Optional[Sequence[str]] = None,
    workers: int = 1,
    show_progress: bool = False,
) -> ObservationStore:
    """
    Pair every trade of every stock with the quotes of every stock.

    Args:
        tapes (Dict): symbol -> (quotes, deduplicated trades)
        symbols (Sequence[str], optional): Matrix order; sorted symbols by default
        workers (int): Process count over impacting stocks
        show_progress (bool): Show a tqdm bar over impacting stocks

    Returns:
        ObservationStore: Aggregates for every (i, j) cell
    """
    symbols = list(symbols) if symbols is not None else sorted(tapes)
    quote_tapes = [QuoteTape.from_records(tapes[s][0]) for s in symbols]
    trade_tapes = [TradeTape.from_records(tapes[s][1]) for s in symbols]
    store = ObservationStore(symbols)

    if workers > 1 and len(symbols) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            columns = list(pool.map(_column_cells, trade_tapes, [quote_tapes] * len(symbols)))
    else:
        iterator = tqdm(trade_tapes, desc="Pairing", disable=not show_progress)
        columns = [_column_cells(trades_j, quote_tapes) for trades_j in iterator]

    for j, column in enumerate(columns):
        for i, (values, labels) in enumerate(column):
            store.add_cell(i, j, values, labels)
    return store


@dataclass
class ResponseMatrix:
    """N x N responses for one averaging case; missing cells are NaN."""

    case: str
    symbols: List[str]
    values: np.ndarray
    counts: np.ndarray
    weights: Optional[np.ndarray] = None
    standard_errors: Optional[np.ndarray] = None
    metadata: Dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.symbols)

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)


def cross_responses(values: np.ndarray) -> np.ndarray:
    """Defined off-diagonal entries of a response matrix in row-major order."""
    values = np.asarray(values, dtype=float)
    mask = ~np.eye(len(values), dtype=bool) & ~np.isnan(values)
    return values[mask]


def response_matrix(store: ObservationStore, case: str = "all") -> ResponseMatrix:
    """
    Average the stored observations of one case into a response matrix.

    R_ij is the mean of (log m_i^f - log m_i^p) * eps_j over the selected
    observations; cells without observations are NaN.
    """
    if case not in OBSERVED_CASES:
        raise PreconditionError(f"case must be one of {OBSERVED_CASES}, got '{case}'")
    counts, sums, _ = store.aggregates(case)
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return ResponseMatrix(
        case=case,
        symbols=list(store.symbols),
        values=values,
        counts=counts.copy(),
        weights=weight_matrix(store),
        standard_errors=response_standard_errors(store, case),
    )


def response_standard_errors(store: ObservationStore, case: str = "all") -> np.ndarray:
    """Standard error of each cell mean from the stored second moments (NaN below 2 observations)."""
    counts, sums, sumsq = store.aggregates(case)
    n = counts.astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = sums / n
        variance = (sumsq - n * mean ** 2) / (n - 1)
        errors = np.sqrt(np.maximum(variance, 0.0) / n)
    return np.where(counts >= 2, errors, np.nan)


def weight_matrix(store: ObservationStore) -> np.ndarray:
    """w_ij = #single / (#single + #multiple); NaN where the cell has no observations."""
    single, _, _ = store.aggregates(SINGLE)
    total, _, _ = store.aggregates("all")
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(total > 0, single / np.maximum(total, 1), np.nan)


def weighted_response(r_single: np.ndarray, r_multiple: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """
    Interpolate between the single- and multiple-trade responses.

    R_wt = w * R_st + (1 - w) * R_mt entrywise. A missing term with zero weight
    is dropped; any other missing input makes the cell missing.

    Raises:
        DimensionError: If the shapes differ
        PreconditionError: If a weight lies outside [0, 1]
    """
    r_single = np.asarray(r_single, dtype=float)
    r_multiple = np.asarray(r_multiple, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if not (r_single.shape == r_multiple.shape == weights.shape):
        raise DimensionError(
            f"shape mismatch: {r_single.shape}, {r_multiple.shape}, {weights.shape}"
        )
    defined = ~np.isnan(weights)
    if np.any((weights[defined] < 0) | (weights[defined] > 1)):
        raise PreconditionError("weights must lie in [0, 1]")

    with np.errstate(invalid="ignore"):
        result = weights * r_single + (1 - weights) * r_multiple
    only_single = (weights == 1) & ~np.isnan(r_single)
    only_multiple = (weights == 0) & ~np.isnan(r_multiple)
    result = np.where(only_single, r_single, result)
    return np.where(only_multiple, r_multiple, result)


def weighted_response_matrix(store: ObservationStore) -> ResponseMatrix:
    single = response_matrix(store, SINGLE)
    multiple = response_matrix(store, MULTIPLE)
    weights = weight_matrix(store)
    return ResponseMatrix(
        case="weighted",
        symbols=list(store.symbols),
        values=weighted_response(single.values, multiple.values, weights),
        counts=store.aggregates("all")[0].copy(),
        weights=weights,
    )


@dataclass(frozen=True)
class RandomResponseConfig:
    """Dimension N, series length L and seed of the random response baseline."""

    n: int
    length: int
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError(f"random response needs N >= 2, got {self.n}")
        if self.length < 1:
            raise ConfigError(f"random response needs L >= 1, got {self.length}")


def random_response(
    config: RandomResponseConfig,
    a: Optional[np.ndarray] = None,
    b: Optional[np.ndarray] = None,
    symbols: Optional[Sequence[str]] = None,
) -> ResponseMatrix:
    """
    Random response baseline R = A sgn(B^T) / L.

    Args:
        config (RandomResponseConfig): N, L and seed
        a, b (np.ndarray, optional): N x L matrices to use instead of drawing
            independent standard normals
        symbols (Sequence[str], optional): Labels of the rows/columns

    Returns:
        ResponseMatrix: Case 'random', every count equal to L
    """
    rng = np.random.default_rng(config.seed)
    shape = (config.n, config.length)
    a = rng.standard_normal(shape) if a is None else np.asarray(a, dtype=float)
    b = rng.standard_normal(shape) if b is None else np.asarray(b, dtype=float)
    if a.shape != shape or b.shape != shape:
        raise DimensionError(f"A and B must be {shape}, got {a.shape} and {b.shape}")

    signs = np.where(b.T >= 0, 1.0, -1.0)
    values = a @ signs / config.length
    labels = list(symbols) if symbols is not None else [f"R{k + 1}" for k in range(config.n)]
    return ResponseMatrix(
        case="random",
        symbols=labels,
        values=values,
        counts=np.full((config.n, config.n), config.length, dtype=np.int64),
        metadata={"length": config.length, "seed": config.seed},
    )


def default_random_length(store: ObservationStore) -> int:
    """Median number of paired observations over the cells that have any."""
    counts = store.aggregates("all")[0]
    populated = counts[counts > 0]
    if populated.size == 0:
        return 1
    return max(1, int(round(float(np.median(populated)))))


def multiple_fraction(store: ObservationStore, off_diagonal: bool = True) -> float:
    """Share of paired trades labelled 'multiple', pooled over cells."""
    single, _, _ = store.aggregates(SINGLE)
    multiple, _, _ = store.aggregates(MULTIPLE)
    mask = ~np.eye(store.n, dtype=bool) if off_diagonal else np.ones((store.n, store.n), dtype=bool)
    total = single[mask].sum() + multiple[mask].sum()
    return float(multiple[mask].sum() / total) if total else 0.0


# ----------------------
# Matrix CSV IO
# ----------------------
def write_matrix_csv(path: str, values: np.ndarray, symbols: Sequence[str], float_format: str = "%.17g") -> str:
    """Write an N x N matrix with a symbol header row and column; NaN cells are left empty."""
    frame = pd.DataFrame(values, index=list(symbols), columns=list(symbols))
    frame.to_csv(path, index_label="symbol", na_rep="", float_format=float_format, lineterminator="\n")
    return path


def read_matrix_csv(path: str) -> Tuple[np.ndarray, List[str]]:
    frame = pd.read_csv(path, index_col=0)
    if list(frame.index.astype(str)) != list(frame.columns.astype(str)):
        raise DimensionError(f"{path}: row and column symbols differ")
    return frame.to_numpy(dtype=float), [str(s) for s in frame.columns]
