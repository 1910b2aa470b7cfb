"""
Synthetic Order-Flow Generator

Produces seeded, ITCH-format message streams for N stocks with planted
cross-impacts, so that every downstream stage can be checked against a known
ground truth.

Time is divided into rounds of `round_ms` milliseconds. At ms 0 of a round
every stock moves one side of its best quote (baseline noise plus the shifts
planted by the previous round's trades). Stock j trades at most once per round:
either a single trade at the last trade slot (ms 2N+1) or, with the clustering
probability, a pair of trades at ms 1+2j and 2+2j that share the surrounding
quotes of every other stock. Each planted impact (j -> i) shifts the
log-midpoint of stock i in the next round by delta * s per trade of j, where s
agrees with the trade sign with probability (1 + alignment)/2 and the shift is
applied with the configured probability.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigError, GenerationError
from itch_utils import ItchMessage, ticks_to_decimal, write_messages

logger = logging.getLogger(__name__)

MS_PER_MINUTE = 60_000


@dataclass(frozen=True)
class PlantedImpact:
    """Log-midpoint shift of `target` caused by each trade of `source`."""

    source: int
    target: int
    delta: float
    probability: float = 1.0
    alignment: float = 1.0

    @property
    def expected_response(self) -> float:
        return self.delta * self.probability * self.alignment


@dataclass
class SynthConfig:
    """Configuration of the synthetic order flow."""

    n_stocks: int = 12
    session_ms: int = 600_000
    trade_rate: float = 60.0
    quote_rate: float = 600.0
    noise: float = 2e-4
    impacts: List[PlantedImpact] = field(default_factory=list)
    cluster_rate: float = 0.35
    seed: int = 0
    trade_rates: Optional[List[float]] = None
    base_price_ticks: int = 1_000_000
    spread_ticks: int = 100
    resting_volume: int = 1_000_000
    trade_volume: int = 100
    low_entropy_stock: Optional[int] = None
    low_entropy_delta: float = 5e-3
    low_entropy_rate_factor: float = 0.2
    collision_rate: float = 0.0
    symbols: Optional[List[str]] = None

    def __post_init__(self):
        self.impacts = [p if isinstance(p, PlantedImpact) else PlantedImpact(**p) for p in self.impacts]
        self.validate()

    # ----------------------
    # Derived quantities
    # ----------------------
    @property
    def round_ms(self) -> int:
        return int(MS_PER_MINUTE // self.quote_rate)

    @property
    def n_rounds(self) -> int:
        return self.session_ms // self.round_ms

    @property
    def cluster_probability(self) -> float:
        """Chance that a trading stock trades twice, so that trades split c / (1 - c)."""
        return self.cluster_rate / (2 - self.cluster_rate)

    @property
    def stock_symbols(self) -> List[str]:
        return list(self.symbols) if self.symbols else [f"S{k + 1:02d}" for k in range(self.n_stocks)]

    def rates(self) -> np.ndarray:
        rates = np.array(self.trade_rates if self.trade_rates else [self.trade_rate] * self.n_stocks, dtype=float)
        if self.low_entropy_stock is not None:
            rates[self.low_entropy_stock] *= self.low_entropy_rate_factor
        return rates

    def trade_probabilities(self) -> np.ndarray:
        """Per-round trading probability of each stock."""
        return self.rates() * self.round_ms / MS_PER_MINUTE

    def all_impacts(self) -> List[PlantedImpact]:
        """Configured impacts plus the deterministic row and column of the low-entropy stock."""
        impacts = list(self.impacts)
        low = self.low_entropy_stock
        if low is not None:
            planted = {(p.source, p.target) for p in impacts}
            for k in range(self.n_stocks):
                for pair in ((low, k), (k, low)):
                    if pair[0] != pair[1] and pair not in planted:
                        impacts.append(PlantedImpact(pair[0], pair[1], self.low_entropy_delta))
                        planted.add(pair)
        return impacts

    def validate(self):
        n = self.n_stocks
        if n < 1:
            raise ConfigError(f"need at least one stock, got {n}")
        if self.quote_rate <= 0 or self.trade_rate <= 0:
            raise ConfigError("trade and quote intensities must be positive")
        if self.trade_rates is not None:
            if len(self.trade_rates) != n:
                raise ConfigError(f"trade_rates needs {n} entries, got {len(self.trade_rates)}")
            if any(r <= 0 for r in self.trade_rates):
                raise ConfigError("trade intensities must be positive")
        if self.symbols is not None and (len(self.symbols) != n or len(set(self.symbols)) != n):
            raise ConfigError(f"symbols must be {n} distinct names")
        if not 0 <= self.cluster_rate < 1:
            raise ConfigError(f"cluster_rate must lie in [0, 1), got {self.cluster_rate}")
        if not 0 <= self.collision_rate <= 1:
            raise ConfigError(f"collision_rate must lie in [0, 1], got {self.collision_rate}")
        if not (np.isfinite(self.noise) and self.noise >= 0):
            raise ConfigError(f"noise must be finite and non-negative, got {self.noise}")
        if self.spread_ticks < 1 or self.trade_volume < 1 or self.resting_volume < 2 * self.trade_volume:
            raise ConfigError("spread, trade volume and resting volume are inconsistent")
        if self.low_entropy_stock is not None and not 0 <= self.low_entropy_stock < n:
            raise ConfigError(f"low_entropy_stock must index one of the {n} stocks")
        for p in self.impacts:
            if not (0 <= p.source < n and 0 <= p.target < n):
                raise ConfigError(f"impact {p.source}->{p.target} references an unknown stock")
            if not np.isfinite(p.delta):
                raise ConfigError(f"impact {p.source}->{p.target} has a non-finite delta")
            if not 0 <= p.probability <= 1:
                raise ConfigError(f"impact {p.source}->{p.target} probability must lie in [0, 1]")
            if not -1 <= p.alignment <= 1:
                raise ConfigError(f"impact {p.source}->{p.target} alignment must lie in [-1, 1]")

        if self.round_ms < 2 * n + 2:
            raise GenerationError(
                f"quote spacing of {self.round_ms} ms leaves no room for {n} stocks "
                f"(needs at least {2 * n + 2} ms)"
            )
        if self.n_rounds < 2:
            raise GenerationError("session shorter than two quote rounds")
        probabilities = self.rates() * self.round_ms / MS_PER_MINUTE
        if np.any(probabilities > 1):
            raise GenerationError(
                f"trade intensity exceeds one trade per {self.round_ms} ms quote round"
            )

    # ----------------------
    # Serialization
    # ----------------------
    def to_dict(self) -> Dict:
        data = asdict(self)
        data["impacts"] = [asdict(p) for p in self.impacts]
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "SynthConfig":
        return cls(**data)


class _SyntheticBook:
    """Best bid/ask of one stock realized as single resting orders."""

    def __init__(self, symbol: str, bid: int, ask: int, volume: int):
        self.symbol = symbol
        self.volume = volume
        self.next_id = 1
        self.messages: List[ItchMessage] = []
        self.bid, self.ask = bid, ask
        self.orders = {"B": None, "S": None}
        self.remaining = {"B": 0, "S": 0}

    def _emit(self, t: int, msg_type: str, order_id: int, price: Optional[int], volume: int):
        self.messages.append(ItchMessage(t, msg_type, order_id, ticks_to_decimal(price), volume, self.symbol))

    def submit(self, t: int, side: str, price: int):
        order_id = self.next_id
        self.next_id += 1
        self._emit(t, side, order_id, price, self.volume)
        return order_id

    def replace(self, t: int, side: str, price: int):
        """Submit a fresh order at `price`, then delete the old best order of that side."""
        old = self.orders[side]
        new = self.submit(t, side, price)
        if old is not None:
            self._emit(t, "D", old, None, self.remaining[side])
        self.orders[side] = new
        self.remaining[side] = self.volume
        if side == "B":
            self.bid = price
        else:
            self.ask = price

    def open(self, t: int):
        self.replace(t, "B", self.bid)
        self.replace(t, "S", self.ask)

    def move(self, t: int, log_shift: float, target_spread: int):
        """Shift the midpoint by `log_shift` moving one side of the quote."""
        total = self.bid + self.ask
        d = int(round(total * np.exp(log_shift))) - total
        if d == 0:
            self.replace(t, "B", self.bid)
            return

        spread = self.ask - self.bid
        candidates = []
        if self.bid + d < self.ask and self.bid + d > 0:
            candidates.append((abs(spread - d - target_spread), 0, "B", self.bid + d))
        if self.ask + d > self.bid:
            candidates.append((abs(spread + d - target_spread), 1, "S", self.ask + d))
        if not candidates:
            raise GenerationError(
                f"{self.symbol}: log shift {log_shift:.3g} at {t} ms leaves no valid quote"
            )
        _, _, side, price = min(candidates)
        self.replace(t, side, price)

    def execute(self, t: int, sign: int, volume: int):
        """A market order of `sign` executes `volume` shares of the opposite best order."""
        side = "S" if sign > 0 else "B"
        if self.remaining[side] - volume < volume:
            self.replace(t, side, self.ask if side == "S" else self.bid)
        self._emit(t, "E", self.orders[side], None, volume)
        self.remaining[side] -= volume


def generate(config: SynthConfig) -> Dict[str, List[ItchMessage]]:
    """
    Generate per-stock message streams.

    Args:
        config (SynthConfig): Validated generator configuration

    Returns:
        Dict[str, List[ItchMessage]]: symbol -> time-ordered messages; the same
        seed always yields the same streams
    """
    rng = np.random.default_rng(config.seed)
    n = config.n_stocks
    symbols = config.stock_symbols
    round_ms = config.round_ms
    trade_prob = config.trade_probabilities()
    cluster_prob = config.cluster_probability

    impacts_by_source: Dict[int, List[PlantedImpact]] = {}
    for impact in config.all_impacts():
        impacts_by_source.setdefault(impact.source, []).append(impact)

    half_spread = config.spread_ticks // 2
    books = [
        _SyntheticBook(
            symbols[k],
            config.base_price_ticks - half_spread,
            config.base_price_ticks - half_spread + config.spread_ticks,
            config.resting_volume,
        )
        for k in range(n)
    ]
    for book in books:
        book.open(0)

    pending = np.zeros(n)
    for r in range(1, config.n_rounds):
        t0 = r * round_ms
        noise = rng.standard_normal(n) * config.noise
        for k, book in enumerate(books):
            book.move(t0, noise[k] + pending[k], config.spread_ticks)
        pending = np.zeros(n)

        trades = rng.random(n) < trade_prob
        clustered = rng.random(n) < cluster_prob
        collide = rng.random(n) < config.collision_rate
        for j in range(n):
            if not trades[j]:
                continue
            if clustered[j]:
                times = [t0 + 1 + 2 * j, t0 + 2 + 2 * j]
            else:
                times = [t0 + 2 * n + 1]
            signs = np.where(rng.random(len(times)) < 0.5, 1, -1)
            for t, sign in zip(times, signs):
                books[j].execute(t, int(sign), config.trade_volume)
            if not clustered[j] and collide[j]:
                # Same-millisecond duplicate; both trades are dropped by the dedupe step.
                books[j].execute(times[0], int(-signs[0]), config.trade_volume)
                continue
            for impact in impacts_by_source.get(j, []):
                applied = rng.random(len(signs)) < impact.probability
                aligned = rng.random(len(signs)) < (1 + impact.alignment) / 2
                shift_signs = np.where(aligned, signs, -signs)
                pending[impact.target] += impact.delta * float(np.sum(shift_signs * applied))

    streams = {book.symbol: book.messages for book in books}
    logger.info(
        "Generated %d messages for %d stocks over %d rounds",
        sum(len(m) for m in streams.values()), n, config.n_rounds,
    )
    return dict(sorted(streams.items()))


def expected_response(config: SynthConfig, j: int, i: int) -> float:
    """Expected single-trade response of stock i to trades of stock j."""
    return float(sum(p.expected_response for p in config.all_impacts() if p.source == j and p.target == i))


def expected_response_matrix(config: SynthConfig) -> np.ndarray:
    n = config.n_stocks
    matrix = np.zeros((n, n))
    for p in config.all_impacts():
        matrix[p.target, p.source] += p.expected_response
    return matrix


def merge_streams(streams: Dict[str, List[ItchMessage]]) -> List[ItchMessage]:
    """Interleave per-stock streams by timestamp, keeping each stock's own order."""
    keyed = [
        (msg.timestamp, rank, seq, msg)
        for rank, symbol in enumerate(sorted(streams))
        for seq, msg in enumerate(streams[symbol])
    ]
    keyed.sort(key=lambda item: item[:3])
    return [item[3] for item in keyed]


def write_streams(path: str, streams: Dict[str, List[ItchMessage]]) -> str:
    """Write all streams to one message CSV ordered by timestamp."""
    return write_messages(path, merge_streams(streams))


def synth_manifest(config: SynthConfig, streams: Optional[Dict[str, List[ItchMessage]]] = None) -> Dict:
    """Configuration and planted ground truth of a synthetic run."""
    symbols = config.stock_symbols
    manifest = {
        "config": config.to_dict(),
        "round_ms": config.round_ms,
        "n_rounds": config.n_rounds,
        "cluster_probability": config.cluster_probability,
        "trade_probabilities": [float(p) for p in config.trade_probabilities()],
        "planted": [
            {
                "source": symbols[p.source],
                "target": symbols[p.target],
                "delta": p.delta,
                "probability": p.probability,
                "alignment": p.alignment,
                "expected_response": p.expected_response,
            }
            for p in config.all_impacts()
        ],
        "low_entropy_stock": None if config.low_entropy_stock is None else symbols[config.low_entropy_stock],
    }
    if streams is not None:
        manifest["messages"] = {symbol: len(msgs) for symbol, msgs in streams.items()}
    return manifest


def write_synth_manifest(path: str, manifest: Dict) -> str:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path
