"""
ITCH Order-Flow Utilities

This module parses ITCH-style message streams (canonical CSV lines), replays
them through a per-stock order pool with price-time priority and derives the
best-quote and trade tapes at millisecond resolution.
"""

import logging
import os
import re
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
import pandas as pd
from sortedcontainers import SortedDict
from tqdm import tqdm

from errors import ParseError, PreconditionError, StreamIntegrityError

logger = logging.getLogger(__name__)

# Prices are kept as integer ten-thousandths of a dollar inside the book.
PRICE_SCALE = 10_000

MESSAGE_TYPES = ("B", "S", "C", "D", "E", "F", "X", "T")
IGNORED_TYPES = frozenset({"X", "T"})
SUBMISSION_TYPES = frozenset({"B", "S"})

BUY = "buy"
SELL = "sell"

MESSAGE_COLUMNS = ("timestamp_ms", "msg_type", "order_id", "price", "volume", "stock")
QUOTE_COLUMNS = ("t_ms", "bid", "ask", "bid_vol", "ask_vol")
TRADE_COLUMNS = ("t_ms", "price", "volume", "sign")
METADATA_COLUMNS = ("index", "symbol", "n_trades", "n_quotes", "spread")

_UINT = re.compile(r"^\d+$")


@dataclass(frozen=True)
class ItchMessage:
    """One order-flow event of a single stock."""

    timestamp: int
    msg_type: str
    order_id: int
    price: Optional[Decimal]
    volume: int
    stock: str

    @property
    def ignored(self) -> bool:
        """X and T messages are parsed but never touch the book."""
        return self.msg_type in IGNORED_TYPES

    @property
    def side(self) -> Optional[str]:
        # Only submissions carry their side; C/D/E/F inherit it from the referenced order.
        if self.msg_type == "B":
            return BUY
        if self.msg_type == "S":
            return SELL
        return None

    @property
    def price_ticks(self) -> Optional[int]:
        if self.price is None:
            return None
        return int(self.price * PRICE_SCALE)


@dataclass(frozen=True)
class QuoteRecord:
    """Best-quote snapshot; a missing side has price and volume set to None."""

    timestamp: int
    bid: Optional[int]
    ask: Optional[int]
    bid_volume: Optional[int]
    ask_volume: Optional[int]

    @property
    def quadruple(self) -> Tuple[Optional[int], Optional[int], Optional[int], Optional[int]]:
        return (self.bid, self.ask, self.bid_volume, self.ask_volume)

    @property
    def two_sided(self) -> bool:
        return self.bid is not None and self.ask is not None

    @property
    def midpoint(self) -> Optional[float]:
        """Midpoint in dollars, undefined for a one-sided or empty book."""
        if not self.two_sided:
            return None
        return (self.bid + self.ask) / (2 * PRICE_SCALE)

    @property
    def spread(self) -> Optional[float]:
        if not self.two_sided:
            return None
        return (self.ask - self.bid) / PRICE_SCALE


@dataclass(frozen=True)
class TradeEvent:
    """Trade derived from the execution of a resting limit order."""

    timestamp: int
    price: int
    volume: int
    sign: int
    order_id: Optional[int] = None


def ticks_to_decimal(ticks: Optional[int]) -> Optional[Decimal]:
    """Exact four-decimal dollar price of integer ticks."""
    if ticks is None:
        return None
    return Decimal(ticks).scaleb(-4)


def format_price(ticks: Optional[int]) -> str:
    """Render integer ticks as a fixed four-decimal dollar string ('' when missing)."""
    if ticks is None:
        return ""
    return f"{ticks // PRICE_SCALE}.{ticks % PRICE_SCALE:04d}"


def parse_price(text: str, line_number: Optional[int] = None) -> Decimal:
    try:
        price = Decimal(text)
    except InvalidOperation:
        raise ParseError(f"malformed price '{text}'", line_number)
    if not price.is_finite():
        raise ParseError(f"malformed price '{text}'", line_number)
    if price.as_tuple().exponent < -4:
        raise ParseError(f"price '{text}' finer than 1/{PRICE_SCALE} dollar", line_number)
    return price


def _parse_uint(text: str, name: str, line_number: Optional[int]) -> int:
    if not _UINT.match(text):
        raise ParseError(f"malformed {name} '{text}'", line_number)
    return int(text)


def parse_message_line(line: str, line_number: Optional[int] = None) -> ItchMessage:
    """
    Parse one canonical CSV message line.

    Args:
        line (str): `timestamp_ms,msg_type,order_id,price,volume,stock`
        line_number (int, optional): Position in the source file, used in errors

    Returns:
        ItchMessage: Fully populated message; X/T messages report `ignored`

    Raises:
        ParseError: Malformed field or unknown message type
    """
    fields = line.rstrip("\r\n").split(",")
    if len(fields) != len(MESSAGE_COLUMNS):
        raise ParseError(f"expected {len(MESSAGE_COLUMNS)} fields, got {len(fields)}", line_number)

    ts_text, msg_type, id_text, price_text, vol_text, stock = fields
    if msg_type not in MESSAGE_TYPES:
        raise ParseError(f"unknown message type '{msg_type}'", line_number)

    timestamp = _parse_uint(ts_text, "timestamp", line_number)
    order_id = _parse_uint(id_text, "order id", line_number)
    volume = _parse_uint(vol_text, "volume", line_number)
    if not stock:
        raise ParseError("missing stock symbol", line_number)

    price = None
    if msg_type in SUBMISSION_TYPES:
        if not price_text:
            raise ParseError(f"{msg_type} message without price", line_number)
        price = parse_price(price_text, line_number)
        if price <= 0:
            raise ParseError(f"non-positive price '{price_text}'", line_number)
        if volume <= 0:
            raise ParseError("submission with zero volume", line_number)
    elif msg_type in IGNORED_TYPES:
        if price_text:
            price = parse_price(price_text, line_number)
    else:
        if price_text:
            raise ParseError(f"{msg_type} message must leave the price field empty", line_number)
        if msg_type in ("C", "E") and volume <= 0:
            raise ParseError(f"{msg_type} message with zero volume", line_number)

    return ItchMessage(
        timestamp=timestamp,
        msg_type=msg_type,
        order_id=order_id,
        price=price,
        volume=volume,
        stock=stock,
    )


def format_message_line(msg: ItchMessage) -> str:
    """Serialize a message back to its canonical CSV line (no line terminator)."""
    price = "" if msg.price is None else str(msg.price)
    return f"{msg.timestamp},{msg.msg_type},{msg.order_id},{price},{msg.volume},{msg.stock}"


def read_messages(path: str, has_header: bool = False) -> List[ItchMessage]:
    """
    Read a message CSV file.

    Args:
        path (str): Path to a UTF-8, LF-terminated message file
        has_header (bool): Skip the first line when True

    Returns:
        List[ItchMessage]: Messages in file order (blank lines skipped)
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Message file not found: {path}")

    messages = []
    with open(path, "r", encoding="utf-8", newline="\n") as f:
        for number, line in enumerate(f, start=1):
            if has_header and number == 1:
                continue
            if not line.strip():
                continue
            messages.append(parse_message_line(line, number))
    logger.debug("Read %d messages from %s", len(messages), path)
    return messages


def write_messages(path: str, messages: Iterable[ItchMessage]) -> str:
    """Write messages as canonical CSV lines without a header."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for msg in messages:
            f.write(format_message_line(msg) + "\n")
    return path


def split_by_stock(messages: Iterable[ItchMessage]) -> Dict[str, List[ItchMessage]]:
    """Partition a mixed stream per stock, keeping input order inside each stock."""
    streams: Dict[str, List[ItchMessage]] = {}
    for msg in messages:
        streams.setdefault(msg.stock, []).append(msg)
    return dict(sorted(streams.items()))


class PriceLevel:
    """Queue of resting orders at one price; dict order is ascending order id."""

    __slots__ = ("price", "orders", "volume")

    def __init__(self, price: int):
        self.price = price
        self.orders: Dict[int, int] = {}
        self.volume = 0

    def add_order(self, order_id: int, volume: int):
        self.orders[order_id] = volume
        self.volume += volume

    def reduce_order(self, order_id: int, volume: int) -> int:
        remaining = self.orders[order_id] - volume
        self.volume -= volume
        if remaining == 0:
            del self.orders[order_id]
        else:
            self.orders[order_id] = remaining
        return remaining

    def __repr__(self) -> str:
        return f"PriceLevel({format_price(self.price)}, volume={self.volume}, orders={len(self.orders)})"


class OrderBook:
    """
    Order pool of one stock under price-time priority.

    Bids and asks are SortedDicts keyed by integer price ticks. Every resting
    order is indexed by id so cancellations and executions can find their
    level directly.
    """

    def __init__(self, stock: str = ""):
        self.stock = stock
        self.bids = SortedDict()
        self.asks = SortedDict()
        self.orders: Dict[int, Tuple[str, int]] = {}
        self.last_order_id: Optional[int] = None
        self._last_quadruple = (None, None, None, None)

    # ----------------------
    # Book inspection
    # ----------------------
    def best_bid(self) -> Optional[PriceLevel]:
        return self.bids.peekitem(-1)[1] if self.bids else None

    def best_ask(self) -> Optional[PriceLevel]:
        return self.asks.peekitem(0)[1] if self.asks else None

    def quadruple(self) -> Tuple[Optional[int], Optional[int], Optional[int], Optional[int]]:
        bid = self.best_bid()
        ask = self.best_ask()
        return (
            bid.price if bid else None,
            ask.price if ask else None,
            bid.volume if bid else None,
            ask.volume if ask else None,
        )

    def remaining(self, order_id: int) -> int:
        side, price = self.orders[order_id]
        levels = self.bids if side == BUY else self.asks
        return levels[price].orders[order_id]

    def __len__(self) -> int:
        return len(self.orders)

    # ----------------------
    # Message handling
    # ----------------------
    def apply(self, msg: ItchMessage) -> Tuple[Optional[TradeEvent], Optional[QuoteRecord]]:
        """
        Apply one message to the book.

        Returns:
            Tuple: (trade derived from an E/F message or None,
                    quote record if the best-quote quadruple changed or None)

        Raises:
            StreamIntegrityError: Unknown id, over-execution, crossing or
                out-of-sequence submission
        """
        if msg.ignored:
            return None, None

        trade = None
        if msg.msg_type in SUBMISSION_TYPES:
            self._submit(msg)
        else:
            if msg.order_id not in self.orders:
                raise StreamIntegrityError(f"unknown order id {msg.order_id} for {msg.msg_type}")
            side, price = self.orders[msg.order_id]
            levels = self.bids if side == BUY else self.asks
            level = levels[price]
            remaining = level.orders[msg.order_id]

            if msg.msg_type in ("C", "E"):
                if msg.volume > remaining:
                    raise StreamIntegrityError(
                        f"{msg.msg_type} volume {msg.volume} exceeds remaining {remaining} of order {msg.order_id}"
                    )
                volume = msg.volume
            else:
                volume = remaining

            left = level.reduce_order(msg.order_id, volume)
            if left == 0:
                del self.orders[msg.order_id]
            if level.volume == 0:
                del levels[price]

            if msg.msg_type in ("E", "F"):
                # Executing a resting sell means a buy market order arrived.
                sign = 1 if side == SELL else -1
                trade = TradeEvent(msg.timestamp, price, volume, sign, msg.order_id)

        return trade, self._quote_if_changed(msg.timestamp)

    def _submit(self, msg: ItchMessage):
        price = msg.price_ticks
        if msg.order_id in self.orders:
            raise StreamIntegrityError(f"duplicate order id {msg.order_id}")
        if self.last_order_id is not None and msg.order_id <= self.last_order_id:
            raise StreamIntegrityError(
                f"order id {msg.order_id} not above previous submission {self.last_order_id}"
            )

        if msg.side == BUY:
            ask = self.best_ask()
            if ask is not None and price >= ask.price:
                raise StreamIntegrityError(
                    f"buy {format_price(price)} crosses best ask {format_price(ask.price)}"
                )
            levels = self.bids
        else:
            bid = self.best_bid()
            if bid is not None and price <= bid.price:
                raise StreamIntegrityError(
                    f"sell {format_price(price)} crosses best bid {format_price(bid.price)}"
                )
            levels = self.asks

        if price not in levels:
            levels[price] = PriceLevel(price)
        levels[price].add_order(msg.order_id, msg.volume)
        self.orders[msg.order_id] = (msg.side, price)
        self.last_order_id = msg.order_id

    def _quote_if_changed(self, timestamp: int) -> Optional[QuoteRecord]:
        current = self.quadruple()
        if current == self._last_quadruple:
            return None
        self._last_quadruple = current
        return QuoteRecord(timestamp, *current)


def apply_message(
    book: OrderBook, msg: ItchMessage
) -> Tuple[OrderBook, Optional[TradeEvent], Optional[QuoteRecord]]:
    """Functional wrapper around `OrderBook.apply` (the book is updated in place)."""
    trade, quote = book.apply(msg)
    return book, trade, quote


def reconstruct(messages: Sequence[ItchMessage]) -> Tuple[List[QuoteRecord], List[TradeEvent]]:
    """
    Replay one stock's message stream and collect its tapes.

    Args:
        messages (Sequence[ItchMessage]): Time-ordered messages of one stock

    Returns:
        Tuple[List[QuoteRecord], List[TradeEvent]]: Quote and trade tapes

    Raises:
        StreamIntegrityError: With the index of the offending message
    """
    book = OrderBook(messages[0].stock if messages else "")
    quotes: List[QuoteRecord] = []
    trades: List[TradeEvent] = []
    previous_ts = None

    for index, msg in enumerate(messages):
        if previous_ts is not None and msg.timestamp < previous_ts:
            raise StreamIntegrityError(
                f"timestamp {msg.timestamp} earlier than {previous_ts}", message_index=index
            )
        previous_ts = msg.timestamp
        try:
            trade, quote = book.apply(msg)
        except StreamIntegrityError as e:
            raise StreamIntegrityError(str(e), message_index=index) from e
        if trade is not None:
            trades.append(trade)
        if quote is not None:
            quotes.append(quote)

    logger.debug("%s: %d quotes, %d trades", book.stock, len(quotes), len(trades))
    return quotes, trades


def reconstruct_universe(
    streams: Dict[str, List[ItchMessage]], workers: int = 1, show_progress: bool = False
) -> Dict[str, Tuple[List[QuoteRecord], List[TradeEvent]]]:
    """
    Reconstruct every stock independently.

    Args:
        streams (Dict[str, List[ItchMessage]]): Per-stock message streams
        workers (int): Process count; 1 keeps everything in-process
        show_progress (bool): Show a tqdm bar over stocks

    Returns:
        Dict[str, Tuple]: symbol -> (quotes, trades), symbols in sorted order
    """
    symbols = sorted(streams)
    if workers > 1 and len(symbols) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(reconstruct, [streams[s] for s in symbols]))
    else:
        iterator = tqdm(symbols, desc="Reconstructing", disable=not show_progress)
        results = [reconstruct(streams[s]) for s in iterator]
    return dict(zip(symbols, results))


Record = TypeVar("Record", QuoteRecord, TradeEvent)


def filter_session(series: Sequence[Record], start_ms: int, end_ms: int) -> List[Record]:
    """Keep records with start_ms <= timestamp <= end_ms, preserving order."""
    if start_ms >= end_ms:
        raise PreconditionError(f"session start {start_ms} must precede end {end_ms}")
    return [r for r in series if start_ms <= r.timestamp <= end_ms]


def dedupe_millisecond_trades(trades: Sequence[TradeEvent]) -> Tuple[List[TradeEvent], float]:
    """
    Drop every trade that shares its millisecond with another trade of the stock.

    Returns:
        Tuple[List[TradeEvent], float]: (kept trades, excluded fraction; 0 for an empty tape)
    """
    if not trades:
        return [], 0.0
    per_ms = Counter(t.timestamp for t in trades)
    kept = [t for t in trades if per_ms[t.timestamp] == 1]
    return kept, (len(trades) - len(kept)) / len(trades)


# ----------------------
# Tape IO
# ----------------------
def _fmt_int(value: Optional[int]) -> str:
    return "" if value is None else str(value)


def _opt_int(text: str) -> Optional[int]:
    return int(text) if text else None


def _opt_ticks(text: str) -> Optional[int]:
    return int(parse_price(text).scaleb(4).to_integral_exact()) if text else None


def quotes_to_frame(quotes: Sequence[QuoteRecord]) -> pd.DataFrame:
    rows = [
        (str(q.timestamp), format_price(q.bid), format_price(q.ask), _fmt_int(q.bid_volume), _fmt_int(q.ask_volume))
        for q in quotes
    ]
    return pd.DataFrame(rows, columns=list(QUOTE_COLUMNS), dtype=str)


def trades_to_frame(trades: Sequence[TradeEvent]) -> pd.DataFrame:
    rows = [(str(t.timestamp), format_price(t.price), str(t.volume), str(t.sign)) for t in trades]
    return pd.DataFrame(rows, columns=list(TRADE_COLUMNS), dtype=str)


def write_quote_tape(path: str, quotes: Sequence[QuoteRecord]) -> str:
    quotes_to_frame(quotes).to_csv(path, index=False, lineterminator="\n")
    return path


def write_trade_tape(path: str, trades: Sequence[TradeEvent]) -> str:
    trades_to_frame(trades).to_csv(path, index=False, lineterminator="\n")
    return path


def read_quote_tape(path: str) -> List[QuoteRecord]:
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    return [
        QuoteRecord(int(t), _opt_ticks(b), _opt_ticks(a), _opt_int(bv), _opt_int(av))
        for t, b, a, bv, av in frame[list(QUOTE_COLUMNS)].itertuples(index=False)
    ]


def read_trade_tape(path: str) -> List[TradeEvent]:
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    return [
        TradeEvent(int(t), _opt_ticks(p), int(v), int(s))
        for t, p, v, s in frame[list(TRADE_COLUMNS)].itertuples(index=False)
    ]


# ----------------------
# Stock metadata (average daily trades / quotes / spread per stock)
# ----------------------
def stock_metadata(
    tapes: Dict[str, Tuple[Sequence[QuoteRecord], Sequence[TradeEvent]]], n_days: int = 1
) -> pd.DataFrame:
    """
    Summarize reconstructed tapes per stock.

    Args:
        tapes (Dict): symbol -> (quotes, trades)
        n_days (int): Number of trading days the tapes cover

    Returns:
        pd.DataFrame: Columns index, symbol, n_trades, n_quotes, spread
    """
    rows = []
    for index, symbol in enumerate(sorted(tapes), start=1):
        quotes, trades = tapes[symbol]
        spreads = [q.spread for q in quotes if q.two_sided]
        rows.append({
            "index": index,
            "symbol": symbol,
            "n_trades": len(trades) / n_days,
            "n_quotes": len(quotes) / n_days,
            "spread": float(np.mean(spreads)) if spreads else float("nan"),
        })
    return pd.DataFrame(rows, columns=list(METADATA_COLUMNS))


def write_stock_metadata(path: str, metadata: pd.DataFrame) -> str:
    metadata.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")
    return path


def read_stock_metadata(path: str) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"symbol": str})
