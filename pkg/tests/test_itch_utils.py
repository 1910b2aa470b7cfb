import os
from decimal import Decimal

import pytest

from errors import ParseError, PreconditionError, StreamIntegrityError
from itch_utils import (
    ItchMessage,
    OrderBook,
    QuoteRecord,
    TradeEvent,
    apply_message,
    dedupe_millisecond_trades,
    filter_session,
    format_message_line,
    format_price,
    parse_message_line,
    read_messages,
    read_quote_tape,
    read_trade_tape,
    reconstruct,
    reconstruct_universe,
    split_by_stock,
    stock_metadata,
    write_quote_tape,
    write_stock_metadata,
    read_stock_metadata,
    write_trade_tape,
)


def msg(line: str) -> ItchMessage:
    return parse_message_line(line)


class TestParseMessageLine:
    def test_submission_fields(self):
        # Arrange, Act
        message = parse_message_line("1000,B,7,10.25,300,AAPL\n")

        # Assert
        assert message.timestamp == 1000
        assert message.msg_type == "B"
        assert message.order_id == 7
        assert message.price == Decimal("10.25")
        assert message.price_ticks == 102500
        assert message.volume == 300
        assert message.stock == "AAPL"
        assert message.side == "buy"

    def test_ignored_types_parse_but_are_flagged(self):
        # Arrange, Act
        cross = parse_message_line("5,X,99,,10,ABC")
        trade = parse_message_line("5,T,100,10.00,25,ABC")

        # Assert
        assert cross.ignored
        assert trade.ignored

    def test_canonical_line_round_trip(self):
        # Arrange
        line = "12,S,8,10.0700,20,ABC"

        # Act
        formatted = format_message_line(parse_message_line(line))

        # Assert
        assert formatted == line

    @pytest.mark.parametrize(
        "line",
        [
            "1,Z,1,10.00,100,ABC",
            "1,B,1,10.00001,100,ABC",
            "1,B,1,,100,ABC",
            "1,B,1,-1.00,100,ABC",
            "1,B,1,10.00,0,ABC",
            "1,C,1,10.00,5,ABC",
            "1,E,1,,0,ABC",
            "x,B,1,10.00,100,ABC",
            "1,B,1,10.00,100",
        ],
    )
    def test_malformed_lines_raise_parse_error(self, line):
        # Arrange, Act, Assert
        with pytest.raises(ParseError):
            parse_message_line(line, line_number=3)

    def test_parse_error_carries_line_number(self):
        # Arrange, Act
        with pytest.raises(ParseError) as info:
            parse_message_line("1,B,1,10.00001,100,ABC", line_number=17)

        # Assert
        assert info.value.line_number == 17
        assert "line 17" in str(info.value)


class TestOrderBook:
    def setup_method(self):
        self.book = OrderBook("ABC")

    def test_first_order_defines_best_quote(self):
        # Arrange, Act
        trade, quote = self.book.apply(msg("1,B,1,10.00,100,ABC"))

        # Assert
        assert trade is None
        assert quote == QuoteRecord(1, 100000, None, 100, None)
        assert quote.midpoint is None

    def test_full_execution_empties_side(self):
        # Arrange
        self.book.apply(msg("1,B,1,10.00,100,ABC"))
        self.book.apply(msg("2,S,2,10.05,50,ABC"))

        # Act
        trade, quote = self.book.apply(msg("3,F,2,,0,ABC"))

        # Assert
        assert trade == TradeEvent(3, 100500, 50, 1, 2)
        assert quote == QuoteRecord(3, 100000, None, 100, None)
        assert len(self.book) == 1

    def test_partial_execution_of_bid_is_a_sell(self):
        # Arrange
        self.book.apply(msg("1,B,1,10.00,100,ABC"))

        # Act
        trade, quote = self.book.apply(msg("2,E,1,,40,ABC"))

        # Assert
        assert trade.sign == -1
        assert trade.volume == 40
        assert self.book.remaining(1) == 60
        assert quote.bid_volume == 60

    def test_quote_only_emitted_on_change(self):
        # Arrange
        self.book.apply(msg("1,B,1,10.00,100,ABC"))
        self.book.apply(msg("2,S,2,10.05,50,ABC"))

        # Act
        _, quote = self.book.apply(msg("3,S,3,10.09,50,ABC"))

        # Assert
        assert quote is None

    def test_price_time_priority_within_level(self):
        # Arrange
        self.book.apply(msg("1,B,1,10.00,100,ABC"))
        self.book.apply(msg("2,B,2,10.00,70,ABC"))

        # Act
        level = self.book.best_bid()

        # Assert
        assert list(level.orders) == [1, 2]
        assert level.volume == 170

    @pytest.mark.parametrize(
        "lines",
        [
            ["1,B,1,10.00,100,ABC", "2,S,2,10.00,10,ABC"],
            ["1,S,1,10.00,100,ABC", "2,B,2,10.01,10,ABC"],
            ["1,B,1,10.00,100,ABC", "2,B,1,9.99,10,ABC"],
            ["1,B,5,10.00,100,ABC", "2,B,4,9.99,10,ABC"],
            ["1,D,1,,0,ABC"],
            ["1,B,1,10.00,100,ABC", "2,E,1,,101,ABC"],
            ["1,B,1,10.00,100,ABC", "2,C,1,,150,ABC"],
        ],
    )
    def test_inconsistent_streams_raise(self, lines):
        # Arrange
        messages = [msg(line) for line in lines]
        for message in messages[:-1]:
            self.book.apply(message)

        # Act, Assert
        with pytest.raises(StreamIntegrityError):
            self.book.apply(messages[-1])

    def test_apply_message_returns_updated_book(self):
        # Arrange, Act
        book, trade, quote = apply_message(self.book, msg("1,S,1,10.00,100,ABC"))

        # Assert
        assert book is self.book
        assert trade is None
        assert quote.ask == 100000


class TestReconstruct:
    def test_golden_script_reproduces_tapes_exactly(self, golden_messages_path, fixtures_dir, tmp_path):
        # Arrange
        messages = read_messages(golden_messages_path)

        # Act
        quotes, trades = reconstruct(messages)
        quote_path = write_quote_tape(str(tmp_path / "quotes_ABC.csv"), quotes)
        trade_path = write_trade_tape(str(tmp_path / "trades_ABC.csv"), trades)

        # Assert
        assert len(messages) == 20
        with open(os.path.join(fixtures_dir, "golden_quotes_ABC.csv")) as f:
            expected_quotes = f.read()
        with open(os.path.join(fixtures_dir, "golden_trades_ABC.csv")) as f:
            expected_trades = f.read()
        with open(quote_path) as f:
            assert f.read() == expected_quotes
        with open(trade_path) as f:
            assert f.read() == expected_trades

    def test_tape_readers_restore_records(self, golden_messages_path, tmp_path):
        # Arrange
        quotes, trades = reconstruct(read_messages(golden_messages_path))
        write_quote_tape(str(tmp_path / "q.csv"), quotes)
        write_trade_tape(str(tmp_path / "t.csv"), trades)

        # Act
        restored_quotes = read_quote_tape(str(tmp_path / "q.csv"))
        restored_trades = read_trade_tape(str(tmp_path / "t.csv"))

        # Assert
        assert restored_quotes == quotes
        assert [(t.timestamp, t.price, t.volume, t.sign) for t in restored_trades] == [
            (t.timestamp, t.price, t.volume, t.sign) for t in trades
        ]

    def test_ignored_messages_leave_tapes_unchanged(self):
        # Arrange
        base = [msg("1,B,1,10.00,100,ABC"), msg("2,S,2,10.05,50,ABC")]
        noisy = [base[0], msg("1,X,9,,10,ABC"), msg("2,T,10,10.02,10,ABC"), base[1]]

        # Act, Assert
        assert reconstruct(base) == reconstruct(noisy)

    def test_three_message_script_gives_three_quotes_and_one_trade(self):
        # Arrange
        messages = [msg("1,B,1,10.00,100,ABC"), msg("2,S,2,10.05,50,ABC"), msg("3,F,2,,0,ABC")]

        # Act
        quotes, trades = reconstruct(messages)

        # Assert
        assert len(quotes) == 3
        assert [t.sign for t in trades] == [1]

    def test_decreasing_timestamp_reports_message_index(self):
        # Arrange
        messages = [msg("5,B,1,10.00,100,ABC"), msg("4,S,2,10.05,50,ABC")]

        # Act
        with pytest.raises(StreamIntegrityError) as info:
            reconstruct(messages)

        # Assert
        assert info.value.message_index == 1

    def test_universe_splits_and_reconstructs_per_stock(self):
        # Arrange
        messages = [
            msg("1,B,1,10.00,100,BBB"),
            msg("1,B,1,20.00,100,AAA"),
            msg("2,S,2,20.10,100,AAA"),
        ]

        # Act
        streams = split_by_stock(messages)
        tapes = reconstruct_universe(streams)

        # Assert
        assert list(tapes) == ["AAA", "BBB"]
        assert len(tapes["AAA"][0]) == 2
        assert len(tapes["BBB"][0]) == 1


class TestSessionAndDedupe:
    def test_filter_session_is_inclusive(self):
        # Arrange
        trades = [TradeEvent(t, 100000, 1, 1) for t in (9, 10, 15, 20, 21)]

        # Act
        kept = filter_session(trades, 10, 20)

        # Assert
        assert [t.timestamp for t in kept] == [10, 15, 20]

    def test_filter_session_rejects_empty_window(self):
        # Arrange, Act, Assert
        with pytest.raises(PreconditionError):
            filter_session([], 20, 20)

    def test_same_millisecond_trades_are_all_dropped(self):
        # Arrange
        trades = [TradeEvent(t, 100000, 1, 1) for t in (1, 2, 2, 3, 3, 3, 4)]

        # Act
        kept, fraction = dedupe_millisecond_trades(trades)

        # Assert
        assert [t.timestamp for t in kept] == [1, 4]
        assert fraction == pytest.approx(5 / 7)

    def test_empty_tape_has_zero_excluded_fraction(self):
        # Arrange, Act
        kept, fraction = dedupe_millisecond_trades([])

        # Assert
        assert kept == []
        assert fraction == 0.0


class TestStockMetadata:
    def test_daily_averages_and_spread(self, golden_messages_path, tmp_path):
        # Arrange
        tapes = {"ABC": reconstruct(read_messages(golden_messages_path))}

        # Act
        metadata = stock_metadata(tapes, n_days=2)
        path = write_stock_metadata(str(tmp_path / "meta.csv"), metadata)
        restored = read_stock_metadata(path)

        # Assert
        row = restored.iloc[0]
        assert row["symbol"] == "ABC"
        assert row["n_trades"] == pytest.approx(3.0)
        assert row["n_quotes"] == pytest.approx(8.0)
        assert 0.03 < row["spread"] < 0.07

    def test_format_price_is_fixed_four_decimals(self):
        # Arrange, Act, Assert
        assert format_price(100500) == "10.0500"
        assert format_price(None) == ""
