"""Closing prices and next-session movement labels."""

from __future__ import annotations

import bisect
import csv
import datetime as dt
import io
import logging
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .corpus import AnswerSequence, Skipped
from .errors import ParseError, ValidationError

log = logging.getLogger(__name__)

RESOLUTION_WINDOW_DAYS = 7


@dataclass(frozen=True)
class PriceSeries:
    ticker: str
    dates: tuple
    closes: np.ndarray

    def __post_init__(self):
        if len(self.dates) != len(self.closes):
            raise ValidationError("dates and closes differ in length")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise ValidationError(f"{self.ticker}: dates must be strictly increasing")
        if np.any(~(np.asarray(self.closes) > 0)):
            raise ValidationError(f"{self.ticker}: closes must be positive")
        self.closes.setflags(write=False)

    def __len__(self):
        return len(self.dates)

    def index_of(self, day):
        i = bisect.bisect_left(self.dates, day)
        if i < len(self.dates) and self.dates[i] == day:
            return i
        return None

    def scaled(self, factor):
        return PriceSeries(self.ticker, self.dates, np.asarray(self.closes) * factor)


def load_prices_csv(data) -> dict[str, PriceSeries]:
    """Parse a `ticker,date,close` CSV (path, bytes or stream) into series.

    Rows may come in any order; duplicate (ticker, date) rows are rejected.
    """
    if isinstance(data, (bytes, bytearray)):
        text = bytes(data).decode("utf-8")
    elif isinstance(data, str) or hasattr(data, "__fspath__"):
        with open(data, encoding="utf-8", newline="") as fh:
            text = fh.read()
    else:
        raw = data.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw

    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        return {}
    if [h.strip() for h in header] != ["ticker", "date", "close"]:
        raise ParseError("expected header 'ticker,date,close'", 1)

    rows = defaultdict(dict)
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != 3:
            raise ParseError(f"expected 3 fields, found {len(row)}", lineno)
        ticker, date_s, close_s = (cell.strip() for cell in row)
        try:
            day = dt.date.fromisoformat(date_s)
        except ValueError:
            raise ParseError(f"invalid date {date_s!r}", lineno) from None
        try:
            close = float(close_s)
        except ValueError:
            raise ParseError(f"invalid close {close_s!r}", lineno) from None
        if not np.isfinite(close) or close <= 0:
            raise ParseError(f"close must be positive, got {close_s}", lineno)
        if day in rows[ticker]:
            raise ParseError(f"duplicate row for {ticker} on {day}", lineno)
        rows[ticker][day] = close

    series = {}
    for ticker, by_day in rows.items():
        days = sorted(by_day)
        series[ticker] = PriceSeries(ticker, tuple(days), np.array([by_day[d] for d in days]))
    return series


@dataclass(frozen=True)
class Movement:
    label: int
    day: dt.date
    next_day: dt.date


@dataclass(frozen=True)
class Unresolvable:
    reason: str


def movement_label(series: PriceSeries, call_date: dt.date, window_days=RESOLUTION_WINDOW_DAYS):
    """Label 1 when the close on the session after the call's session is
    strictly higher. A call on a non-trading day belongs to the next
    session. Both sessions must fall inside the calendar window."""
    window = dt.timedelta(days=window_days)
    i = bisect.bisect_left(series.dates, call_date)
    if i >= len(series) or series.dates[i] - call_date > window:
        return Unresolvable(f"no trading day within {window_days} days of {call_date}")
    if i + 1 >= len(series) or series.dates[i + 1] - series.dates[i] > window:
        return Unresolvable(f"no trading day within {window_days} days after {series.dates[i]}")
    label = int(series.closes[i + 1] > series.closes[i])
    return Movement(label, series.dates[i], series.dates[i + 1])


@dataclass(frozen=True)
class LabeledExample:
    sequence: AnswerSequence
    sector: int
    label: int
    company_id: str
    ticker: str
    call_date: dt.date
    day: dt.date
    next_day: dt.date


@dataclass(frozen=True)
class Exclusion:
    company_id: str
    ticker: str
    call_date: dt.date
    reason: str


def build_dataset(transcripts, sequences, prices):
    """Join transcripts with their prepared sequences and movement labels.

    `sequences` maps (company_id, call_date) to an AnswerSequence or Skipped.
    Returns (examples sorted by company and date, exclusions).
    """
    seen = set()
    examples, excluded = [], []
    for t in transcripts:
        if (t.ticker, t.call_date) in seen:
            raise ValidationError(f"duplicate transcript for {t.ticker} on {t.call_date}")
        seen.add((t.ticker, t.call_date))

        def skip(reason):
            excluded.append(Exclusion(t.company_id, t.ticker, t.call_date, reason))

        seq = sequences.get(t.key)
        if seq is None:
            skip("no prepared sequence")
            continue
        if isinstance(seq, Skipped):
            skip(f"{seq.reason} ({seq.sentence_count} sentences)")
            continue
        series = prices.get(t.ticker)
        if series is None or len(series) == 0:
            skip("no prices for ticker")
            continue
        move = movement_label(series, t.call_date)
        if isinstance(move, Unresolvable):
            skip(move.reason)
            continue
        examples.append(
            LabeledExample(seq, t.sector, move.label, t.company_id, t.ticker, t.call_date, move.day, move.next_day)
        )
    for e in excluded:
        log.info("excluded %s %s: %s", e.ticker, e.call_date, e.reason)
    examples.sort(key=lambda e: (e.company_id, e.call_date))
    excluded.sort(key=lambda e: (e.company_id, e.call_date))
    return examples, excluded
