"""Line-oriented measurement events and the fixed CEP pipeline over them.

Wire format, one event per line, ``#`` starts a comment::

    timestamp,source,kind,measure[,extra]

``kind`` is one of ``measure``, ``balance``, ``range`` or ``critical``.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Iterable, Iterator

from .queue_model import ValuePartition, value_to_state

log = logging.getLogger(__name__)

EPOCH = datetime(2000, 1, 1)


class EventKind(enum.Enum):
    SMART_METER_MEASURE = "measure"
    BALANCE_INDICATOR = "balance"
    RANGE = "range"
    CRITICAL_VALUE_MSG = "critical"


class EventParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, offset: int = 0):
        where = f"line {line}, offset {offset}" if line is not None else f"offset {offset}"
        super().__init__(f"{where}: {message}")
        self.line = line
        self.offset = offset


class OutOfOrderError(ValueError):
    pass


@dataclass(frozen=True)
class Event:
    timestamp: datetime
    source: str
    kind: EventKind
    measure: float
    extra: str | None = None

    def __post_init__(self) -> None:
        if not math.isfinite(self.measure):
            raise ValueError(f"measure must be finite, got {self.measure}")
        if self.kind is EventKind.RANGE and not self.extra:
            raise ValueError("range events must carry the range name")

    @property
    def minutes(self) -> float:
        """Timestamp as minutes since a fixed epoch."""
        return (self.timestamp - EPOCH) / timedelta(minutes=1)


def format_timestamp(ts: datetime) -> str:
    if ts.second == 0 and ts.microsecond == 0:
        return ts.strftime("%Y-%m-%dT%H:%M")
    return ts.isoformat()


def format_event(event: Event) -> str:
    fields = [format_timestamp(event.timestamp), event.source, event.kind.value,
              repr(float(event.measure))]
    if event.extra is not None:
        fields.append(event.extra)
    return ",".join(fields)


def ingest(line: str, lineno: int | None = None) -> Event:
    """Parse one wire-format record."""
    fields = line.rstrip("\r\n").split(",")
    offsets = [0]
    for f in fields[:-1]:
        offsets.append(offsets[-1] + len(f) + 1)
    if len(fields) not in (4, 5):
        raise EventParseError(f"expected 4 or 5 comma-separated fields, got {len(fields)}",
                              lineno, 0)
    ts_text, source, kind_text, measure_text = (f.strip() for f in fields[:4])
    try:
        timestamp = datetime.fromisoformat(ts_text)
    except ValueError:
        raise EventParseError(f"bad timestamp {ts_text!r}", lineno, offsets[0]) from None
    if not source:
        raise EventParseError("empty source", lineno, offsets[1])
    try:
        kind = EventKind(kind_text)
    except ValueError:
        raise EventParseError(f"unknown event kind {kind_text!r}", lineno, offsets[2]) from None
    try:
        measure = float(measure_text)
    except ValueError:
        raise EventParseError(f"bad measure {measure_text!r}", lineno, offsets[3]) from None
    extra = fields[4].strip() if len(fields) == 5 else None
    try:
        return Event(timestamp, source, kind, measure, extra)
    except ValueError as exc:
        raise EventParseError(str(exc), lineno, offsets[3]) from None


def read_events(lines: Iterable[str], on_out_of_order: str = "reject") -> Iterator[Event]:
    """Parse a stream of lines, enforcing per-source timestamp order.

    Args:
        lines: Wire-format lines; blanks and ``#`` comments are skipped.
        on_out_of_order: ``"reject"`` raises :class:`OutOfOrderError`,
            ``"drop"`` logs a warning and skips the event.
    """
    if on_out_of_order not in ("reject", "drop"):
        raise ValueError(f"unknown out-of-order policy {on_out_of_order!r}")
    last_seen: dict[str, datetime] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        event = ingest(line, lineno)
        previous = last_seen.get(event.source)
        if previous is not None and event.timestamp < previous:
            msg = (f"line {lineno}: event for {event.source} at {event.timestamp} "
                   f"precedes {previous}")
            if on_out_of_order == "reject":
                raise OutOfOrderError(msg)
            log.warning("dropping out-of-order event, %s", msg)
            continue
        last_seen[event.source] = event.timestamp
        yield event


def bucket_of(ts: datetime, period_min: float) -> int:
    return math.floor((ts - EPOCH) / timedelta(minutes=period_min))


def bucket_start(bucket: int, period_min: float) -> datetime:
    return EPOCH + bucket * timedelta(minutes=period_min)


def derive_balance(ep_event: Event, ec_event: Event, period_min: float = 15.0) -> Event:
    """Balance indicator ``EP.measure - EC.measure`` stamped at the start of the shared bucket."""
    bucket = bucket_of(ep_event.timestamp, period_min)
    if bucket != bucket_of(ec_event.timestamp, period_min):
        raise ValueError("producer and consumer events fall in different periods")
    return Event(bucket_start(bucket, period_min), "ED", EventKind.BALANCE_INDICATOR,
                 ep_event.measure - ec_event.measure)


class BalanceJoiner:
    """Joins producer and consumer measures on timestamp buckets.

    A balance event is emitted as soon as both sides have reported for a
    bucket. A bucket left half-filled when a later one starts is dropped.
    """

    def __init__(self, producer: str = "EP", consumer: str = "EC", period_min: float = 15.0):
        self.producer = producer
        self.consumer = consumer
        self.period_min = period_min
        self._bucket: int | None = None
        self._pending: dict[str, Event] = {}

    def push(self, event: Event) -> Event | None:
        if event.kind is not EventKind.SMART_METER_MEASURE:
            return None
        if event.source not in (self.producer, self.consumer):
            return None
        bucket = bucket_of(event.timestamp, self.period_min)
        if self._bucket is None or bucket > self._bucket:
            self._drop_pending()
            self._bucket = bucket
        elif bucket < self._bucket:
            log.info("ignoring %s measure for an already-passed period", event.source)
            return None
        self._pending[event.source] = event
        if len(self._pending) == 2:
            balance = derive_balance(self._pending[self.producer],
                                     self._pending[self.consumer], self.period_min)
            self._pending = {}
            return balance
        return None

    def _drop_pending(self) -> None:
        for source in self._pending:
            log.info("no counterpart for %s measure in period %s", source, self._bucket)
        self._pending = {}


def classify_range(balance: Event, partition: ValuePartition) -> Event:
    """Range event naming the queue interval the balance index falls in."""
    state = value_to_state(partition, balance.measure)
    return Event(balance.timestamp, balance.source, EventKind.RANGE, balance.measure,
                 f"range_{state}")


class UnderproductionDetector:
    """Sustained below-threshold detection on one source.

    Emits a ``critical`` event once every measure of ``source`` over a trailing
    window of ``duration_min`` has been below ``threshold``; one message per
    episode, the episode ends at the first measure at or above the threshold.
    """

    def __init__(self, source: str, duration_min: float, threshold: float):
        if duration_min <= 0:
            raise ValueError(f"window duration must be positive, got {duration_min}")
        self.source = source
        self.duration = timedelta(minutes=duration_min)
        self.threshold = threshold
        self._run_start: datetime | None = None
        self._reported = False

    def push(self, event: Event) -> Event | None:
        if event.source != self.source or event.kind is not EventKind.SMART_METER_MEASURE:
            return None
        if event.measure >= self.threshold:
            self._run_start = None
            self._reported = False
            return None
        if self._run_start is None:
            self._run_start = event.timestamp
        if not self._reported and event.timestamp - self._run_start >= self.duration:
            self._reported = True
            return Event(event.timestamp, event.source, EventKind.CRITICAL_VALUE_MSG,
                         event.measure, "underproduction")
        return None


def window_query(stream: Iterable[Event], source: str, duration_min: float,
                 threshold: float) -> list[Event]:
    detector = UnderproductionDetector(source, duration_min, threshold)
    return [msg for msg in map(detector.push, stream) if msg is not None]
