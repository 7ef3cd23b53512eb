from datetime import datetime, timedelta

import pytest
from hypothesis import given
from hypothesis import strategies as st

from qospredict.events import (
    BalanceJoiner,
    Event,
    EventKind,
    EventParseError,
    OutOfOrderError,
    classify_range,
    derive_balance,
    format_event,
    ingest,
    read_events,
    window_query,
)
from qospredict.queue_model import ValuePartition

SG = ValuePartition(-400, 400, -380, -200, 200, 380, 40)
T0 = datetime(2014, 1, 1)


def meter(source, measure, minutes=0.0):
    return Event(T0 + timedelta(minutes=minutes), source, EventKind.SMART_METER_MEASURE,
                 measure)


class TestIngest:
    def test_measure(self):
        e = ingest("2014-01-01T00:00,EP,measure,500.0")
        assert e == meter("EP", 500.0)

    def test_range_extra(self):
        e = ingest("2014-01-01T00:15,ED,range,12.5,range_21\n")
        assert (e.kind, e.extra) == (EventKind.RANGE, "range_21")

    @pytest.mark.parametrize("line, offset", [
        ("garbage", 0),
        ("2014-13-01T00:00,EP,measure,1", 0),
        ("2014-01-01T00:00,,measure,1", 17),
        ("2014-01-01T00:00,EP,meter,1", 20),
        ("2014-01-01T00:00,EP,measure,abc", 28),
        ("2014-01-01T00:00,EP,measure,nan", 28),
        ("2014-01-01T00:00,EP,range,1", 26),
    ])
    def test_errors_carry_offset(self, line, offset):
        with pytest.raises(EventParseError) as info:
            ingest(line, 7)
        assert (info.value.line, info.value.offset) == (7, offset)

    def test_comments_and_blanks_skipped(self):
        lines = ["# header", "", "2014-01-01T00:00,EP,measure,1.0"]
        assert len(list(read_events(lines))) == 1

    def test_out_of_order_rejected(self):
        lines = ["2014-01-01T00:15,EP,measure,1", "2014-01-01T00:00,EP,measure,2"]
        with pytest.raises(OutOfOrderError, match="line 2"):
            list(read_events(lines))

    def test_out_of_order_dropped(self, caplog):
        lines = ["2014-01-01T00:15,EP,measure,1", "2014-01-01T00:00,EP,measure,2",
                 "2014-01-01T00:00,EC,measure,3"]
        events = list(read_events(lines, on_out_of_order="drop"))
        assert [e.measure for e in events] == [1.0, 3.0]
        assert "out-of-order" in caplog.text

    @given(st.floats(allow_nan=False, allow_infinity=False),
           st.integers(0, 10 ** 6), st.sampled_from(["EP", "EC", "ED"]))
    def test_format_round_trip(self, measure, minutes, source):
        e = meter(source, measure, minutes)
        assert ingest(format_event(e)) == e
        assert format_event(ingest(format_event(e))) == format_event(e)


class TestBalance:
    @pytest.mark.parametrize("ep, ec, expected", [(500, 300, 200), (500, 500, 0),
                                                  (300, 500, -200)])
    def test_examples(self, ep, ec, expected):
        b = derive_balance(meter("EP", ep, 3), meter("EC", ec, 7))
        assert (b.measure, b.source, b.kind) == (expected, "ED", EventKind.BALANCE_INDICATOR)
        assert b.timestamp == T0

    @given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(-1e6, 1e6),
           st.floats(-1e6, 1e6))
    def test_linear(self, a, b, c, d):
        lhs = derive_balance(meter("EP", a + c), meter("EC", b + d)).measure
        rhs = derive_balance(meter("EP", a), meter("EC", b)).measure + \
            derive_balance(meter("EP", c), meter("EC", d)).measure
        assert lhs == pytest.approx(rhs, abs=1e-6)

    def test_different_buckets(self):
        with pytest.raises(ValueError):
            derive_balance(meter("EP", 1, 0), meter("EC", 1, 15))

    def test_joiner(self):
        j = BalanceJoiner()
        assert j.push(meter("EP", 500, 0)) is None
        assert j.push(meter("EC", 450, 1)).measure == 50
        # EC never arrives for the second period
        assert j.push(meter("EP", 510, 15)) is None
        assert j.push(meter("EC", 470, 30)) is None
        assert j.push(meter("EP", 520, 31)).measure == 50
        assert j.push(meter("XX", 1, 32)) is None


@pytest.mark.parametrize("balance, name", [(0, "range_20"), (-400, "range_0"),
                                           (399, "range_40"), (-1e4, "range_0")])
def test_classify_range(balance, name):
    b = Event(T0, "ED", EventKind.BALANCE_INDICATOR, balance)
    r = classify_range(b, SG)
    assert (r.kind, r.extra, r.measure) == (EventKind.RANGE, name, balance)


class TestWindowQuery:
    def test_sustained(self):
        stream = [meter("EP", v, t) for v, t in zip([90, 85, 80], [0, 8, 15])]
        msgs = window_query(stream, "EP", 15, 100)
        assert len(msgs) == 1
        assert (msgs[0].kind, msgs[0].extra) == (EventKind.CRITICAL_VALUE_MSG, "underproduction")
        assert msgs[0].timestamp == T0 + timedelta(minutes=15)

    def test_interrupted(self):
        stream = [meter("EP", v, t) for v, t in zip([90, 110, 90], [0, 8, 15])]
        assert window_query(stream, "EP", 15, 100) == []

    def test_empty(self):
        assert window_query([], "EP", 15, 100) == []

    def test_one_message_per_episode(self):
        values = [90] * 6 + [120] + [90] * 4
        stream = [meter("EP", v, 5 * k) for k, v in enumerate(values)]
        msgs = window_query(stream, "EP", 15, 100)
        assert [m.timestamp for m in msgs] == [T0 + timedelta(minutes=15),
                                               T0 + timedelta(minutes=50)]

    def test_other_sources_ignored(self):
        stream = [meter("EC", 1, t) for t in (0, 10, 20)]
        assert window_query(stream, "EP", 15, 100) == []

    def test_bad_duration(self):
        with pytest.raises(ValueError):
            window_query([], "EP", 0, 100)
