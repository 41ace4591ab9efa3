import io
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clickintent.domain import EmptySession, EventType, FormatError, Label, RawEvent, Session, SymbolizedSession
from clickintent.ingestion import (
    SessionizationConfig,
    format_session,
    label_session,
    parse_raw_log,
    read_sessions,
    sessionize,
    symbolize,
    write_sessions,
)

GAP = 1_800_000
UUID = "2c1b7958-af02-4dc2-80a0-e3247fd96706"


def ev(ts, et="view", client="c1", sid="s1"):
    return RawEvent(client, None, sid, ts, f"e{ts}", EventType[et.upper()])


def tsv_line(ts, et="add", client=UUID):
    return "\t".join([client, "", "1186c594-7fff-4de4-9af7-d559ce9b1f5e", str(ts),
                      "a97fb677-dab9-46d0-b3c0-265f50fcf36a", et,
                      "62d5a348-8a78-4e11-af32-6ff51e12bd81", '{"top_10_pca_factors": []}'])


class TestParseRawLog:
    def test_add_row(self):
        out = parse_raw_log([tsv_line(1530480640476)], "tsv")
        assert out.skipped == 0
        (e,) = out.events
        assert e.event_type == 3
        assert e.timestamp_ms == 1530480640476
        assert e.user_id is None
        assert e.product_meta == '{"top_10_pca_factors": []}'

    def test_empty_stream(self):
        out = parse_raw_log([], "tsv")
        assert out.events == [] and out.skipped == 0

    def test_five_field_line_is_skipped(self):
        lines = [tsv_line(1000), "a\tb\tc\td\te", tsv_line(2000)]
        out = parse_raw_log(lines, "tsv")
        assert len(out.events) == 2
        assert out.skipped == 1
        assert "line 2" in out.errors[0]

    def test_bad_event_type_and_timestamp_skipped(self):
        out = parse_raw_log([tsv_line(1000, "checkout"), tsv_line(0), tsv_line("x")], "tsv")
        assert out.events == [] and out.skipped == 3

    def test_header_accepted_and_checked(self):
        header = "client_id\tuser_id\tsession_id\ttimestamp\tevent_id\tevent_type\tproduct_id\tproduct_meta"
        assert len(parse_raw_log([header, tsv_line(5)], "tsv").events) == 1
        with pytest.raises(FormatError):
            parse_raw_log(["client_id\tfoo\tbar\tbaz\tqux\tquux", tsv_line(5)], "tsv")

    def test_trailing_product_columns_optional(self):
        line = "\t".join(tsv_line(7).split("\t")[:6])
        assert parse_raw_log([line], "tsv").events[0].product_id is None

    def test_jsonl(self):
        rec = {"client_id": UUID, "user_id": None, "session_id": "s", "timestamp": 1530480640476,
               "event_id": "e", "event_type": "detail", "product_id": None}
        out = parse_raw_log([json.dumps(rec), "{not json", "[1, 2]"], "jsonl")
        assert [e.event_type for e in out.events] == [EventType.DETAIL]
        assert out.skipped == 2

    def test_file_order_preserved(self):
        out = parse_raw_log([tsv_line(3000), tsv_line(1000), tsv_line(2000)], "tsv")
        assert [e.timestamp_ms for e in out.events] == [3000, 1000, 2000]


class TestSessionize:
    def test_gap_exactly_threshold_joins(self):
        assert [len(s) for s in sessionize([ev(1000), ev(1000 + GAP)])] == [2]

    def test_gap_one_ms_over_splits(self):
        assert [len(s) for s in sessionize([ev(1000), ev(1000 + GAP + 1)])] == [1, 1]

    def test_mixed_gaps(self):
        # gaps 10 s, 40 min, 5 s, 10 s
        gaps = [10_000, 40 * 60_000, 5_000, 10_000]
        ts = [1_000_000]
        for g in gaps:
            ts.append(ts[-1] + g)
        assert [len(s) for s in sessionize([ev(t) for t in ts])] == [2, 3]

    def test_unsorted_input_and_ties_keep_file_order(self):
        events = [ev(5000, "add"), ev(1000, "view"), ev(5000, "remove"), ev(1000, "detail")]
        (s,) = sessionize(events)
        assert [int(e) for e, _ in s.events] == [1, 2, 3, 4]

    def test_clients_are_separate_and_ids_deterministic(self):
        events = [ev(1000, client="b"), ev(1500, client="a"), ev(2000, client="b")]
        first = sessionize(events)
        again = sessionize(list(reversed(events)))
        assert [s.id for s in first] == [s.id for s in again]
        assert [len(s) for s in first] == [1, 2]  # ordered by client id

    def test_given_sessions_mode(self):
        events = [ev(1000, sid="x"), ev(1000 + 3 * GAP, sid="x"), ev(1500, sid="y")]
        out = sessionize(events, use_given_sessions=True)
        assert sorted((s.id, len(s)) for s in out) == [("x", 2), ("y", 1)]

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SessionizationConfig(0)


event_streams = st.lists(
    st.tuples(st.sampled_from(["a", "b", "c"]), st.integers(1, 10_000_000), st.sampled_from(list(EventType))),
    max_size=60,
)


@settings(max_examples=300, deadline=None)
@given(event_streams, st.integers(1, 3_000_000))
def test_partition_and_gap_properties(stream, gap):
    events = [RawEvent(c, None, "s", t, f"e{i}", et) for i, (c, t, et) in enumerate(stream)]
    cfg = SessionizationConfig(gap)
    sessions = sessionize(events, cfg)
    assert sum(len(s) for s in sessions) == len(events)
    for client in {e.client_id for e in events}:
        own = sessionize([e for e in events if e.client_id == client], cfg)
        assert all(s in sessions for s in own)
        spans = []
        for s in own:
            ts = [t for _, t in s.events]
            assert all(0 <= b - a <= gap for a, b in zip(ts, ts[1:]))
            spans.append((ts[0], ts[-1]))
        # adjacent sessions are separated by more than the gap
        spans.sort()
        assert all(nxt[0] - prev[1] > gap for prev, nxt in zip(spans, spans[1:]))


@settings(max_examples=100, deadline=None)
@given(event_streams)
def test_sessionize_is_idempotent(stream):
    events = [RawEvent(c, None, "s", t, f"e{i}", et) for i, (c, t, et) in enumerate(stream)]
    sessions = sessionize(events)
    replay = [RawEvent(s.id, None, s.id, t, "e", et) for s in sessions for et, t in s.events]
    again = sessionize(replay)
    assert sorted(s.events for s in again) == sorted(s.events for s in sessions)


class TestSymbolize:
    def test_worked_example(self):
        s = Session("e00caaf5048f482fa73a42f3f9e228966c29a585",
                    tuple((EventType[n.upper()], i) for i, n in enumerate(["detail", "view", "view", "detail"])))
        sym = symbolize(s)
        assert sym.symbols == (2, 1, 1, 2)
        assert format_session(sym) == "4, e00caaf5048f482fa73a42f3f9e228966c29a585\n2-1-1-2\n"

    def test_single_buy(self):
        assert symbolize(Session("x", ((EventType.BUY, 1),))).symbols == (5,)

    def test_code_table(self):
        names = ["view", "click", "add", "remove", "buy"]
        s = Session("x", tuple((EventType[n.upper()], i) for i, n in enumerate(names)))
        assert symbolize(s).symbols == (1, 6, 3, 4, 5)

    def test_empty(self):
        with pytest.raises(EmptySession):
            symbolize(Session("x", ()))


@pytest.mark.parametrize("symbols,label", [((1, 2, 3, 5, 1), Label.BUY), ((1, 2, 2, 1), Label.NOBUY), ((5,), Label.BUY)])
def test_label_session(symbols, label):
    assert label_session(SymbolizedSession("x", symbols)) is label


def test_session_file_round_trip():
    sessions = [SymbolizedSession("a", (1, 2, 3), Label.BUY), SymbolizedSession("b", (6,), Label.NOBUY)]
    buf = io.StringIO()
    write_sessions(sessions, buf)
    assert buf.getvalue().splitlines()[0] == "3, a, BUY"
    assert read_sessions(io.StringIO(buf.getvalue())) == sessions


def test_session_file_length_mismatch():
    with pytest.raises(FormatError):
        read_sessions(["3, a", "1-2"])
