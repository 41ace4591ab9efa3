"""Raw event log parsing, 30-minute sessionization and symbolization."""

from __future__ import annotations

import hashlib
import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, TextIO

from .domain import (
    BUY_CODE,
    EmptySession,
    FormatError,
    Label,
    RawEvent,
    Session,
    SymbolizedSession,
    UnknownEventType,
    parse_event_type,
)

DEFAULT_GAP_MS = 1_800_000

RAW_COLUMNS = (
    "client_id",
    "user_id",
    "session_id",
    "timestamp",
    "event_id",
    "event_type",
    "product_id",
    "product_meta",
)
# user_id and the two product columns may be blank; trailing product columns may be absent
_MIN_COLUMNS = 6


@dataclass(frozen=True)
class SessionizationConfig:
    gap_ms: int = DEFAULT_GAP_MS

    def __post_init__(self):
        if self.gap_ms <= 0:
            raise ValueError("gap_ms must be positive")


@dataclass
class ParsedLog:
    events: list[RawEvent] = field(default_factory=list)
    skipped: int = 0
    errors: list[str] = field(default_factory=list)


def _blank_to_none(value):
    if value is None:
        return None
    value = str(value)
    return value if value.strip() else None


def _make_event(fields: dict) -> RawEvent:
    ts = fields.get("timestamp", fields.get("timestamp_ms"))
    try:
        ts = int(ts)
    except (TypeError, ValueError):
        raise FormatError(f"bad timestamp {ts!r}") from None
    for key in ("client_id", "session_id", "event_id"):
        if not _blank_to_none(fields.get(key)):
            raise FormatError(f"missing {key}")
    return RawEvent(
        client_id=str(fields["client_id"]).strip(),
        user_id=_blank_to_none(fields.get("user_id")),
        session_id=str(fields["session_id"]).strip(),
        timestamp_ms=ts,
        event_id=str(fields["event_id"]).strip(),
        event_type=parse_event_type(fields.get("event_type", "")),
        product_id=_blank_to_none(fields.get("product_id")),
        product_meta=_blank_to_none(fields.get("product_meta")),
    )


def parse_raw_log(stream: Iterable[str], fmt: str = "tsv") -> ParsedLog:
    """Parse a TSV or JSON-lines event log.

    Events come back in file order. Lines that cannot be parsed are skipped
    and recorded in ``errors``; only a malformed TSV header is fatal.
    """
    if fmt not in ("tsv", "jsonl"):
        raise FormatError(f"unsupported format {fmt!r}")
    out = ParsedLog()
    for lineno, line in enumerate(stream, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        if fmt == "tsv" and not out.events and not out.skipped and line.lower().startswith("client_id"):
            names = tuple(p.strip().lower() for p in line.split("\t"))
            if len(names) < _MIN_COLUMNS or names != RAW_COLUMNS[: len(names)]:
                raise FormatError(f"unexpected header {names}")
            continue
        try:
            if fmt == "tsv":
                parts = line.split("\t")
                if not _MIN_COLUMNS <= len(parts) <= len(RAW_COLUMNS):
                    raise ValueError(f"expected {len(RAW_COLUMNS)} fields, got {len(parts)}")
                record = dict(zip(RAW_COLUMNS, parts))
            else:
                record = json.loads(line)
                if not isinstance(record, dict):
                    raise ValueError("json line is not an object")
            out.events.append(_make_event(record))
        except (ValueError, UnknownEventType) as exc:
            out.skipped += 1
            out.errors.append(f"line {lineno}: {exc}")
    return out


def session_id_for(client_id: str, first_timestamp_ms: int) -> str:
    return hashlib.sha1(f"{client_id}|{first_timestamp_ms}".encode()).hexdigest()


def _split_by_gap(events: list[RawEvent], gap_ms: int) -> list[list[RawEvent]]:
    groups: list[list[RawEvent]] = []
    for ev in events:
        if groups and ev.timestamp_ms - groups[-1][-1].timestamp_ms <= gap_ms:
            groups[-1].append(ev)
        else:
            groups.append([ev])
    return groups


def sessionize(
    events: Iterable[RawEvent],
    config: SessionizationConfig | None = None,
    use_given_sessions: bool = False,
) -> list[Session]:
    """Partition events into sessions.

    Events are grouped per ``client_id`` and stably sorted by timestamp; a new
    session starts whenever the gap to the previous event exceeds
    ``config.gap_ms``. With ``use_given_sessions`` the log's own session ids
    are trusted instead. Output is ordered by (client_id, session start).
    """
    config = config or SessionizationConfig()
    key = (lambda e: e.session_id) if use_given_sessions else (lambda e: e.client_id)
    grouped: dict[str, list[RawEvent]] = defaultdict(list)
    for ev in events:
        grouped[key(ev)].append(ev)

    keyed: list[tuple[str, int, Session]] = []
    for group_key, evs in grouped.items():
        evs = sorted(evs, key=lambda e: e.timestamp_ms)
        if use_given_sessions:
            chunks = [(group_key, evs)]
        else:
            chunks = [
                (session_id_for(group_key, chunk[0].timestamp_ms), chunk)
                for chunk in _split_by_gap(evs, config.gap_ms)
            ]
        for sid, chunk in chunks:
            session = Session(sid, tuple((e.event_type, e.timestamp_ms) for e in chunk))
            keyed.append((chunk[0].client_id, chunk[0].timestamp_ms, session))
    keyed.sort(key=lambda item: (item[0], item[1], item[2].id))
    return [s for _, _, s in keyed]


def symbolize(session: Session) -> SymbolizedSession:
    if not session.events:
        raise EmptySession(f"session {session.id} has no events")
    return SymbolizedSession(session.id, tuple(int(et) for et, _ in session.events))


def label_session(s: SymbolizedSession) -> Label:
    return Label.BUY if BUY_CODE in s.symbols else Label.NOBUY


def format_session(s: SymbolizedSession, with_label: bool | None = None) -> str:
    """Two-line text form: ``"<length>, <id>[, <label>]"`` then dash-joined codes."""
    if with_label is None:
        with_label = s.label is not None
    header = f"{len(s.symbols)}, {s.id}"
    if with_label:
        if s.label is None:
            raise FormatError(f"session {s.id} has no label")
        header += f", {s.label.value}"
    return header + "\n" + "-".join(str(c) for c in s.symbols) + "\n"


def write_sessions(sessions: Iterable[SymbolizedSession], stream: TextIO, with_label: bool | None = None):
    for s in sessions:
        stream.write(format_session(s, with_label))


def read_sessions(stream: Iterable[str]) -> list[SymbolizedSession]:
    """Read the two-line session format; unlabeled headers get ``label=None``."""
    lines = [ln.strip() for ln in stream if ln.strip()]
    if len(lines) % 2:
        raise FormatError("session file has an odd number of non-empty lines")
    out = []
    for header, body in zip(lines[0::2], lines[1::2]):
        parts = [p.strip() for p in header.split(",")]
        if len(parts) not in (2, 3):
            raise FormatError(f"bad session header {header!r}")
        try:
            length = int(parts[0])
            symbols = tuple(int(tok) for tok in body.split("-")) if body else ()
        except ValueError:
            raise FormatError(f"bad session record {header!r}") from None
        if length != len(symbols):
            raise FormatError(f"session {parts[1]}: header length {length} != {len(symbols)} symbols")
        label = Label.parse(parts[2]) if len(parts) == 3 else None
        out.append(SymbolizedSession(parts[1], symbols, label))
    return out
