"""Event vocabulary, session containers and labels shared by the whole pipeline."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field


class ClickIntentError(Exception):
    """Base class for every error raised by this package."""


class UnknownEventType(ClickIntentError, ValueError):
    pass


class FormatError(ClickIntentError, ValueError):
    pass


class EmptySession(ClickIntentError, ValueError):
    pass


class InsufficientData(ClickIntentError, ValueError):
    pass


class SessionTooShort(ClickIntentError, ValueError):
    pass


class EmptyInput(ClickIntentError, ValueError):
    pass


class ShapeMismatch(ClickIntentError, ValueError):
    pass


class InvalidSpec(ClickIntentError, ValueError):
    pass


class EmptySplit(ClickIntentError, ValueError):
    pass


class EventType(enum.IntEnum):
    VIEW = 1
    DETAIL = 2
    ADD = 3
    REMOVE = 4
    BUY = 5
    CLICK = 6

    @property
    def label(self) -> str:
        return self.name.lower()


# Token space seen by the recurrent models: 0 pads, 1..6 are event codes.
PAD = 0
BOS = 7
EOS = 8
N_TOKENS = 9
EVENT_CODES = tuple(int(e) for e in EventType)
BUY_CODE = int(EventType.BUY)


def parse_event_type(name_or_code: str | int) -> EventType:
    """Map an event name ("detail") or code ("2") onto its EventType."""
    if isinstance(name_or_code, EventType):
        return name_or_code
    text = str(name_or_code).strip()
    if text.isdigit():
        code = int(text)
        if code in EVENT_CODES:
            return EventType(code)
        raise UnknownEventType(f"unknown event code {text!r}")
    try:
        return EventType[text.upper()]
    except KeyError:
        raise UnknownEventType(f"unknown event type {text!r}") from None


class Label(str, enum.Enum):
    BUY = "BUY"
    NOBUY = "NOBUY"

    @classmethod
    def parse(cls, text: str) -> "Label":
        try:
            return cls(text.strip().upper())
        except ValueError:
            raise FormatError(f"unknown label {text!r}") from None


@dataclass(frozen=True)
class RawEvent:
    client_id: str
    user_id: str | None
    session_id: str
    timestamp_ms: int
    event_id: str
    event_type: EventType
    product_id: str | None = None
    product_meta: str | None = None

    def __post_init__(self):
        if self.timestamp_ms <= 0:
            raise FormatError(f"timestamp must be positive, got {self.timestamp_ms}")


@dataclass(frozen=True)
class Session:
    id: str
    events: tuple[tuple[EventType, int], ...]

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class SymbolizedSession:
    id: str
    symbols: tuple[int, ...]
    label: Label | None = None

    def __len__(self) -> int:
        return len(self.symbols)

    def with_label(self, label: Label) -> "SymbolizedSession":
        return SymbolizedSession(self.id, self.symbols, label)


SPLITS = ("train", "validation", "test")


@dataclass
class Corpus:
    train: list[SymbolizedSession]
    validation: list[SymbolizedSession]
    test: list[SymbolizedSession]
    prep_log: dict[str, int] = field(default_factory=dict)

    def split(self, name: str) -> list[SymbolizedSession]:
        if name not in SPLITS:
            raise KeyError(name)
        return getattr(self, name)

    @property
    def class_counts(self) -> dict[str, dict[str, int]]:
        out = {}
        for name in SPLITS:
            sessions = self.split(name)
            out[name] = {
                lab.value: sum(1 for s in sessions if s.label is lab) for lab in Label
            }
        return out

    def all_sessions(self) -> list[SymbolizedSession]:
        return self.train + self.validation + self.test
