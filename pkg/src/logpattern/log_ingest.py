"""Canonical log format: one JSON object per line.

    {"id": "a", "label": "malicious" | "benign" | null,
     "events": [{"e": "CreateFile", "args": ["C:\\\\x.ini"]}, ...]}
"""
from __future__ import annotations

import hashlib
import json
import logging
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

from .errors import (
    DuplicateLogId,
    EmptyCorpus,
    EmptyEventType,
    InvalidUtf8,
    MalformedLine,
    NoArguments,
    ParseError,
)

log = logging.getLogger(__name__)


class Label(str, Enum):
    MALICIOUS = "malicious"
    BENIGN = "benign"
    UNLABELED = "unlabeled"


def _has_control(s: str) -> bool:
    return any(unicodedata.category(ch) == "Cc" for ch in s)


@dataclass(frozen=True)
class SystemEvent:
    event_type: str
    args: tuple[str, ...]


@dataclass(frozen=True)
class Log:
    id: str
    events: tuple[SystemEvent, ...] = ()
    label: Label = Label.UNLABELED


def _event_from_json(obj, line_no) -> SystemEvent:
    if not isinstance(obj, dict):
        raise MalformedLine("event is not an object", line_no)
    etype = obj.get("e")
    if not isinstance(etype, str):
        raise MalformedLine('event field "e" missing or not a string', line_no)
    if not etype:
        raise EmptyEventType("empty event type", line_no)
    if _has_control(etype):
        raise MalformedLine(f"control character in event type {etype!r}", line_no)
    if "args" not in obj:
        raise NoArguments(f"event {etype!r} has no args field", line_no)
    args = obj["args"]
    if not isinstance(args, list):
        raise MalformedLine('"args" is not a list', line_no)
    if not args:
        raise NoArguments(f"event {etype!r} has an empty args list", line_no)
    for a in args:
        if not isinstance(a, str) or not a:
            raise MalformedLine(f"argument {a!r} is not a non-empty string", line_no)
    return SystemEvent(etype, tuple(args))


def parse_log(data: bytes | str, line_no: int = 1) -> Log:
    """Parse one line of the canonical format into a Log.

    Raises a ParseError subclass carrying `line_no` on any malformed input.
    """
    if isinstance(data, (bytes, bytearray)):
        try:
            data = bytes(data).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise InvalidUtf8(str(exc), line_no) from None
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as exc:
        raise MalformedLine(f"invalid JSON: {exc.msg}", line_no) from None
    if not isinstance(obj, dict):
        raise MalformedLine("top-level value is not an object", line_no)

    log_id = obj.get("id")
    if not isinstance(log_id, str) or not log_id or _has_control(log_id):
        raise MalformedLine('"id" must be a non-empty string without control characters', line_no)

    raw_label = obj.get("label")
    if raw_label is None:
        label = Label.UNLABELED
    elif raw_label in (Label.MALICIOUS.value, Label.BENIGN.value):
        label = Label(raw_label)
    else:
        raise MalformedLine(f"unknown label {raw_label!r}", line_no)

    events = obj.get("events")
    if not isinstance(events, list):
        raise MalformedLine('"events" missing or not a list', line_no)
    return Log(log_id, tuple(_event_from_json(ev, line_no) for ev in events), label)


def serialize_log(lg: Log) -> str:
    obj = {
        "id": lg.id,
        "label": None if lg.label is Label.UNLABELED else lg.label.value,
        "events": [{"e": ev.event_type, "args": list(ev.args)} for ev in lg.events],
    }
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def write_corpus(logs: Iterable[Log], fp: IO[str]) -> int:
    n = 0
    for lg in logs:
        fp.write(serialize_log(lg))
        fp.write("\n")
        n += 1
    return n


@dataclass
class CorpusReader:
    """Streams Logs from a canonical corpus file.

    `start`/`stop` select a zero-based line range so several workers can
    split one file. With `permissive=True` malformed lines are skipped and
    counted in `warnings` instead of raising.
    """

    path: str | Path
    permissive: bool = False
    start: int = 0
    stop: int | None = None
    warnings: int = 0
    errors: list[str] = field(default_factory=list)

    def __iter__(self) -> Iterator[Log]:
        seen: set[str] = set()
        with open(self.path, "rb") as fp:
            for i, raw in enumerate(fp):
                if i < self.start:
                    continue
                if self.stop is not None and i >= self.stop:
                    break
                line_no = i + 1
                if not raw.strip():
                    continue
                try:
                    lg = parse_log(raw, line_no)
                    if lg.id in seen:
                        raise DuplicateLogId(f"duplicate log id {lg.id!r}", line_no)
                except ParseError as exc:
                    if not self.permissive:
                        raise
                    self.warnings += 1
                    self.errors.append(str(exc))
                    log.warning("skipping %s", exc)
                    continue
                seen.add(lg.id)
                yield lg


def read_corpus(path, permissive: bool = False) -> list[Log]:
    return list(CorpusReader(path, permissive=permissive))


def count_lines(path) -> int:
    with open(path, "rb") as fp:
        return sum(1 for _ in fp)


class EventTypeRegistry:
    """Dense, sorted index of the M event types known to the model."""

    def __init__(self, types: Sequence[str]):
        types = tuple(types)
        if len(set(types)) != len(types):
            raise ValueError("event types must be distinct")
        self.types = types
        self._index = {t: i for i, t in enumerate(types)}

    def __len__(self):
        return len(self.types)

    def __getitem__(self, i: int) -> str:
        return self.types[i]

    def __contains__(self, etype):
        return etype in self._index

    def __eq__(self, other):
        return isinstance(other, EventTypeRegistry) and self.types == other.types

    def __repr__(self):
        return f"EventTypeRegistry(M={len(self)})"

    def index(self, etype: str) -> int | None:
        return self._index.get(etype)

    def to_text(self) -> str:
        return "".join(t + "\n" for t in self.types)

    def sha256(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "EventTypeRegistry":
        text = Path(path).read_text(encoding="utf-8")
        return cls([line for line in text.split("\n") if line])


def event_types_of(logs: Iterable[Log]) -> tuple[set[str], int]:
    """Partial reduction step: the set of event types and the number of logs seen."""
    types: set[str] = set()
    n = 0
    for lg in logs:
        n += 1
        types.update(ev.event_type for ev in lg.events)
    return types, n


def build_registry(corpus: Iterable[Log]) -> EventTypeRegistry:
    types, n = event_types_of(corpus)
    if n == 0:
        raise EmptyCorpus("cannot build an event-type registry from an empty corpus")
    return EventTypeRegistry(sorted(types))


def merge_registries(parts: Iterable[set[str]]) -> EventTypeRegistry:
    merged: set[str] = set()
    for p in parts:
        merged |= p
    return EventTypeRegistry(sorted(merged))


def is_test_log(log_id: str, seed: int, test_fraction: float) -> bool:
    """Stable train/test assignment from a hash of (seed, log id).

    Independent of corpus order and of how the corpus is sharded.
    """
    h = hashlib.sha256(f"{seed}\x00{log_id}".encode("utf-8")).digest()
    u = int.from_bytes(h[:8], "big") / 2.0**64
    return u < test_fraction
