"""Behavior patterns.

A pattern is a group of arguments that are adjacent to exactly the same set
of event types in the behavior graph, together with that event-type set.
"""
from __future__ import annotations

from dataclasses import dataclass

from .graph import BehaviorGraph, build_graph
from .log_ingest import Log

SIGNATURE_SEP = "|"


@dataclass(frozen=True, order=True)
class Pattern:
    event_types: tuple[str, ...]  # sorted, non-empty
    arguments: tuple[str, ...]  # sorted, non-empty


def extract_patterns(graph: BehaviorGraph) -> list[Pattern]:
    groups: dict[frozenset[str], list[str]] = {}
    for arg, events in graph.adjacency().items():
        groups.setdefault(frozenset(events), []).append(arg)
    patterns = [Pattern(tuple(sorted(ev)), tuple(sorted(args))) for ev, args in groups.items()]
    patterns.sort(key=lambda p: (p.event_types, p.arguments[0]))
    return patterns


def log_patterns(lg: Log) -> list[Pattern]:
    return extract_patterns(build_graph(lg))


def _escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace(SIGNATURE_SEP, "\\" + SIGNATURE_SEP)


def pattern_signature(pattern: Pattern) -> str:
    """Canonical key of the pattern's event-type set, e.g. ``"X|Y"``.

    Backslashes and pipes inside event names are escaped so the key stays
    injective.
    """
    return SIGNATURE_SEP.join(_escape(e) for e in sorted(pattern.event_types))


def patterns_text(patterns: list[Pattern]) -> str:
    return "".join(
        ",".join(p.event_types) + "\t" + ",".join(p.arguments) + "\n" for p in patterns
    )
