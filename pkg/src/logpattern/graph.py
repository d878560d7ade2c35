"""Bipartite behavior graph: event types on one side, whole arguments on the other."""
from __future__ import annotations

from dataclasses import dataclass

from .log_ingest import Log


@dataclass(frozen=True)
class BehaviorGraph:
    edges: frozenset[tuple[str, str]]

    @property
    def event_nodes(self) -> frozenset[str]:
        return frozenset(e for e, _ in self.edges)

    @property
    def arg_nodes(self) -> frozenset[str]:
        return frozenset(a for _, a in self.edges)

    def adjacency(self) -> dict[str, set[str]]:
        """argument -> set of event types it co-occurs with."""
        adj: dict[str, set[str]] = {}
        for e, a in self.edges:
            adj.setdefault(a, set()).add(e)
        return adj

    def edge_list_text(self) -> str:
        return "".join(f"{e}\t{a}\n" for e, a in sorted(self.edges))


def build_graph(lg: Log) -> BehaviorGraph:
    # nodes are implied by edges, so no node can be isolated
    return BehaviorGraph(frozenset((ev.event_type, a) for ev in lg.events for a in ev.args))
