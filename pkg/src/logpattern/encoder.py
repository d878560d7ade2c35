"""Pattern -> sparse binary vector of length M + K.

Slots [0, M) are event types in registry order, slots [M, M+K) are
vocabulary tokens. Unknown event types and out-of-vocabulary tokens are
dropped and counted.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator

import numpy as np

from .errors import ArtifactIOError
from .log_ingest import EventTypeRegistry
from .patterns import Pattern
from .tokenizer import TokenizerSettings, Vocabulary, tokenize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SparseBinaryVector:
    dim: int
    on_indices: tuple[int, ...]

    def __post_init__(self):
        idx = self.on_indices
        for prev, cur in zip(idx, idx[1:]):
            if cur <= prev:
                raise ValueError("on_indices must be strictly increasing")
        if idx and (idx[0] < 0 or idx[-1] >= self.dim):
            raise ValueError(f"index out of range for dim {self.dim}")

    def __len__(self):
        return len(self.on_indices)

    def dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[list(self.on_indices)] = 1.0
        return out


@dataclass
class EncodeStats:
    patterns: int = 0
    empty_vectors: int = 0
    unknown_events: int = 0
    oov_tokens: int = 0
    unknown_event_types: set = field(default_factory=set)

    def as_dict(self):
        return {
            "patterns": self.patterns,
            "empty_vectors": self.empty_vectors,
            "unknown_events": self.unknown_events,
            "oov_tokens": self.oov_tokens,
        }


class PatternEncoder:
    def __init__(self, registry: EventTypeRegistry, vocab: Vocabulary, settings: TokenizerSettings = TokenizerSettings()):
        self.registry = registry
        self.vocab = vocab
        self.settings = settings
        self.stats = EncodeStats()

    @property
    def dim(self) -> int:
        return len(self.registry) + len(self.vocab)

    def encode(self, pattern: Pattern) -> SparseBinaryVector:
        M = len(self.registry)
        on: set[int] = set()
        st = self.stats
        for e in pattern.event_types:
            i = self.registry.index(e)
            if i is None:
                st.unknown_events += 1
                if e not in st.unknown_event_types:
                    st.unknown_event_types.add(e)
                    log.warning("event type %r not in registry; dropped", e)
            else:
                on.add(i)
        for arg in pattern.arguments:
            for tok in tokenize(arg, self.settings):
                j = self.vocab.index(tok)
                if j is None:
                    st.oov_tokens += 1
                else:
                    on.add(M + j)
        st.patterns += 1
        if not on:
            st.empty_vectors += 1
        return SparseBinaryVector(self.dim, tuple(sorted(on)))


def encode_pattern(
    pattern: Pattern,
    registry: EventTypeRegistry,
    vocab: Vocabulary,
    settings: TokenizerSettings = TokenizerSettings(),
) -> SparseBinaryVector:
    return PatternEncoder(registry, vocab, settings).encode(pattern)


# Encoded-corpus file: a "#"-prefixed JSON header line, then
# "log_id<TAB>space-separated on-indices" per pattern.


def write_encoded(fp: IO[str], header: dict, rows: Iterable[tuple[str, SparseBinaryVector]]) -> int:
    fp.write("#" + json.dumps(header, sort_keys=True) + "\n")
    n = 0
    for log_id, vec in rows:
        fp.write(log_id + "\t" + " ".join(map(str, vec.on_indices)) + "\n")
        n += 1
    return n


def read_encoded_header(path) -> dict:
    with open(path, encoding="utf-8") as fp:
        first = fp.readline()
    if not first.startswith("#"):
        raise ArtifactIOError(f"{path}: missing header line")
    return json.loads(first[1:])


def iter_encoded(path) -> Iterator[tuple[str, SparseBinaryVector]]:
    header = read_encoded_header(path)
    dim = int(header["M"]) + int(header["K"])
    with open(path, encoding="utf-8") as fp:
        fp.readline()
        for line_no, line in enumerate(fp, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            log_id, sep, rest = line.partition("\t")
            if not sep:
                raise ArtifactIOError(f"{path}:{line_no}: expected log_id<TAB>indices")
            idx = tuple(int(x) for x in rest.split())
            yield log_id, SparseBinaryVector(dim, idx)
