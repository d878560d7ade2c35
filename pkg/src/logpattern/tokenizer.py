"""Argument tokenization and the top-K token vocabulary.

Arguments are cut into alternating maximal runs of separator and
non-separator characters; every run is a token, so ``://`` survives as a
single token and joining the tokens gives back the argument.
"""
from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable

from .errors import ArtifactIOError, EmptyCorpus
from .patterns import Pattern

DEFAULT_SEPARATORS = "/\\:.;,?&=-_()[]{}@#!~+ "


@dataclass(frozen=True)
class TokenizerSettings:
    separators: str = DEFAULT_SEPARATORS
    lowercase: bool = True

    def to_dict(self):
        return {"separators": self.separators, "lowercase": self.lowercase}

    @classmethod
    def from_dict(cls, d):
        return cls(separators=d.get("separators", DEFAULT_SEPARATORS), lowercase=bool(d.get("lowercase", True)))


@lru_cache(maxsize=16)
def _splitter(separators: str) -> re.Pattern:
    cls = "".join(re.escape(ch) for ch in sorted(set(separators)))
    return re.compile(f"[{cls}]+|[^{cls}]+", re.DOTALL)


def is_separator_token(token: str, separators: str = DEFAULT_SEPARATORS) -> bool:
    return token[0] in separators


def tokenize(argument: str, settings: TokenizerSettings = TokenizerSettings()) -> list[str]:
    runs = _splitter(settings.separators).findall(argument)
    if not settings.lowercase:
        return runs
    seps = settings.separators
    return [r if r[0] in seps else r.lower() for r in runs]


class Vocabulary:
    """The K most frequent tokens, most frequent first.

    `counts` holds the full frequency table the vocabulary was cut from
    (empty when loaded from disk).
    """

    def __init__(self, tokens: Iterable[str], counts: dict[str, int] | None = None):
        self.tokens = tuple(tokens)
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be distinct")
        self.counts = dict(counts or {})
        self._index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def __getitem__(self, i):
        return self.tokens[i]

    def __contains__(self, token):
        return token in self._index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __repr__(self):
        return f"Vocabulary(K={len(self)})"

    def index(self, token: str) -> int | None:
        return self._index.get(token)

    def to_text(self) -> str:
        return f"#K={len(self)}\n" + "".join(t + "\n" for t in self.tokens)

    def sha256(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fp:
            fp.write(self.to_text())

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8", newline="") as fp:
            lines = fp.read().split("\n")
        if not lines or not lines[0].startswith("#K="):
            raise ArtifactIOError(f"{path}: missing #K= header")
        k = int(lines[0][3:])
        tokens = lines[1 : 1 + k]
        if len(tokens) != k or any(not t for t in tokens):
            raise ArtifactIOError(f"{path}: header says K={k} but {len(tokens)} tokens follow")
        return cls(tokens)


def count_tokens(patterns: Iterable[Pattern], settings: TokenizerSettings = TokenizerSettings()) -> tuple[Counter, int]:
    """Token frequencies over every argument of every pattern.

    Each occurrence counts, so an argument is tokenized once per pattern it
    belongs to. Returns the counter and the number of patterns seen; the
    counters of corpus shards can simply be added.
    """
    counts: Counter = Counter()
    n = 0
    for p in patterns:
        n += 1
        for arg in p.arguments:
            counts.update(tokenize(arg, settings))
    return counts, n


def vocabulary_from_counts(counts: Counter, k: int) -> Vocabulary:
    if k < 1:
        raise ValueError("k must be >= 1")
    # a token holding a line break cannot be stored one-per-line
    ranked = sorted(
        ((t, c) for t, c in counts.items() if "\n" not in t and "\r" not in t),
        key=lambda tc: (-tc[1], tc[0]),
    )
    return Vocabulary([t for t, _ in ranked[:k]], counts)


def build_vocabulary(
    corpus_patterns: Iterable[Pattern], k: int, settings: TokenizerSettings = TokenizerSettings()
) -> Vocabulary:
    if k < 1:
        raise ValueError("k must be >= 1")
    counts, n = count_tokens(corpus_patterns, settings)
    if n == 0:
        raise EmptyCorpus("no patterns to build a vocabulary from")
    return vocabulary_from_counts(counts, k)
