"""Pool a log's pattern embeddings into one vector of length 3D: [min | max | mean]."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .autoencoder import AutoencoderModel, embed_pattern
from .encoder import SparseBinaryVector
from .errors import ArtifactIOError


@dataclass
class LogFeatureVector:
    log_id: str
    values: np.ndarray
    empty: bool = False  # the log had no patterns; values are all zero


def pool_embeddings(embeddings: Sequence[np.ndarray], D: int) -> tuple[np.ndarray, bool]:
    if len(embeddings) == 0:
        return np.zeros(3 * D), True
    E = np.vstack(embeddings)
    n = E.shape[0]
    # fsum is exactly rounded, so the mean does not depend on pattern order
    mean = np.array([math.fsum(E[:, d]) / n for d in range(D)])
    # guard the ordering law against the last-ulp rounding of the division
    lo, hi = E.min(axis=0), E.max(axis=0)
    mean = np.clip(mean, lo, hi)
    return np.concatenate([lo, hi, mean]), False


def featurize_log(model: AutoencoderModel, patterns: Iterable[SparseBinaryVector], log_id: str = "") -> LogFeatureVector:
    embs = [embed_pattern(model, v) for v in patterns]
    values, empty = pool_embeddings(embs, model.D)
    return LogFeatureVector(log_id, values, empty)


# Feature file: a "#"-prefixed JSON metadata line, then CSV with header
# log_id,label,f0..f{n-1}; floats carry 9 significant digits.


def write_features(fp: IO[str], meta: dict, rows: Iterable[tuple[str, str, np.ndarray]], width: int) -> int:
    fp.write("#" + json.dumps(meta, sort_keys=True) + "\n")
    w = csv.writer(fp, lineterminator="\n")
    w.writerow(["log_id", "label"] + [f"f{i}" for i in range(width)])
    n = 0
    for log_id, label, values in rows:
        if len(values) != width:
            raise ValueError(f"row {log_id!r} has {len(values)} values, expected {width}")
        w.writerow([log_id, label] + [f"{float(x):.9g}" for x in values])
        n += 1
    return n


@dataclass
class FeatureTable:
    meta: dict
    ids: list[str]
    labels: list[str]
    X: np.ndarray

    def rows_for(self, ids: Iterable[str]) -> np.ndarray:
        pos = {i: k for k, i in enumerate(self.ids)}
        return np.asarray([pos[i] for i in ids], dtype=np.int64)


def read_features(path) -> FeatureTable:
    with open(path, encoding="utf-8", newline="") as fp:
        first = fp.readline()
        if not first.startswith("#"):
            raise ArtifactIOError(f"{path}: missing metadata line")
        meta = json.loads(first[1:])
        reader = csv.reader(fp)
        header = next(reader, None)
        if not header or header[:2] != ["log_id", "label"]:
            raise ArtifactIOError(f"{path}: bad CSV header")
        ids, labels, rows = [], [], []
        for r in reader:
            ids.append(r[0])
            labels.append(r[1])
            rows.append([float(x) for x in r[2:]])
    X = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(header) - 2)
    return FeatureTable(meta, ids, labels, X)


def iter_grouped(rows: Iterable[tuple[str, SparseBinaryVector]]) -> Iterator[tuple[str, list[SparseBinaryVector]]]:
    """Group consecutive (log_id, vector) rows by log id."""
    cur, buf = None, []
    for log_id, v in rows:
        if log_id != cur:
            if cur is not None:
                yield cur, buf
            cur, buf = log_id, []
        buf.append(v)
    if cur is not None:
        yield cur, buf
