"""Baseline features, desk-scale classifiers and ROC evaluation."""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .errors import SingleClassCorpus
from .patterns import Pattern, pattern_signature

# ---------------------------------------------------------------------------
# baseline indicator / counter features


@dataclass(frozen=True)
class BaselineFeatureSpec:
    signatures: tuple[str, ...]
    mode: str = "counter"  # "indicator" | "counter"
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.mode not in ("indicator", "counter"):
            raise ValueError(f"unknown baseline mode {self.mode!r}")
        if len(set(self.signatures)) != len(self.signatures):
            raise ValueError("duplicate signatures")

    @property
    def B(self) -> int:
        return len(self.signatures)

    def with_mode(self, mode: str) -> "BaselineFeatureSpec":
        return BaselineFeatureSpec(self.signatures, mode, self.provenance)

    def to_dict(self):
        return {"signatures": list(self.signatures), "mode": self.mode, "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["signatures"]), d["mode"], d.get("provenance", {}))


def build_baseline_spec(
    train_logs: Iterable[Sequence[Pattern]],
    B: int = 5000,
    mode: str = "counter",
    provenance: dict | None = None,
) -> BaselineFeatureSpec:
    """Pick the B signatures present in the most training logs (ties: lexicographic).

    Must only ever see the training split; `provenance` is stored on the spec
    so callers can assert that.
    """
    df: Counter = Counter()
    n = 0
    for patterns in train_logs:
        n += 1
        df.update({pattern_signature(p) for p in patterns})
    ranked = sorted(df.items(), key=lambda kv: (-kv[1], kv[0]))[:B]
    prov = {"split": "train", "n_logs": n, **(provenance or {})}
    return BaselineFeatureSpec(tuple(s for s, _ in ranked), mode, prov)


def build_baseline_features(logs: Iterable[Sequence[Pattern]], spec: BaselineFeatureSpec) -> np.ndarray:
    """One row per log.

    indicator: 1 if some pattern of the log has the signature.
    counter: how many times the event group occurs, i.e. the number of
    arguments summed over the log's patterns with that signature.
    """
    index = {s: i for i, s in enumerate(spec.signatures)}
    rows = []
    for patterns in logs:
        row = np.zeros(spec.B)
        for p in patterns:
            j = index.get(pattern_signature(p))
            if j is None:
                continue
            if spec.mode == "indicator":
                row[j] = 1.0
            else:
                row[j] += len(p.arguments)
        rows.append(row)
    return np.vstack(rows) if rows else np.zeros((0, spec.B))


# ---------------------------------------------------------------------------
# classifiers


def _check_labels(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be a 1-D array of 0/1")
    if len(np.unique(y)) < 2:
        raise SingleClassCorpus("training labels contain a single class")
    return y


class LogisticRegression:
    """L2-regularised logistic regression on standardised features."""

    kind = "logistic"

    def __init__(self, l2: float = 1.0, max_iter: int = 500):
        self.l2 = l2
        self.max_iter = max_iter
        self.mu = self.sigma = self.coef = None
        self.intercept = 0.0

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = _check_labels(y)
        self.mu = X.mean(axis=0)
        sd = X.std(axis=0)
        self.sigma = np.where(sd > 0, sd, 1.0)
        Z = (X - self.mu) / self.sigma
        n, d = Z.shape

        def objective(theta):
            w, b0 = theta[:d], theta[d]
            z = Z @ w + b0
            # log(1 + e^z) - y z, summed
            f = np.sum(np.logaddexp(0.0, z) - y * z) + 0.5 * self.l2 * (w @ w)
            r = expit(z) - y
            grad = np.empty(d + 1)
            grad[:d] = Z.T @ r + self.l2 * w
            grad[d] = r.sum()
            return f, grad

        res = minimize(objective, np.zeros(d + 1), jac=True, method="L-BFGS-B",
                       options={"maxiter": self.max_iter})
        self.coef = res.x[:d]
        self.intercept = float(res.x[d])
        return self

    def decision_function(self, X):
        Z = (np.asarray(X, dtype=np.float64) - self.mu) / self.sigma
        return Z @ self.coef + self.intercept

    def predict_proba(self, X):
        return expit(self.decision_function(X))

    def to_dict(self):
        return {
            "kind": self.kind,
            "l2": self.l2,
            "max_iter": self.max_iter,
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
            "coef": self.coef.tolist(),
            "intercept": self.intercept,
        }

    @classmethod
    def from_dict(cls, d):
        m = cls(d["l2"], d["max_iter"])
        m.mu, m.sigma, m.coef = (np.asarray(d[k], dtype=np.float64) for k in ("mu", "sigma", "coef"))
        m.intercept = float(d["intercept"])
        return m


def _rank_thresholds(col: np.ndarray, n_bins: int) -> np.ndarray:
    """Candidate split points taken from the training values by rank only.

    Because thresholds are actual data values chosen by position in the
    sorted column, any strictly increasing transform of a feature maps
    them onto the transformed thresholds and leaves every split unchanged.
    """
    u = np.unique(col)
    if len(u) <= n_bins:
        return u[:-1]
    s = np.sort(col)
    pos = (np.arange(1, n_bins) * (len(s) - 1)) // n_bins
    t = np.unique(s[pos])
    return t[t < u[-1]]


class BoostedTrees:
    """Newton-boosted shallow trees on the logistic loss (depth 1 = stumps).

    Features are bucketed once on rank-based thresholds; splits test
    ``x <= threshold`` with the threshold an observed training value.
    No row or column subsampling, so training is fully deterministic.
    """

    kind = "boosted_stumps"

    def __init__(self, n_trees: int = 200, max_depth: int = 3, learning_rate: float = 0.1,
                 n_bins: int = 64, l2: float = 1.0, min_child_weight: float = 1.0, seed: int = 0):
        if not 1 <= max_depth <= 3:
            raise ValueError("max_depth must be 1, 2 or 3")
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.n_bins = n_bins
        self.l2 = l2
        self.min_child_weight = min_child_weight
        self.seed = seed
        self.thresholds: list[np.ndarray] = []
        self.base_score = 0.0
        self.trees: list[dict] = []

    def _bin(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(X.shape, dtype=np.int64)
        for j, t in enumerate(self.thresholds):
            out[:, j] = np.searchsorted(t, X[:, j], side="left")
        return out

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = _check_labels(y)
        n, F = X.shape
        self.thresholds = [_rank_thresholds(X[:, j], self.n_bins) for j in range(F)]
        Xb = self._bin(X)
        width = self.n_bins + 1
        flat = (Xb + np.arange(F) * width).ravel()
        pbar = y.mean()
        self.base_score = float(math.log(pbar / (1 - pbar)))
        score = np.full(n, self.base_score)
        self.trees = []
        for _ in range(self.n_trees):
            p = expit(score)
            g, h = p - y, p * (1 - p)
            tree = self._grow(Xb, flat, g, h, F, width)
            self.trees.append(tree)
            score += self._tree_predict_binned(tree, Xb)
        return self

    def _grow(self, Xb, flat, g, h, F, width):
        lam, mcw = self.l2, self.min_child_weight
        feature, thr_bin, left, right, value = [], [], [], [], []

        def new_node():
            for arr in (feature, thr_bin, left, right):
                arr.append(-1)
            value.append(0.0)
            return len(value) - 1

        root = new_node()
        frontier = [(root, np.arange(len(g)))]
        for depth in range(self.max_depth + 1):
            nxt = []
            for node, idx in frontier:
                G, H = g[idx].sum(), h[idx].sum()
                value[node] = float(-self.learning_rate * G / (H + lam))
                if depth == self.max_depth or len(idx) < 2:
                    continue
                cols = flat.reshape(len(g), F)[idx].ravel()
                Gh = np.bincount(cols, weights=np.repeat(g[idx], F), minlength=F * width).reshape(F, width)
                Hh = np.bincount(cols, weights=np.repeat(h[idx], F), minlength=F * width).reshape(F, width)
                GL, HL = np.cumsum(Gh, axis=1), np.cumsum(Hh, axis=1)
                GR, HR = G - GL, H - HL
                gain = GL**2 / (HL + lam) + GR**2 / (HR + lam) - G**2 / (H + lam)
                ok = (HL >= mcw) & (HR >= mcw)
                for j, t in enumerate(self.thresholds):
                    ok[j, len(t):] = False  # no threshold beyond the last candidate
                gain = np.where(ok, gain, -np.inf)
                best = int(np.argmax(gain))
                if not gain.flat[best] > 1e-12:
                    continue
                j, k = divmod(best, width)
                feature[node], thr_bin[node] = j, k
                goes_left = Xb[idx, j] <= k
                lnode, rnode = new_node(), new_node()
                left[node], right[node] = lnode, rnode
                nxt.append((lnode, idx[goes_left]))
                nxt.append((rnode, idx[~goes_left]))
            frontier = nxt
            if not frontier:
                break
        thr_val = [float(self.thresholds[f][k]) if f >= 0 else 0.0 for f, k in zip(feature, thr_bin)]
        return {"feature": feature, "bin": thr_bin, "threshold": thr_val,
                "left": left, "right": right, "value": value}

    def _tree_predict_binned(self, tree, Xb):
        node = np.zeros(len(Xb), dtype=np.int64)
        feat = np.asarray(tree["feature"])
        tb = np.asarray(tree["bin"])
        lft = np.asarray(tree["left"])
        rgt = np.asarray(tree["right"])
        for _ in range(self.max_depth):
            f = feat[node]
            inner = f >= 0
            if not inner.any():
                break
            rows = np.flatnonzero(inner)
            go_left = Xb[rows, f[rows]] <= tb[node[rows]]
            node[rows] = np.where(go_left, lft[node[rows]], rgt[node[rows]])
        return np.asarray(tree["value"])[node]

    def decision_function(self, X):
        Xb = self._bin(X)
        score = np.full(len(Xb), self.base_score)
        for tree in self.trees:
            score += self._tree_predict_binned(tree, Xb)
        return score

    def predict_proba(self, X):
        return expit(self.decision_function(X))

    def to_dict(self):
        return {
            "kind": self.kind,
            "params": {k: getattr(self, k) for k in
                       ("n_trees", "max_depth", "learning_rate", "n_bins", "l2", "min_child_weight", "seed")},
            "thresholds": [t.tolist() for t in self.thresholds],
            "base_score": self.base_score,
            "trees": self.trees,
        }

    @classmethod
    def from_dict(cls, d):
        m = cls(**d["params"])
        m.thresholds = [np.asarray(t, dtype=np.float64) for t in d["thresholds"]]
        m.base_score = float(d["base_score"])
        m.trees = d["trees"]
        return m


CLASSIFIERS = {LogisticRegression.kind: LogisticRegression, BoostedTrees.kind: BoostedTrees}


def train_classifier(features, labels, kind: str = "boosted_stumps", seed: int = 0, **params):
    if kind not in CLASSIFIERS:
        raise ValueError(f"unknown classifier kind {kind!r}")
    if kind == BoostedTrees.kind:
        params.setdefault("seed", seed)
    return CLASSIFIERS[kind](**params).fit(features, labels)


def classifier_from_dict(d):
    return CLASSIFIERS[d["kind"]].from_dict(d)


# ---------------------------------------------------------------------------
# ROC / AUC


def roc_curve(scores, labels):
    """ROC points from a descending score sweep; tied scores move as one step.

    Returns (fpr, tpr, thresholds) starting at (0, 0).
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of each run of equal scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1] if len(s) else np.empty(0, dtype=np.int64)
    tp = np.cumsum(y)[ends]
    fp = np.cumsum(~y)[ends]
    P, N = int(y.sum()), int((~y).sum())
    tp = np.r_[0, tp]
    fp = np.r_[0, fp]
    fpr = fp / N if N else np.zeros_like(fp, dtype=float)
    tpr = tp / P if P else np.zeros_like(tp, dtype=float)
    return fpr, tpr, np.r_[np.inf, s[ends]], tp, fp


def roc_auc(scores, labels) -> float:
    """Trapezoid area under the tie-grouped ROC, accumulated in integer counts."""
    _, _, _, tp, fp = roc_curve(scores, labels)
    P, N = tp[-1], fp[-1]
    if P == 0 or N == 0:
        return float("nan")
    twice_area = int(np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1])))
    return twice_area / (2.0 * P * N)


def detection_rate_at(fpr, tpr, max_fpr: float) -> float:
    ok = fpr <= max_fpr
    return float(tpr[ok].max()) if ok.any() else 0.0


FPR_LEVELS = (1e-3, 1e-4)


@dataclass
class EvalRow:
    name: str
    auc: float
    detection: dict  # max FPR -> TPR
    fpr: np.ndarray
    tpr: np.ndarray
    n_pos: int
    n_neg: int


@dataclass
class EvalReport:
    rows: list[EvalRow]

    def table(self) -> str:
        head = ["feature_set", "AUC"] + [f"TPR@FPR={lvl:g}" for lvl in FPR_LEVELS] + ["n_pos", "n_neg"]
        body = [
            [r.name, f"{r.auc:.6f}"] + [f"{r.detection[lvl]:.6f}" for lvl in FPR_LEVELS] + [str(r.n_pos), str(r.n_neg)]
            for r in self.rows
        ]
        widths = [max(len(x) for x in col) for col in zip(head, *body)]
        fmt = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
        return "\n".join([fmt(head), fmt(["-" * w for w in widths])] + [fmt(b) for b in body]) + "\n"

    def roc_csv(self) -> str:
        lines = ["feature_set,fpr,tpr"]
        for r in self.rows:
            lines += [f"{r.name},{f:.9g},{t:.9g}" for f, t in zip(r.fpr, r.tpr)]
        return "\n".join(lines) + "\n"

    def to_dict(self):
        return {r.name: {"auc": r.auc, "detection": {f"{k:g}": v for k, v in r.detection.items()}}
                for r in self.rows}


def evaluate_scores(name: str, scores, labels) -> EvalRow:
    fpr, tpr, _, tp, fp = roc_curve(scores, labels)
    return EvalRow(
        name=name,
        auc=roc_auc(scores, labels),
        detection={lvl: detection_rate_at(fpr, tpr, lvl) for lvl in FPR_LEVELS},
        fpr=fpr,
        tpr=tpr,
        n_pos=int(tp[-1]),
        n_neg=int(fp[-1]),
    )


def evaluate(classifier, features, labels, name: str = "features") -> EvalRow:
    return evaluate_scores(name, classifier.predict_proba(features), labels)


def dumps_classifiers(models: dict, meta: dict) -> str:
    return json.dumps({"meta": meta, "models": {k: m.to_dict() for k, m in models.items()}},
                      sort_keys=True, indent=1) + "\n"
