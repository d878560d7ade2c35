"""Single-hidden-layer autoencoder over sparse binary pattern vectors.

    a = W v + b,   phi = relu(a),   vhat = sigmoid(V phi + c)

Storage convention: ``W`` and ``V`` are both held as (M+K, D) arrays.
``W[i]`` is the fan-out of input coordinate i into the hidden layer (its
token embedding) and ``V[i]`` is the weight row producing output i. With a
sparse v, ``a`` is the sum of the rows of W at the on-indices plus b, and
outputs are only ever evaluated at the positive and sampled negative
coordinates.

Per-example loss, with P the on-indices and N sampled off-indices:

    l = -mean_{i in P} log vhat_i - mean_{i in N} log(1 - vhat_i)
"""
from __future__ import annotations

import json
import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.special import expit

from .encoder import SparseBinaryVector
from .errors import ArtifactIOError, DimensionMismatch, IndexOutOfRange, NonFiniteLoss

log = logging.getLogger(__name__)

MAGIC = b"LPAEMODL"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    D: int = 64
    neg_ratio: int = 5
    batch_size: int = 256
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 10
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        for name in ("D", "neg_ratio", "batch_size", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not (self.learning_rate > 0 and self.eps > 0):
            raise ValueError("learning_rate and eps must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class AutoencoderModel:
    W: np.ndarray  # (M+K, D) encoder, row i = fan-out of input i
    V: np.ndarray  # (M+K, D) decoder, row i = weights of output i
    b: np.ndarray  # (D,)
    c: np.ndarray  # (M+K,)
    M: int
    K: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n, D = self.W.shape
        if n != self.M + self.K or self.V.shape != (n, D) or self.b.shape != (D,) or self.c.shape != (n,):
            raise DimensionMismatch(
                f"inconsistent shapes W{self.W.shape} V{self.V.shape} b{self.b.shape} c{self.c.shape} "
                f"for M={self.M} K={self.K}"
            )

    @property
    def D(self) -> int:
        return self.W.shape[1]

    @property
    def dim(self) -> int:
        return self.M + self.K

    def params(self):
        return self.W, self.V, self.b, self.c

    def copy(self) -> "AutoencoderModel":
        return AutoencoderModel(self.W.copy(), self.V.copy(), self.b.copy(), self.c.copy(),
                                self.M, self.K, json.loads(json.dumps(self.meta)))

    def all_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.params())


def init_model(M: int, K: int, D: int, seed: int, meta: dict | None = None) -> AutoencoderModel:
    n = M + K
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    s = math.sqrt(6.0 / (n + D))
    W = rng.uniform(-s, s, size=(n, D))
    V = rng.uniform(-s, s, size=(n, D))
    return AutoencoderModel(W, V, np.zeros(D), np.zeros(n), M, K, dict(meta or {}))


def _positives(model: AutoencoderModel, v) -> np.ndarray:
    if isinstance(v, SparseBinaryVector):
        if v.dim != model.dim:
            raise DimensionMismatch(f"vector dim {v.dim} != model input dim {model.dim}")
        return np.asarray(v.on_indices, dtype=np.int64)
    P = np.asarray(v, dtype=np.int64)
    if P.size and (P.min() < 0 or P.max() >= model.dim):
        raise DimensionMismatch(f"index out of range for model input dim {model.dim}")
    return P


@dataclass
class ForwardResult:
    a: np.ndarray
    phi: np.ndarray
    indices: np.ndarray
    vhat: np.ndarray  # sigmoid outputs at `indices`


def forward(model: AutoencoderModel, v, indices: Sequence[int] = ()) -> ForwardResult:
    P = _positives(model, v)
    a = model.W[P].sum(axis=0) + model.b
    phi = np.maximum(a, 0.0)
    idx = np.asarray(indices, dtype=np.int64)
    z = model.V[idx] @ phi + model.c[idx]
    return ForwardResult(a, phi, idx, expit(z))


def embed_pattern(model: AutoencoderModel, v) -> np.ndarray:
    """Pre-activation hidden vector a(x); this is what logs are pooled over."""
    P = _positives(model, v)
    return model.W[P].sum(axis=0) + model.b


def token_embedding(model: AutoencoderModel, index: int) -> np.ndarray:
    if not 0 <= index < model.dim:
        raise IndexOutOfRange(f"input index {index} outside [0, {model.dim})")
    return model.W[index].copy()


class NegativeSampler:
    """Uniform sampling without replacement from the zero coordinates of v.

    Draws ``min(ratio * |P|, #zeros)`` indices per example.
    """

    def __init__(self, dim: int, ratio: int, rng: np.random.Generator):
        self.dim = dim
        self.ratio = ratio
        self.rng = rng

    def __call__(self, P: np.ndarray) -> np.ndarray:
        P = np.asarray(P, dtype=np.int64)
        N, _ = self.sample_batch(P, np.zeros(len(P), dtype=np.int64), 1)
        return N

    def sample_batch(self, P_cat: np.ndarray, seg_p: np.ndarray, B: int) -> tuple[np.ndarray, np.ndarray]:
        """Negatives for B examples given their flattened positives.

        Returns (N_cat, seg_n) ordered by example, then index.
        """
        dim = self.dim
        lens = np.bincount(seg_p, minlength=B)
        want = np.minimum(self.ratio * lens, dim - lens)
        out_idx: list[np.ndarray] = []
        out_seg: list[np.ndarray] = []

        # examples needing more than half their zeros: draw from the explicit zero set
        dense = np.flatnonzero(2 * want > dim - lens)
        for j in dense:
            if want[j] <= 0:
                continue
            mask = np.ones(dim, dtype=bool)
            mask[P_cat[seg_p == j]] = False
            out_idx.append(self.rng.choice(np.flatnonzero(mask), size=want[j], replace=False))
            out_seg.append(np.full(want[j], j, dtype=np.int64))

        # everyone else: keep the first distinct hits of an i.i.d. stream that avoid P
        remaining = want.copy()
        remaining[dense] = 0
        taken = seg_p * dim + P_cat
        while remaining.any():
            active = np.flatnonzero(remaining)
            draws = 2 * remaining[active] + 4
            seg = np.repeat(active, draws)
            keys = seg * dim + self.rng.integers(0, dim, size=int(draws.sum()))
            keys = keys[~np.isin(keys, taken)]
            _, first = np.unique(keys, return_index=True)
            keys = keys[np.sort(first)]  # stream order, still grouped by example
            seg = keys // dim
            seg_start = np.searchsorted(seg, seg, side="left")
            rank = np.arange(len(keys)) - seg_start
            keys = keys[rank < remaining[seg]]
            seg = keys // dim
            out_idx.append(keys - seg * dim)
            out_seg.append(seg)
            taken = np.concatenate([taken, keys])
            remaining -= np.bincount(seg, minlength=B)

        if not out_idx:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        idx = np.concatenate(out_idx).astype(np.int64)
        seg = np.concatenate(out_seg).astype(np.int64)
        order = np.lexsort((idx, seg))
        return idx[order], seg[order]


@dataclass
class LossSample:
    P: np.ndarray
    N: np.ndarray
    value: float


def _softplus(x):
    return np.logaddexp(0.0, x)


def loss_given(model: AutoencoderModel, v, N: Sequence[int]) -> LossSample:
    """Reconstruction loss with a fixed negative set."""
    P = _positives(model, v)
    N = np.asarray(N, dtype=np.int64)
    if len(P) == 0:
        return LossSample(P, N, 0.0)
    if np.intersect1d(P, N).size:
        raise ValueError("negative indices overlap the positives")
    fr = forward(model, P)
    zp = model.V[P] @ fr.phi + model.c[P]
    value = float(_softplus(-zp).mean())  # -log sigmoid(z) == softplus(-z)
    if len(N):
        zn = model.V[N] @ fr.phi + model.c[N]
        value += float(_softplus(zn).mean())  # -log(1 - sigmoid(z)) == softplus(z)
    return LossSample(P, N, value)


def loss(model: AutoencoderModel, v, sampler: NegativeSampler) -> LossSample:
    P = _positives(model, v)
    if len(P) == 0:
        return LossSample(P, np.empty(0, dtype=np.int64), 0.0)
    return loss_given(model, P, sampler(P))


@dataclass
class Gradients:
    W: np.ndarray
    V: np.ndarray
    b: np.ndarray
    c: np.ndarray


def _flatten(index_lists) -> tuple[np.ndarray, np.ndarray]:
    lens = np.fromiter((len(p) for p in index_lists), dtype=np.int64, count=len(index_lists))
    cat = np.concatenate(index_lists).astype(np.int64) if len(index_lists) else np.empty(0, dtype=np.int64)
    return cat, np.repeat(np.arange(len(index_lists)), lens)


def _batch_grad(model: AutoencoderModel, P_cat, seg_p, N_cat, seg_n, B: int, scale: float):
    """Summed per-example loss of a batch and `scale` times the summed gradients.

    Positives and negatives come flattened with their example ids; every
    example must have at least one positive. The sparse incidence matrices
    turn the gathers and scatters into sparse-dense products.
    """
    W, V, b, c = model.params()
    n = W.shape[0]
    lens_p = np.bincount(seg_p, minlength=B)
    lens_n = np.bincount(seg_n, minlength=B)
    A = csr_matrix((np.ones(len(P_cat)), (seg_p, P_cat)), shape=(B, n))
    a = A @ W + b
    phi = np.maximum(a, 0.0)

    n_pos = len(P_cat)
    O = np.concatenate([P_cat, N_cat])
    seg = np.concatenate([seg_p, seg_n])
    w = np.concatenate([1.0 / lens_p[seg_p], 1.0 / np.maximum(lens_n, 1)[seg_n]])
    z = np.einsum("ij,ij->i", V[O], phi[seg]) + c[O]
    elem = np.concatenate([_softplus(-z[:n_pos]), _softplus(z[n_pos:])])
    loss_sum = float(w @ elem)

    resid = expit(z)
    resid[:n_pos] -= 1.0
    g = scale * w * resid  # d loss / d z
    G = csr_matrix((g, (seg, O)), shape=(B, n))
    dV = np.asarray(G.T @ phi)
    dc = np.bincount(O, weights=g, minlength=n)
    da = np.asarray(G @ V) * (a > 0)  # relu'(0) := 0
    db = da.sum(axis=0)
    dW = np.asarray(A.T @ da)
    return loss_sum, Gradients(dW, dV, db, dc)


def gradients(model: AutoencoderModel, v, sample: LossSample) -> Gradients:
    """Exact gradients of one example's loss for the (P, N) in `sample`."""
    P = _positives(model, v)
    if not np.array_equal(P, sample.P):
        raise ValueError("loss sample was computed for a different vector")
    if len(P) == 0:
        W, V, b, c = model.params()
        return Gradients(np.zeros_like(W), np.zeros_like(V), np.zeros_like(b), np.zeros_like(c))
    N = np.asarray(sample.N, dtype=np.int64)
    _, grads = _batch_grad(model, P, np.zeros(len(P), dtype=np.int64), N, np.zeros(len(N), dtype=np.int64), 1, 1.0)
    return grads


class Adam:
    def __init__(self, shapes, lr, beta1, beta2, eps):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def _sharded_grad(model, P_cat, seg_p, N_cat, seg_n, B, scale, pool, workers):
    if pool is None or B < 2 * workers:
        return _batch_grad(model, P_cat, seg_p, N_cat, seg_n, B, scale)
    bounds = np.linspace(0, B, workers + 1).astype(np.int64)
    futures = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        ps = slice(*np.searchsorted(seg_p, [lo, hi]))
        ns = slice(*np.searchsorted(seg_n, [lo, hi]))
        futures.append(pool.submit(_batch_grad, model, P_cat[ps], seg_p[ps] - lo,
                                   N_cat[ns], seg_n[ns] - lo, int(hi - lo), scale))
    parts = [f.result() for f in futures]
    total = sum(p[0] for p in parts)
    g0 = parts[0][1]
    for _, g in parts[1:]:
        g0.W += g.W
        g0.V += g.V
        g0.b += g.b
        g0.c += g.c
    return total, g0


def train(
    corpus: Iterable[SparseBinaryVector],
    config: TrainConfig,
    M: int | None = None,
    K: int | None = None,
    meta: dict | None = None,
    init: AutoencoderModel | None = None,
) -> AutoencoderModel:
    """Mini-batch Adam on the mean per-example loss.

    Empty vectors are skipped and counted. With ``workers == 1`` the result
    is bit-reproducible for a given seed; more workers only change the
    floating-point summation order of each batch gradient.
    """
    vectors = list(corpus)
    if not vectors:
        raise ValueError("training corpus is empty")
    dim = vectors[0].dim
    if any(v.dim != dim for v in vectors):
        raise DimensionMismatch("training vectors have differing dimensions")
    if init is not None:
        model = init.copy()
    else:
        if M is None or K is None:
            raise ValueError("M and K are required without an initial model")
        model = init_model(M, K, config.D, config.seed, meta)
    if model.dim != dim:
        raise DimensionMismatch(f"vector dim {dim} != model input dim {model.dim}")

    P_all = [np.asarray(v.on_indices, dtype=np.int64) for v in vectors if len(v)]
    skipped = len(vectors) - len(P_all)
    model.meta.update({"seed": config.seed, "train_config": config.to_dict(), "skipped_empty": skipped})
    if skipped:
        log.info("skipping %d empty pattern vectors", skipped)
    history: list[float] = []
    if not P_all or config.epochs == 0:
        model.meta["epoch_losses"] = history
        return model

    ss = np.random.SeedSequence([config.seed, 1])
    shuffle_rng, neg_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    sampler = NegativeSampler(dim, config.neg_ratio, neg_rng)
    opt = Adam([p.shape for p in model.params()], config.learning_rate, config.beta1, config.beta2, config.eps)
    n = len(P_all)
    step = 0
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for epoch in range(config.epochs):
            order = shuffle_rng.permutation(n)
            total = 0.0
            for lo in range(0, n, config.batch_size):
                P_cat, seg_p = _flatten([P_all[i] for i in order[lo : lo + config.batch_size]])
                B = int(seg_p[-1]) + 1
                N_cat, seg_n = sampler.sample_batch(P_cat, seg_p, B)
                batch_loss, g = _sharded_grad(model, P_cat, seg_p, N_cat, seg_n, B, 1.0 / B, pool, config.workers)
                step += 1
                if not math.isfinite(batch_loss):
                    raise NonFiniteLoss(step, f"epoch {epoch}, batch loss {batch_loss}")
                opt.step(model.params(), (g.W, g.V, g.b, g.c))
                total += batch_loss
            mean = total / n
            history.append(mean)
            log.info("epoch %d/%d mean loss %.6f", epoch + 1, config.epochs, mean)
            if not model.all_finite():
                raise NonFiniteLoss(step, "parameters became non-finite")
    finally:
        if pool is not None:
            pool.shutdown()
    model.meta["epoch_losses"] = history
    return model


# Model file: MAGIC, little-endian uint32 header length, JSON header, then
# the arrays W, V, b, c as little-endian float64 in row-major order.


def _header(model: AutoencoderModel) -> dict:
    return {
        **model.meta,
        "format_version": FORMAT_VERSION,
        "endianness": "little",
        "dtype": "float64",
        "order": "row-major",
        "M": model.M,
        "K": model.K,
        "D": model.D,
        "arrays": [
            {"name": "W", "shape": list(model.W.shape)},
            {"name": "V", "shape": list(model.V.shape)},
            {"name": "b", "shape": list(model.b.shape)},
            {"name": "c", "shape": list(model.c.shape)},
        ],
        "layout": "W[i] is the fan-out of input i (token embedding); V[i] produces output i",
    }


_RESERVED = {"format_version", "endianness", "dtype", "order", "M", "K", "D", "arrays", "layout"}


def model_to_bytes(model: AutoencoderModel) -> bytes:
    head = json.dumps(_header(model), sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in model.params())
    return MAGIC + struct.pack("<I", len(head)) + head + body


def save_model(model: AutoencoderModel, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def read_model_header(path) -> dict:
    with open(path, "rb") as fp:
        magic = fp.read(len(MAGIC))
        if magic != MAGIC:
            raise ArtifactIOError(f"{path}: not a model file")
        (n,) = struct.unpack("<I", fp.read(4))
        return json.loads(fp.read(n).decode("utf-8"))


def model_from_bytes(data: bytes) -> AutoencoderModel:
    if data[: len(MAGIC)] != MAGIC:
        raise ArtifactIOError("not a model file")
    off = len(MAGIC)
    (n,) = struct.unpack_from("<I", data, off)
    off += 4
    header = json.loads(data[off : off + n].decode("utf-8"))
    off += n
    if header.get("format_version") != FORMAT_VERSION:
        raise ArtifactIOError(f"unsupported model format version {header.get('format_version')}")
    if header.get("endianness") != "little" or header.get("dtype") != "float64":
        raise ArtifactIOError("unsupported model encoding")
    arrays = []
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
        off += 8 * count
        arrays.append(arr)
    if off != len(data):
        raise ArtifactIOError("trailing bytes after model arrays")
    meta = {k: v for k, v in header.items() if k not in _RESERVED}
    return AutoencoderModel(*arrays, M=header["M"], K=header["K"], meta=meta)


def load_model(path) -> AutoencoderModel:
    return model_from_bytes(Path(path).read_bytes())
