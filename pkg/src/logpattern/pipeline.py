"""Pipeline stages behind the CLI subcommands.

Each stage reads its declared input artifacts and writes its declared
outputs under the configured work directory. Artifacts carry the SHA-256
of the artifacts they were derived from so that downstream stages can
refuse a mismatched lineage.
"""
from __future__ import annotations

import hashlib
import io
import json
import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autoencoder as ae
from .classifier import (
    BaselineFeatureSpec,
    EvalReport,
    build_baseline_features,
    build_baseline_spec,
    classifier_from_dict,
    dumps_classifiers,
    evaluate,
    train_classifier,
)
from .encoder import PatternEncoder, iter_encoded, read_encoded_header, write_encoded
from .errors import DuplicateLogId, EmptyCorpus, GateFailed, InvalidSpec, LineageMismatch, MissingArtifact
from .explorer import EmbeddingIndex
from .featurizer import featurize_log, iter_grouped, read_features, write_features
from .log_ingest import CorpusReader, EventTypeRegistry, Label, count_lines, event_types_of, is_test_log
from .patterns import log_patterns
from .synthetic import GeneratorSpec, generate
from .tokenizer import TokenizerSettings, Vocabulary, count_tokens, vocabulary_from_counts

log = logging.getLogger(__name__)

DEFAULT_PATHS = {
    "corpus": "corpus.jsonl",
    "registry": "registry.txt",
    "vocab": "vocab.txt",
    "encoded": "encoded.tsv",
    "model": "model.bin",
    "embeddings": "embeddings.tsv",
    "features": "features.csv",
    "baseline_spec": "baseline_spec.json",
    "baseline_indicator": "baseline_indicator.csv",
    "baseline_counter": "baseline_counter.csv",
    "classifier": "classifier.json",
    "report": "report.txt",
    "roc": "roc.csv",
    "report_json": "report.json",
}


@dataclass
class PipelineConfig:
    workdir: str = "."
    paths: dict = field(default_factory=dict)
    seed: int = 0
    workers: int = 1
    permissive: bool = False
    test_fraction: float = 0.3
    tokenizer: TokenizerSettings = field(default_factory=TokenizerSettings)
    K: int = 2000
    train: ae.TrainConfig = field(default_factory=ae.TrainConfig)
    baseline_B: int = 5000
    classifier_kind: str = "boosted_stumps"
    classifier_params: dict = field(default_factory=dict)
    auc_gate: dict = field(default_factory=dict)  # feature set -> minimum AUC
    generator: dict | None = None

    def path(self, key: str) -> Path:
        p = Path(self.paths.get(key, DEFAULT_PATHS[key]))
        return p if p.is_absolute() else Path(self.workdir) / p

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidSpec(f"unknown config keys: {sorted(unknown)}")
        bad_paths = set(d.get("paths", {})) - set(DEFAULT_PATHS)
        if bad_paths:
            raise InvalidSpec(f"unknown artifact paths: {sorted(bad_paths)}")
        if "tokenizer" in d:
            d["tokenizer"] = TokenizerSettings.from_dict(d["tokenizer"])
        seed = d.get("seed", 0)
        train = dict(d.get("train", {}))
        train.setdefault("seed", seed)
        try:
            d["train"] = ae.TrainConfig.from_dict(train)
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise InvalidSpec(f"bad pipeline config: {exc}") from None

    def to_dict(self):
        return {
            "workdir": self.workdir,
            "paths": self.paths,
            "seed": self.seed,
            "workers": self.workers,
            "permissive": self.permissive,
            "test_fraction": self.test_fraction,
            "tokenizer": self.tokenizer.to_dict(),
            "K": self.K,
            "train": self.train.to_dict(),
            "baseline_B": self.baseline_B,
            "classifier_kind": self.classifier_kind,
            "classifier_params": self.classifier_params,
            "auc_gate": self.auc_gate,
            "generator": self.generator,
        }

    def with_overrides(self, seed=None, workers=None, workdir=None) -> "PipelineConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=seed, train=replace(cfg.train, seed=seed))
        if workers is not None:
            cfg = replace(cfg, workers=workers)
        if workdir is not None:
            cfg = replace(cfg, workdir=workdir)
        return cfg

    def is_test(self, log_id: str) -> bool:
        return is_test_log(log_id, self.seed, self.test_fraction)


def load_config(path) -> PipelineConfig:
    try:
        with open(path, encoding="utf-8") as fp:
            return PipelineConfig.from_dict(json.load(fp))
    except FileNotFoundError:
        raise MissingArtifact(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InvalidSpec(f"{path}: invalid JSON: {exc}") from None


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fp:
        for chunk in iter(lambda: fp.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _need(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"missing {what}: {path} (run the producing stage first)")
    return path


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fp:
        fp.write(text)
    tmp.replace(path)


# ---------------------------------------------------------------------------
# sharded corpus passes


def _shards(path: Path, workers: int) -> list[tuple[int, int]]:
    n = count_lines(path)
    k = max(1, min(workers, n))
    bounds = np.linspace(0, n, k + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


def _map_corpus(fn, cfg: PipelineConfig, *args):
    """Run fn(corpus, start, stop, permissive, *args) on line-range shards, results in order."""
    path = _need(cfg.path("corpus"), "corpus")
    shards = _shards(path, cfg.workers)
    if cfg.workers <= 1 or len(shards) == 1:
        return [fn(str(path), a, b, cfg.permissive, *args) for a, b in shards]
    with ProcessPoolExecutor(cfg.workers) as pool:
        futs = [pool.submit(fn, str(path), a, b, cfg.permissive, *args) for a, b in shards]
        return [f.result() for f in futs]


def _check_unique(ids):
    seen = set()
    for i in ids:
        if i in seen:
            raise DuplicateLogId(f"duplicate log id {i!r} across corpus shards")
        seen.add(i)


def _registry_shard(path, start, stop, permissive, seed, frac):
    reader = CorpusReader(path, permissive, start, stop)
    logs = [lg for lg in reader if not is_test_log(lg.id, seed, frac)]
    types, n = event_types_of(logs)
    return types, n, reader.warnings


def _vocab_shard(path, start, stop, permissive, seed, frac, settings):
    reader = CorpusReader(path, permissive, start, stop)
    pats = (p for lg in reader if not is_test_log(lg.id, seed, frac) for p in log_patterns(lg))
    counts, n = count_tokens(pats, settings)
    return counts, n, reader.warnings


def _encode_shard(path, start, stop, permissive, registry, vocab, settings):
    reader = CorpusReader(path, permissive, start, stop)
    enc = PatternEncoder(registry, vocab, settings)
    buf = io.StringIO()
    ids = []
    for lg in reader:
        ids.append(lg.id)
        for p in log_patterns(lg):
            v = enc.encode(p)
            buf.write(lg.id + "\t" + " ".join(map(str, v.on_indices)) + "\n")
    return buf.getvalue(), ids, enc.stats.as_dict(), sorted(enc.stats.unknown_event_types), reader.warnings


def _baseline_shard(path, start, stop, permissive):
    reader = CorpusReader(path, permissive, start, stop)
    return [(lg.id, lg.label.value, log_patterns(lg)) for lg in reader], reader.warnings


def _labels_shard(path, start, stop, permissive):
    reader = CorpusReader(path, permissive, start, stop)
    return [(lg.id, lg.label.value) for lg in reader]


# ---------------------------------------------------------------------------
# stages


def stage_gen(cfg: PipelineConfig, spec: GeneratorSpec | None = None) -> dict:
    if spec is None:
        if cfg.generator is None:
            raise InvalidSpec("no generator spec: pass --spec or set 'generator' in the config")
        spec = GeneratorSpec.from_dict({"seed": cfg.seed, **cfg.generator})
    spec.validate()
    out = cfg.path("corpus")
    buf = io.StringIO()
    stats = generate(spec, buf)
    _write_atomic(out, buf.getvalue())
    meta = {"generator": spec.to_dict(), "stats": stats, "seed": spec.seed}
    _write_atomic(out.with_name(out.name + ".meta.json"), json.dumps(meta, sort_keys=True, indent=1) + "\n")
    log.info("generated %d logs (%d malicious) -> %s", stats["logs"], stats["malicious"], out)
    return stats


def stage_registry(cfg: PipelineConfig) -> EventTypeRegistry:
    parts = _map_corpus(_registry_shard, cfg, cfg.seed, cfg.test_fraction)
    types = set().union(*(p[0] for p in parts))
    n = sum(p[1] for p in parts)
    if n == 0:
        raise EmptyCorpus("no training logs to build a registry from")
    reg = EventTypeRegistry(sorted(types))
    _write_atomic(cfg.path("registry"), reg.to_text())
    log.info("registry: M=%d event types from %d training logs", len(reg), n)
    return reg


def stage_vocab(cfg: PipelineConfig) -> Vocabulary:
    parts = _map_corpus(_vocab_shard, cfg, cfg.seed, cfg.test_fraction, cfg.tokenizer)
    counts = Counter()
    n = 0
    for c, k, _ in parts:
        counts.update(c)
        n += k
    if n == 0:
        raise EmptyCorpus("no training patterns to build a vocabulary from")
    vocab = vocabulary_from_counts(counts, cfg.K)
    _write_atomic(cfg.path("vocab"), vocab.to_text())
    log.info("vocabulary: K=%d of %d distinct tokens (%d patterns)", len(vocab), len(counts), n)
    return vocab


def stage_encode(cfg: PipelineConfig) -> dict:
    reg_path = _need(cfg.path("registry"), "registry")
    voc_path = _need(cfg.path("vocab"), "vocabulary")
    registry = EventTypeRegistry.load(reg_path)
    vocab = Vocabulary.load(voc_path)
    parts = _map_corpus(_encode_shard, cfg, registry, vocab, cfg.tokenizer)
    _check_unique(i for p in parts for i in p[1])
    stats = {"patterns": 0, "empty_vectors": 0, "unknown_events": 0, "oov_tokens": 0}
    unknown = set()
    warnings = 0
    for _, _, st, unk, w in parts:
        for k in stats:
            stats[k] += st[k]
        unknown.update(unk)
        warnings += w
    header = {
        "M": len(registry),
        "K": len(vocab),
        "registry_sha256": registry.sha256(),
        "vocab_sha256": vocab.sha256(),
        "corpus_sha256": file_sha256(cfg.path("corpus")),
        "tokenizer": cfg.tokenizer.to_dict(),
        "seed": cfg.seed,
        "stats": stats,
        "unknown_event_types": sorted(unknown),
        "parse_warnings": warnings,
    }
    out = cfg.path("encoded")
    buf = io.StringIO()
    write_encoded(buf, header, [])
    for body, *_ in parts:
        buf.write(body)
    _write_atomic(out, buf.getvalue())
    log.info("encoded %d patterns (%d empty, %d unknown events, %d OOV tokens)",
             stats["patterns"], stats["empty_vectors"], stats["unknown_events"], stats["oov_tokens"])
    return stats


def stage_train_ae(cfg: PipelineConfig) -> ae.AutoencoderModel:
    enc_path = _need(cfg.path("encoded"), "encoded corpus")
    header = read_encoded_header(enc_path)
    vectors = [v for log_id, v in iter_encoded(enc_path) if not cfg.is_test(log_id)]
    if not vectors:
        raise EmptyCorpus("no training patterns in the encoded corpus")
    meta = {
        "registry_sha256": header["registry_sha256"],
        "vocab_sha256": header["vocab_sha256"],
        "encoded_sha256": file_sha256(enc_path),
        "tokenizer": header["tokenizer"],
        "split": {"seed": cfg.seed, "test_fraction": cfg.test_fraction},
    }
    model = ae.train(vectors, cfg.train, M=header["M"], K=header["K"], meta=meta)
    out = cfg.path("model")
    out.parent.mkdir(parents=True, exist_ok=True)
    ae.save_model(model, out)
    log.info("trained autoencoder D=%d on %d patterns -> %s", model.D, len(vectors), out)
    return model


def _load_model_for(cfg: PipelineConfig, enc_header: dict | None = None) -> ae.AutoencoderModel:
    model = ae.load_model(_need(cfg.path("model"), "model"))
    if enc_header is not None:
        for key in ("registry_sha256", "vocab_sha256"):
            if model.meta.get(key) != enc_header.get(key):
                raise LineageMismatch(f"model {key} does not match the encoded corpus")
    return model


def stage_embed(cfg: PipelineConfig) -> int:
    enc_path = _need(cfg.path("encoded"), "encoded corpus")
    model = _load_model_for(cfg, read_encoded_header(enc_path))
    buf = io.StringIO()
    meta = {"model_sha256": file_sha256(cfg.path("model")), "encoded_sha256": file_sha256(enc_path), "D": model.D}
    buf.write("#" + json.dumps(meta, sort_keys=True) + "\n")
    n = 0
    for log_id, v in iter_encoded(enc_path):
        e = ae.embed_pattern(model, v)
        buf.write(log_id + "\t" + " ".join(f"{x:.9g}" for x in e) + "\n")
        n += 1
    _write_atomic(cfg.path("embeddings"), buf.getvalue())
    return n


def stage_featurize(cfg: PipelineConfig) -> dict:
    enc_path = _need(cfg.path("encoded"), "encoded corpus")
    header = read_encoded_header(enc_path)
    model = _load_model_for(cfg, header)
    corpus_sha = file_sha256(_need(cfg.path("corpus"), "corpus"))
    if header.get("corpus_sha256") != corpus_sha:
        raise LineageMismatch("encoded corpus was produced from a different corpus file")
    labels = [x for part in _map_corpus(_labels_shard, cfg) for x in part]
    grouped = {log_id: vs for log_id, vs in iter_grouped(iter_encoded(enc_path))}
    rows, empty = [], []
    for log_id, label in labels:
        fv = featurize_log(model, grouped.get(log_id, ()), log_id)
        if fv.empty:
            empty.append(log_id)
        rows.append((log_id, label, fv.values))
    meta = {
        "kind": "semantic",
        "model_sha256": file_sha256(cfg.path("model")),
        "encoded_sha256": file_sha256(enc_path),
        "corpus_sha256": corpus_sha,
        "D": model.D,
        "seed": cfg.seed,
        "empty_logs": len(empty),
        "empty_log_ids": empty,
    }
    buf = io.StringIO()
    write_features(buf, meta, rows, 3 * model.D)
    _write_atomic(cfg.path("features"), buf.getvalue())
    log.info("featurized %d logs (%d with no patterns)", len(rows), len(empty))
    return {"logs": len(rows), "empty": len(empty)}


def stage_baseline(cfg: PipelineConfig) -> BaselineFeatureSpec:
    corpus = _need(cfg.path("corpus"), "corpus")
    parts = _map_corpus(_baseline_shard, cfg)
    logs = [x for part, _ in parts for x in part]
    _check_unique(i for i, _, _ in logs)
    corpus_sha = file_sha256(corpus)
    spec = build_baseline_spec(
        (pats for log_id, _, pats in logs if not cfg.is_test(log_id)),
        B=cfg.baseline_B,
        provenance={"corpus_sha256": corpus_sha, "seed": cfg.seed, "test_fraction": cfg.test_fraction},
    )
    _write_atomic(cfg.path("baseline_spec"), json.dumps(spec.to_dict(), sort_keys=True, indent=1) + "\n")
    spec_sha = file_sha256(cfg.path("baseline_spec"))
    for mode in ("indicator", "counter"):
        X = build_baseline_features((pats for _, _, pats in logs), spec.with_mode(mode))
        meta = {"kind": mode, "baseline_spec_sha256": spec_sha, "corpus_sha256": corpus_sha,
                "B": spec.B, "seed": cfg.seed}
        buf = io.StringIO()
        write_features(buf, meta, ((i, lab, x) for (i, lab, _), x in zip(logs, X)), spec.B)
        _write_atomic(cfg.path(f"baseline_{mode}"), buf.getvalue())
    log.info("baseline: B=%d signatures from the training split", spec.B)
    return spec


FEATURE_SETS = ("semantic", "indicator", "counter", "combined")


def _load_feature_sets(cfg: PipelineConfig):
    """Feature-set name -> (ids, labels, X, source file hashes)."""
    sem_path = _need(cfg.path("features"), "semantic feature file")
    sem = read_features(sem_path)
    sets = {"semantic": (sem.ids, sem.labels, sem.X, {"features": file_sha256(sem_path)})}
    tables = {}
    for mode in ("indicator", "counter"):
        p = cfg.path(f"baseline_{mode}")
        if p.exists():
            t = read_features(p)
            if t.meta.get("corpus_sha256") != sem.meta.get("corpus_sha256"):
                raise LineageMismatch(f"{p} was built from a different corpus than {sem_path}")
            if t.ids != sem.ids:
                raise LineageMismatch(f"{p} and {sem_path} list different logs")
            tables[mode] = (t, file_sha256(p))
            sets[mode] = (t.ids, t.labels, t.X, {f"baseline_{mode}": tables[mode][1]})
    if "counter" in tables:
        t, h = tables["counter"]
        sets["combined"] = (sem.ids, sem.labels, np.hstack([t.X, sem.X]),
                            {"baseline_counter": h, "features": sets["semantic"][3]["features"]})
    return sets


def _split_xy(cfg, ids, labels, X, test: bool):
    rows = [k for k, (i, lab) in enumerate(zip(ids, labels))
            if cfg.is_test(i) == test and lab in (Label.MALICIOUS.value, Label.BENIGN.value)]
    y = np.asarray([labels[k] == Label.MALICIOUS.value for k in rows], dtype=np.float64)
    return X[rows], y


def stage_train_clf(cfg: PipelineConfig) -> dict:
    sets = _load_feature_sets(cfg)
    models, hashes = {}, {}
    for name in FEATURE_SETS:
        if name not in sets:
            continue
        ids, labels, X, h = sets[name]
        Xtr, ytr = _split_xy(cfg, ids, labels, X, test=False)
        models[name] = train_classifier(Xtr, ytr, cfg.classifier_kind, seed=cfg.seed, **cfg.classifier_params)
        hashes[name] = h
        log.info("trained %s classifier on %s features (%d train logs)", cfg.classifier_kind, name, len(ytr))
    meta = {"kind": cfg.classifier_kind, "inputs": hashes, "seed": cfg.seed, "test_fraction": cfg.test_fraction}
    _write_atomic(cfg.path("classifier"), dumps_classifiers(models, meta))
    return meta


def stage_eval(cfg: PipelineConfig) -> EvalReport:
    clf_path = _need(cfg.path("classifier"), "trained classifier")
    with open(clf_path, encoding="utf-8") as fp:
        saved = json.load(fp)
    sets = _load_feature_sets(cfg)
    rows = []
    for name in FEATURE_SETS:
        if name not in saved["models"]:
            continue
        if name not in sets:
            raise MissingArtifact(f"feature set {name!r} used at training time is missing")
        ids, labels, X, h = sets[name]
        if h != saved["meta"]["inputs"][name]:
            raise LineageMismatch(f"{name} features changed since the classifier was trained")
        Xte, yte = _split_xy(cfg, ids, labels, X, test=True)
        rows.append(evaluate(classifier_from_dict(saved["models"][name]), Xte, yte, name))
    report = EvalReport(rows)
    _write_atomic(cfg.path("report"), report.table())
    _write_atomic(cfg.path("roc"), report.roc_csv())
    summary = {"classifier_sha256": file_sha256(clf_path), "seed": cfg.seed, "results": report.to_dict()}
    _write_atomic(cfg.path("report_json"), json.dumps(summary, sort_keys=True, indent=1) + "\n")
    failed = [(r.name, r.auc, cfg.auc_gate[r.name]) for r in rows
              if r.name in cfg.auc_gate and not r.auc >= cfg.auc_gate[r.name]]
    if failed:
        raise GateFailed("AUC below gate: " + ", ".join(f"{n} {a:.4f} < {g}" for n, a, g in failed))
    return report


def load_index(cfg: PipelineConfig, metric: str = "cosine") -> EmbeddingIndex:
    model = _load_model_for(cfg)
    vocab = Vocabulary.load(_need(cfg.path("vocab"), "vocabulary"))
    if model.meta.get("vocab_sha256") not in (None, vocab.sha256()):
        raise LineageMismatch("vocabulary file does not match the model")
    return EmbeddingIndex.from_model(model, vocab, metric)


def normalize_query_token(model_meta: dict, token: str) -> str:
    """Apply the training-time case folding to a token typed on the command line."""
    settings = TokenizerSettings.from_dict(model_meta.get("tokenizer", {}))
    if settings.lowercase and token and token[0] not in settings.separators:
        return token.lower()
    return token
