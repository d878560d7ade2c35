"""Command-line entry point: ``logpattern <subcommand> [--config FILE] ...``.

Data goes to files, progress and summaries to stderr. Each failure class
exits with its own code (see ``errors.py``).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline as pl
from .autoencoder import read_model_header
from .errors import ArtifactIOError, LogPatternError, MissingArtifact
from .explorer import analogy, format_results, nearest_neighbors
from .synthetic import load_spec

log = logging.getLogger("logpattern")

STAGES = {
    "registry": pl.stage_registry,
    "vocab": pl.stage_vocab,
    "encode": pl.stage_encode,
    "train-ae": pl.stage_train_ae,
    "embed": pl.stage_embed,
    "featurize": pl.stage_featurize,
    "baseline": pl.stage_baseline,
    "train-clf": pl.stage_train_clf,
    "eval": pl.stage_eval,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config (JSON)")
    common.add_argument("--workdir", help="directory holding the artifacts (overrides the config)")
    common.add_argument("--seed", type=int, help="seed for split, training and classifiers")
    common.add_argument("--workers", type=int, help="worker processes for per-log stages")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="logpattern", description="Behavior-pattern embeddings for execution logs.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic labeled corpus")
    g.add_argument("--spec", help="generator spec (JSON); defaults to the config's 'generator' block")

    for name, helptext in [
        ("registry", "build the event-type registry from the training split"),
        ("vocab", "build the top-K token vocabulary"),
        ("encode", "encode every pattern of every log as a sparse binary vector"),
        ("train-ae", "train the pattern autoencoder"),
        ("embed", "write per-pattern embeddings"),
        ("featurize", "pool pattern embeddings into 3D log features"),
        ("baseline", "build indicator and counter baseline features"),
        ("train-clf", "train one classifier per feature set"),
        ("eval", "ROC/AUC report on the test split"),
    ]:
        sub.add_parser(name, parents=[common], help=helptext)

    nn = sub.add_parser("nn", parents=[common], help="nearest tokens in embedding space")
    nn.add_argument("token")
    nn.add_argument("-n", type=int, default=5)
    nn.add_argument("--model")
    nn.add_argument("--vocab")
    nn.add_argument("--metric", choices=["cosine", "euclidean"], default="cosine")

    an = sub.add_parser("analogy", parents=[common], help="token arithmetic: analogy A - B + C")
    an.add_argument("expr", nargs=5, metavar="TOKEN", help="A - B + C")
    an.add_argument("-n", type=int, default=5)
    an.add_argument("--model")
    an.add_argument("--vocab")
    an.add_argument("--metric", choices=["cosine", "euclidean"], default="cosine")
    an.add_argument("--no-exclude", action="store_true", help="keep A, B, C in the results")

    mi = sub.add_parser("model-info", parents=[common], help="print a model file header")
    mi.add_argument("--model")
    return p


def _config(args) -> pl.PipelineConfig:
    cfg = pl.load_config(args.config) if args.config else pl.PipelineConfig()
    cfg = cfg.with_overrides(seed=args.seed, workers=args.workers, workdir=args.workdir)
    paths = dict(cfg.paths)
    for key in ("model", "vocab"):
        if getattr(args, key, None):
            paths[key] = getattr(args, key)
    cfg.paths = paths
    return cfg


def _query(args, cfg) -> str:
    index = pl.load_index(cfg, args.metric)
    meta = read_model_header(cfg.path("model"))
    norm = lambda t: pl.normalize_query_token(meta, t)
    if args.command == "nn":
        results = nearest_neighbors(index, norm(args.token), args.n)
    else:
        a, minus, b, plus, c = args.expr
        if minus != "-" or plus != "+":
            raise SystemExit("usage: analogy A - B + C")
        results = analogy(index, norm(a), norm(b), norm(c), args.n, exclude_query=not args.no_exclude)
    return format_results(results)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        cfg = _config(args)
        if args.command == "gen":
            pl.stage_gen(cfg, load_spec(args.spec) if args.spec else None)
        elif args.command in STAGES:
            result = STAGES[args.command](cfg)
            if args.command == "eval":
                sys.stderr.write(result.table())
        elif args.command in ("nn", "analogy"):
            sys.stdout.write(_query(args, cfg))
        elif args.command == "model-info":
            path = cfg.path("model")
            if not path.exists():
                raise MissingArtifact(f"missing model: {path}")
            sys.stdout.write(json.dumps(read_model_header(path), sort_keys=True, indent=1) + "\n")
    except LogPatternError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    except FileNotFoundError as exc:
        log.error("missing file: %s", exc.filename)
        return MissingArtifact.exit_code
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return ArtifactIOError.exit_code
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
