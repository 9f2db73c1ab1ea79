"""Command-line pipeline: taxonomy-check, embed, synth, train, index, query, eval.

Exit codes: 0 success, 1 validation failure, 2 I/O failure, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .embedding import compute_class_embeddings, gram_reconstruction_error
from .errors import FormatError, HierSearchError
from .evaluation import DEFAULT_K, evaluate_retrieval
from .learner import TrainConfig, train_mapper
from .retrieval import build_index, embed_records, retrieve
from .storage import (
    RunManifest,
    input_hash,
    load_index,
    load_mapper,
    load_matrix,
    read_records,
    save_embedding_csv,
    save_embedding_table,
    save_eval_report,
    save_index,
    save_mapper,
    write_hits_jsonl,
    write_loss_history,
    write_records,
)
from .synth import DEFAULT_PER_CLASS, DEFAULT_TRAIN_FRACTION, synthesize
from .taxonomy import Taxonomy, parse_taxonomy

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_INTERNAL = 0, 1, 2, 3


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    text = Path(path).read_text()
    if path.endswith(".json"):
        return json.loads(text)
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    return tomllib.loads(text)


def _taxonomy(path: str) -> Taxonomy:
    return parse_taxonomy(Path(path).read_text(encoding="utf-8"))


def _run(args, inputs: dict[str, str], config: dict | None = None) -> RunManifest:
    return RunManifest(
        command=args.command,
        config=config or {},
        inputs={name: input_hash(p) for name, p in inputs.items()},
        seed=args.seed,
    )


def _require_out(args) -> Path:
    if not args.out:
        raise HierSearchError(f"{args.command} needs --out")
    return Path(args.out)


# ----------------------------------------------------------------------
def cmd_taxonomy_check(args) -> int:
    t = _taxonomy(args.taxonomy)
    line = f"{len(t)} nodes, {t.n_leaves} leaves, max height {t.max_height}"
    if t.max_height == 0:
        print(f"{line}, S undefined (single-node tree)")
        return EXIT_OK
    lowest = float(np.linalg.eigvalsh(t.similarity_matrix()).min())
    ok = lowest >= -1e-9
    print(f"{line}, S is {'PSD' if ok else 'NOT PSD'} (min eigenvalue {lowest:.3e})")
    return EXIT_OK if ok else EXIT_INVALID


def cmd_embed(args) -> int:
    t = _taxonomy(args.taxonomy)
    inputs = {"taxonomy": args.taxonomy}
    if args.override:
        S = load_matrix(args.override)
        inputs["override"] = args.override
    else:
        S = t.similarity_matrix()
    table = compute_class_embeddings(S, t.leaf_ids)
    out = _require_out(args)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_embedding_table(table, out, _run(args, inputs))
    if args.csv:
        save_embedding_csv(table, out.with_suffix(".csv"))
    print(f"{table.n_classes} classes, gram error {gram_reconstruction_error(table, S):.3e}")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _load_config(args.config).get("synth", {})
    t = _taxonomy(args.taxonomy)
    params = dict(
        per_class=args.per_class if args.per_class is not None else cfg.get("per_class", DEFAULT_PER_CLASS),
        sigma=args.sigma if args.sigma is not None else cfg.get("sigma", 0.25),
        unseen=args.unseen or cfg.get("unseen", []),
        train_fraction=args.train_fraction if args.train_fraction is not None else cfg.get("train_fraction", DEFAULT_TRAIN_FRACTION),
        descriptor_dim=args.descriptor_dim if args.descriptor_dim is not None else cfg.get("descriptor_dim", 0),
    )
    ds = synthesize(t, seed=args.seed, **params)
    out = _require_out(args)
    out.mkdir(parents=True, exist_ok=True)
    run = _run(args, {"taxonomy": args.taxonomy}, params)
    extra = {"unseen_labels": list(ds.unseen)}
    write_records(ds.train, out / "train.jsonl", run, extra)
    write_records(ds.test, out / "test.jsonl", run, extra)
    print(f"{len(ds.train)} train / {len(ds.test)} test records over {t.n_leaves} classes -> {out}")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    cfg = dict(_load_config(args.config).get("train", {}))
    overrides = {
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "restart_epochs": args.restarts,
        "lr_max": args.lr_max,
        "lr_min": args.lr_min,
        "loss_mix": args.loss_mix,
        "hidden_dim": args.hidden_dim,
        "momentum": args.momentum,
    }
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    if args.no_correlation:
        cfg["correlation_weight"] = 0.0
    cfg["seed"] = args.seed
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(cfg) - known
    if unknown:
        raise HierSearchError(f"unknown training options: {', '.join(sorted(unknown))}")
    if "restart_epochs" not in cfg and "epochs" in cfg:
        cfg["restart_epochs"] = [e for e in TrainConfig.restart_epochs if e < cfg["epochs"]] + [cfg["epochs"]]
    return TrainConfig(**cfg)


def cmd_train(args) -> int:
    t = _taxonomy(args.taxonomy)
    records = read_records(args.dataset)
    cfg = _train_config(args)
    table = compute_class_embeddings(t.similarity_matrix(), t.leaf_ids)
    X = np.array([r.raw_features for r in records])
    y = np.array([t.leaf_index(r.label) for r in records])
    mapper, history = train_mapper((X, y), table, cfg)
    out = _require_out(args)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_mapper(mapper, out, cfg, _run(args, {"taxonomy": args.taxonomy, "dataset": args.dataset}, asdict(cfg)))
    write_loss_history(history, out.with_suffix(".loss.csv"))
    print(f"trained {cfg.epochs} epochs: loss {history.initial[2]:.4f} -> {history.total[-1]:.4f}")
    return EXIT_OK


def cmd_index(args) -> int:
    t = _taxonomy(args.taxonomy)
    mapper, _ = load_mapper(args.mapper)
    records = [r for path in args.datasets for r in read_records(path)]
    index = build_index(
        embed_records(mapper, records),
        taxonomy_hash=t.content_hash(),
        mapper_hash=input_hash(args.mapper),
    )
    inputs = {"taxonomy": args.taxonomy, "mapper": args.mapper}
    inputs.update({f"dataset{i}": p for i, p in enumerate(args.datasets)})
    save_index(index, _require_out(args), _run(args, inputs))
    print(f"indexed {len(index)} records ({index.dim}-d) -> {args.out}")
    return EXIT_OK


def cmd_query(args) -> int:
    index = load_index(args.index)
    mapper, _ = load_mapper(args.mapper)
    queries = read_records(args.queries)
    fh = open(args.out, "w") if args.out else sys.stdout
    try:
        for q in queries:
            res = retrieve(
                index, mapper, q.raw_features, args.n, rerank=not args.no_rerank,
                query_descriptor=q.rerank_descriptor,
                exclude_id=None if args.include_self else q.image_id,
                n_rr=args.rerank_window,
            )
            write_hits_jsonl(fh, q.image_id, res.reranked)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args.config).get("eval", {})
    K = args.k if args.k is not None else cfg.get("K", DEFAULT_K)
    index = load_index(args.index)
    mapper, _ = load_mapper(args.mapper)
    t = _taxonomy(args.taxonomy)
    test = read_records(args.test)
    report = evaluate_retrieval(
        index, mapper, t, test, K=K, rerank=not args.no_rerank,
        include_self=args.include_self, n_rr=args.rerank_window,
    )
    run = _run(
        args,
        {"index": str(Path(args.index) / "manifest.json"), "mapper": args.mapper,
         "taxonomy": args.taxonomy, "test": args.test},
        {"K": K, "rerank": not args.no_rerank, "include_self": args.include_self},
    )
    save_eval_report(report, _require_out(args), run)
    b, a = report.before_rerank, report.after_rerank
    print(f"queries {report.n_queries}  mAHP@{K} {a.mahp:.4f} (before re-rank {b.mahp:.4f})"
          + (f"  mAP {a.map:.4f}" if a.map is not None else ""))
    for level, conf in report.per_level.items():
        print(f"  {level:>10s} accuracy {conf.accuracy:.4f}")
    return EXIT_OK


# ----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", help="TOML or JSON file with [synth]/[train]/[eval] tables")
    common.add_argument("--out", help="output path (file prefix or directory)")

    parser = argparse.ArgumentParser(prog="hiersearch", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("taxonomy-check", parents=[common], help="validate a taxonomy file")
    p.add_argument("taxonomy")
    p.set_defaults(func=cmd_taxonomy_check)

    p = sub.add_parser("embed", parents=[common], help="solve class embeddings")
    p.add_argument("taxonomy")
    p.add_argument("--override", help="similarity matrix (JSON/CSV) replacing the taxonomy one")
    p.add_argument("--csv", action="store_true", help="also write a CSV table (<= 32 classes)")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic feature dataset")
    p.add_argument("taxonomy")
    p.add_argument("--per-class", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--unseen", action="append", metavar="LEAF", help="withhold a leaf from training")
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--descriptor-dim", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train the feature mapper")
    p.add_argument("taxonomy")
    p.add_argument("dataset")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--restarts", type=int, nargs="+")
    p.add_argument("--lr-max", type=float)
    p.add_argument("--lr-min", type=float)
    p.add_argument("--lambda", dest="loss_mix", type=float)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--momentum", type=float)
    p.add_argument("--no-correlation", action="store_true", help="cross-entropy-only baseline")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("index", parents=[common], help="build an index directory")
    p.add_argument("taxonomy")
    p.add_argument("mapper")
    p.add_argument("datasets", nargs="+")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("query", parents=[common], help="rank the index for each query record")
    p.add_argument("index")
    p.add_argument("mapper")
    p.add_argument("queries")
    p.add_argument("-n", type=int, default=10)
    p.add_argument("--no-rerank", action="store_true")
    p.add_argument("--rerank-window", type=int)
    p.add_argument("--include-self", action="store_true")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", parents=[common], help="hierarchical retrieval evaluation")
    p.add_argument("index")
    p.add_argument("mapper")
    p.add_argument("taxonomy")
    p.add_argument("test")
    p.add_argument("-k", type=int)
    p.add_argument("--no-rerank", action="store_true")
    p.add_argument("--rerank-window", type=int)
    p.add_argument("--include-self", action="store_true")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (HierSearchError, FormatError, ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
