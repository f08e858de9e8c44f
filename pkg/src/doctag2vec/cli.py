"""Command-line interface.

Subcommands: train, update (incremental chunks), add-tags, predict,
infer (raw vectors), evaluate.  Exit codes: 0 success, 1 usage error,
2 data/format error.  Every run logs its resolved configuration,
defaults included, as one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .corpus import load_dataset, read_records, tokenize
from .errors import DocTag2VecError, EmptyDocument
from .evaluation import evaluate_ensemble, sweep_ensemble
from .inference import infer_document
from .model import Hyperparameters, add_tags, load_model, save_model
from .predictor import (
    Ensemble,
    load_ensemble,
    predict_bagged,
    save_ensemble,
    train_ensemble,
)
from .report import (
    plot_precision_at_k,
    plot_sweep,
    write_metrics_csv,
    write_metrics_json,
    write_sweep_csv,
)
from .trainer import INCREMENTAL_LR, TrainConfig, train_incremental

ENV_SEED = "DT2V_SEED"
DEFAULT_SEED = 1


def _add_hyper_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dim", type=int, default=100, help="embedding dimension")
    p.add_argument("--window", type=int, default=8, help="context window radius")
    p.add_argument("--epochs", type=int, default=20, help="SGD passes")
    p.add_argument("--alpha", type=float, default=1.0, help="tag loss weight")
    p.add_argument("--negatives", type=int, default=1, help="negative tags per positive")
    p.add_argument("--min-count", type=int, default=5, help="vocabulary count threshold")
    p.add_argument("--combine", choices=("sum", "mean"), default="mean",
                   help="context combination mode")


def _add_ensemble_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--learners", type=int, default=15, help="ensemble size")
    p.add_argument("--subsample", type=float, default=0.5,
                   help="training fraction per learner")
    p.add_argument("--kprime", type=int, default=5, help="per-learner neighbors")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="doctag2vec",
        description="Joint word/document/tag embeddings with k-NN tag prediction.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an ensemble from a JSONL corpus")
    p.add_argument("--input", required=True, help="training JSONL file")
    p.add_argument("--model", required=True, help="output model file")
    _add_hyper_flags(p)
    _add_ensemble_flags(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1,
                   help=">1 enables relaxed lock-free updates (nondeterministic)")

    p = sub.add_parser("update", help="feed new documents incrementally")
    p.add_argument("--input", required=True, help="JSONL file of new documents")
    p.add_argument("--model", required=True, help="model file, updated in place")
    p.add_argument("--chunk", type=int, default=100, help="documents per SGD chunk")
    p.add_argument("--lr", type=float, default=INCREMENTAL_LR,
                   help="constant incremental learning rate")

    p = sub.add_parser("add-tags", help="grow the tag set of a trained model")
    p.add_argument("--model", required=True, help="model file, updated in place")
    p.add_argument("tags", nargs="+", help="new tag strings")

    p = sub.add_parser("predict", help="predict top-k tags per input document")
    p.add_argument("--input", required=True, help="JSONL file of documents")
    p.add_argument("--model", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--kprime", type=int, default=None,
                   help="override the stored per-learner neighbor count")
    p.add_argument("--output", default=None, help="output JSONL (default stdout)")

    p = sub.add_parser("infer", help="emit raw inferred document vectors")
    p.add_argument("--input", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--output", default=None)

    p = sub.add_parser("evaluate", help="train/eval experiment or evaluate a model")
    p.add_argument("--train", default=None, help="training JSONL (trains a fresh ensemble)")
    p.add_argument("--model", default=None, help="pre-trained model to evaluate")
    p.add_argument("--test", required=True, help="test JSONL with gold tags")
    _add_hyper_flags(p)
    _add_ensemble_flags(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--k", type=int, default=5, help="prediction size for recall")
    p.add_argument("--kmax", type=int, default=10, help="largest k in the precision table")
    p.add_argument("--output", default=None, help="metrics JSON file (default stdout)")
    p.add_argument("--save-model", default=None, help="also save the trained ensemble")
    p.add_argument("--report-dir", default=None,
                   help="write CSV tables and figures into this directory")
    p.add_argument("--sweep-learners", default=None,
                   help="comma-separated ensemble sizes to sweep, e.g. 1,5,10,15")
    p.add_argument("--sweep-kprime", default=None,
                   help="comma-separated k' values to sweep (default: --kprime)")
    return parser


def _resolve_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get(ENV_SEED)
    if env is not None:
        return int(env)
    return DEFAULT_SEED


def _hyper_from_args(args, seed: int) -> Hyperparameters:
    return Hyperparameters(
        dim=args.dim,
        window=args.window,
        epochs=args.epochs,
        alpha=args.alpha,
        negatives=args.negatives,
        min_count=args.min_count,
        combine=args.combine,
        seed=seed,
    )


def _log_config(args, extra: dict | None = None) -> None:
    resolved = {k: v for k, v in vars(args).items() if k != "command"}
    resolved["command"] = args.command
    if extra:
        resolved.update(extra)
    print(json.dumps({"config": resolved}, default=str), file=sys.stderr)


def _load_any(path) -> Ensemble:
    """Load either an ensemble file or a bare model file (as an ensemble
    of one)."""
    with open(path, "rb") as fh:
        head = fh.read(7)
    if head == b"DT2VENS":
        return load_ensemble(path)
    return Ensemble(learners=[load_model(path)], k_prime=5)


def _save_any(ensemble: Ensemble, path, was_ensemble: bool) -> None:
    if was_ensemble:
        save_ensemble(ensemble, path)
    else:
        save_model(ensemble.learners[0], path)


def _open_out(path):
    return open(path, "w", encoding="utf-8") if path else sys.stdout


def cmd_train(args) -> int:
    seed = _resolve_seed(args)
    _log_config(args, {"seed": seed})
    hyper = _hyper_from_args(args, seed)
    dataset = load_dataset(args.input, min_count=hyper.min_count)
    config = TrainConfig(workers=args.workers)
    ensemble = train_ensemble(
        dataset,
        hyper,
        b=args.learners,
        subsample=args.subsample,
        k_prime=args.kprime,
        config=config,
    )
    save_ensemble(ensemble, args.model)
    print(
        f"trained {ensemble.size} learner(s) on {dataset.num_documents} documents "
        f"-> {args.model}",
        file=sys.stderr,
    )
    return 0


def cmd_update(args) -> int:
    _log_config(args)
    if args.chunk < 1:
        raise DocTag2VecError("--chunk must be >= 1")
    with open(args.model, "rb") as fh:
        was_ensemble = fh.read(7) == b"DT2VENS"
    ensemble = _load_any(args.model)
    records = read_records(args.input)
    docs = [(tokenize(rec.text), rec.tags) for rec in records]
    for start in range(0, len(docs), args.chunk):
        chunk = docs[start : start + args.chunk]
        for learner in ensemble.learners:
            train_incremental(learner, chunk, lr=args.lr)
    _save_any(ensemble, args.model, was_ensemble)
    print(f"updated with {len(docs)} document(s) -> {args.model}", file=sys.stderr)
    return 0


def cmd_add_tags(args) -> int:
    _log_config(args)
    with open(args.model, "rb") as fh:
        was_ensemble = fh.read(7) == b"DT2VENS"
    ensemble = _load_any(args.model)
    for learner in ensemble.learners:
        add_tags(learner, args.tags)
    _save_any(ensemble, args.model, was_ensemble)
    print(f"added {len(args.tags)} tag(s) -> {args.model}", file=sys.stderr)
    return 0


def cmd_predict(args) -> int:
    _log_config(args)
    ensemble = _load_any(args.model)
    if args.kprime is not None:
        ensemble.k_prime = args.kprime
    id_to_tag = ensemble.learners[0].tagdict.id_to_tag
    records = read_records(args.input)
    out = _open_out(args.output)
    try:
        for rec in records:
            try:
                prediction = predict_bagged(ensemble, tokenize(rec.text), args.k)
                line = {
                    "id": rec.id,
                    "tags": [
                        {"tag": id_to_tag[tag], "score": score}
                        for tag, score in prediction.entries
                    ],
                }
            except EmptyDocument as exc:
                line = {"id": rec.id, "error": str(exc)}
            out.write(json.dumps(line) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_infer(args) -> int:
    _log_config(args)
    ensemble = _load_any(args.model)
    records = read_records(args.input)
    out = _open_out(args.output)
    try:
        for rec in records:
            try:
                vectors = [
                    infer_document(learner, tokenize(rec.text)).tolist()
                    for learner in ensemble.learners
                ]
                line = {"id": rec.id, "vectors": vectors}
            except EmptyDocument as exc:
                line = {"id": rec.id, "error": str(exc)}
            out.write(json.dumps(line) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise DocTag2VecError(f"bad integer list {text!r}") from exc


def cmd_evaluate(args) -> int:
    seed = _resolve_seed(args)
    _log_config(args, {"seed": seed})
    if (args.train is None) == (args.model is None):
        print("evaluate needs exactly one of --train or --model", file=sys.stderr)
        return 1
    if args.train:
        hyper = _hyper_from_args(args, seed)
        dataset = load_dataset(args.train, min_count=hyper.min_count)
        ensemble = train_ensemble(
            dataset, hyper, b=args.learners, subsample=args.subsample, k_prime=args.kprime
        )
        if args.save_model:
            save_ensemble(ensemble, args.save_model)
    else:
        ensemble = _load_any(args.model)
        if args.kprime is not None:
            ensemble.k_prime = args.kprime
    records = read_records(args.test)
    report = evaluate_ensemble(ensemble, records, k_max=args.kmax, recall_k=args.k)

    if args.output:
        write_metrics_json(report, args.output)
    else:
        json.dump(report.as_dict(), sys.stdout, indent=2)
        sys.stdout.write("\n")

    if args.report_dir:
        report_dir = Path(args.report_dir)
        report_dir.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(report, report_dir / "metrics.csv")
        plot_precision_at_k(report, report_dir / "precision_at_k.png")
        if args.sweep_learners:
            counts = _parse_int_list(args.sweep_learners)
            kprimes = (
                _parse_int_list(args.sweep_kprime)
                if args.sweep_kprime
                else [ensemble.k_prime]
            )
            points = sweep_ensemble(
                ensemble, records, counts, kprimes, k_max=args.kmax, recall_k=args.k
            )
            write_sweep_csv(points, report_dir / "sweep.csv")
            plot_sweep(points, report_dir / "precision_vs_learners.png")
        print(f"report written to {report_dir}", file=sys.stderr)
    return 0


_COMMANDS = {
    "train": cmd_train,
    "update": cmd_update,
    "add-tags": cmd_add_tags,
    "predict": cmd_predict,
    "infer": cmd_infer,
    "evaluate": cmd_evaluate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return _COMMANDS[args.command](args)
    except DocTag2VecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
