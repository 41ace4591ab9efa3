"""Command-line entry point: ``clickintent <subcommand> ...``.

Exit codes: 0 success, 1 data/config error (diagnostic on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
from pathlib import Path

from . import __version__
from .corpus import PrepConfig, compute_stats, load_corpus, prepare, save_corpus
from .domain import ClickIntentError, Label
from .evaluation import EvalReport, compare, evaluate, format_table, multi_seed_eval
from .ingestion import (
    SessionizationConfig,
    label_session,
    parse_raw_log,
    read_sessions,
    sessionize,
    symbolize,
    write_sessions,
)
from .neural.classifiers import GRID_BATCH, GRID_HIDDEN, GRID_LR
from .neural.core import random_gradcheck_suite
from .synthgen import GeneratorSpec, generate
from .training import ModelSpec, load_model, model_epoch_log, save_model, train_model

GRADCHECK_TOLERANCE = 1e-4


def _dump(obj, path: Path | None = None) -> str:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    return text


def _effective(args: argparse.Namespace) -> dict:
    # where results are written does not change them, so it is not echoed
    skip = {"func", "output"}
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k not in skip}


def _read_labeled(path: Path):
    with open(path, encoding="utf-8") as fh:
        sessions = read_sessions(fh)
    return [s if s.label is not None else s.with_label(label_session(s)) for s in sessions]


def _model_spec(args) -> ModelSpec:
    order = args.order if args.order is not None else 5
    return ModelSpec(kind=args.model, order=order, alpha=args.alpha, pooling=args.pooling,
                     hidden=args.hidden, lr=args.lr, batch=args.batch,
                     patience=args.patience, max_epochs=args.max_epochs)


# --------------------------------------------------------------------------
# subcommands


def cmd_sessionize(args) -> int:
    with open(args.input, encoding="utf-8") as fh:
        parsed = parse_raw_log(fh, args.format)
    sessions = sessionize(parsed.events, SessionizationConfig(args.gap_ms), args.use_given_sessions)
    symbolized = [symbolize(s) for s in sessions]
    symbolized = [s.with_label(label_session(s)) for s in symbolized]
    args.output.parent.mkdir(parents=True, exist_ok=True)
    with open(args.output, "w", encoding="utf-8") as fh:
        write_sessions(symbolized, fh, with_label=True)
    summary = {
        "config": _effective(args),
        "events": len(parsed.events),
        "skipped_lines": parsed.skipped,
        "sessions": len(symbolized),
        "buy_sessions": sum(1 for s in symbolized if s.label is Label.BUY),
    }
    for err in parsed.errors[:20]:
        print(f"skipped {err}", file=sys.stderr)
    sys.stdout.write(_dump(summary))
    return 0


def cmd_prepare(args) -> int:
    sessions = _read_labeled(args.input)
    corpus = prepare(sessions, PrepConfig(min_len=args.min_len, max_len=args.max_len, seed=args.seed))
    save_corpus(corpus, args.output)
    summary = {"config": _effective(args), "prep_log": corpus.prep_log, "class_counts": corpus.class_counts}
    sys.stdout.write(_dump(summary, args.output / "prepare_run.json"))
    return 0


def cmd_stats(args) -> int:
    data = load_corpus(args.input) if args.input.is_dir() else _read_labeled(args.input)
    stats = compute_stats(data)
    doc = {"config": _effective(args), "stats": stats.to_dict()}
    _dump(doc, args.output / "stats.json")
    written = stats.write_csv(args.output)
    sys.stdout.write(_dump({"written": [str(p) for p in [args.output / "stats.json", *written]]}))
    return 0


def cmd_train(args) -> int:
    corpus = load_corpus(args.input)
    spec = _model_spec(args)
    model = train_model(spec, corpus, args.seed)
    run = {"config": _effective(args), "model_id": spec.model_id, "spec": spec.to_dict(),
           "seed": args.seed, "epochs": model_epoch_log(model)}
    args.output.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, args.output, extra=run)
    sys.stdout.write(_dump({"model_id": spec.model_id, "seed": args.seed, "output": str(args.output)}))
    return 0


def cmd_evaluate(args) -> int:
    corpus = load_corpus(args.input)
    if args.checkpoint is not None:
        model = load_model(args.checkpoint)
        metrics = evaluate(model, corpus.test)
        report = EvalReport(f"checkpoint:{args.checkpoint.name}", {"checkpoint": str(args.checkpoint)},
                            [], [metrics])
    else:
        report = multi_seed_eval(_model_spec(args), corpus, n_runs=args.runs, base_seed=args.seed)
    args.output.mkdir(parents=True, exist_ok=True)
    doc = report.to_dict()
    doc["run_config"] = _effective(args)
    _dump(doc, args.output / "report.json")
    (args.output / "report.txt").write_text(format_table([report]), encoding="utf-8")
    # wall-clock times vary between runs, so they live outside the report
    _dump({"wall_clock_s": report.wall_clock}, args.output / "timing.json")
    sys.stdout.write(format_table([report]))
    return 0


def cmd_compare(args) -> int:
    a, b = (EvalReport.from_json(Path(p).read_text(encoding="utf-8")) for p in args.input)
    result = compare(a, b, args.confidence)
    doc = {"a": a.model_id, "b": b.model_id, **result.to_dict()}
    if result.point_comparison:
        print("warning: fewer than 2 runs on one side; point comparison only", file=sys.stderr)
    sys.stdout.write(_dump(doc, args.output / "compare.json" if args.output else None))
    sys.stdout.write(format_table([a, b]))
    return 0


def cmd_generate(args) -> int:
    bundled = args.spec in (None, "default", "default.json") and not (args.spec and Path(args.spec).exists())
    spec = GeneratorSpec.default() if bundled else GeneratorSpec.load(args.spec)
    seed = spec.seed if args.seed is None else args.seed
    sessions = generate(spec, args.n, seed=seed, stratified=not args.sample_labels)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    with open(args.output, "w", encoding="utf-8") as fh:
        write_sessions(sessions, fh, with_label=True)
    summary = {
        "config": _effective(args),
        "seed": seed,
        "sessions": len(sessions),
        "buy": sum(1 for s in sessions if s.label is Label.BUY),
        "nobuy": sum(1 for s in sessions if s.label is Label.NOBUY),
        "events": sum(len(s) for s in sessions),
    }
    sys.stdout.write(_dump(summary))
    return 0


def cmd_gradcheck(args) -> int:
    results = random_gradcheck_suite(args.n, seed=args.seed)
    worst = float(max(r["max_rel_error"] for r in results))
    ok = bool(worst < GRADCHECK_TOLERANCE)
    doc = {
        "config": _effective(args),
        "configurations": len(results),
        "tolerance": GRADCHECK_TOLERANCE,
        "max_rel_error": worst,
        "passed": ok,
        "runs": results,
    }
    sys.stdout.write(_dump({k: v for k, v in doc.items() if k != "runs"}))
    if args.output:
        _dump(doc, args.output / "gradcheck.json")
    return 0 if ok else 1


def cmd_sweep(args) -> int:
    corpus = load_corpus(args.input)
    rows = []
    for hidden, lr, batch in itertools.product(args.hidden, args.lr, args.batch):
        spec = ModelSpec(kind=args.model, pooling=args.pooling, hidden=hidden, lr=lr, batch=batch,
                         patience=args.patience, max_epochs=args.max_epochs)
        model = train_model(spec, corpus, args.seed)
        if args.model == "lm":
            results = model.train_results.values()
            best_epoch = max(r.best_epoch for r in results)
        else:
            best_epoch = model.train_result.best_epoch
        val = evaluate(model, corpus.validation).accuracy
        rows.append({"model_id": spec.model_id, "hidden": hidden, "lr": lr, "batch": batch,
                     "val_accuracy": val, "best_epoch": best_epoch})
        print(f"{spec.model_id}: val accuracy {val:.4f}", file=sys.stderr)
    rows.sort(key=lambda r: (-r["val_accuracy"], r["model_id"]))
    args.output.mkdir(parents=True, exist_ok=True)
    _dump({"config": _effective(args), "ranked": rows}, args.output / "sweep.json")
    width = max(len(r["model_id"]) for r in rows) + 2
    table = [f"{'rank':<6}{'model':<{width}}{'val_acc':<10}best_epoch"]
    table += [f"{i:<6}{r['model_id']:<{width}}{r['val_accuracy']:<10.4f}{r['best_epoch']}"
              for i, r in enumerate(rows, 1)]
    text = "\n".join(table) + "\n"
    (args.output / "sweep.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


# --------------------------------------------------------------------------
# parser


def _add_model_flags(p: argparse.ArgumentParser, multi_run: bool = False) -> None:
    p.add_argument("--model", choices=("nb", "mc", "lm", "s2l"), required=not multi_run, default=None)
    p.add_argument("--order", type=int, default=None, help="n for nb, k for mc (default 5)")
    p.add_argument("--alpha", type=float, default=1.0, help="Laplace smoothing constant")
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--pooling", choices=("last", "avg"), default="last")
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--max-epochs", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clickintent", description="Clickstream purchase-intent benchmark pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sessionize", help="raw event log -> labeled symbolized sessions")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--format", choices=("tsv", "jsonl"), default="tsv")
    p.add_argument("--gap-ms", type=int, default=1_800_000)
    p.add_argument("--use-given-sessions", action="store_true", help="trust the log's session_id column")
    p.set_defaults(func=cmd_sessionize)

    p = sub.add_parser("prepare", help="filter, cut, balance and split sessions into a corpus directory")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--min-len", type=int, default=10)
    p.add_argument("--max-len", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("stats", help="length, event and transition statistics as JSON + CSV")
    p.add_argument("--input", type=Path, required=True, help="session file or corpus directory")
    p.add_argument("--output", type=Path, required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train one model on a corpus directory")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True, help="model JSON file")
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="multi-seed train + test protocol, or score a checkpoint")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--runs", type=int, default=10)
    _add_model_flags(p, multi_run=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="Welch t-test between two evaluation reports")
    p.add_argument("--input", type=Path, nargs=2, required=True, metavar=("REPORT_A", "REPORT_B"))
    p.add_argument("--output", type=Path, default=None)
    p.add_argument("--confidence", type=float, default=0.99)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("generate", help="synthetic labeled corpus from a generator spec")
    p.add_argument("--spec", default=None, help="generator spec JSON; 'default' or 'default.json' picks the bundled spec unless such a file exists")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--sample-labels", action="store_true", help="draw labels from the prior instead of fixing counts")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("gradcheck", help="finite-difference check of the LSTM gradients")
    p.add_argument("--n", type=int, default=100, help="number of random configurations")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", type=Path, default=None)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", help="hyperparameter grid over hidden size x learning rate x batch size")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--model", choices=("lm", "s2l"), required=True)
    p.add_argument("--pooling", choices=("last", "avg"), default="last")
    p.add_argument("--hidden", type=int, nargs="+", default=list(GRID_HIDDEN))
    p.add_argument("--lr", type=float, nargs="+", default=list(GRID_LR))
    p.add_argument("--batch", type=int, nargs="+", default=list(GRID_BATCH))
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--max-epochs", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "evaluate" and args.checkpoint is None and args.model is None:
        parser.error("evaluate needs --model or --checkpoint")
    try:
        return args.func(args)
    except (ClickIntentError, OSError, ValueError, KeyError) as exc:
        print(f"clickintent {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
