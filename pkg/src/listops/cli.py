"""Command-line surface: dataset generation, training, evaluation, reports.

Subcommands: gen, stats, train, restarts, sweep, scale-sweep, evaluate,
score-trees. Every flag can also come from an optional plain-text config file
(`--config FILE`, one `key=value` per line, `#` comments, keys spelled like
the long flags without the leading dashes); explicit flags win. On failure
the process exits nonzero after printing one machine-readable line to stderr:

    error<TAB><ErrorType><TAB><message>
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import generate, harness, metrics, trees
from .core import ListOpsError
from .encoders import CheckpointMismatch, EncoderConfig


class CliError(Exception):
    pass


def _read_config_file(path) -> dict:
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise CliError(f"cannot read config file: {err}") from err
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Load --config key=value defaults into the parser, then reparse argv."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if known.config:
        values = _read_config_file(known.config)
        valid = {action.dest: action for action in parser._actions}
        for key, raw in values.items():
            if key not in valid:
                raise CliError(f"config file sets unknown key {key!r}")
            action = valid[key]
            if action.type is not None:
                try:
                    raw = action.type(raw)
                except ValueError as err:
                    raise CliError(f"config key {key!r}: {err}") from err
            elif isinstance(action.const, bool) or isinstance(action.default, bool):
                raw = raw.lower() in ("1", "true", "yes", "on")
            parser.set_defaults(**{key: raw})
            # a config-file value satisfies "required" for everything but --seed
            if action.required and key != "seed":
                action.required = False
    return argv


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise ValueError(f"must be >= 0, got {value}")
    return value


def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part]


def _float_list(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part]


# ---------------------------------------------------------------------------
# subcommand argument blocks
# ---------------------------------------------------------------------------

def _add_train_flags(p: argparse.ArgumentParser, require_seed: bool = True):
    p.add_argument("--config", help="optional key=value defaults file")
    p.add_argument("--train-file", required=True, help="train split TSV")
    p.add_argument("--test-file", required=True, help="test split TSV")
    p.add_argument("--encoder", required=True,
                   choices=["lstm", "treelstm", "rl-spinn", "st-gumbel"])
    p.add_argument("--model-dim", type=int, default=48)
    p.add_argument("--mlp-hidden", type=int, default=128)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--policy-hidden", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--l2", type=float, default=0.0)
    p.add_argument("--lr-decay", type=float, default=0.9)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--max-epochs", type=int, default=10)
    p.add_argument("--patience", type=int, default=1)
    p.add_argument("--seed", type=int, required=require_seed)
    p.add_argument("--limit-train", type=_positive_int, default=None)
    p.add_argument("--limit-test", type=_positive_int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--quiet", action="store_true")


def _train_config(args) -> harness.TrainConfig:
    encoder = EncoderConfig(
        encoder_kind=args.encoder,
        model_dim=args.model_dim,
        mlp_hidden=args.mlp_hidden,
        dropout=args.dropout,
        temperature=args.temperature,
        policy_hidden=args.policy_hidden,
    )
    return harness.TrainConfig(
        encoder=encoder,
        train_path=args.train_file,
        test_path=args.test_file,
        lr=args.lr,
        l2=args.l2,
        lr_decay=args.lr_decay,
        batch_size=args.batch_size,
        max_epochs=args.max_epochs,
        patience=args.patience,
        seed=args.seed if args.seed is not None else 0,
        limit_train=args.limit_train,
        limit_test=args.limit_test,
    )


def _log(args):
    if getattr(args, "quiet", False):
        return None
    return lambda message: print(message, file=sys.stderr, flush=True)


def _write_run_outputs(out_dir: Path, cfg, record, trainer=None):
    out_dir.mkdir(parents=True, exist_ok=True)
    harness.write_run_csv(out_dir / "run.csv", record)
    summary = {
        "config_hash": record.config_hash,
        "encoder": record.encoder_kind,
        "final_accuracy": record.final_accuracy,
        "epochs": len(record.epochs),
        "wall_time_s": round(record.wall_time_s, 3),
    }
    (out_dir / "run.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    if record.test_trees is not None:
        harness.write_trees(out_dir / "test_trees.txt", record.test_trees)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    overrides = {}
    if args.max_depth is not None:
        overrides["max_depth"] = args.max_depth
    if args.max_args is not None:
        overrides["max_args"] = args.max_args
    if args.p_nest is not None:
        overrides["p_nest"] = args.p_nest
    if args.train is not None:
        overrides["n_train"] = args.train
    if args.test is not None:
        overrides["n_test"] = args.test
    if args.max_tokens is not None:
        overrides["max_tokens"] = args.max_tokens
    if args.min_tokens is not None:
        overrides["min_tokens"] = args.min_tokens
    if args.no_balance_labels:
        overrides["balance_labels"] = False
    cfg = generate.preset(args.preset, seed=args.seed, **overrides)
    dataset = generate.generate_dataset(cfg, n_shards=args.shards)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    generate.write_split(out / "train.tsv", dataset.train)
    generate.write_split(out / "test.tsv", dataset.test)
    stats = generate.corpus_stats(dataset.train)
    print(f"wrote {len(dataset.train)} train / {len(dataset.test)} test to {out}")
    print(f"train mean avg token depth {stats.mean_avg_token_depth:.2f}, "
          f"mean length {stats.mean_tokens:.1f}")
    return 0


def cmd_stats(args) -> int:
    examples = generate.read_split(args.infile)
    stats = generate.corpus_stats(examples)
    with open(args.csv, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["section", "key", "value"])
        for digit in sorted(stats.label_counts):
            w.writerow(["label", digit, stats.label_counts[digit]])
        for op in sorted(stats.op_counts):
            w.writerow(["op", op, stats.op_counts[op]])
        for bucket in sorted(stats.depth_histogram):
            w.writerow(["avg_token_depth_hist", bucket, stats.depth_histogram[bucket]])
        w.writerow(["summary", "n_examples", stats.n_examples])
        w.writerow(["summary", "mean_ast_depth", f"{stats.mean_ast_depth:.4f}"])
        w.writerow(["summary", "mean_tokens", f"{stats.mean_tokens:.4f}"])
        w.writerow(["summary", "mean_avg_token_depth", f"{stats.mean_avg_token_depth:.4f}"])
    print(f"stats for {stats.n_examples} examples -> {args.csv}")
    return 0


def cmd_train(args) -> int:
    cfg = _train_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    record = harness.train(cfg, log=_log(args), checkpoint_path=out / "model.ckpt")
    _write_run_outputs(out, cfg, record)
    print(f"final test accuracy {record.final_accuracy:.2f} -> {out}")
    return 0


def cmd_restarts(args) -> int:
    cfg = _train_config(args)
    report, records, failures = harness.run_restarts(cfg, args.runs, log=_log(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, record in enumerate(records):
        _write_run_outputs(out / f"run{i}", cfg, record)
    harness.write_restarts_csv(out / "restarts.csv", cfg.encoder.encoder_kind, report)
    sf1 = "-" if report.self_f1 is None else f"{report.self_f1:.1f}"
    print(f"{cfg.encoder.encoder_kind}: mean {report.mean:.2f} ({report.stddev:.2f}) "
          f"max {report.max:.2f} self-F1 {sf1}")
    for seed, err in failures:
        print(f"warning: run with seed {seed} failed: {err}", file=sys.stderr)
    return 0


def cmd_sweep(args) -> int:
    cfg = _train_config(args)
    grid = {}
    if args.grid_lr:
        grid["lr"] = args.grid_lr
    if args.grid_l2:
        grid["l2"] = args.grid_l2
    if args.grid_lr_decay:
        grid["lr_decay"] = args.grid_lr_decay
    if args.grid_model_dim:
        grid["model_dim"] = args.grid_model_dim
    if not grid:
        raise CliError("sweep needs at least one --grid-* flag")
    rows, best = harness.sweep(cfg, grid, log=_log(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    harness.write_sweep_csv(out / "sweep.csv", rows, sorted(grid))
    print(f"best: {best}")
    return 0


def cmd_scale_sweep(args) -> int:
    cfg = _train_config(args)
    rows = harness.scale_sweep(cfg, args.sizes, log=_log(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    harness.write_scale_csv(out / "scale.csv", rows)
    for size, acc in rows:
        print(f"train size {size}: accuracy {acc:.2f}")
    return 0


def cmd_evaluate(args) -> int:
    encoder = EncoderConfig(
        encoder_kind=args.encoder,
        model_dim=args.model_dim,
        mlp_hidden=args.mlp_hidden,
        temperature=args.temperature,
        policy_hidden=args.policy_hidden,
    )
    cfg = harness.TrainConfig(
        encoder=encoder,
        train_path=args.data,
        test_path=args.data,
        seed=0,
    )
    acc, _, emitted, report = harness.evaluate_checkpoint(
        cfg, args.checkpoint, args.data, limit=args.limit
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    harness.write_eval_csv(out / "eval.csv", acc, report)
    if emitted is not None:
        harness.write_trees(out / "trees.txt", emitted)
    if report is None:
        print(f"accuracy {acc:.2f} (no trees emitted)")
    else:
        print(f"accuracy {acc:.2f}  f1_lb {report.f1_lb:.1f}  f1_rb {report.f1_rb:.1f}  "
              f"f1_gt {report.f1_gt:.1f}  avg_depth {report.avg_depth:.2f}")
    return 0


def cmd_score_trees(args) -> int:
    pred = harness.read_trees(args.pred)
    gold = harness.read_trees(args.gold)
    if len(pred) != len(gold):
        raise CliError(f"{len(pred)} predicted trees vs {len(gold)} gold trees")
    report = metrics.f1_report(pred, gold)
    with open(args.csv, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["f1_lb", "f1_rb", "f1_gt", "avg_depth"])
        w.writerow([
            f"{report.f1_lb:.4f}",
            f"{report.f1_rb:.4f}",
            f"{report.f1_gt:.4f}",
            f"{report.avg_depth:.4f}",
        ])
    print(f"f1_lb {report.f1_lb:.1f}  f1_rb {report.f1_rb:.1f}  "
          f"f1_gt {report.f1_gt:.1f}  avg_depth {report.avg_depth:.2f}")
    return 0


# ---------------------------------------------------------------------------
# parser assembly
# ---------------------------------------------------------------------------

def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="listops",
        description="ListOps dataset generation, training, and parse-quality reports",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers: dict[str, argparse.ArgumentParser] = {}

    p = subparsers["gen"] = sub.add_parser("gen", help="generate a train/test corpus")
    p.add_argument("--config")
    p.add_argument("--preset", choices=sorted(generate.PRESETS), default="desk")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--max-args", type=int, default=None)
    p.add_argument("--p-nest", type=float, default=None)
    p.add_argument("--train", type=int, default=None, help="train split size")
    p.add_argument("--test", type=int, default=None, help="test split size")
    p.add_argument("--min-tokens", type=int, default=None)
    p.add_argument("--max-tokens", type=int, default=None)
    p.add_argument("--no-balance-labels", action="store_true")
    p.add_argument("--shards", type=int, default=1)
    p.set_defaults(func=cmd_gen)

    p = subparsers["stats"] = sub.add_parser("stats", help="corpus statistics to CSV")
    p.add_argument("--config")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--csv", required=True)
    p.set_defaults(func=cmd_stats)

    p = subparsers["train"] = sub.add_parser("train", help="train one encoder")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = subparsers["restarts"] = sub.add_parser("restarts", help="k restarts with consecutive seeds")
    _add_train_flags(p)
    p.add_argument("--runs", type=int, default=4)
    p.set_defaults(func=cmd_restarts)

    p = subparsers["sweep"] = sub.add_parser("sweep", help="hyperparameter grid sweep")
    _add_train_flags(p)
    p.add_argument("--grid-lr", type=_float_list, default=None)
    p.add_argument("--grid-l2", type=_float_list, default=None)
    p.add_argument("--grid-lr-decay", type=_float_list, default=None)
    p.add_argument("--grid-model-dim", type=_int_list, default=None)
    p.set_defaults(func=cmd_sweep)

    p = subparsers["scale-sweep"] = sub.add_parser("scale-sweep", help="accuracy vs nested training-set size")
    _add_train_flags(p)
    p.add_argument("--sizes", type=_int_list, required=True,
                   help="comma-separated train sizes (prefix subsets)")
    p.set_defaults(func=cmd_scale_sweep)

    p = subparsers["evaluate"] = sub.add_parser("evaluate", help="evaluate a checkpoint on a dataset file")
    p.add_argument("--config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--encoder", required=True,
                   choices=["lstm", "treelstm", "rl-spinn", "st-gumbel"])
    p.add_argument("--model-dim", type=int, default=48)
    p.add_argument("--mlp-hidden", type=int, default=128)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--policy-hidden", type=int, default=32)
    p.add_argument("--limit", type=_positive_int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = subparsers["score-trees"] = sub.add_parser("score-trees", help="bracket F1 of predicted vs gold trees")
    p.add_argument("--config")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--csv", required=True)
    p.set_defaults(func=cmd_score_trees)

    return parser, subparsers


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subparsers = build_parser()
    try:
        if argv and argv[0] in subparsers:
            _apply_config_file(subparsers[argv[0]], argv[1:])
        args = parser.parse_args(argv)
        return args.func(args)
    except (
        CliError,
        CheckpointMismatch,
        ListOpsError,
        generate.BalanceUnreachable,
        harness.DatasetError,
        harness.DivergenceError,
        metrics.LengthMismatch,
        trees.InvalidTransitionSeq,
        OSError,
        ValueError,
    ) as err:
        print(f"error\t{type(err).__name__}\t{err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
