"""Command-line front end: dataset generation, training, rating inference,
classical rating tools and the evaluation harness.

Exit codes: 0 success, 1 domain or runtime error, 2 usage error. Every run
logs its fully resolved configuration and writes artifacts atomically; a
manifest JSON (config + seed, no timestamps) accompanies generated files so
reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import btcore, datagen, evaluate, model as nbt
from . import nn


def _parse_dims(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad layer list {text!r}; expected comma-separated integers")


def _parse_bool(text: str) -> bool:
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"bad boolean {text!r}")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="btrating",
        description="Ratings from comparison outcomes: neural estimator plus classical tools.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands: dict[str, argparse.ArgumentParser] = {}

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key = value file supplying defaults; flags override")
        commands[name] = p
        return p

    p = command("gen", "generate a synthetic benchmark dataset")
    p.add_argument("--task", choices=("digits", "planted", "mnist"), default="digits")
    p.add_argument("--n", type=int, help="number of training records (digits task)")
    p.add_argument("--n-test", type=int, help="number of test records (digits task)")
    p.add_argument("--seed", type=int, help="generator seed (required)")
    p.add_argument("--feature-dim", type=int, help="item feature width")
    p.add_argument("--noise", type=float, default=0.1, help="encoding noise sigma (digits)")
    p.add_argument("--confusion", type=float, default=0.03, help="mislabeled-encoding rate (digits)")
    p.add_argument("--asymmetric", action="store_true", help="judge comparisons with the left-advantage rule")
    p.add_argument("--left-factor", type=float, default=1.4)
    p.add_argument("--left-offset", type=float, default=0.1)
    p.add_argument("--items", type=int, help="item count (planted task)")
    p.add_argument("--matches", type=int, help="match count (planted task)")
    p.add_argument("--holdout-fraction", type=float, default=0.25)
    p.add_argument("--images", help="IDX image file (mnist task)")
    p.add_argument("--labels", help="IDX label file (mnist task)")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--prefix", help="artifact filename prefix; defaults to the task name")

    p = command("train", "train a rating model on a dataset CSV")
    p.add_argument("--data", required=True, help="training dataset CSV")
    p.add_argument("--test-data", help="optional test dataset CSV for final accuracy")
    p.add_argument("--mode", choices=("symmetric", "asym", "asym-noskip", "asym-noadj"),
                   default="symmetric")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--dims", type=_parse_dims, default=(512, 512),
                   help="estimator hidden layer sizes, e.g. 512,512")
    p.add_argument("--adjuster-dims", type=_parse_dims, default=(),
                   help="adjuster hidden layer sizes; empty means one linear layer")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--val-fraction", type=float, default=0.0)
    p.add_argument("--seed", type=int, help="training seed (required)")
    p.add_argument("--out", default="model.json", help="checkpoint path")
    p.add_argument("--report", help="per-epoch report CSV path")

    p = command("rate", "score items from a feature CSV with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True, help="CSV of feature vectors, one item per row")
    p.add_argument("--out", help="output CSV (item_id,rating); stdout when omitted")

    p = command("mle", "maximum-likelihood scores from a win-count table")
    p.add_argument("--matches", required=True, help="MatchMatrix CSV (host-side wins with --home)")
    p.add_argument("--home", help="visitor-side win MatchMatrix CSV; fits the hosting-advantage model")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=10_000)
    p.add_argument("--alpha", type=float, default=400.0)
    p.add_argument("--beta", type=float, default=1500.0)
    p.add_argument("--out", help="output CSV (item_index,pi,elo); stdout when omitted")

    p = command("elo", "fold a game history into incremental ratings")
    p.add_argument("--history", required=True, help="CSV of i,j,winner rows, one game each")
    p.add_argument("--items", type=int, help="item count; inferred from the history when omitted")
    p.add_argument("--k", type=float, default=32.0)
    p.add_argument("--alpha", type=float, default=400.0)
    p.add_argument("--beta", type=float, default=1500.0)
    p.add_argument("--out", help="output CSV (item_index,rating); stdout when omitted")

    p = command("eval", "evaluate a trained model or compare structures")
    p.add_argument("--kind", choices=("accuracy", "class-stats", "correlation", "ablation"),
                   required=True)
    p.add_argument("--model", help="model checkpoint (accuracy/class-stats/correlation)")
    p.add_argument("--data", help="dataset CSV (accuracy)")
    p.add_argument("--items", dest="items_csv", help="feature CSV (class-stats/correlation)")
    p.add_argument("--classes", help="per-record classes CSV (class-stats/ablation)")
    p.add_argument("--baseline", help="baseline CSV from `mle` (correlation)")
    p.add_argument("--train-data", help="training dataset CSV (ablation)")
    p.add_argument("--test-data", help="test dataset CSV (ablation)")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--dims", type=_parse_dims, default=(512, 512))
    p.add_argument("--adjuster-dims", type=_parse_dims, default=())
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="report path; stdout summary when omitted")

    return parser, commands


def _load_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}: line {line_no}: expected 'key = value'")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def _apply_config(parser: argparse.ArgumentParser, sub: argparse.ArgumentParser,
                  path: str, namespace: argparse.Namespace) -> None:
    """Pre-populate the namespace from a key=value file; unknown keys are
    usage errors and command-line flags still win."""
    actions = {act.dest: act for act in sub._actions if act.dest != "help"}
    try:
        values = _load_config_file(path)
    except OSError as exc:
        parser.error(str(exc))
    for key, text in values.items():
        dest = key.strip().replace("-", "_")
        action = actions.get(dest)
        if action is None:
            parser.error(f"unknown config key {key!r}")
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            value = _parse_bool(text)
        elif action.type is not None:
            try:
                value = action.type(text)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                parser.error(f"config key {key!r}: {exc}")
        else:
            value = text
        setattr(namespace, dest, value)


def _require(parser: argparse.ArgumentParser, args: argparse.Namespace, *names: str) -> None:
    for name in names:
        if getattr(args, name.replace("-", "_"), None) is None:
            parser.error(f"the following argument is required: --{name}")


def _log_config(args: argparse.Namespace) -> dict:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    printable = {k: (list(v) if isinstance(v, tuple) else v) for k, v in resolved.items()}
    print(f"btrating {args.command}: {json.dumps(printable, sort_keys=True)}", file=sys.stderr)
    return printable


def _write_manifest(path: Path, resolved: dict) -> None:
    nn.dump_json_atomic({"tool": "btrating", "config": resolved}, path)


def _write_rows_atomic(path, header, rows) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    os.replace(tmp, path)


def _emit_rows(out, header, rows) -> None:
    if out:
        _write_rows_atomic(out, header, rows)
    else:
        writer = csv.writer(sys.stdout)
        writer.writerow(header)
        writer.writerows(rows)


def _features_from_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    if not rows:
        raise ValueError(f"{path}: no feature rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"{path}: rows have inconsistent widths {sorted(widths)}")
    return np.asarray(rows, dtype=float)


def _history_from_csv(path) -> list[tuple[int, int, int]]:
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    events = []
    for line_no, row in enumerate(rows, start=1):
        if len(row) != 3:
            raise ValueError(f"{path}: line {line_no}: expected i,j,winner")
        events.append((int(row[0]), int(row[1]), int(row[2])))
    return events


def cmd_gen(parser, args) -> int:
    _require(parser, args, "seed")
    resolved = _log_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prefix = args.prefix or args.task

    if args.task == "digits":
        _require(parser, args, "n")
        cfg = datagen.DigitGenConfig(
            n_records=args.n, feature_dim=args.feature_dim or 16,
            noise_sigma=args.noise, confusion_rate=args.confusion, seed=args.seed,
            asymmetric=args.asymmetric, left_factor=args.left_factor,
            left_offset=args.left_offset, n_test=args.n_test,
        )
        data = datagen.gen_digit_records(cfg)
        datagen.write_dataset(out_dir / f"{prefix}_train.csv", data.train)
        datagen.write_dataset(out_dir / f"{prefix}_test.csv", data.test)
        datagen.write_classes(out_dir / f"{prefix}_train_classes.csv", data.train_digits)
        datagen.write_classes(out_dir / f"{prefix}_test_classes.csv", data.test_digits)
    elif args.task == "planted":
        _require(parser, args, "items", "matches")
        cfg = datagen.PlantedConfig(
            n_items=args.items, feature_dim=args.feature_dim or 8,
            n_matches=args.matches, holdout_fraction=args.holdout_fraction, seed=args.seed,
        )
        data = datagen.gen_planted_dataset(cfg)
        datagen.write_dataset(out_dir / f"{prefix}_train.csv", data.train)
        datagen.write_dataset(out_dir / f"{prefix}_test.csv", data.test)
        _write_rows_atomic(out_dir / f"{prefix}_items.csv", ["item_id", "true_rating", "holdout"],
                           ([idx, repr(float(r)), int(idx in set(data.holdout.tolist()))]
                            for idx, r in enumerate(data.true_ratings)))
        with open(out_dir / f"{prefix}_features.csv.tmp", "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in data.features:
                writer.writerow([repr(float(v)) for v in row])
        os.replace(out_dir / f"{prefix}_features.csv.tmp", out_dir / f"{prefix}_features.csv")
        _write_rows_atomic(out_dir / f"{prefix}_history.csv", ["i", "j", "winner"],
                           ([i, j, w] for i, j, w in data.match_history()))
        btcore.MatchMatrix.from_history(data.match_history(), n_items=cfg.n_items).write_csv(
            out_dir / f"{prefix}_matchmatrix.csv")
    else:  # mnist
        _require(parser, args, "images", "labels")
        feats, labels = datagen.load_idx(args.images, args.labels)
        rule = (args.left_factor, args.left_offset) if args.asymmetric else None
        data = datagen.pair_adjacent(feats, labels, asymmetric=rule, tie_seed=args.seed)
        datagen.write_dataset(out_dir / f"{prefix}_pairs.csv", data)
        nxt = np.roll(np.arange(labels.size), -1)
        datagen.write_classes(out_dir / f"{prefix}_pairs_classes.csv",
                              np.column_stack([labels, labels[nxt]]))

    _write_manifest(out_dir / f"{prefix}_manifest.json", resolved)
    return 0


def _structure_for_mode(mode: str) -> tuple[str, bool, bool]:
    """Map a CLI mode onto (model mode, use adjuster, use skip)."""
    return {
        "symmetric": ("symmetric", False, True),
        "asym-noadj": ("symmetric", False, True),
        "asym": ("asymmetric", True, True),
        "asym-noskip": ("asymmetric", True, False),
    }[mode]


def cmd_train(parser, args) -> int:
    _require(parser, args, "seed")
    resolved = _log_config(args)
    data = datagen.read_dataset(args.data)
    if len(data) == 0:
        raise ValueError(f"{args.data}: dataset is empty")
    test_data = datagen.read_dataset(args.test_data) if args.test_data else None
    mode, with_adjuster, use_skip = _structure_for_mode(args.mode)
    mdl = nbt.build_model(
        mode, data.feature_dim, arity=data.arity,
        env_dim=data.env_dim if with_adjuster else 0,
        estimator_hidden=args.dims, adjuster_hidden=args.adjuster_dims,
        seed=args.seed, use_skip=use_skip,
    )
    cfg = nbt.TrainConfig(epochs=args.epochs, batch_size=args.batch_size, seed=args.seed,
                          lr=args.lr, validation_fraction=args.val_fraction)
    mdl, report = nbt.train(mdl, data, cfg, test_set=test_data)
    nbt.save_model(args.out, mdl, seed=args.seed)
    if args.report:
        rows = [[epoch + 1, repr(loss), repr(acc)]
                for epoch, (loss, acc) in enumerate(zip(report.train_loss, report.val_accuracy))]
        _write_rows_atomic(args.report, ["epoch", "train_loss", "val_accuracy"], rows)
    _write_manifest(Path(args.out).with_suffix(".manifest.json"), resolved)
    if report.test_accuracy is not None:
        print(f"test accuracy: {report.test_accuracy:.4f}")
    return 0


def cmd_rate(parser, args) -> int:
    _log_config(args)
    mdl, _, _ = nbt.load_model(args.model)
    feats = _features_from_csv(args.features)
    ratings = nbt.rate_items(mdl, feats)
    _emit_rows(args.out, ["item_id", "rating"],
               ([idx, repr(float(r))] for idx, r in enumerate(ratings)))
    return 0


def cmd_mle(parser, args) -> int:
    _log_config(args)
    cfg = btcore.EloConfig(alpha=args.alpha, beta=args.beta)
    host_wins = btcore.MatchMatrix.read_csv(args.matches)
    if args.home:
        visitor_wins = btcore.MatchMatrix.read_csv(args.home)
        result = btcore.mm_mle_home(host_wins, visitor_wins, tol=args.tol, max_iter=args.max_iter)
        print(f"hosting advantage eta: {result.advantage.eta:.6f}")
        scores = result.scores
        converged = result.converged
    else:
        result = btcore.mm_mle(host_wins, tol=args.tol, max_iter=args.max_iter)
        scores = result.scores
        converged = result.converged
    if not converged:
        print("warning: solver hit max-iter before reaching tol (result unconverged)", file=sys.stderr)
    _emit_rows(args.out, ["item_index", "pi", "elo"],
               ([idx, repr(float(p)), repr(btcore.pi_to_elo(float(p), cfg))]
                for idx, p in enumerate(scores.pi)))
    return 0


def cmd_elo(parser, args) -> int:
    _log_config(args)
    cfg = btcore.EloConfig(alpha=args.alpha, beta=args.beta, k=args.k)
    history = _history_from_csv(args.history)
    ratings = btcore.elo_rate_history(history, cfg, n_items=args.items)
    _emit_rows(args.out, ["item_index", "rating"],
               ([idx, repr(float(r))] for idx, r in enumerate(ratings)))
    return 0


def cmd_eval(parser, args) -> int:
    _log_config(args)
    if args.kind == "accuracy":
        _require(parser, args, "model", "data")
        mdl, _, _ = nbt.load_model(args.model)
        value = evaluate.accuracy(mdl, datagen.read_dataset(args.data))
        print(f"accuracy: {value:.6f}")
        return 0
    if args.kind == "class-stats":
        _require(parser, args, "model", "data", "classes")
        mdl, _, _ = nbt.load_model(args.model)
        data = datagen.read_dataset(args.data)
        classes = datagen.read_classes(args.classes)
        if classes.shape[0] != len(data) or classes.shape[1] != data.arity:
            raise ValueError("classes table does not match the dataset shape")
        report = evaluate.class_stats(mdl, data.items.reshape(-1, data.feature_dim),
                                      classes.reshape(-1))
    elif args.kind == "correlation":
        _require(parser, args, "model", "items-csv", "baseline")
        mdl, _, _ = nbt.load_model(args.model)
        feats = _features_from_csv(args.items_csv)
        with open(args.baseline, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][:1] != ["item_index"]:
            raise ValueError(f"{args.baseline}: expected a CSV from `btrating mle`")
        baseline = np.array([float(row[2]) for row in rows[1:]])
        report = evaluate.correlation(mdl, feats, baseline)
        print(f"pearson: {report.pearson:.4f}  spearman: {report.spearman:.4f}")
    else:  # ablation
        _require(parser, args, "train-data", "test-data", "classes")
        train_set = datagen.read_dataset(args.train_data)
        test_set = datagen.read_dataset(args.test_data)
        classes = datagen.read_classes(args.classes)
        cfg = nbt.TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                              seed=args.seed, lr=args.lr)
        report = evaluate.ablation_asymmetric(train_set, test_set, classes.reshape(-1), cfg,
                                              estimator_hidden=args.dims,
                                              adjuster_hidden=args.adjuster_dims)
        for name, acc in report.accuracies.items():
            print(f"{name}: accuracy {acc:.4f}")
    if args.out:
        evaluate.export_report(report, args.out)
    return 0


def main(argv=None) -> int:
    parser, commands = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    # First pass only to locate --config; flags then override its values.
    pre = parser.parse_args(argv)
    if pre.config:
        namespace = argparse.Namespace()
        _apply_config(parser, commands[pre.command], pre.config, namespace)
        args = parser.parse_args(argv, namespace=namespace)
    else:
        args = pre
    handler = {
        "gen": cmd_gen,
        "train": cmd_train,
        "rate": cmd_rate,
        "mle": cmd_mle,
        "elo": cmd_elo,
        "eval": cmd_eval,
    }[args.command]
    try:
        return handler(parser, args)
    except btcore.FordError as exc:
        s, rest = exc.witness
        print(f"error: {exc}", file=sys.stderr)
        print(f"witness partition: {list(s)} | {list(rest)}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
