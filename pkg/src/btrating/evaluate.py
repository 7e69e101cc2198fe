"""Metrics and experiment harness: accuracy, per-class rating statistics,
classical-MLE baselines and the asymmetric structure comparison."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from . import btcore, model as nbt
from .model import Dataset, RatingModel, TrainConfig, build_model, rate_items, train

ABLATION_STRUCTURES = ("no_adjuster", "adjuster_no_skip", "full")


def accuracy(mdl: RatingModel, dataset: Dataset) -> float:
    """Fraction of records whose most probable item is the recorded winner.

    Probability ties resolve to the lowest item index, so reruns agree.
    """
    data = nbt.as_dataset(dataset)
    if len(data) == 0:
        raise ValueError("accuracy of an empty dataset is undefined")
    probs = nbt.predict_probs_batch(mdl, data)
    return float(np.mean(np.argmax(probs, axis=1) == data.winners))


@dataclass(frozen=True)
class ClassStats:
    """Mean/std of item ratings per true class, plus raw scatter pairs."""

    classes: np.ndarray   # sorted unique class keys
    means: np.ndarray
    stds: np.ndarray
    scatter: np.ndarray   # [n_items, 2] rows of (class, rating)

    def mean(self, key) -> float:
        return float(self.means[self._index(key)])

    def std(self, key) -> float:
        return float(self.stds[self._index(key)])

    def _index(self, key) -> int:
        hits = np.nonzero(self.classes == key)[0]
        if hits.size == 0:
            raise KeyError(f"unknown class {key!r}")
        return int(hits[0])


def class_stats(mdl: RatingModel, items: np.ndarray, classes: np.ndarray) -> ClassStats:
    """Exact sample mean and (population) std of ratings within each class."""
    items = np.asarray(items, dtype=float)
    keys = np.asarray(classes)
    if items.ndim != 2 or items.shape[0] == 0:
        raise ValueError("need a non-empty [n_items, feature_dim] table")
    if keys.shape != (items.shape[0],):
        raise ValueError("classes must be one per item")
    ratings = rate_items(mdl, items)
    uniq = np.unique(keys)
    means = np.array([ratings[keys == k].mean() for k in uniq])
    stds = np.array([ratings[keys == k].std() for k in uniq])
    scatter = np.column_stack([keys.astype(float), ratings])
    return ClassStats(classes=uniq, means=means, stds=stds, scatter=scatter)


def mle_baseline(
    matches: btcore.MatchMatrix,
    elo_cfg: btcore.EloConfig = btcore.EloConfig(),
    tol: float = 1e-8,
    max_iter: int = 10_000,
) -> np.ndarray:
    """Per-item Elo numbers from the classical MLE over a match history."""
    result = btcore.mm_mle(matches, tol=tol, max_iter=max_iter)
    return np.array([btcore.pi_to_elo(float(p), elo_cfg) for p in result.scores.pi])


@dataclass(frozen=True)
class CorrelationReport:
    """Agreement between learned ratings and a baseline on held-out items."""

    pearson: float
    spearman: float
    pairs: np.ndarray  # [n, 2] rows of (learned rating, baseline value)


def correlation(mdl: RatingModel, holdout_features: np.ndarray,
                baseline: np.ndarray) -> CorrelationReport:
    """Pearson and Spearman between learned ratings and baseline values.

    Degenerate inputs (fewer than three items, or zero variance on either
    side) raise instead of yielding NaN, so misconfigured runs surface.
    """
    feats = np.asarray(holdout_features, dtype=float)
    base = np.asarray(baseline, dtype=float)
    if feats.ndim != 2 or feats.shape[0] < 3:
        raise ValueError("need at least three held-out items")
    if base.shape != (feats.shape[0],):
        raise ValueError("baseline must be one value per held-out item")
    learned = rate_items(mdl, feats)
    if np.ptp(learned) == 0 or np.ptp(base) == 0:
        raise ValueError("correlation undefined: one side has no variance")
    pearson = float(np.corrcoef(learned, base)[0, 1])
    spearman = float(stats.spearmanr(learned, base).statistic)
    return CorrelationReport(pearson=pearson, spearman=spearman,
                             pairs=np.column_stack([learned, base]))


@dataclass(frozen=True)
class AblationReport:
    """Accuracy and class-mean curves for the three asymmetric structures."""

    accuracies: dict[str, float]
    class_curves: dict[str, ClassStats]


def ablation_asymmetric(
    train_set: Dataset,
    test_set: Dataset,
    test_item_classes: np.ndarray,
    cfg: TrainConfig,
    estimator_hidden: Sequence[int] = (512, 512),
    adjuster_hidden: Sequence[int] = (),
) -> AblationReport:
    """Train the plain, no-skip, and full structures on identical data.

    All three runs share the seed and budget from ``cfg``; the report holds
    test accuracy and per-class mean ratings for each structure.
    """
    classes = np.asarray(test_item_classes)
    flat_items = test_set.items.reshape(-1, test_set.feature_dim)
    if classes.shape[0] != flat_items.shape[0]:
        raise ValueError("need one class per test item (records are flattened)")
    accuracies: dict[str, float] = {}
    curves: dict[str, ClassStats] = {}
    for structure in ABLATION_STRUCTURES:
        if structure == "no_adjuster":
            mdl = build_model("symmetric", train_set.feature_dim, arity=train_set.arity,
                              estimator_hidden=estimator_hidden, seed=cfg.seed)
        else:
            mdl = build_model("asymmetric", train_set.feature_dim, arity=train_set.arity,
                              env_dim=train_set.env_dim, estimator_hidden=estimator_hidden,
                              adjuster_hidden=adjuster_hidden, seed=cfg.seed,
                              use_skip=(structure == "full"))
        mdl, report = train(mdl, train_set, cfg, test_set=test_set)
        accuracies[structure] = report.test_accuracy
        curves[structure] = class_stats(mdl, flat_items, classes)
    return AblationReport(accuracies=accuracies, class_curves=curves)


def _write_csv_atomic(path, header: list, rows) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
    os.replace(tmp, path)


def export_report(report, path) -> None:
    """Write a report as CSV plus a human-readable ``.txt`` summary.

    Class statistics also emit a ``*_scatter.csv`` of raw (class, rating)
    pairs for external plotting; ablations emit one class-curve CSV per
    structure. Numbers round-trip at full precision.
    """
    path = Path(path)
    if isinstance(report, ClassStats):
        _write_csv_atomic(path, ["class", "mean", "std"],
                          ([repr(float(c)), repr(float(m)), repr(float(s))]
                           for c, m, s in zip(report.classes, report.means, report.stds)))
        scatter_path = path.with_name(path.stem + "_scatter.csv")
        _write_csv_atomic(scatter_path, ["class", "rating"],
                          ([repr(float(c)), repr(float(r))] for c, r in report.scatter))
        lines = ["class rating summary", "class mean std"]
        lines += [f"{c:g} {m:.4f} {s:.4f}"
                  for c, m, s in zip(report.classes, report.means, report.stds)]
        lines.append(f"n_classes {report.classes.size}")
    elif isinstance(report, CorrelationReport):
        _write_csv_atomic(path, ["item_id", "learned_rating", "baseline_elo"],
                          ([idx, repr(float(lr)), repr(float(bl))]
                           for idx, (lr, bl) in enumerate(report.pairs)))
        lines = [
            "holdout rating correlation",
            f"pearson {report.pearson:.6f}",
            f"spearman {report.spearman:.6f}",
            f"n_items {report.pairs.shape[0]}",
        ]
    elif isinstance(report, AblationReport):
        _write_csv_atomic(path, ["structure", "accuracy"],
                          ([name, repr(float(acc))] for name, acc in report.accuracies.items()))
        lines = ["asymmetric structure comparison"]
        for name, acc in report.accuracies.items():
            curve_path = path.with_name(f"{path.stem}_{name}_classes.csv")
            export_report(report.class_curves[name], curve_path)
            lines.append(f"{name} accuracy {acc:.4f}")
        lines.append(f"n_structures {len(report.accuracies)}")
    else:
        raise TypeError(f"cannot export report of type {type(report).__name__}")
    summary_path = path.with_suffix(".txt")
    tmp = f"{summary_path}.tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, summary_path)
