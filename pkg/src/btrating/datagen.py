"""Deterministic synthetic comparison datasets and real-data loaders.

Two generator families: noisy digit encodings compared pairwise (optionally
under a left-side advantage rule), and planted-rating items whose match
outcomes are sampled from the paired-comparison model. Plus an IDX image
loader, adjacent pairing of labeled items, and dataset CSV round-tripping.
"""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import Dataset

N_DIGITS = 10

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


def split_rngs(seed: int, count: int) -> list[np.random.Generator]:
    """Independent child generators derived from one seed (fixed mixing)."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


@dataclass(frozen=True)
class DigitGenConfig:
    """Synthetic digit-comparison benchmark knobs.

    Each item encodes a digit 0-9 as a one-hot block plus Gaussian noise;
    with probability ``confusion_rate`` the encoding belongs to a different
    digit than the one the comparison is judged by. ``n_test`` defaults to
    a sixth of ``n_records``.
    """

    n_records: int
    feature_dim: int = 16
    noise_sigma: float = 0.1
    confusion_rate: float = 0.03
    seed: int = 0
    asymmetric: bool = False
    left_factor: float = 1.4
    left_offset: float = 0.1
    n_test: Optional[int] = None

    def __post_init__(self):
        if self.n_records < 1:
            raise ValueError("need at least one record")
        if self.feature_dim < N_DIGITS:
            raise ValueError(f"feature_dim must be at least {N_DIGITS}")
        if self.noise_sigma < 0:
            raise ValueError("noise must be nonnegative")
        if not 0 <= self.confusion_rate < 1:
            raise ValueError("confusion rate must lie in [0, 1)")
        if self.n_test is not None and self.n_test < 1:
            raise ValueError("test split needs at least one record")

    @property
    def test_records(self) -> int:
        return self.n_test if self.n_test is not None else max(1, self.n_records // 6)


@dataclass
class DigitData:
    """Train/test splits plus the true digit behind every compared item."""

    train: Dataset
    test: Dataset
    train_digits: np.ndarray  # [n, 2]
    test_digits: np.ndarray


def encode_digits(digits: np.ndarray, feature_dim: int, noise_sigma: float,
                  rng: np.random.Generator) -> np.ndarray:
    """One-hot digit block embedded in ``feature_dim`` dims, plus noise."""
    shape = digits.shape
    flat = digits.reshape(-1)
    feats = np.zeros((flat.size, feature_dim))
    feats[np.arange(flat.size), flat] = 1.0
    feats += rng.normal(0.0, noise_sigma, feats.shape)
    return feats.reshape(*shape, feature_dim)


def asymmetric_left_wins(d_left, d_right, factor: float, offset: float):
    """Advantage rule: the left side wins when factor*left + offset > right."""
    return factor * np.asarray(d_left) + offset > np.asarray(d_right)


def _gen_digit_split(n: int, cfg: DigitGenConfig, rng: np.random.Generator):
    digits = rng.integers(0, N_DIGITS, size=(n, 2))
    confused = rng.random((n, 2)) < cfg.confusion_rate
    # A confused item is encoded as a nearby digit (one or two steps, edges
    # reflected inward): look-alike mistakes must stay consistent with a
    # single rating scale, which same-rate flips across arbitrary digit
    # distances are not.
    step = rng.integers(1, 3, size=(n, 2)) * (2 * rng.integers(0, 2, size=(n, 2)) - 1)
    neighbor = digits + step
    neighbor = np.where(neighbor < 0, -neighbor, neighbor)
    neighbor = np.where(neighbor >= N_DIGITS, 2 * (N_DIGITS - 1) - neighbor, neighbor)
    encoded = np.where(confused, neighbor, digits)
    items = encode_digits(encoded, cfg.feature_dim, cfg.noise_sigma, rng)
    coins = rng.integers(0, 2, size=n)
    if cfg.asymmetric:
        left = asymmetric_left_wins(digits[:, 0], digits[:, 1], cfg.left_factor, cfg.left_offset)
        winners = np.where(left, 0, 1)
    else:
        winners = np.where(digits[:, 0] > digits[:, 1], 0,
                           np.where(digits[:, 1] > digits[:, 0], 1, coins))
    return Dataset(items, winners.astype(np.int64)), digits


def gen_digit_records(cfg: DigitGenConfig) -> DigitData:
    """Generate the digit benchmark; identical configs give identical data."""
    train_rng, test_rng = split_rngs(cfg.seed, 2)
    train, train_digits = _gen_digit_split(cfg.n_records, cfg, train_rng)
    test, test_digits = _gen_digit_split(cfg.test_records, cfg, test_rng)
    return DigitData(train=train, test=test, train_digits=train_digits, test_digits=test_digits)


@dataclass(frozen=True)
class PlantedConfig:
    """Planted-rating recovery benchmark knobs.

    ``rating_map`` is the affine map (coefficients, intercept) from features
    to the true rating; when omitted it is drawn from the seed with unit-norm
    coefficients scaled to ``rating_spread``.
    """

    n_items: int
    feature_dim: int = 8
    n_matches: int = 50_000
    rating_map: Optional[tuple[np.ndarray, float]] = None
    holdout_fraction: float = 0.25
    seed: int = 0
    rating_spread: float = 1.25

    def __post_init__(self):
        if self.n_items < 4:
            raise ValueError("need at least four items")
        if not 0 < self.holdout_fraction < 1:
            raise ValueError("holdout fraction must lie in (0, 1)")
        if self.n_matches < 1:
            raise ValueError("need at least one match")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be positive")


@dataclass
class PlantedData:
    """Items, their true ratings, the raw match log and the item-holdout split.

    ``matches`` rows are ``(i, j, k)`` with ``k`` the winner's position in the
    pair (0 for i, 1 for j). ``train`` holds only matches between retained
    items; ``test`` holds every match touching a held-out item.
    """

    features: np.ndarray       # [n_items, D]
    true_ratings: np.ndarray   # [n_items]
    holdout: np.ndarray        # held-out item indices
    matches: np.ndarray        # [n_matches, 3]
    train: Dataset
    test: Dataset

    def match_history(self):
        """Matches as ``(i, j, winner_item)`` triples."""
        i, j, k = self.matches.T
        return list(zip(i.tolist(), j.tolist(), np.where(k == 0, i, j).tolist()))


def _sigmoid(x):
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def gen_planted_dataset(cfg: PlantedConfig) -> PlantedData:
    """Sample items with known ratings and matches drawn from those ratings."""
    feat_rng, map_rng, match_rng, hold_rng = split_rngs(cfg.seed, 4)
    features = feat_rng.normal(0.0, 1.0, (cfg.n_items, cfg.feature_dim))
    if cfg.rating_map is None:
        coef = map_rng.normal(0.0, 1.0, cfg.feature_dim)
        coef *= cfg.rating_spread / np.linalg.norm(coef)
        intercept = 0.0
    else:
        coef, intercept = np.asarray(cfg.rating_map[0], dtype=float), float(cfg.rating_map[1])
        if coef.shape != (cfg.feature_dim,):
            raise ValueError("rating-map coefficients must match feature_dim")
    true_ratings = features @ coef + intercept

    i = match_rng.integers(0, cfg.n_items, cfg.n_matches)
    j = (i + 1 + match_rng.integers(0, cfg.n_items - 1, cfg.n_matches)) % cfg.n_items
    p_first = _sigmoid(true_ratings[i] - true_ratings[j])
    k = (match_rng.random(cfg.n_matches) >= p_first).astype(np.int64)
    matches = np.column_stack([i, j, k])

    n_hold = int(round(cfg.holdout_fraction * cfg.n_items))
    n_hold = min(max(n_hold, 1), cfg.n_items - 2)
    holdout = np.sort(hold_rng.permutation(cfg.n_items)[:n_hold])
    held = np.zeros(cfg.n_items, dtype=bool)
    held[holdout] = True
    in_train = ~(held[i] | held[j])

    items = np.stack([features[i], features[j]], axis=1)
    train = Dataset(items[in_train], k[in_train])
    test = Dataset(items[~in_train], k[~in_train])
    return PlantedData(
        features=features,
        true_ratings=true_ratings,
        holdout=holdout,
        matches=matches,
        train=train,
        test=test,
    )


def _read_exact(fh, count: int, path, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise ValueError(f"{path}: truncated file while reading {what}")
    return data


def load_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Load big-endian IDX image/label containers as unit-scaled vectors."""
    with open(images_path, "rb") as fh:
        magic, = struct.unpack(">i", _read_exact(fh, 4, images_path, "magic"))
        if magic != IDX_IMAGE_MAGIC:
            raise ValueError(f"{images_path}: bad magic {magic:#010x}, expected image container")
        count, rows, cols = struct.unpack(">iii", _read_exact(fh, 12, images_path, "header"))
        pixels = _read_exact(fh, count * rows * cols, images_path, "pixel data")
    images = np.frombuffer(pixels, dtype=np.uint8).reshape(count, rows * cols)
    with open(labels_path, "rb") as fh:
        magic, = struct.unpack(">i", _read_exact(fh, 4, labels_path, "magic"))
        if magic != IDX_LABEL_MAGIC:
            raise ValueError(f"{labels_path}: bad magic {magic:#010x}, expected label container")
        label_count, = struct.unpack(">i", _read_exact(fh, 4, labels_path, "header"))
        raw = _read_exact(fh, label_count, labels_path, "label data")
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
    if label_count != count:
        raise ValueError(f"label count {label_count} does not match image count {count}")
    return images.astype(float) / 255.0, labels


def pair_adjacent(
    items: np.ndarray,
    labels: np.ndarray,
    asymmetric: Optional[tuple[float, float]] = None,
    tie_seed: int = 0,
) -> Dataset:
    """Pair each item with its successor, cyclically, judging by label.

    Every item appears exactly twice: once on the left, once on the right.
    ``asymmetric`` is an optional ``(factor, offset)`` advantage rule for the
    left side; without it, label ties are broken by a seeded coin.
    """
    items = np.asarray(items, dtype=float)
    labels = np.asarray(labels)
    if items.ndim != 2 or items.shape[0] < 2:
        raise ValueError("need at least two items to pair")
    if labels.shape != (items.shape[0],):
        raise ValueError("labels must be one per item")
    n = items.shape[0]
    nxt = np.roll(np.arange(n), -1)
    paired = np.stack([items, items[nxt]], axis=1)
    left, right = labels, labels[nxt]
    if asymmetric is not None:
        factor, offset = asymmetric
        winners = np.where(asymmetric_left_wins(left, right, factor, offset), 0, 1)
    else:
        coins = np.random.default_rng(tie_seed).integers(0, 2, size=n)
        winners = np.where(left > right, 0, np.where(right > left, 1, coins))
    return Dataset(paired, winners.astype(np.int64))


def write_dataset(path, dataset: Dataset) -> None:
    """Write the dataset CSV; floats are emitted with full round-trip precision."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["arity", dataset.arity, "feature_dim", dataset.feature_dim,
                         "env_dim", dataset.env_dim])
        for idx in range(len(dataset)):
            row = [repr(v) for v in dataset.items[idx].reshape(-1).tolist()]
            if dataset.env is not None:
                row += [repr(v) for v in dataset.env[idx].tolist()]
            row.append(int(dataset.winners[idx]))
            writer.writerow(row)
    os.replace(tmp, path)


def read_dataset(path) -> Dataset:
    """Read a dataset CSV; an empty file is an empty dataset, not an error."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return Dataset(np.zeros((0, 2, 0)), np.zeros(0, dtype=np.int64))
        if len(header) != 6 or header[0] != "arity" or header[2] != "feature_dim" or header[4] != "env_dim":
            raise ValueError(f"{path}: malformed header {header!r}")
        arity, width, env_dim = int(header[1]), int(header[3]), int(header[5])
        expected = arity * width + env_dim + 1
        item_rows, env_rows, winners = [], [], []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != expected:
                raise ValueError(f"{path}: line {line_no}: expected {expected} fields, got {len(row)}")
            try:
                values = [float(v) for v in row[:-1]]
                winner = int(row[-1])
            except ValueError as exc:
                raise ValueError(f"{path}: line {line_no}: {exc}") from None
            if not 0 <= winner < arity:
                raise ValueError(f"{path}: line {line_no}: winner index {winner} out of range")
            item_rows.append(values[:arity * width])
            env_rows.append(values[arity * width:])
            winners.append(winner)
    n = len(winners)
    items = np.asarray(item_rows, dtype=float).reshape(n, arity, width)
    env = np.asarray(env_rows, dtype=float).reshape(n, env_dim) if env_dim else None
    return Dataset(items, np.asarray(winners, dtype=np.int64), env)


def write_classes(path, classes: np.ndarray) -> None:
    """Sidecar CSV of the per-record item classes (one row per record)."""
    arr = np.asarray(classes)
    if arr.ndim != 2:
        raise ValueError("classes must have shape [n_records, arity]")
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in arr:
            writer.writerow([int(v) for v in row])
    os.replace(tmp, path)


def read_classes(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[int(v) for v in row] for row in csv.reader(fh) if row]
    return np.asarray(rows, dtype=np.int64)
