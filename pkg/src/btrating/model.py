"""Shared-weight neural rating model trained on comparison outcomes.

One estimator network scores every compared item; a softmax over the scores
gives the paired-comparison win distribution. For comparisons staged under
unfair conditions an adjuster network, bypassed by a skip connection, bends
the fair distribution toward the observed outcomes so the estimator itself
can stay fair.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import nn

SYMMETRIC = "symmetric"
ASYMMETRIC = "asymmetric"
MODES = (SYMMETRIC, ASYMMETRIC)

_EVAL_CHUNK = 4096  # rows per forward pass when sweeping a whole dataset


@dataclass
class ComparisonRecord:
    """One comparison: M item feature vectors, a one-hot winner, optional
    environment covariates."""

    items: np.ndarray            # [M, D]
    winner: np.ndarray           # one-hot [M]
    env: Optional[np.ndarray] = None

    def __post_init__(self):
        self.items = np.asarray(self.items, dtype=float)
        self.winner = np.asarray(self.winner, dtype=float)
        if self.items.ndim != 2 or self.items.shape[0] < 2:
            raise ValueError("a record needs at least two item vectors of equal length")
        if self.winner.shape != (self.items.shape[0],):
            raise ValueError("winner vector length must equal the number of items")
        if not np.all((self.winner == 0.0) | (self.winner == 1.0)) or self.winner.sum() != 1.0:
            raise ValueError("winner must be one-hot")
        if self.env is not None:
            self.env = np.asarray(self.env, dtype=float)
            if self.env.ndim != 1:
                raise ValueError("environment vector must be one-dimensional")

    @property
    def arity(self) -> int:
        return int(self.items.shape[0])

    @property
    def winner_index(self) -> int:
        return int(np.argmax(self.winner))


class Dataset:
    """Stacked comparison records with homogeneous arity and feature width."""

    def __init__(self, items: np.ndarray, winners: np.ndarray, env: Optional[np.ndarray] = None):
        items = np.asarray(items, dtype=float)
        winners = np.asarray(winners, dtype=np.int64)
        if items.ndim != 3:
            raise ValueError("items must have shape [n_records, arity, feature_dim]")
        if winners.shape != (items.shape[0],):
            raise ValueError("winner indices must be one per record")
        if items.shape[0] > 0:
            if items.shape[1] < 2:
                raise ValueError("records need at least two items")
            if np.any(winners < 0) or np.any(winners >= items.shape[1]):
                raise ValueError("winner index out of range")
        if env is not None:
            env = np.asarray(env, dtype=float)
            if env.ndim != 2 or env.shape[0] != items.shape[0]:
                raise ValueError("environment rows must be one per record")
            if env.shape[1] == 0:
                env = None
        self.items = items
        self.winners = winners
        self.env = env

    @property
    def arity(self) -> int:
        return int(self.items.shape[1])

    @property
    def feature_dim(self) -> int:
        return int(self.items.shape[2])

    @property
    def env_dim(self) -> int:
        return 0 if self.env is None else int(self.env.shape[1])

    def __len__(self) -> int:
        return int(self.items.shape[0])

    def __getitem__(self, idx: int) -> ComparisonRecord:
        one_hot = np.zeros(self.arity)
        one_hot[self.winners[idx]] = 1.0
        env = None if self.env is None else self.env[idx]
        return ComparisonRecord(self.items[idx], one_hot, env)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        if self.env is None or other.env is None:
            env_equal = self.env is None and other.env is None
        else:
            env_equal = np.array_equal(self.env, other.env)
        return (
            np.array_equal(self.items, other.items)
            and np.array_equal(self.winners, other.winners)
            and env_equal
        )

    @classmethod
    def from_records(cls, records: Sequence[ComparisonRecord]) -> "Dataset":
        records = list(records)
        if not records:
            return cls(np.zeros((0, 2, 0)), np.zeros(0, dtype=np.int64))
        arity = records[0].arity
        width = records[0].items.shape[1]
        env_dim = 0 if records[0].env is None else records[0].env.size
        for k, rec in enumerate(records):
            rec_env = 0 if rec.env is None else rec.env.size
            if rec.arity != arity or rec.items.shape[1] != width or rec_env != env_dim:
                raise ValueError(f"record {k} has mismatched shapes; dataset must be homogeneous")
        items = np.stack([rec.items for rec in records])
        winners = np.array([rec.winner_index for rec in records], dtype=np.int64)
        env = np.stack([rec.env for rec in records]) if env_dim else None
        return cls(items, winners, env)

    def subset(self, idx) -> "Dataset":
        env = None if self.env is None else self.env[idx]
        return Dataset(self.items[idx], self.winners[idx], env)


def as_dataset(data: Union[Dataset, Sequence[ComparisonRecord]]) -> Dataset:
    return data if isinstance(data, Dataset) else Dataset.from_records(data)


@dataclass
class RatingModel:
    """Rating estimator plus, in asymmetric mode, the adjuster around it."""

    estimator: nn.DenseNet
    mode: str = SYMMETRIC
    adjuster: Optional[nn.DenseNet] = None
    arity: int = 2
    env_dim: int = 0
    use_skip: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.estimator.output_dim != 1:
            raise ValueError("estimator must emit a single rating")
        if self.arity < 2:
            raise ValueError("comparisons involve at least two items")
        if self.mode == SYMMETRIC:
            if self.adjuster is not None:
                raise ValueError("symmetric mode has no adjuster")
            if self.env_dim != 0:
                raise ValueError("symmetric mode takes no environment vector")
        else:
            if self.adjuster is None:
                raise ValueError("asymmetric mode requires an adjuster")
            if self.adjuster.input_dim != self.arity + self.env_dim:
                raise ValueError("adjuster input must be the win distribution plus environment")
            if self.adjuster.output_dim != self.arity:
                raise ValueError("adjuster output width must equal the comparison arity")


def build_model(
    mode: str,
    feature_dim: int,
    arity: int = 2,
    env_dim: int = 0,
    estimator_hidden: Sequence[int] = (512, 512),
    adjuster_hidden: Sequence[int] = (),
    seed: int = 0,
    use_skip: bool = True,
) -> RatingModel:
    """Construct a fresh model; the adjuster's last layer starts at zero.

    Zero-initializing the adjuster output makes training start from the fair
    model, so the estimator only drifts when the data demand it.
    """
    est_seed, adj_seed = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(2)]
    estimator = nn.init_net([feature_dim, *estimator_hidden, 1], est_seed)
    if mode == SYMMETRIC:
        return RatingModel(estimator, mode=SYMMETRIC, arity=arity)
    adjuster = nn.init_net([arity + env_dim, *adjuster_hidden, arity], adj_seed)
    adjuster.layers[-1].w[:] = 0.0
    adjuster.layers[-1].b[:] = 0.0
    return RatingModel(
        estimator,
        mode=ASYMMETRIC,
        adjuster=adjuster,
        arity=arity,
        env_dim=env_dim,
        use_skip=use_skip,
    )


def _check_record(model: RatingModel, record: ComparisonRecord) -> None:
    if record.arity != model.arity:
        raise ValueError(f"record has {record.arity} items, model expects {model.arity}")
    if record.items.shape[1] != model.estimator.input_dim:
        raise ValueError("record feature width does not match the estimator input")
    env_len = 0 if record.env is None else record.env.size
    if env_len != model.env_dim:
        raise ValueError(f"record environment width {env_len} does not match model ({model.env_dim})")


def rate_item(model: RatingModel, x) -> float:
    """Standalone rating of one item; the value all downstream analysis uses."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1 or arr.size != model.estimator.input_dim:
        raise ValueError("feature vector width does not match the estimator input")
    out, _ = nn.forward(model.estimator, arr)
    return float(out[0])


def rate_items(model: RatingModel, features) -> np.ndarray:
    """Batched ratings for a [n, D] feature table."""
    arr = np.asarray(features, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != model.estimator.input_dim:
        raise ValueError("feature table width does not match the estimator input")
    ratings = np.empty(arr.shape[0])
    for start in range(0, arr.shape[0], _EVAL_CHUNK):
        chunk = arr[start:start + _EVAL_CHUNK]
        out, _ = nn.forward(model.estimator, chunk)
        ratings[start:start + _EVAL_CHUNK] = out[:, 0]
    return ratings


def predict_ratings(model: RatingModel, record: ComparisonRecord) -> np.ndarray:
    """Rating of each compared item, one shared estimator applied per item.

    Items are scored one at a time so permuting a record permutes the output
    bit-for-bit.
    """
    _check_record(model, record)
    return np.array([rate_item(model, item) for item in record.items])


def predict_probs(model: RatingModel, record: ComparisonRecord) -> np.ndarray:
    """Win distribution over the record's items.

    Symmetric mode is the softmax of the ratings. Asymmetric mode feeds that
    fair distribution (and any environment vector) through the adjuster and,
    with the skip connection, renormalizes adjuster output plus fair input.
    """
    ratings = predict_ratings(model, record)
    fair = nn.softmax(ratings)
    if model.mode == SYMMETRIC:
        return fair
    adj_in = fair if model.env_dim == 0 else np.concatenate([fair, record.env])
    adjusted, _ = nn.forward(model.adjuster, adj_in)
    return nn.softmax(adjusted + fair if model.use_skip else adjusted)


def win_prob_from_ratings(r_i: float, r_j: float) -> float:
    """Fair head-to-head win probability implied by two ratings."""
    gap = r_i - r_j
    if gap >= 0:
        return 1.0 / (1.0 + math.exp(-gap))
    e = math.exp(gap)
    return e / (1.0 + e)


def _forward_batch(model: RatingModel, items: np.ndarray, env: Optional[np.ndarray]):
    """Shared batched forward pass; returns probabilities and backprop caches."""
    n, arity, width = items.shape
    flat = items.reshape(n * arity, width)
    ratings_flat, est_trace = nn.forward(model.estimator, flat)
    ratings = ratings_flat.reshape(n, arity)
    fair = nn.softmax(ratings)
    if model.mode == SYMMETRIC:
        return fair, (est_trace, fair, None, None)
    adj_in = fair if model.env_dim == 0 else np.hstack([fair, env])
    adjusted, adj_trace = nn.forward(model.adjuster, adj_in)
    probs = nn.softmax(adjusted + fair if model.use_skip else adjusted)
    return probs, (est_trace, fair, adj_trace, probs)


def predict_probs_batch(model: RatingModel, dataset: Dataset) -> np.ndarray:
    """Win distributions for every record of a dataset, computed in chunks."""
    if dataset.arity != model.arity or dataset.feature_dim != model.estimator.input_dim:
        raise ValueError("dataset shapes do not match the model")
    if dataset.env_dim != model.env_dim:
        raise ValueError("dataset environment width does not match the model")
    out = np.empty((len(dataset), model.arity))
    for start in range(0, len(dataset), _EVAL_CHUNK):
        stop = start + _EVAL_CHUNK
        env = None if dataset.env is None else dataset.env[start:stop]
        probs, _ = _forward_batch(model, dataset.items[start:stop], env)
        out[start:stop] = probs
    return out


def _batch_step(model: RatingModel, items: np.ndarray, winners: np.ndarray,
                env: Optional[np.ndarray]):
    """Loss and parameter gradients (mean over the batch) for one mini-batch."""
    n, arity, width = items.shape
    probs, (est_trace, fair, adj_trace, _) = _forward_batch(model, items, env)
    rows = np.arange(n)
    loss = float(np.mean(-np.log(probs[rows, winners])))
    one_hot = np.zeros((n, arity))
    one_hot[rows, winners] = 1.0
    g_logits = (probs - one_hot) / n
    adj_grads = None
    if model.mode == SYMMETRIC:
        g_ratings = g_logits
    else:
        adj_back = nn.backward(model.adjuster, adj_trace, g_logits)
        adj_grads = adj_back
        g_fair = adj_back.x[:, :arity]
        if model.use_skip:
            g_fair = g_fair + g_logits
        # chain through the first softmax: dR = p * (g - sum_k g_k p_k)
        g_ratings = fair * (g_fair - np.sum(g_fair * fair, axis=1, keepdims=True))
    est_back = nn.backward(model.estimator, est_trace, g_ratings.reshape(n * arity, 1))
    return loss, est_back, adj_grads


@dataclass
class TrainConfig:
    """Knobs for one training run; defaults favor the desk-scale benchmarks."""

    epochs: int = 5
    batch_size: int = 32
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    validation_fraction: float = 0.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation fraction must lie in [0, 1)")


@dataclass
class TrainReport:
    """Per-epoch loss and validation accuracy, plus optional test accuracy.

    Validation entries are NaN when no validation split was requested.
    """

    train_loss: list[float]
    val_accuracy: list[float]
    test_accuracy: Optional[float] = None


def _accuracy_on(model: RatingModel, dataset: Dataset) -> float:
    probs = predict_probs_batch(model, dataset)
    return float(np.mean(np.argmax(probs, axis=1) == dataset.winners))


def train(
    model: RatingModel,
    dataset: Union[Dataset, Sequence[ComparisonRecord]],
    cfg: TrainConfig,
    test_set: Optional[Union[Dataset, Sequence[ComparisonRecord]]] = None,
) -> tuple[RatingModel, TrainReport]:
    """Fit the model by mini-batch Adam on the comparison cross-entropy.

    The shared estimator receives the summed gradient of all its per-item
    applications; in asymmetric mode the chain rule runs through both the
    adjuster and the skip path. Identical (seed, data, config) give identical
    trained parameters and reports.
    """
    data = as_dataset(dataset)
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    if data.arity != model.arity or data.feature_dim != model.estimator.input_dim:
        raise ValueError("dataset shapes do not match the model")
    if data.env_dim != model.env_dim:
        raise ValueError("dataset environment width does not match the model")
    test_data = None if test_set is None else as_dataset(test_set)

    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(data))
    n_val = int(round(cfg.validation_fraction * len(data)))
    val_idx, train_idx = order[:n_val], order[n_val:]
    if train_idx.size == 0:
        raise ValueError("validation split left no training records")
    val_data = data.subset(val_idx) if n_val else None

    est_state = nn.AdamState.for_net(model.estimator, lr=cfg.lr, beta1=cfg.beta1,
                                     beta2=cfg.beta2, eps=cfg.eps)
    adj_state = None
    if model.adjuster is not None:
        adj_state = nn.AdamState.for_net(model.adjuster, lr=cfg.lr, beta1=cfg.beta1,
                                         beta2=cfg.beta2, eps=cfg.eps)

    losses: list[float] = []
    val_acc: list[float] = []
    for _ in range(cfg.epochs):
        epoch_order = train_idx[rng.permutation(train_idx.size)]
        total = 0.0
        for start in range(0, epoch_order.size, cfg.batch_size):
            batch = epoch_order[start:start + cfg.batch_size]
            env = None if data.env is None else data.env[batch]
            loss, est_grads, adj_grads = _batch_step(
                model, data.items[batch], data.winners[batch], env
            )
            total += loss * batch.size
            nn.adam_step(model.estimator, est_grads, est_state)
            if adj_grads is not None:
                nn.adam_step(model.adjuster, adj_grads, adj_state)
        losses.append(total / epoch_order.size)
        val_acc.append(_accuracy_on(model, val_data) if val_data is not None else math.nan)

    test_accuracy = None if test_data is None else _accuracy_on(model, test_data)
    return model, TrainReport(train_loss=losses, val_accuracy=val_acc, test_accuracy=test_accuracy)


def model_to_dict(model: RatingModel) -> dict:
    return {
        "mode": model.mode,
        "arity": model.arity,
        "env_dim": model.env_dim,
        "use_skip": model.use_skip,
        "estimator": nn.net_to_dict(model.estimator),
        "adjuster": None if model.adjuster is None else nn.net_to_dict(model.adjuster),
    }


def save_model(path, model: RatingModel, seed: Optional[int] = None,
               optimizer: Optional[dict] = None) -> None:
    """Extended checkpoint: the network document plus assembly metadata."""
    doc = {
        "format": "btrating-model",
        "version": 1,
        "model": model_to_dict(model),
        "optimizer": optimizer,
        "seed": seed,
    }
    nn.dump_json_atomic(doc, path)


def load_model(path) -> tuple[RatingModel, Optional[dict], Optional[int]]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "btrating-model":
        raise ValueError(f"{path}: not a rating-model checkpoint")
    spec = doc["model"]
    adjuster = None if spec["adjuster"] is None else nn.net_from_dict(spec["adjuster"])
    model = RatingModel(
        estimator=nn.net_from_dict(spec["estimator"]),
        mode=spec["mode"],
        adjuster=adjuster,
        arity=int(spec["arity"]),
        env_dim=int(spec["env_dim"]),
        use_skip=bool(spec["use_skip"]),
    )
    return model, doc.get("optimizer"), doc.get("seed")
