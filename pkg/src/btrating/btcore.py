"""Classical Bradley-Terry machinery.

Win probabilities, the MLE-existence check on match histories, MM fixed-point
solvers (plain and host-advantage variants) and the Elo transform with its
incremental update. Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components


class FordError(ValueError):
    """Match history admits no finite maximum-likelihood scores.

    Carries the offending partition: ``witness = (s, rest)`` where no item in
    ``rest`` ever beat an item in ``s``.
    """

    def __init__(self, witness):
        s, rest = witness
        super().__init__(
            f"match history fails the MLE-existence condition: items {list(s)} "
            f"never lose to {list(rest)}, so their scores diverge"
        )
        self.witness = witness


@dataclass(frozen=True)
class MatchMatrix:
    """Square win-count table; ``n[i, j]`` counts wins of item i over item j."""

    n: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.n)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError("win-count table must be square")
        if counts.shape[0] < 2:
            raise ValueError("need at least two items")
        if np.any(counts < 0):
            raise ValueError("win counts must be nonnegative")
        if np.any(np.diag(counts) != 0):
            raise ValueError("self-play counts on the diagonal must be zero")
        object.__setattr__(self, "n", counts.astype(np.int64))

    @property
    def size(self) -> int:
        return int(self.n.shape[0])

    @classmethod
    def from_history(cls, history: Iterable[tuple[int, int, int]], n_items: Optional[int] = None) -> "MatchMatrix":
        """Accumulate ``(i, j, winner)`` events into a count table.

        ``winner`` must equal ``i`` or ``j``; ``n_items`` defaults to the
        largest index seen plus one.
        """
        events = [(int(i), int(j), int(w)) for i, j, w in history]
        if n_items is None:
            if not events:
                raise ValueError("cannot infer item count from an empty history")
            n_items = max(max(i, j) for i, j, _ in events) + 1
        counts = np.zeros((n_items, n_items), dtype=np.int64)
        for i, j, w in events:
            if i == j:
                raise ValueError(f"self-match between item {i} and itself")
            if not (0 <= i < n_items and 0 <= j < n_items):
                raise ValueError(f"item index out of range in event ({i}, {j}, {w})")
            if w == i:
                counts[i, j] += 1
            elif w == j:
                counts[j, i] += 1
            else:
                raise ValueError(f"winner {w} is neither {i} nor {j}")
        return cls(counts)

    @classmethod
    def read_csv(cls, path) -> "MatchMatrix":
        """Read the ``n,<N>`` header followed by N rows of N counts."""
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or len(rows[0]) != 2 or rows[0][0] != "n":
            raise ValueError(f"{path}: expected header 'n,<N>'")
        size = int(rows[0][1])
        if len(rows) != size + 1:
            raise ValueError(f"{path}: expected {size} count rows, found {len(rows) - 1}")
        counts = np.zeros((size, size), dtype=np.int64)
        for r, row in enumerate(rows[1:]):
            if len(row) != size:
                raise ValueError(f"{path}: row {r + 2} has {len(row)} fields, expected {size}")
            counts[r] = [int(v) for v in row]
        return cls(counts)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", self.size])
            for row in self.n:
                writer.writerow([int(v) for v in row])


@dataclass(frozen=True)
class BTScores:
    """Positive score vector, normalized on construction to unit mean.

    The mean-1 gauge pins down the scale the pairwise model leaves free.
    """

    pi: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.pi, dtype=float)
        if scores.ndim != 1 or scores.size == 0:
            raise ValueError("scores must be a non-empty vector")
        if not np.all(np.isfinite(scores)) or np.any(scores <= 0):
            raise ValueError("scores must be finite and strictly positive")
        object.__setattr__(self, "pi", scores / scores.mean())

    def __len__(self) -> int:
        return int(self.pi.size)


@dataclass(frozen=True)
class EloConfig:
    """Elo scale ``alpha``, offset ``beta`` and update gain ``k``."""

    alpha: float = 400.0
    beta: float = 1500.0
    k: float = 32.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.k <= 0:
            raise ValueError("k must be positive")


@dataclass(frozen=True)
class HomeAdvantage:
    """Multiplicative strength of the hosting side's edge."""

    eta: float

    def __post_init__(self):
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise ValueError("advantage factor must be positive and finite")


def pairwise_win_prob(pi_i: float, pi_j: float) -> float:
    """Probability that the first item wins a head-to-head comparison."""
    if pi_i <= 0 or pi_j <= 0:
        raise ValueError("scores must be strictly positive")
    return pi_i / (pi_i + pi_j)


def multiplayer_win_prob(pi: Sequence[float], i: int) -> float:
    """Probability that entrant ``i`` wins a free-for-all among all entrants."""
    scores = np.asarray(pi, dtype=float)
    if scores.ndim != 1 or scores.size == 0:
        raise ValueError("scores must be a non-empty vector")
    if not 0 <= i < scores.size:
        raise IndexError(f"entrant index {i} out of range for {scores.size} entrants")
    if np.any(scores <= 0):
        raise ValueError("scores must be strictly positive")
    return float(scores[i] / math.fsum(scores))


def rank_likelihood(pi: Sequence[float], ranking: Sequence[int]) -> float:
    """Probability of observing a full finish order.

    The first-ranked entrant wins the field, the second wins the field minus
    the first, and so on down the order.
    """
    scores = np.asarray(pi, dtype=float)
    if scores.ndim != 1 or scores.size == 0:
        raise ValueError("scores must be a non-empty vector")
    if np.any(scores <= 0):
        raise ValueError("scores must be strictly positive")
    order = list(ranking)
    if sorted(order) != list(range(scores.size)):
        raise ValueError("ranking must be a permutation of all entrant indices")
    prob = 1.0
    for p in range(len(order) - 1):
        remaining = order[p:]
        prob *= scores[order[p]] / math.fsum(scores[r] for r in remaining)
    return prob


def home_win_prob(pi_home: float, pi_away: float, adv: HomeAdvantage) -> float:
    """Win probability for the hosting side under a multiplicative edge."""
    if pi_home <= 0 or pi_away <= 0:
        raise ValueError("scores must be strictly positive")
    boosted = adv.eta * pi_home
    return boosted / (boosted + pi_away)


@dataclass(frozen=True)
class FordResult:
    """Outcome of the MLE-existence check.

    ``witness`` is ``None`` when the history is connected; otherwise it is a
    partition ``(s, rest)`` with no win crossing from ``rest`` into ``s``.
    """

    connected: bool
    witness: Optional[tuple[tuple[int, ...], tuple[int, ...]]]


def check_ford_condition(m: MatchMatrix) -> FordResult:
    """Decide whether finite MLE scores exist for a match history.

    Equivalent to strong connectivity of the beats-digraph (edge i -> j when
    i beat j at least once). On failure the witness is the source component
    of the condensation: a set of items that never lost to the outside.
    """
    beats = (m.n > 0).astype(np.int8)
    n_comp, labels = connected_components(beats, directed=True, connection="strong")
    if n_comp == 1:
        return FordResult(connected=True, witness=None)
    # A component is a source iff no edge enters it from another component.
    has_incoming = np.zeros(n_comp, dtype=bool)
    src, dst = np.nonzero(beats)
    cross = labels[src] != labels[dst]
    has_incoming[labels[dst[cross]]] = True
    source_labels = np.nonzero(~has_incoming)[0]
    # Deterministic pick: the source component containing the smallest item.
    members = [np.nonzero(labels == lab)[0] for lab in source_labels]
    s = min(members, key=lambda idx: idx.min())
    rest = np.setdiff1d(np.arange(m.size), s)
    return FordResult(connected=False, witness=(tuple(int(v) for v in s), tuple(int(v) for v in rest)))


def bt_log_likelihood(m: MatchMatrix, pi: Sequence[float]) -> float:
    """Log-likelihood of a win-count table under given scores."""
    scores = np.asarray(pi, dtype=float)
    if scores.size != m.size:
        raise ValueError("score vector length must match the table size")
    probs = scores[:, None] / (scores[:, None] + scores[None, :])
    np.fill_diagonal(probs, 1.0)  # diagonal counts are zero; keep log finite
    return float(np.sum(m.n * np.log(probs)))


@dataclass(frozen=True)
class MMResult:
    """Fixed-point solve outcome: scores plus convergence diagnostics.

    ``log_likelihood_history`` starts at the initial guess and appends one
    entry per sweep; the sequence is non-decreasing by construction.
    """

    scores: BTScores
    iterations: int
    converged: bool
    log_likelihood: float
    log_likelihood_history: np.ndarray


def mm_mle(m: MatchMatrix, tol: float = 1e-8, max_iter: int = 10_000) -> MMResult:
    """Maximum-likelihood scores via the minorization-maximization fixed point.

    Each sweep applies ``pi_i <- W_i / sum_j (n_ij + n_ji) / (pi_i + pi_j)``
    with ``W_i`` the total wins of item i, then renormalizes to unit mean.
    Stops when the largest score change drops below ``tol``; if ``max_iter``
    is hit first the result is returned with ``converged=False``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    ford = check_ford_condition(m)
    if not ford.connected:
        raise FordError(ford.witness)
    counts = m.n.astype(float)
    wins = counts.sum(axis=1)
    paired = counts + counts.T
    pi = np.ones(m.size)
    history = [bt_log_likelihood(m, pi)]
    iterations = 0
    converged = False
    for iterations in range(1, max_iter + 1):
        denom = (paired / (pi[:, None] + pi[None, :])).sum(axis=1)
        new_pi = wins / denom
        new_pi /= new_pi.mean()
        delta = float(np.max(np.abs(new_pi - pi)))
        pi = new_pi
        history.append(bt_log_likelihood(m, pi))
        if delta < tol:
            converged = True
            break
    return MMResult(
        scores=BTScores(pi),
        iterations=iterations,
        converged=converged,
        log_likelihood=history[-1],
        log_likelihood_history=np.asarray(history),
    )


def home_log_likelihood(home_wins: MatchMatrix, away_wins: MatchMatrix, pi: Sequence[float], eta: float) -> float:
    """Log-likelihood of host/visitor win tables under a hosting edge."""
    scores = np.asarray(pi, dtype=float)
    hosted = eta * scores[:, None] + scores[None, :]  # hosted[i, j]: i hosts j
    log_hosted = np.log(hosted)
    home_terms = home_wins.n * (np.log(eta * scores)[:, None] - log_hosted)
    away_terms = away_wins.n * (np.log(scores)[:, None] - log_hosted.T)
    return float(np.sum(home_terms) + np.sum(away_terms))


@dataclass(frozen=True)
class HomeMMResult:
    scores: BTScores
    advantage: HomeAdvantage
    iterations: int
    converged: bool
    log_likelihood: float
    log_likelihood_history: np.ndarray


def mm_mle_home(
    home_wins: MatchMatrix,
    away_wins: MatchMatrix,
    tol: float = 1e-8,
    max_iter: int = 10_000,
) -> HomeMMResult:
    """Joint MLE of scores and the hosting edge by alternating MM sweeps.

    ``home_wins[i, j]`` counts wins of i over j with i hosting;
    ``away_wins[i, j]`` counts wins of i over j with j hosting. Scores are
    updated by the paired-comparison fixed point with the edge frozen, then
    the edge by its own minorizer with scores frozen; the log-likelihood is
    non-decreasing across both half-steps.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if home_wins.size != away_wins.size:
        raise ValueError("host and visitor tables must be the same size")
    combined = MatchMatrix(home_wins.n + away_wins.n)
    ford = check_ford_condition(combined)
    if not ford.connected:
        raise FordError(ford.witness)
    home = home_wins.n.astype(float)
    away = away_wins.n.astype(float)
    # hosted[i, j]: matches staged by i against j, regardless of outcome.
    hosted = home + away.T
    host_wins_total = home.sum()
    if host_wins_total == 0 or host_wins_total == hosted.sum():
        raise ValueError(
            "hosting sides won none (or all) of the staged matches; "
            "the advantage estimate diverges"
        )
    wins = home.sum(axis=1) + away.sum(axis=1)
    n = home_wins.size
    pi = np.ones(n)
    eta = 1.0
    history = [home_log_likelihood(home_wins, away_wins, pi, eta)]
    iterations = 0
    converged = False
    for iterations in range(1, max_iter + 1):
        denom_mat = eta * pi[:, None] + pi[None, :]
        denom = (hosted * eta / denom_mat).sum(axis=1) + (hosted / denom_mat).sum(axis=0)
        new_pi = wins / denom
        new_pi /= new_pi.mean()
        denom_mat = eta * new_pi[:, None] + new_pi[None, :]
        new_eta = host_wins_total / (hosted * new_pi[:, None] / denom_mat).sum()
        delta = max(float(np.max(np.abs(new_pi - pi))), abs(new_eta - eta))
        pi, eta = new_pi, new_eta
        history.append(home_log_likelihood(home_wins, away_wins, pi, eta))
        if delta < tol:
            converged = True
            break
    return HomeMMResult(
        scores=BTScores(pi),
        advantage=HomeAdvantage(eta),
        iterations=iterations,
        converged=converged,
        log_likelihood=history[-1],
        log_likelihood_history=np.asarray(history),
    )


def pi_to_elo(pi: float, cfg: EloConfig = EloConfig()) -> float:
    """Map a score onto the Elo scale: ``alpha * log10(pi) + beta``."""
    if pi <= 0:
        raise ValueError("score must be strictly positive")
    return cfg.alpha * math.log10(pi) + cfg.beta


def elo_to_pi(rating: float, cfg: EloConfig = EloConfig()) -> float:
    """Invert the Elo transform back to a score."""
    return 10.0 ** ((rating - cfg.beta) / cfg.alpha)


def elo_expected_score(r_i: float, r_j: float, cfg: EloConfig = EloConfig()) -> float:
    """Expected per-game score of the first rating against the second."""
    # Algebraically pairwise_win_prob(elo_to_pi(r_i), elo_to_pi(r_j)), but
    # stable for rating gaps large enough to overflow the score scale.
    return 1.0 / (1.0 + 10.0 ** ((r_j - r_i) / cfg.alpha))


def elo_update(r_i: float, r_j: float, wins: float, games: int, cfg: EloConfig = EloConfig()) -> float:
    """One incremental rating refresh after ``wins`` out of ``games``.

    Fractional win totals are accepted so expected-score fixed points can be
    expressed exactly.
    """
    if games < 1:
        raise ValueError("games must be at least 1")
    if not 0 <= wins <= games:
        raise ValueError("wins must lie in [0, games]")
    expected = elo_expected_score(r_i, r_j, cfg)
    return r_i + cfg.k * (wins - games * expected)


def elo_rate_history(
    history: Iterable[tuple[int, int, int]],
    cfg: EloConfig = EloConfig(),
    n_items: Optional[int] = None,
) -> np.ndarray:
    """Fold single-game events ``(i, j, winner)`` into final ratings.

    Every item starts at ``cfg.beta``; both sides of each game are refreshed
    from their pre-game ratings.
    """
    events = [(int(i), int(j), int(w)) for i, j, w in history]
    if n_items is None:
        n_items = max((max(i, j) for i, j, _ in events), default=-1) + 1
    ratings = np.full(n_items, cfg.beta, dtype=float)
    for i, j, w in events:
        if i == j:
            raise ValueError(f"self-match between item {i} and itself")
        if not (0 <= i < n_items and 0 <= j < n_items):
            raise ValueError(f"item index out of range in event ({i}, {j}, {w})")
        if w == i:
            w_i = 1.0
        elif w == j:
            w_i = 0.0
        else:
            raise ValueError(f"winner {w} is neither {i} nor {j}")
        r_i, r_j = ratings[i], ratings[j]
        ratings[i] = elo_update(r_i, r_j, w_i, 1, cfg)
        ratings[j] = elo_update(r_j, r_i, 1.0 - w_i, 1, cfg)
    return ratings


def export_scores_csv(scores: BTScores, path, cfg: EloConfig = EloConfig()) -> None:
    """Write ``item_index,pi,elo`` rows for a fitted score vector."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["item_index", "pi", "elo"])
        for idx, value in enumerate(scores.pi):
            writer.writerow([idx, repr(float(value)), repr(pi_to_elo(float(value), cfg))])
