"""Linear stress surrogate: fit on sampled maxima, rank, refine top-k.

The raw linear predictions are only used for their ordering; the refined
estimate sigma~* is the max of true peak stresses over the k highest-ranked
contact nodes, so it never exceeds the ground truth.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class SurrogateModel:
    """OLS coefficients trained on a design subset."""

    beta: np.ndarray
    training_indices: np.ndarray
    residual_norm: float
    rank: int

    @property
    def rank_deficient(self) -> bool:
        return self.rank < self.beta.size


@dataclass
class RankedPrediction:
    """Ranking by predicted stress plus refined true values on the top-k."""

    sigma_hat: np.ndarray  # raw linear predictions (may be negative)
    ranking: np.ndarray  # node indices, descending sigma_hat
    k: int
    refined: dict[int, float] = field(default_factory=dict)
    sigma_tilde: float = -np.inf
    argmax_candidate: int = -1
    fresh_evals: int = 0
    cache_hits: int = 0
    failures: dict[int, str] = field(default_factory=dict)


def fit_ols(X_L: np.ndarray, sigma_L: np.ndarray,
            training_indices=None) -> SurrogateModel:
    """Least-squares fit of sigma ~ X_L beta (no intercept).

    Rank-deficient systems return the minimum-norm solution with a warning
    instead of failing, so tiny training sets still produce a ranking.
    """
    X_L = np.asarray(X_L, dtype=np.float64)
    sigma_L = np.asarray(sigma_L, dtype=np.float64)
    if X_L.ndim != 2 or X_L.shape[0] != sigma_L.shape[0]:
        raise ValidationError("training rows and responses disagree in shape")
    if X_L.shape[0] < 1:
        raise ValidationError("need at least one training sample")
    beta, _, rank, _ = np.linalg.lstsq(X_L, sigma_L, rcond=None)
    if rank < X_L.shape[1]:
        warnings.warn(
            f"OLS training matrix rank {rank} < p={X_L.shape[1]}; returning "
            "the minimum-norm solution", stacklevel=2)
    residual = float(np.linalg.norm(X_L @ beta - sigma_L))
    idx = (np.arange(X_L.shape[0]) if training_indices is None
           else np.asarray(training_indices, dtype=np.int64))
    return SurrogateModel(beta=beta, training_indices=idx,
                          residual_norm=residual, rank=int(rank))


def predict(X: np.ndarray, model: SurrogateModel) -> np.ndarray:
    """Predicted peak stress for every contact node: X @ beta."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != model.beta.size:
        raise ValidationError("design matrix width does not match the model")
    return X @ model.beta


def rank_predictions(sigma_hat: np.ndarray) -> np.ndarray:
    """Indices sorted by descending prediction; ties keep index order."""
    return np.argsort(-np.asarray(sigma_hat), kind="stable")


def rank_and_refine(sigma_hat: np.ndarray, k: int, oracle,
                    is_cached=None) -> RankedPrediction:
    """Evaluate the true peak stress on the k highest-ranked nodes.

    ``oracle`` maps a region index to sigma*(f); cached values are reused
    but still count as covered.  Oracle failures are recorded per node and
    skipped without shrinking k.  The refined estimate is the max over the
    evaluated top-k, monotone in k by construction.
    """
    sigma_hat = np.asarray(sigma_hat, dtype=np.float64)
    n = sigma_hat.size
    if not 1 <= k <= n:
        raise ValidationError(f"k={k} out of range [1, {n}]")
    ranking = rank_predictions(sigma_hat)
    pred = RankedPrediction(sigma_hat=sigma_hat, ranking=ranking, k=k)
    for f in ranking[:k]:
        f = int(f)
        cached = bool(is_cached(f)) if is_cached is not None else False
        try:
            value = float(oracle(f))
        except Exception as exc:  # noqa: BLE001 - recorded, not fatal
            pred.failures[f] = str(exc)
            continue
        pred.refined[f] = value
        if cached:
            pred.cache_hits += 1
        else:
            pred.fresh_evals += 1
        if value > pred.sigma_tilde:
            pred.sigma_tilde = value
            pred.argmax_candidate = f
    return pred


def evaluate_k(ranking: np.ndarray, sigma_true: np.ndarray,
               delta: float) -> int:
    """Smallest k with max(top-k true values) >= sigma* / (1 + delta)."""
    if delta < 0:
        raise ValidationError(f"delta must be >= 0, got {delta}")
    ranking = np.asarray(ranking, dtype=np.int64)
    sigma_true = np.asarray(sigma_true, dtype=np.float64)
    if ranking.size != sigma_true.size:
        raise ValidationError("ranking and ground truth disagree in size")
    target = sigma_true.max() / (1.0 + delta)
    running = np.maximum.accumulate(sigma_true[ranking])
    hits = np.where(running >= target)[0]
    if hits.size == 0:  # cannot happen: the max enters the running max
        raise ValidationError("no k satisfies the tolerance")
    return int(hits[0]) + 1
