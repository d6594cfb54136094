"""Training-set selection: V-optimal relaxation, greedy rounding, samplers.

The combinatorial budgeted design problem is relaxed to continuous weights
on the capped simplex {0 <= pi_i <= 1, sum pi <= budget}, solved by
projected gradient descent with Armijo backtracking, then rounded to an
index set by a deterministic greedy pass driven by a regret-minimization
potential.  Four baseline samplers (uniform, leverage-score, k-medoids on
geodesics, probability) share the same DesignSet output type.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh, eigvalsh
from scipy.optimize import brentq

from .errors import SolverError, ValidationError

DEFAULT_ARMIJO_ALPHA = 0.3
DEFAULT_ARMIJO_BETA = 0.5
DEFAULT_POTENTIAL_ALPHA = 1.0
_RIDGE_REL = 1e-10


@dataclass
class DesignWeights:
    """Feasible point of the capped simplex plus solver diagnostics."""

    pi: np.ndarray
    budget: int
    phi_value: float = np.nan
    iterations: int = 0
    converged: bool = False
    line_search_failed: bool = False

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=np.float64)
        if np.any(pi < -1e-12) or np.any(pi > 1 + 1e-12):
            raise ValidationError("weights outside [0, 1]")
        if pi.sum() > self.budget + 1e-9:
            raise ValidationError(
                f"weights sum {pi.sum():.12g} exceeds budget {self.budget}")
        self.pi = np.clip(pi, 0.0, 1.0)


@dataclass(frozen=True)
class DesignSet:
    """Selected design indices, in selection/draw order."""

    indices: np.ndarray
    method: str
    seed: int | None = None

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if len(set(idx.tolist())) != idx.size:
            raise ValidationError("design set has duplicate indices")
        object.__setattr__(self, "indices", idx)

    @property
    def size(self) -> int:
        return self.indices.size


def subset_weights(n: int, indices) -> np.ndarray:
    """0/1 indicator weights for a subset."""
    w = np.zeros(n)
    w[np.asarray(indices, dtype=np.int64)] = 1.0
    return w


def _covariance(X: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return (X * weights[:, None]).T @ X


def _try_cholesky(A: np.ndarray):
    try:
        return cho_factor(A, lower=True)
    except np.linalg.LinAlgError:
        return None


def _chol_with_ridge(A: np.ndarray, ridge: bool):
    c = _try_cholesky(A)
    if c is None and ridge:
        p = A.shape[0]
        jitter = _RIDGE_REL * max(np.trace(A), 1.0) / p
        c = _try_cholesky(A + jitter * np.eye(p))
    return c


def phi_v(X: np.ndarray, weights, ridge: bool = False) -> float:
    """V-optimality: average prediction variance (1/n) tr(X A^-1 X^T).

    Returns +inf when A = sum_i w_i x_i x_i^T is singular (the flag for an
    infeasible design); smaller is better.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    A = _covariance(X, np.asarray(weights, dtype=np.float64))
    c = _chol_with_ridge(A, ridge)
    if c is None:
        return np.inf
    Y = cho_solve(c, X.T)  # A^-1 X^T
    val = float(np.einsum("ij,ji->", X, Y)) / n
    return val if np.isfinite(val) else np.inf


def phi_g(X: np.ndarray, weights, ridge: bool = False) -> float:
    """G-optimality: worst-case prediction variance max_i x_i^T A^-1 x_i."""
    X = np.asarray(X, dtype=np.float64)
    A = _covariance(X, np.asarray(weights, dtype=np.float64))
    c = _chol_with_ridge(A, ridge)
    if c is None:
        return np.inf
    Y = cho_solve(c, X.T)
    vals = np.einsum("ij,ji->i", X, Y)
    out = float(vals.max())
    return out if np.isfinite(out) else np.inf


def phi_v_subset(X: np.ndarray, indices) -> float:
    return phi_v(X, subset_weights(X.shape[0], indices))


def phi_g_subset(X: np.ndarray, indices) -> float:
    return phi_g(X, subset_weights(X.shape[0], indices))


def phi_v_gradient(X: np.ndarray, weights, ridge: bool = False) -> np.ndarray:
    """d phi_V / d pi_i = -(1/n) x_i^T A^-1 (X^T X) A^-1 x_i  (all <= 0)."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    A = _covariance(X, np.asarray(weights, dtype=np.float64))
    c = _chol_with_ridge(A, ridge)
    if c is None:
        raise SolverError("weighted covariance is singular; no gradient")
    Z = cho_solve(c, X.T).T  # rows z_i = A^-1 x_i
    G = X.T @ X
    return -np.einsum("ij,jk,ik->i", Z, G, Z) / n


def project_capped_simplex(v: np.ndarray, budget: int) -> np.ndarray:
    """Euclidean projection onto {0 <= x <= 1, sum x <= budget}.

    The KKT conditions give x = clip(v - tau, 0, 1) with tau = 0 if the
    clipped point already fits the budget, otherwise the unique tau > 0
    placing the sum exactly at the budget (found by bisection on a monotone
    piecewise-linear function).
    """
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValidationError("cannot project non-finite vector")
    if budget <= 0:
        raise ValidationError(f"budget must be positive, got {budget}")
    w = np.clip(v, 0.0, 1.0)
    if w.sum() <= budget:
        return w
    lo, hi = 0.0, float(v.max())
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if np.clip(v - mid, 0.0, 1.0).sum() > budget:
            lo = mid
        else:
            hi = mid
    return np.clip(v - 0.5 * (lo + hi), 0.0, 1.0)


def solve_relaxation(X: np.ndarray, budget: int,
                     armijo_alpha: float = DEFAULT_ARMIJO_ALPHA,
                     armijo_beta: float = DEFAULT_ARMIJO_BETA,
                     s_max: int = 50, tol: float = 1e-6, patience: int = 5,
                     max_iters: int = 500) -> DesignWeights:
    """Minimize phi_V over the capped simplex by projected gradient descent.

    Starts from the uniform feasible point budget/n.  Each iteration
    backtracks beta^s until the Armijo condition
    phi(P(pi - beta^s g)) - phi(pi) <= armijo_alpha * g . (P(...) - pi)
    holds.  Stops when the relative decrease over ``patience`` accepted
    iterations falls below ``tol`` or ``max_iters`` is reached.  A failed
    line search is recorded and the last iterate returned.
    """
    X = np.asarray(X, dtype=np.float64)
    n, p = X.shape
    if not 0 < armijo_alpha <= 0.5:
        raise ValidationError("armijo_alpha must lie in (0, 1/2]")
    if not 0 < armijo_beta < 1:
        raise ValidationError("armijo_beta must lie in (0, 1)")
    if not 1 <= budget <= n:
        raise ValidationError(f"budget {budget} out of range [1, {n}]")
    rank = int(np.linalg.matrix_rank(X))
    if rank < p:
        raise ValidationError(
            f"design matrix rank {rank} < p={p}; relaxation is ill-posed")
    if budget < p:
        warnings.warn(f"budget {budget} below dimension p={p}; the rounded "
                      "design cannot identify the model", stacklevel=2)

    pi = np.full(n, budget / n)
    history = [phi_v(X, pi, ridge=True)]
    line_search_failed = False
    it = 0
    for it in range(1, max_iters + 1):
        g = phi_v_gradient(X, pi, ridge=True)
        accepted = None
        for s in range(s_max + 1):
            cand = project_capped_simplex(pi - armijo_beta ** s * g, budget)
            phi_cand = phi_v(X, cand, ridge=True)
            if phi_cand - history[-1] <= armijo_alpha * float(g @ (cand - pi)):
                accepted = (cand, phi_cand)
                break
        if accepted is None:
            line_search_failed = True
            break
        pi, value = accepted
        history.append(value)
        if len(history) > patience:
            prev = history[-1 - patience]
            if prev - history[-1] < tol * max(abs(prev), 1e-300):
                break

    converged = not line_search_failed and it < max_iters
    return DesignWeights(pi=pi, budget=budget, phi_value=history[-1],
                         iterations=it, converged=converged,
                         line_search_failed=line_search_failed)


def whiten(X: np.ndarray, weights) -> np.ndarray:
    """Map rows through Sigma^-1/2 where Sigma = sum_i w_i x_i x_i^T.

    After whitening the weighted covariance of the rows is the identity.
    """
    X = np.asarray(X, dtype=np.float64)
    sigma = _covariance(X, np.asarray(weights, dtype=np.float64))
    vals, vecs = eigh(sigma)
    if vals[0] <= 1e-13 * max(vals[-1], 1.0):
        raise SolverError("relaxed covariance is singular; cannot whiten")
    inv_sqrt = (vecs / np.sqrt(vals)) @ vecs.T
    return X @ inv_sqrt


def _c_mismatch(c: float, eigs: np.ndarray) -> float:
    return float(np.sum(1.0 / (c + eigs) ** 2)) - 1.0


def find_c(X_whitened: np.ndarray, selected) -> float:
    """Normalizer c with tr((cI + sum_{j in S} x_j x_j^T)^-2) = 1.

    The trace is a strictly decreasing function of c on (-lambda_min, inf),
    so the root is unique; it is found by bracketing and Newton polish on
    the eigenvalues of the selected covariance.
    """
    X = np.asarray(X_whitened, dtype=np.float64)
    M = _selected_covariance(X, selected)
    eigs = np.clip(eigvalsh(M), 0.0, None)
    return _find_c_from_eigs(eigs, X.shape[1])


def _selected_covariance(X: np.ndarray, selected) -> np.ndarray:
    idx = np.asarray(list(selected), dtype=np.int64)
    if idx.size == 0:
        return np.zeros((X.shape[1], X.shape[1]))
    rows = X[idx]
    return rows.T @ rows


def greedy_potential(X_whitened: np.ndarray, i: int, selected,
                     potential_alpha: float = DEFAULT_POTENTIAL_ALPHA,
                     c: float | None = None) -> float:
    """Selection score psi(i; S) = x_i^T B x_i / (1 + a x_i^T B^1/2 x_i)
    with B = (cI + sum_{j in S} x_j x_j^T)^-2 and tr(B) = 1."""
    if potential_alpha <= 0:
        raise ValidationError("potential_alpha must be > 0")
    X = np.asarray(X_whitened, dtype=np.float64)
    if c is None:
        c = find_c(X, selected)
    T = _selected_covariance(X, selected) + c * np.eye(X.shape[1])
    y = np.linalg.solve(T, X[i])  # B^1/2 x_i, since B^1/2 = T^-1
    quad_b = float(y @ y)
    quad_half = float(X[i] @ y)
    return quad_b / (1.0 + potential_alpha * quad_half)


def greedy_round(X: np.ndarray, weights, budget: int,
                 potential_alpha: float = DEFAULT_POTENTIAL_ALPHA) -> DesignSet:
    """Deterministic rounding of relaxed weights to ``budget`` indices.

    Rows are whitened by the relaxed covariance, then added one at a time by
    maximizing the potential; ties break to the lowest index.
    """
    X = np.asarray(X, dtype=np.float64)
    pi = weights.pi if isinstance(weights, DesignWeights) else np.asarray(weights)
    n, p = X.shape
    if not 1 <= budget <= n:
        raise ValidationError(f"budget {budget} out of range [1, {n}]")
    Xw = whiten(X, pi)
    selected: list[int] = []
    mask = np.zeros(n, dtype=bool)
    M = np.zeros((p, p))
    eye = np.eye(p)
    for _ in range(budget):
        eigs = np.clip(eigvalsh(M), 0.0, None)
        c = _find_c_from_eigs(eigs, p)
        Y = np.linalg.solve(M + c * eye, Xw.T)  # columns y_i = B^1/2 x_i
        quad_b = np.einsum("ji,ji->i", Y, Y)
        quad_half = np.einsum("ij,ji->i", Xw, Y)
        psi = quad_b / (1.0 + potential_alpha * quad_half)
        psi[mask] = -np.inf
        i_t = int(np.argmax(psi))
        selected.append(i_t)
        mask[i_t] = True
        M += np.outer(Xw[i_t], Xw[i_t])
    return DesignSet(indices=np.array(selected), method="greedy")


def _find_c_from_eigs(eigs: np.ndarray, p: int) -> float:
    lam_min = float(eigs[0])
    delta = 1e-8 * max(1.0, float(eigs[-1]))
    for _ in range(200):  # shrink until the left end brackets the root
        mismatch = _c_mismatch(-lam_min + delta, eigs)
        if np.isfinite(mismatch) and mismatch > 0:
            break
        delta *= 0.5
    else:
        raise SolverError("failed to bracket the trace normalizer c")
    lo = -lam_min + delta
    hi = np.sqrt(p) - lam_min  # tr <= p/(c+lam_min)^2 = 1 at this c
    if _c_mismatch(hi, eigs) > 0:
        hi = np.sqrt(p) + float(eigs[-1])
    c = brentq(_c_mismatch, lo, hi, args=(eigs,), xtol=1e-15, rtol=8.9e-16)
    for _ in range(3):  # Newton polish to the 1e-10 trace tolerance
        h = _c_mismatch(c, eigs)
        dh = -2.0 * float(np.sum(1.0 / (c + eigs) ** 3))
        if dh == 0:
            break
        c -= h / dh
    return float(c)


def leverage_scores(X: np.ndarray) -> np.ndarray:
    """Statistical leverage x_i^T (X^T X)^-1 x_i of each row; sums to p."""
    X = np.asarray(X, dtype=np.float64)
    c = _try_cholesky(X.T @ X)
    if c is None:
        raise ValidationError("X^T X is singular; leverage undefined")
    Y = cho_solve(c, X.T)
    return np.einsum("ij,ji->i", X, Y)


def _sequential_weighted_draw(weights: np.ndarray, budget: int, seed: int,
                              method: str) -> DesignSet:
    """Draw-remove-renormalize sampling without replacement."""
    w = np.asarray(weights, dtype=np.float64).copy()
    n = w.size
    if np.any(w < 0):
        raise ValidationError("sampling weights must be non-negative")
    if not 1 <= budget <= n:
        raise ValidationError(f"budget {budget} out of range [1, {n}]")
    rng = np.random.default_rng(seed)
    chosen: list[int] = []
    remaining = np.arange(n)
    for _ in range(budget):
        wr = w[remaining]
        total = wr.sum()
        if total <= 0:  # weight mass exhausted: fall back to uniform
            probs = np.full(remaining.size, 1.0 / remaining.size)
        else:
            probs = wr / total
        pick = int(rng.choice(remaining.size, p=probs))
        chosen.append(int(remaining[pick]))
        remaining = np.delete(remaining, pick)
    return DesignSet(indices=np.array(chosen), method=method, seed=seed)


def sample_uniform(n: int, budget: int, seed: int) -> DesignSet:
    """Uniform sampling without replacement."""
    if not 1 <= budget <= n:
        raise ValidationError(f"budget {budget} out of range [1, {n}]")
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=budget, replace=False)
    return DesignSet(indices=idx, method="uniform", seed=seed)


def sample_levscore(X: np.ndarray, budget: int, seed: int) -> DesignSet:
    """Sampling without replacement proportional to leverage scores."""
    return _sequential_weighted_draw(leverage_scores(X), budget, seed,
                                     method="levscore")


def sample_probability(weights, budget: int, seed: int) -> DesignSet:
    """Sampling without replacement proportional to relaxed weights."""
    pi = weights.pi if isinstance(weights, DesignWeights) else np.asarray(weights)
    ds = _sequential_weighted_draw(pi, budget, seed, method="sampling")
    return ds


def sample_kmeans(distances: np.ndarray, budget: int,
                  max_iters: int = 100) -> DesignSet:
    """Deterministic k-medoids on a geodesic distance matrix.

    Farthest-point initialization (seeded at the node of maximum total
    distance) followed by Lloyd-style medoid updates; all ties break to the
    lowest node index.  Returns the medoids sorted ascending.
    """
    D = np.asarray(distances, dtype=np.float64)
    n = D.shape[0]
    if D.shape != (n, n):
        raise ValidationError("distance matrix must be square")
    if not 1 <= budget <= n:
        raise ValidationError(f"budget {budget} out of range [1, {n}]")
    if budget == n:
        return DesignSet(indices=np.arange(n), method="kmeans")

    finite = np.where(np.isfinite(D), D, 0.0)
    seed_node = int(np.argmax(finite.sum(axis=1)))
    selected = [seed_node]
    mask = np.zeros(n, dtype=bool)
    mask[seed_node] = True
    min_dist = D[seed_node].copy()
    while len(selected) < budget:
        cand = np.where(mask, -np.inf, min_dist)
        nxt = int(np.argmax(cand))
        selected.append(nxt)
        mask[nxt] = True
        min_dist = np.minimum(min_dist, D[nxt])

    medoids = np.array(sorted(selected), dtype=np.int64)
    for _ in range(max_iters):
        assign = np.argmin(D[medoids], axis=0)  # ties -> lowest medoid
        new_medoids = medoids.copy()
        for ci in range(budget):
            members = np.where(assign == ci)[0]
            if members.size == 0:
                continue
            sums = finite[np.ix_(members, members)].sum(axis=1)
            new_medoids[ci] = members[int(np.argmin(sums))]
        new_medoids = np.array(sorted(new_medoids.tolist()), dtype=np.int64)
        if np.array_equal(new_medoids, medoids):
            break
        medoids = new_medoids
    return DesignSet(indices=medoids, method="kmeans")
