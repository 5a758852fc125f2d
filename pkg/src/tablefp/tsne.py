"""Exact t-SNE for corpus maps.

Full O(n^2) gradient, suitable for the few thousand pages a study
actually plots. Perplexity calibration runs a per-point binary search
on the Gaussian bandwidth; the embedding uses early exaggeration and
the usual adaptive per-coordinate gains.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

_EXAGGERATION = 12.0
_EXAGGERATION_ITERS = 250
_MOMENTUM_EARLY = 0.5
_MOMENTUM_LATE = 0.8
_MIN_PROB = 1e-12


def _pairwise_sq_dists(X: np.ndarray) -> np.ndarray:
    s = (X * X).sum(axis=1)
    d2 = s[:, None] + s[None, :] - 2.0 * (X @ X.T)
    np.fill_diagonal(d2, 0.0)
    return np.maximum(d2, 0.0)


def _row_probs(d2_row: np.ndarray, beta: float, i: int) -> tuple[np.ndarray, float]:
    p = np.exp(-(d2_row - d2_row.min()) * beta)
    p[i] = 0.0
    total = p.sum()
    if total <= 0:
        p = np.zeros_like(p)
        return p, 0.0
    p /= total
    nz = p > 0
    h = float(-(p[nz] * np.log(p[nz])).sum())
    return p, h


def conditional_probs(X: np.ndarray, perplexity: float = 30.0,
                      tol: float = 1e-5, max_steps: int = 60) -> np.ndarray:
    """Row-stochastic P with each row's entropy matched to log(perplexity)."""
    n = X.shape[0]
    if perplexity >= n:
        raise DataError(f"perplexity {perplexity} must be below n={n}")
    d2 = _pairwise_sq_dists(X)
    target = np.log(perplexity)
    P = np.zeros((n, n))
    for i in range(n):
        lo, hi = 0.0, np.inf
        beta = 1.0
        p, h = _row_probs(d2[i], beta, i)
        for _ in range(max_steps):
            if abs(h - target) < tol:
                break
            if h > target:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = beta / 2.0 if lo == 0.0 else (beta + lo) / 2.0
            p, h = _row_probs(d2[i], beta, i)
        P[i] = p
    return P


@dataclass
class TsneResult:
    embedding: np.ndarray
    kl_history: list[float] = field(default_factory=list)


def tsne(X: np.ndarray, n_components: int = 2, perplexity: float = 30.0,
         n_iter: int = 1000, learning_rate: float = 200.0,
         seed: int = 0, record_every: int = 50) -> TsneResult:
    """Embed rows of X; deterministic for a fixed seed.

    Duplicate input rows get a 1e-8 jitter so bandwidth calibration has
    nonzero spread to work with.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 5:
        raise DataError("t-SNE needs at least 5 points")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 31]))
    _, first_idx = np.unique(X, axis=0, return_index=True)
    if len(first_idx) < n:
        X = X + rng.normal(0.0, 1e-8, size=X.shape)
    P = conditional_probs(X, perplexity=perplexity)
    P = (P + P.T) / (2.0 * n)
    P = np.maximum(P, _MIN_PROB)
    Y = rng.normal(0.0, 1e-4, size=(n, n_components))
    dY = np.zeros_like(Y)
    gains = np.ones_like(Y)
    kl_history: list[float] = []
    for it in range(n_iter):
        scale = _EXAGGERATION if it < _EXAGGERATION_ITERS else 1.0
        momentum = _MOMENTUM_EARLY if it < _EXAGGERATION_ITERS else _MOMENTUM_LATE
        d2 = _pairwise_sq_dists(Y)
        num = 1.0 / (1.0 + d2)
        np.fill_diagonal(num, 0.0)
        Q = np.maximum(num / num.sum(), _MIN_PROB)
        PQ = scale * P - Q
        grad = 4.0 * ((PQ * num) @ Y - ((PQ * num).sum(axis=1)[:, None] * Y))
        same_sign = np.sign(grad) == np.sign(dY)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, 0.01)
        dY = momentum * dY - learning_rate * gains * grad
        Y = Y + dY
        Y = Y - Y.mean(axis=0)
        if (it + 1) % record_every == 0 or it == n_iter - 1:
            if it >= _EXAGGERATION_ITERS:
                kl_history.append(float((P * np.log(P / Q)).sum()))
    return TsneResult(embedding=Y, kl_history=kl_history)
