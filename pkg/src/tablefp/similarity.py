"""Histogram similarity, clustering, and retrieval.

Pages are compared as square-rooted bigram histograms; the square root
tempers heavy-tailed pair counts so shared rare pairs are not drowned
by abundant ones. Clustering is plain Lloyd k-means with k-means++
seeding, written directly on numpy so behavior is fixed by seed alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .histograms import BigramHistogram, sqrt_transform
from .recompose import N_FEATURES


def hist_vector(hist: BigramHistogram, transform: str = "sqrt") -> np.ndarray:
    if transform == "sqrt":
        h = sqrt_transform(hist) if hist.transform == "none" else hist
    elif transform == "none":
        if hist.transform != "none":
            raise DataError("histogram already transformed")
        h = hist
    else:
        raise DataError(f"unknown transform {transform!r}")
    return h.counts.astype(np.float64)


def similarity(a: BigramHistogram, b: BigramHistogram, kind: str = "dot",
               transform: str = "sqrt") -> float:
    va, vb = hist_vector(a, transform), hist_vector(b, transform)
    dot = float(va @ vb)
    if kind == "dot":
        return dot
    if kind == "cosine":
        na, nb = float(np.linalg.norm(va)), float(np.linalg.norm(vb))
        if na == 0.0 or nb == 0.0:
            raise DataError("cosine similarity undefined for an all-zero histogram")
        return dot / (na * nb)
    raise DataError(f"unknown similarity kind {kind!r}")


def corpus_matrix(histograms: dict[str, BigramHistogram],
                  transform: str = "sqrt") -> tuple[list[str], np.ndarray]:
    """Page ids in sorted order plus the stacked feature matrix."""
    ids = sorted(histograms)
    if not ids:
        raise DataError("no histograms to stack")
    X = np.stack([hist_vector(histograms[i], transform) for i in ids])
    if X.shape[1] != N_FEATURES:
        raise DataError(f"expected {N_FEATURES}-dim histograms, got {X.shape[1]}")
    return ids, X


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d2 = (X * X).sum(axis=1)[:, None] + (C * C).sum(axis=1)[None, :] - 2.0 * (X @ C.T)
    return np.maximum(d2, 0.0)


@dataclass
class KMeansResult:
    centers: np.ndarray
    labels: np.ndarray
    inertia: float
    n_iter: int


def kmeans(X: np.ndarray, k: int, seed: int = 0, max_iter: int = 300,
           tol: float = 1e-9) -> KMeansResult:
    """Lloyd iterations from a k-means++ start.

    Empty clusters are reseeded with the point farthest from its
    current center, so exactly k centers always come back.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise DataError(f"k={k} outside 1..{n}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 23]))
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[int(rng.integers(n))]
    d2 = _sq_dists(X, centers[:1]).ravel()
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j] = X[int(rng.integers(n))]
        else:
            centers[j] = X[int(rng.choice(n, p=d2 / total))]
        d2 = np.minimum(d2, _sq_dists(X, centers[j : j + 1]).ravel())
    labels = np.zeros(n, dtype=np.int64)
    it = 0
    prev_inertia = np.inf
    for it in range(1, max_iter + 1):
        D = _sq_dists(X, centers)
        labels = D.argmin(axis=1)
        mind = D[np.arange(n), labels]
        for j in range(k):
            mask = labels == j
            if mask.any():
                centers[j] = X[mask].mean(axis=0)
            else:
                far = int(np.argmax(mind))
                centers[j] = X[far]
                labels[far] = j
                mind[far] = 0.0
        inertia = float(mind.sum())
        if prev_inertia - inertia <= tol * max(prev_inertia, 1.0):
            break
        prev_inertia = inertia
    D = _sq_dists(X, centers)
    labels = D.argmin(axis=1)
    inertia = float(D[np.arange(n), labels].sum())
    return KMeansResult(centers=centers, labels=labels, inertia=inertia, n_iter=it)


def nn_classify(train_X: np.ndarray, train_labels: np.ndarray,
                query_X: np.ndarray) -> np.ndarray:
    """1-nearest-neighbor by Euclidean distance; ties take the first row.

    Callers that need a page-id tie rule should order train rows by id.
    """
    if train_X.shape[0] != len(train_labels):
        raise DataError("train matrix and labels disagree")
    D = _sq_dists(np.asarray(query_X, dtype=np.float64),
                  np.asarray(train_X, dtype=np.float64))
    return np.asarray(train_labels)[D.argmin(axis=1)]


def cluster_purity(labels: np.ndarray, truth: list | np.ndarray) -> float:
    """Fraction of points whose cluster's majority truth matches theirs."""
    labels = np.asarray(labels)
    truth = np.asarray(truth)
    if labels.shape != truth.shape:
        raise DataError("labels and truth differ in length")
    correct = 0
    for c in np.unique(labels):
        members = truth[labels == c]
        _, counts = np.unique(members, return_counts=True)
        correct += int(counts.max())
    return correct / len(labels)


def query_similar(query: BigramHistogram,
                  histograms: dict[str, BigramHistogram],
                  kind: str = "dot", transform: str = "sqrt",
                  top: int = 10) -> list[tuple[str, float]]:
    """Pages ranked by descending similarity; score ties by page id."""
    scored = [(pid, similarity(query, h, kind=kind, transform=transform))
              for pid, h in histograms.items()]
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored[:top]
