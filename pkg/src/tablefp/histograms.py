"""Histogram extraction from feature maps: peaks, pools, unigrams.

Peak detection suppresses weak activity with a bias proportional to the
global map maximum, groups the surviving activity per map, and emits
one decoding entry per group at its activity-weighted center of mass.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage
from scipy.cluster.hierarchy import fcluster, linkage

from .errors import DataError, UndefinedStatisticError
from .recognizer import ActivationStack, N_DIGITS
from .recompose import FEATURE_LABELS, N_FEATURES, FeatureMaps110

ISO_DAMPING = 3.0          # alpha: isolated maps are divided by this
PEAK_BIAS = 0.12           # beta: bias = beta * global max over all maps
LINKAGE_CUT = 15.0         # merge distance for activity groups, in px
NOISE_FLOOR = 1e-6         # relative to the global max

HISTOGRAM_COLUMNS = list(FEATURE_LABELS)


@dataclass
class BigramHistogram:
    """110-dim fingerprint: 100 bigram bins then 10 isolated-digit bins."""

    counts: np.ndarray
    transform: str = "none"
    method: str = "peaks"

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.float64)
        if c.shape != (N_FEATURES,):
            raise DataError(f"histogram must have {N_FEATURES} bins, got {c.shape}")
        if np.any(c < 0) or not np.all(np.isfinite(c)):
            raise DataError("histogram bins must be finite and non-negative")
        if self.transform not in ("none", "sqrt"):
            raise DataError(f"unknown transform {self.transform!r}")
        if self.method not in ("peaks", "pooled", "unigram", "annotated"):
            raise DataError(f"unknown method {self.method!r}")
        self.counts = c

    @property
    def total(self) -> float:
        return float(self.counts.sum())


def sqrt_transform(hist: BigramHistogram) -> BigramHistogram:
    """Elementwise square root; refuses to apply twice."""
    if hist.transform == "sqrt":
        raise DataError("histogram already sqrt-transformed")
    return replace(hist, counts=np.sqrt(hist.counts), transform="sqrt")


def pearson(a, b) -> float:
    """Pearson correlation; undefined for zero-variance inputs."""
    x = np.asarray(a.counts if isinstance(a, BigramHistogram) else a, dtype=np.float64)
    y = np.asarray(b.counts if isinstance(b, BigramHistogram) else b, dtype=np.float64)
    if x.shape != y.shape:
        raise DataError(f"length mismatch {x.shape} vs {y.shape}")
    xd = x - x.mean()
    yd = y - y.mean()
    vx = float(np.dot(xd, xd))
    vy = float(np.dot(yd, yd))
    if vx == 0.0 or vy == 0.0:
        raise UndefinedStatisticError("pearson undefined for zero-variance input")
    return float(np.dot(xd, yd) / np.sqrt(vx * vy))


@dataclass
class DigitDecoding:
    """One detected feature: its bin label and page position."""

    label: str
    x: float
    y: float
    weight: float
    map_index: int


def _group_activity(values: np.ndarray, cut: float) -> list[tuple[float, float, float]]:
    """Cluster the positive support of one map.

    Connected regions are found first; their activity centers are then
    merged by single-linkage clustering cut at `cut` pixels. Returns
    (y, x, mass) per group, mass-weighted.
    """
    support = values > 0
    if not support.any():
        return []
    lab, n = ndimage.label(support, structure=np.ones((3, 3), dtype=int))
    idx = np.arange(1, n + 1)
    masses = ndimage.sum_labels(values, lab, idx)
    centers = np.array(ndimage.center_of_mass(values, lab, idx), dtype=np.float64).reshape(n, 2)
    if n == 1:
        return [(float(centers[0, 0]), float(centers[0, 1]), float(masses[0]))]
    assign = fcluster(linkage(centers, method="single"), t=cut, criterion="distance")
    out = []
    for cluster_id in np.unique(assign):
        sel = assign == cluster_id
        m = masses[sel]
        c = (centers[sel] * m[:, None]).sum(axis=0) / m.sum()
        out.append((float(c[0]), float(c[1]), float(m.sum())))
    out.sort(key=lambda t: (t[0], t[1]))
    return out


def peak_detect(
    features: FeatureMaps110,
    alpha: float = ISO_DAMPING,
    beta: float = PEAK_BIAS,
    cut: float = LINKAGE_CUT,
    noise_floor: float = NOISE_FLOOR,
) -> list[DigitDecoding]:
    """Decode feature maps into a list of located digit features."""
    if alpha <= 0:
        raise DataError("alpha must be positive")
    work = features.maps.astype(np.float64).copy()
    work[100:] /= alpha
    gmax = float(work.max())
    if gmax <= 0.0:
        return []
    work -= beta * gmax
    np.clip(work, 0.0, None, out=work)
    work[work < noise_floor * gmax] = 0.0
    decodings = []
    for m in range(N_FEATURES):
        for y, x, mass in _group_activity(work[m], cut):
            decodings.append(DigitDecoding(FEATURE_LABELS[m], x, y, mass, m))
    return decodings


def decode_to_histogram(decodings: list[DigitDecoding]) -> BigramHistogram:
    counts = np.zeros(N_FEATURES)
    for d in decodings:
        counts[d.map_index] += 1.0
    return BigramHistogram(counts, method="peaks")


def pooled_histogram(features: FeatureMaps110) -> BigramHistogram:
    """Spatial sums of the 110 maps; no peak detection involved."""
    return BigramHistogram(features.maps.sum(axis=(1, 2)).astype(np.float64), method="pooled")


def unigram_histogram(
    stack: ActivationStack,
    beta: float = PEAK_BIAS,
    cut: float = LINKAGE_CUT,
    noise_floor: float = NOISE_FLOOR,
) -> BigramHistogram:
    """Peak detection straight on the ten digit maps, no recomposition.

    Counts land in the u0..u9 bins of the shared 110-dim layout so that
    every histogram variant shares one storage schema.
    """
    work = np.clip(stack.maps.astype(np.float64), 0.0, None).copy()
    gmax = float(work.max())
    counts = np.zeros(N_FEATURES)
    if gmax <= 0.0:
        return BigramHistogram(counts, method="unigram")
    work -= beta * gmax
    np.clip(work, 0.0, None, out=work)
    work[work < noise_floor * gmax] = 0.0
    for j in range(N_DIGITS):
        counts[100 + j] = len(_group_activity(work[j], cut))
    return BigramHistogram(counts, method="unigram")
