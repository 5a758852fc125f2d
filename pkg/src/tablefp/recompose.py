"""Recomposition of single-digit activations into 110 feature maps.

A bigram map for the ordered pair (j, k) is the pointwise minimum of
digit map j and digit map k translated left by a shift delta, maximised
over the allowed shifts. Ten isolated-digit maps keep digits that have
no neighbor within the shift distance on either side, using binarized
absence maps of the total digit activity. Content shifted out of frame
counts as absent.

The incoming stack is rectified once here; every downstream consumer
(pooling, peak detection, relevance propagation) sees non-negative maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .recognizer import ActivationStack, N_DIGITS

SHIFTS = (8, 10)
ABSENCE_REL_THRESHOLD = 0.1

N_FEATURES = N_DIGITS * N_DIGITS + N_DIGITS

FEATURE_LABELS = tuple(
    [f"b{j}{k}" for j in range(N_DIGITS) for k in range(N_DIGITS)] + [f"u{j}" for j in range(N_DIGITS)]
)


def bigram_index(j: int, k: int) -> int:
    return 10 * j + k


def iso_index(j: int) -> int:
    return 100 + j


@dataclass
class FeatureMaps110:
    """The 100 bigram maps followed by the 10 isolated-digit maps."""

    maps: np.ndarray
    scale: float = 1.0
    rotation: int = 0
    labels: tuple[str, ...] = FEATURE_LABELS

    def __post_init__(self):
        if self.maps.ndim != 3 or self.maps.shape[0] != N_FEATURES:
            raise DataError(f"feature maps must be ({N_FEATURES}, H, W), got {self.maps.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.maps.shape[1:]


def shift_left(maps: np.ndarray, delta: int) -> np.ndarray:
    """Translate content left by delta columns, zero-filling the right edge."""
    if delta < 0:
        raise DataError("shift must be non-negative")
    out = np.zeros_like(maps)
    if delta == 0:
        out[...] = maps
    elif delta < maps.shape[-1]:
        out[..., :-delta] = maps[..., delta:]
    return out


def shift_right(maps: np.ndarray, delta: int) -> np.ndarray:
    if delta < 0:
        raise DataError("shift must be non-negative")
    out = np.zeros_like(maps)
    if delta == 0:
        out[...] = maps
    elif delta < maps.shape[-1]:
        out[..., delta:] = maps[..., :-delta]
    return out


def bigram_maps(stack: ActivationStack, shifts: tuple[int, ...] = SHIFTS) -> np.ndarray:
    """(100, H, W) array of min-composed pair maps, maxed over shifts."""
    if not shifts:
        raise DataError("need at least one shift")
    a = np.clip(stack.maps, 0.0, None)
    h, w = a.shape[1:]
    out = np.zeros((N_DIGITS, N_DIGITS, h, w), dtype=a.dtype)
    for delta in shifts:
        shifted = shift_left(a, delta)
        np.maximum(out, np.minimum(a[:, None], shifted[None, :]), out=out)
    return out.reshape(N_DIGITS * N_DIGITS, h, w)


def absence_gate(
    stack: ActivationStack,
    deltas: int | tuple[int, ...] | None = None,
    absence_rel: float = ABSENCE_REL_THRESHOLD,
) -> np.ndarray:
    """Binary (H, W) map marking pixels with no digit activity at any
    +-delta in the shift set.

    Total rectified digit activity is sampled delta pixels to the left
    and right for every configured shift and binarized against
    absence_rel times its global max; the gate is the min over all the
    binary absence maps. Sampling the whole shift set keeps the gate
    complementary to the bigram band: wherever some shift pairs two
    digits, the gate shuts.
    """
    if deltas is None:
        deltas = SHIFTS
    if isinstance(deltas, int):
        deltas = (deltas,)
    if not deltas:
        raise DataError("need at least one shift")
    a = np.clip(stack.maps, 0.0, None)
    total = a.sum(axis=0)
    thr = absence_rel * float(total.max()) if total.max() > 0 else absence_rel
    gate = np.ones(total.shape, dtype=a.dtype)
    for delta in deltas:
        left_activity = shift_right(total, delta)   # value delta px to the left
        right_activity = shift_left(total, delta)   # value delta px to the right
        np.minimum(gate, (left_activity < thr).astype(a.dtype), out=gate)
        np.minimum(gate, (right_activity < thr).astype(a.dtype), out=gate)
    return gate


def isolated_digit_maps(
    stack: ActivationStack,
    deltas: int | tuple[int, ...] | None = None,
    absence_rel: float = ABSENCE_REL_THRESHOLD,
) -> np.ndarray:
    """(10, H, W) maps of digits with empty neighborhoods at the shifts.

    A digit survives only where both sides are below the absence
    threshold. The binary gate multiplies the rectified map, which
    equals the min against the gate for activations in [0, 1] but stays
    positively homogeneous for arbitrary activation scales.
    """
    a = np.clip(stack.maps, 0.0, None)
    absent = absence_gate(stack, deltas, absence_rel)
    return a * absent[None]


def recompose(
    stack: ActivationStack,
    shifts: tuple[int, ...] = SHIFTS,
    iso_deltas: int | tuple[int, ...] | None = None,
    absence_rel: float = ABSENCE_REL_THRESHOLD,
) -> FeatureMaps110:
    big = bigram_maps(stack, shifts)
    iso = isolated_digit_maps(stack, iso_deltas if iso_deltas is not None else shifts, absence_rel)
    maps = np.concatenate([big, iso], axis=0).astype(np.float32)
    return FeatureMaps110(maps, scale=stack.scale, rotation=stack.rotation)
