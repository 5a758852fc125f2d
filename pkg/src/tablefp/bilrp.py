"""Second-order relevance explanations for page similarity.

The dot product between two square-rooted histograms decomposes as a
sum over feature dimensions; each dimension's value is propagated back
to page pixels with layerwise relevance rules, and the outer product
of the two per-page relevance fields explains which pixel regions of
page A interact with which regions of page B. With gamma = 0 and a
vanishing stabilizer the propagation equals gradient times input
through this bias-free ReLU stack, so the pair matrix matches the
Hessian-times-product form.

Relevance rules used here:
  convolution   z-rule with gamma-boosted positive weights
  ReLU          pass-through on the active mask
  max / min     routed to the winning argument, ties split evenly
  shifts        index adjoint
  spatial sum   proportional to each pixel's contribution
  absence gate  no relevance; the gated digit map carries all of it
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .net import Conv, GroupConv, GroupLift, GroupMax, ReLU, conv2d_same
from .recognizer import ModelWeights, build_layers
from .recompose import (
    ABSENCE_REL_THRESHOLD,
    N_FEATURES,
    SHIFTS,
    absence_gate,
    bigram_index,
    shift_left,
    shift_right,
)

EPSILON = 1e-9
POOL_GRID = 15


def _stab(z: np.ndarray, eps: float) -> np.ndarray:
    return z + eps * np.where(z >= 0, 1.0, -1.0)


def relprop_conv(x: np.ndarray, w: np.ndarray, R: np.ndarray,
                 gamma: float = 0.0, eps: float = EPSILON,
                 z: np.ndarray | None = None) -> np.ndarray:
    """z-rule through a bias-free convolution.

    x is the cached layer input (1, C, H, W); R carries a leading
    explained-dimension axis (M, O, H, W). Returns (M, C, H, W).
    """
    rho = w if gamma == 0.0 else w + gamma * np.clip(w, 0.0, None)
    if z is None or gamma != 0.0:
        z = conv2d_same(x, rho)
    s = R / _stab(z, eps)
    back = rho[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).copy()
    c = conv2d_same(s, back)
    return x * c


def _split_max(values: np.ndarray, axis: int, R: np.ndarray) -> np.ndarray:
    """Distribute R over the argmax entries along axis, splitting ties."""
    vmax = values.max(axis=axis, keepdims=True)
    mask = (values == vmax).astype(R.dtype)
    count = mask.sum(axis=axis, keepdims=True)
    return mask / count * np.expand_dims(R, axis)


def relprop_digit_net(pixels: np.ndarray, weights: ModelWeights,
                      R_digit: np.ndarray, gamma: float = 0.0,
                      eps: float = EPSILON,
                      cache: tuple | None = None) -> np.ndarray:
    """Propagate (M, 10, H, W) relevance on digit maps back to pixels.

    Returns (M, H, W). cache may hold a previous (layers, inputs,
    outputs) triple from digit_net_cache to amortize the forward pass.
    """
    layers, inputs, outputs = cache if cache is not None else digit_net_cache(pixels, weights)
    R = R_digit
    for layer, x, z in zip(reversed(layers), reversed(inputs), reversed(outputs)):
        if isinstance(layer, (Conv, GroupLift, GroupConv)):
            R = relprop_conv(x, layer.materialized(), R, gamma=gamma, eps=eps, z=z)
        elif isinstance(layer, ReLU):
            R = R * (x > 0)
        elif isinstance(layer, GroupMax):
            B, FC, H, W = x.shape
            xg = x.reshape(B, FC // 8, 8, H, W)
            R = _split_max(xg, 2, R).reshape(R.shape[0], FC, H, W)
        else:
            raise DataError(f"no relevance rule for {type(layer).__name__}")
    if R.shape[1] != 1:
        raise DataError("relevance did not land on a single input channel")
    return R[:, 0]


def digit_net_cache(pixels: np.ndarray, weights: ModelWeights) -> tuple:
    """Forward pass that keeps every layer's input and output."""
    layers = build_layers(weights)
    x = pixels.astype(np.float32)[None, None]
    inputs, outputs = [], []
    for layer in layers:
        inputs.append(x)
        x = layer.forward(x)
        outputs.append(x)
    return layers, inputs, outputs


# ---------------------------------------------------------------------------
# recomposition stage

def feature_forward(a: np.ndarray, shifts: tuple[int, ...] = SHIFTS,
                    absence_rel: float = ABSENCE_REL_THRESHOLD) -> dict:
    """Rectified digit maps to all per-dimension ingredients.

    Returns the rectified stack, per-shift min maps, the combined
    bigram maps, the absence gate, iso maps, and pooled values.
    """
    from .recognizer import ActivationStack

    rect = np.clip(a, 0.0, None)
    stack = ActivationStack(maps=rect, scale=1.0, rotation=0)
    gate = absence_gate(stack, shifts, absence_rel)
    shifted = {d: shift_left(rect, d) for d in shifts}
    pooled = np.zeros(N_FEATURES)
    iso = rect * gate[None]
    for j in range(10):
        for k in range(10):
            m = bigram_index(j, k)
            best = None
            for d in shifts:
                cand = np.minimum(rect[j], shifted[d][k])
                best = cand if best is None else np.maximum(best, cand)
            pooled[m] = best.sum()
        pooled[100 + j] = iso[j].sum()
    return {"rect": rect, "gate": gate, "shifted": shifted, "iso": iso,
            "pooled": pooled, "shifts": shifts, "raw": a}


def feature_relevance(fw: dict, dims: np.ndarray, top_values: np.ndarray) -> np.ndarray:
    """Relevance on the raw digit maps for each explained dimension.

    dims indexes the 110-dim layout; top_values[m] is the relevance
    assigned to that dimension (for sqrt histograms, sqrt of the pooled
    count). Pooled-sum, max-over-shift, min, and shift rules as in the
    module docstring. Returns (M, 10, H, W).
    """
    rect, gate, shifted = fw["rect"], fw["gate"], fw["shifted"]
    shifts = fw["shifts"]
    M = len(dims)
    Ra = np.zeros((M, *rect.shape))
    for mi, (dim, rv) in enumerate(zip(dims, top_values)):
        if dim >= 100:
            j = dim - 100
            iso_j = fw["iso"][j]
            h = iso_j.sum()
            if h <= 0 or rv == 0:
                continue
            Ra[mi, j] += iso_j / h * rv
            continue
        j, k = divmod(int(dim), 10)
        mins = {d: np.minimum(rect[j], shifted[d][k]) for d in shifts}
        best = np.maximum.reduce([mins[d] for d in shifts])
        h = best.sum()
        if h <= 0 or rv == 0:
            continue
        R_map = best / h * rv
        stackv = np.stack([mins[d] for d in shifts])
        winner = (stackv == best[None]).astype(float)
        winner /= winner.sum(axis=0, keepdims=True)
        for di, d in enumerate(shifts):
            R_d = R_map * winner[di]
            sk = shifted[d][k]
            to_j = np.where(rect[j] < sk, 1.0, np.where(rect[j] == sk, 0.5, 0.0))
            Ra[mi, j] += R_d * to_j
            Ra[mi, k] += shift_right((R_d * (1.0 - to_j))[None], d)[0]
    return Ra * (fw["raw"] > 0)[None]


# ---------------------------------------------------------------------------
# pairing

def pool_relevance(R: np.ndarray, grid: int = POOL_GRID) -> tuple[np.ndarray, np.ndarray]:
    """Sum (M, H, W) relevance into a grid x grid patch lattice.

    Returns (M, grid*grid) pooled values and (grid*grid, 4) patch boxes
    as (y0, x0, y1, x1) for rendering. Summation preserves totals, and
    pooling each branch before the outer product equals pooling the
    full pair matrix afterwards.
    """
    M, H, W = R.shape
    ye = np.linspace(0, H, grid + 1).round().astype(int)
    xe = np.linspace(0, W, grid + 1).round().astype(int)
    pooled = np.zeros((M, grid * grid))
    boxes = np.zeros((grid * grid, 4), dtype=int)
    csum = R.cumsum(axis=1).cumsum(axis=2)
    padded = np.zeros((M, H + 1, W + 1))
    padded[:, 1:, 1:] = csum
    for gy in range(grid):
        for gx in range(grid):
            y0, y1 = ye[gy], ye[gy + 1]
            x0, x1 = xe[gx], xe[gx + 1]
            cell = gy * grid + gx
            pooled[:, cell] = (padded[:, y1, x1] - padded[:, y0, x1]
                               - padded[:, y1, x0] + padded[:, y0, x0])
            boxes[cell] = (y0, x0, y1, x1)
    return pooled, boxes


@dataclass
class BilrpResult:
    pair: np.ndarray
    boxes_a: np.ndarray
    boxes_b: np.ndarray
    dims: np.ndarray
    branch_a: np.ndarray
    branch_b: np.ndarray
    similarity: float
    conservation_error: float
    meta: dict = field(default_factory=dict)


def _branch_relevance(pixels: np.ndarray, weights: ModelWeights,
                      dims: np.ndarray, tops: np.ndarray,
                      gamma: float, eps: float, chunk: int,
                      grid: int, cache: tuple | None = None,
                      fw: dict | None = None) -> np.ndarray:
    if cache is None:
        cache = digit_net_cache(pixels, weights)
    if fw is None:
        fw = feature_forward(np.asarray(cache[2][-1][0], dtype=np.float64))
    pooled_parts = []
    for lo in range(0, len(dims), chunk):
        sel = slice(lo, lo + chunk)
        Ra = feature_relevance(fw, dims[sel], tops[sel])
        Rpix = relprop_digit_net(pixels, weights, Ra.astype(np.float32),
                                 gamma=gamma, eps=eps, cache=cache)
        pooled_parts.append(pool_relevance(np.asarray(Rpix, dtype=np.float64), grid)[0])
    return np.concatenate(pooled_parts, axis=0)


def bilrp_pair(pixels_a: np.ndarray, pixels_b: np.ndarray,
               weights: ModelWeights,
               dims: np.ndarray | None = None,
               gamma: float = 0.0, eps: float = EPSILON,
               grid: int = POOL_GRID, chunk: int = 16,
               top: str = "sqrt") -> BilrpResult:
    """Pairwise pixel-interaction relevance for two binarized pages.

    top 'sqrt' explains the dot product of square-rooted histograms
    (each dimension m contributes sqrt(h_m(a)) * sqrt(h_m(b)));
    'linear' explains the raw pooled-count dot product. Dimensions
    whose product is zero contribute nothing and are skipped outright,
    which leaves the conservation identity intact.
    """
    if top not in ("sqrt", "linear"):
        raise DataError(f"unknown top mode {top!r}")
    cache_a = digit_net_cache(pixels_a, weights)
    cache_b = digit_net_cache(pixels_b, weights)
    fw_a = feature_forward(np.asarray(cache_a[2][-1][0], dtype=np.float64))
    fw_b = feature_forward(np.asarray(cache_b[2][-1][0], dtype=np.float64))
    pa, pb = fw_a["pooled"], fw_b["pooled"]
    if top == "sqrt":
        va, vb = np.sqrt(pa), np.sqrt(pb)
    else:
        va, vb = pa, pb
    want = np.arange(N_FEATURES) if dims is None else np.asarray(dims, dtype=int)
    live = want[(va[want] * vb[want]) != 0.0]
    sim = float(va[live] @ vb[live])
    branch_a = _branch_relevance(pixels_a, weights, live, va[live], gamma, eps,
                                 chunk, grid, cache=cache_a, fw=fw_a)
    branch_b = _branch_relevance(pixels_b, weights, live, vb[live], gamma, eps,
                                 chunk, grid, cache=cache_b, fw=fw_b)
    pair = branch_a.T @ branch_b
    total = float(pair.sum())
    cons = abs(total - sim) / max(abs(sim), 1e-300)
    H, W = pixels_a.shape
    _, boxes_a = pool_relevance(np.zeros((1, H, W)), grid)
    Hb, Wb = pixels_b.shape
    _, boxes_b = pool_relevance(np.zeros((1, Hb, Wb)), grid)
    return BilrpResult(pair=pair, boxes_a=boxes_a, boxes_b=boxes_b, dims=live,
                       branch_a=branch_a, branch_b=branch_b, similarity=sim,
                       conservation_error=cons,
                       meta={"gamma": gamma, "eps": eps, "top": top, "grid": grid})


def render_interactions(pixels_a: np.ndarray, pixels_b: np.ndarray,
                        result: BilrpResult, out_path: str,
                        top_lines: int = 200) -> str:
    """Side-by-side pages with the strongest patch interactions drawn.

    Positive relevance is red, negative blue; line width and opacity
    scale with magnitude relative to the strongest interaction.
    """
    from .svgplot import SvgCanvas

    gap = 40
    Ha, Wa = pixels_a.shape
    Hb, Wb = pixels_b.shape
    H = max(Ha, Hb) + 20
    W = Wa + Wb + gap + 20
    canvas = SvgCanvas(W, H)
    canvas.image(10, 10, 1.0 - np.clip(pixels_a, 0, 1))
    canvas.image(10 + Wa + gap, 10, 1.0 - np.clip(pixels_b, 0, 1))
    flat = result.pair.ravel()
    if flat.size == 0 or np.all(flat == 0):
        canvas.save(out_path)
        return out_path
    order = np.argsort(np.abs(flat))[::-1][:top_lines]
    vmax = np.abs(flat[order[0]])
    for idx in order:
        ca, cb = divmod(int(idx), result.pair.shape[1])
        v = flat[idx]
        if v == 0:
            continue
        y0a, x0a, y1a, x1a = result.boxes_a[ca]
        y0b, x0b, y1b, x1b = result.boxes_b[cb]
        xa = 10 + (x0a + x1a) / 2.0
        ya = 10 + (y0a + y1a) / 2.0
        xb = 10 + Wa + gap + (x0b + x1b) / 2.0
        yb = 10 + (y0b + y1b) / 2.0
        mag = abs(v) / vmax
        canvas.line(xa, ya, xb, yb,
                    color="#c62828" if v > 0 else "#1565c0",
                    width=0.4 + 2.2 * mag, opacity=0.12 + 0.68 * mag)
    canvas.save(out_path)
    return out_path
