"""From-scratch convolutional layers with an 8-element rotation group.

All convolutions are bias-free, stride 1, with same-size zero padding.
Group layers keep one learnable base filter per feature and materialize
eight rotated copies of it on every forward pass; rotation by 45 degrees
uses bilinear resampling of the filter grid, while 90-degree steps are
exact index permutations. Group layers evaluate the four 90-degree
sectors by pulling the input back with exact permutations and reusing
one convolution per 45-degree remainder, so the group block is
equivariant to 90-degree rotations at the bit level: rotating the page
permutes orientation channels and rotates every map with no float
drift at all.

Everything here works on (B, C, H, W) arrays and supports float32 for
speed and float64 for finite-difference gradient checks.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError

N_ORIENT = 8

# Upper bound on the scratch array used by the im2col convolution.
_CHUNK_BYTES = 64 * 2**20


# ---------------------------------------------------------------------------
# filter rotation

_ROT45_CACHE: dict[int, np.ndarray] = {}


def _rot45_matrix(k: int) -> np.ndarray:
    """Bilinear resampling matrix for a 45-degree CCW filter rotation.

    Output cell p samples the input at R(45) p around the filter center;
    samples falling outside the k-by-k support contribute zero.
    """
    if k in _ROT45_CACHE:
        return _ROT45_CACHE[k]
    c = (k - 1) / 2.0
    cos = sin = np.sqrt(0.5)
    m = np.zeros((k * k, k * k))
    for i in range(k):
        for j in range(k):
            u, v = i - c, j - c
            us = cos * u + sin * v
            vs = -sin * u + cos * v
            si, sj = us + c, vs + c
            i0, j0 = int(np.floor(si)), int(np.floor(sj))
            fi, fj = si - i0, sj - j0
            for di, wi in ((0, 1 - fi), (1, fi)):
                for dj, wj in ((0, 1 - fj), (1, fj)):
                    ii, jj = i0 + di, j0 + dj
                    if 0 <= ii < k and 0 <= jj < k and wi * wj != 0.0:
                        m[i * k + j, ii * k + jj] = wi * wj
    _ROT45_CACHE[k] = m
    return m


def rotate_filters(w: np.ndarray, r: int) -> np.ndarray:
    """Rotate trailing (k, k) filter grids by r * 45 degrees CCW.

    The 45-degree half-step is applied first so that copies two
    orientations apart are exact rot90 images of each other.
    """
    r = r % N_ORIENT
    q, rem = divmod(r, 2)
    k = w.shape[-1]
    out = w
    if rem:
        m = _rot45_matrix(k).astype(w.dtype)
        out = (w.reshape(-1, k * k) @ m.T).reshape(w.shape)
    if q:
        out = np.rot90(out, q, axes=(-2, -1))
    return np.ascontiguousarray(out)


def rotate_filters_adjoint(g: np.ndarray, r: int) -> np.ndarray:
    """Adjoint of rotate_filters, for backpropagating to base filters."""
    r = r % N_ORIENT
    q, rem = divmod(r, 2)
    k = g.shape[-1]
    out = g
    if q:
        out = np.rot90(out, -q, axes=(-2, -1))
    if rem:
        m = _rot45_matrix(k).astype(g.dtype)
        out = (out.reshape(-1, k * k) @ m).reshape(out.shape)
    return np.ascontiguousarray(out)


# ---------------------------------------------------------------------------
# convolution primitive

def _col_chunks(B: int, H: int, W: int, C: int, k: int, itemsize: int):
    """Yield (b0, b1, h0, h1) spans whose im2col scratch stays in budget.

    Whole samples are grouped into one GEMM when they fit; otherwise a
    single sample is processed in row bands.
    """
    rows_budget = max(1, _CHUNK_BYTES // (C * k * k * itemsize))
    if H * W <= rows_budget:
        bc = max(1, rows_budget // (H * W))
        for b0 in range(0, B, bc):
            yield b0, min(b0 + bc, B), 0, H
    else:
        hc = max(1, rows_budget // W)
        for b in range(B):
            for h0 in range(0, H, hc):
                yield b, b + 1, h0, min(h0 + hc, H)


def conv2d_same(x: np.ndarray, w: np.ndarray, cols_cache: list | None = None) -> np.ndarray:
    """Cross-correlate (B, C, H, W) with (O, C, k, k), same-size output.

    When an empty list is passed as `cols_cache` the im2col chunks are
    stored in it so a following conv2d_same_grads call on the same input
    can skip rebuilding them (the copy dominates the GEMM on this data
    scale).
    """
    B, C, H, W = x.shape
    O, C2, k, k2 = w.shape
    if C2 != C or k != k2 or k % 2 == 0:
        raise DataError(f"bad filter shape {w.shape} for input {x.shape}")
    if H < k or W < k:
        raise DataError(f"input {H}x{W} smaller than kernel {k}")
    pad = k // 2
    dtype = np.result_type(x.dtype, w.dtype)
    wf = w.reshape(O, C * k * k).astype(dtype, copy=False)
    out = np.empty((B, O, H, W), dtype=dtype)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # (B, C, H, W, k, k) view
    for b0, b1, h0, h1 in _col_chunks(B, H, W, C, k, xp.dtype.itemsize):
        nb, nh = b1 - b0, h1 - h0
        cols = win[b0:b1, :, h0:h1].transpose(0, 2, 3, 1, 4, 5).reshape(nb * nh * W, C * k * k)
        cols = cols.astype(dtype, copy=False)
        if cols_cache is not None:
            cols_cache.append(cols)
        y = cols @ wf.T
        out[b0:b1, :, h0:h1, :] = y.reshape(nb, nh, W, O).transpose(0, 3, 1, 2)
    return out


def conv2d_same_grads(
    x: np.ndarray,
    w: np.ndarray,
    gy: np.ndarray,
    need_gx: bool = True,
    cols_cache: list | None = None,
) -> tuple[np.ndarray | None, np.ndarray]:
    """Gradients of conv2d_same w.r.t. input and filters.

    `cols_cache` may hold the chunks recorded by conv2d_same for the
    same x; they are reused instead of rebuilt.
    """
    B, C, H, W = x.shape
    O, _, k, _ = w.shape
    pad = k // 2
    dtype = np.result_type(x.dtype, w.dtype, gy.dtype)
    gw = np.zeros((O, C * k * k), dtype=dtype)
    win = None
    if not cols_cache:
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        win = sliding_window_view(xp, (k, k), axis=(2, 3))
        itemsize = xp.dtype.itemsize
    else:
        itemsize = x.dtype.itemsize
    for i, (b0, b1, h0, h1) in enumerate(_col_chunks(B, H, W, C, k, itemsize)):
        nb, nh = b1 - b0, h1 - h0
        if cols_cache:
            cols = cols_cache[i]
        else:
            cols = win[b0:b1, :, h0:h1].transpose(0, 2, 3, 1, 4, 5).reshape(nb * nh * W, C * k * k)
        g = gy[b0:b1, :, h0:h1, :].transpose(0, 2, 3, 1).reshape(nb * nh * W, O)
        gw += g.astype(dtype, copy=False).T @ cols.astype(dtype, copy=False)
    gx = None
    if need_gx:
        # Input gradient is a same-padded correlation with transposed,
        # spatially flipped filters (valid because k is odd, pad = k//2).
        wt = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        gx = conv2d_same(gy, wt)
    return gx, gw.reshape(w.shape)


# ---------------------------------------------------------------------------
# layers

class Layer:
    trainable = False
    # trainers flip this on so convolutions keep their im2col chunks
    # alive from forward to backward; inference leaves it off to keep
    # page-scale forwards memory-light
    keep_cols = False

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, gy: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Conv(Layer):
    """Plain bias-free convolution."""

    trainable = True

    def __init__(self, w: np.ndarray):
        self.w = np.asarray(w)
        self.gw = None
        self._x = None
        self._cols = None

    @property
    def kernel(self) -> int:
        return self.w.shape[-1]

    def materialized(self) -> np.ndarray:
        return self.w

    def forward(self, x):
        self._x = x
        self._cols = [] if self.keep_cols else None
        return conv2d_same(x, self.w, cols_cache=self._cols)

    def backward(self, gy):
        gx, self.gw = conv2d_same_grads(self._x, self.w, gy, cols_cache=self._cols)
        self._x = None
        self._cols = None
        return gx


class GroupLift(Layer):
    """First group layer: lifts a plain image onto 8 orientations.

    Base weights have shape (F, C_in, k, k); the materialized bank is
    (F * 8, C_in, k, k) with output channel f * 8 + r holding the base
    filter rotated by r * 45 degrees.

    The forward pass does not convolve the materialized bank directly.
    Orientation r = 2q + rem is computed as rot90^q of a convolution of
    the rot90^-q pulled-back input with the rem-rotated base, so the
    arithmetic for a 90-degree rotated input reuses byte-identical
    intermediate arrays and the equivariance
    forward(rot90(x))[f, r] == rot90(forward(x)[f, r-2]) holds exactly,
    not just up to float rounding.
    """

    trainable = True

    def __init__(self, w: np.ndarray):
        self.w = np.asarray(w)
        self.gw = None
        self._x = None
        self._cols = None

    @property
    def kernel(self) -> int:
        return self.w.shape[-1]

    def materialized(self) -> np.ndarray:
        F, C, k, _ = self.w.shape
        mat = np.empty((F, N_ORIENT, C, k, k), dtype=self.w.dtype)
        for r in range(N_ORIENT):
            mat[:, r] = rotate_filters(self.w, r)
        return mat.reshape(F * N_ORIENT, C, k, k)

    def _half_bank(self) -> np.ndarray:
        # orientations 0 (base) and 1 (45 degrees), stacked: (2F, C, k, k)
        return np.concatenate([self.w, rotate_filters(self.w, 1)])

    def forward(self, x):
        self._x = x
        F = self.w.shape[0]
        B, _, H, W = x.shape
        bank = self._half_bank()
        dtype = np.result_type(x.dtype, self.w.dtype)
        out = np.empty((B, F, N_ORIENT, H, W), dtype=dtype)
        self._cols = {q: [] for q in range(4)} if self.keep_cols else None
        for q in range(4):
            xq = np.rot90(x, -q, axes=(-2, -1))
            cache = self._cols[q] if self._cols is not None else None
            y = np.rot90(conv2d_same(xq, bank, cols_cache=cache), q, axes=(-2, -1))
            out[:, :, 2 * q] = y[:, :F]
            out[:, :, 2 * q + 1] = y[:, F:]
        return out.reshape(B, F * N_ORIENT, H, W)

    def backward(self, gy):
        F, C, k, _ = self.w.shape
        B = gy.shape[0]
        H, W = gy.shape[-2:]
        bank = self._half_bank()
        gyg = gy.reshape(B, F, N_ORIENT, H, W)
        gx = None
        gbank = None
        for q in range(4):
            xq = np.rot90(self._x, -q, axes=(-2, -1))
            g_yq = np.concatenate([gyg[:, :, 2 * q], gyg[:, :, 2 * q + 1]], axis=1)
            g_yq = np.rot90(g_yq, -q, axes=(-2, -1))
            cache = self._cols[q] if self._cols is not None else None
            gxq, gbq = conv2d_same_grads(xq, bank, g_yq, cols_cache=cache)
            gbank = gbq if gbank is None else gbank + gbq
            gxc = np.rot90(gxq, q, axes=(-2, -1))
            gx = gxc.copy() if gx is None else gx + gxc
        self.gw = gbank[:F] + rotate_filters_adjoint(gbank[F:], 1)
        self._x = None
        self._cols = None
        return gx


class GroupConv(Layer):
    """Group convolution over (feature, orientation) channels.

    Base weights have shape (F_out, C_in, 8, k, k). The materialized
    bank at output orientation r uses the base filters rotated by r and
    cyclically shifted along the orientation axis by r, which carries
    the rotation group structure through the stack.

    As in GroupLift, orientation r = 2q + rem is evaluated by pulling
    the input back with exact index permutations (orientation roll by
    -2q, spatial rot90 by -q) and convolving with a bank that only
    carries the 45-degree remainder, which makes the 90-degree
    equivariance of the layer exact at the bit level.
    """

    trainable = True

    def __init__(self, w: np.ndarray):
        self.w = np.asarray(w)
        self.gw = None
        self._x = None
        self._cols = None

    @property
    def kernel(self) -> int:
        return self.w.shape[-1]

    def materialized(self) -> np.ndarray:
        F, C, S, k, _ = self.w.shape
        mat = np.empty((F, N_ORIENT, C, S, k, k), dtype=self.w.dtype)
        for r in range(N_ORIENT):
            mat[:, r] = np.roll(rotate_filters(self.w, r), r, axis=2)
        return mat.reshape(F * N_ORIENT, C * S, k, k)

    def _half_bank(self) -> np.ndarray:
        # remainder orientations 0 and 1 with their orientation roll
        # baked in: (2F, C*S, k, k)
        F, C, S, k, _ = self.w.shape
        v1 = np.roll(rotate_filters(self.w, 1), 1, axis=2)
        return np.concatenate([self.w, v1]).reshape(2 * F, C * S, k, k)

    def forward(self, x):
        self._x = x
        F, C, S, k, _ = self.w.shape
        B, _, H, W = x.shape
        bank = self._half_bank()
        dtype = np.result_type(x.dtype, self.w.dtype)
        xg = x.reshape(B, C, S, H, W)
        out = np.empty((B, F, N_ORIENT, H, W), dtype=dtype)
        self._cols = {q: [] for q in range(4)} if self.keep_cols else None
        for q in range(4):
            xr = np.roll(xg, -2 * q, axis=2).reshape(B, C * S, H, W)
            xq = np.rot90(xr, -q, axes=(-2, -1))
            cache = self._cols[q] if self._cols is not None else None
            y = np.rot90(conv2d_same(xq, bank, cols_cache=cache), q, axes=(-2, -1))
            out[:, :, 2 * q] = y[:, :F]
            out[:, :, 2 * q + 1] = y[:, F:]
        return out.reshape(B, F * N_ORIENT, H, W)

    def backward(self, gy):
        F, C, S, k, _ = self.w.shape
        B = gy.shape[0]
        H, W = gy.shape[-2:]
        bank = self._half_bank()
        gyg = gy.reshape(B, F, N_ORIENT, H, W)
        xg = self._x.reshape(B, C, S, H, W)
        gx = None
        gbank = None
        for q in range(4):
            xr = np.roll(xg, -2 * q, axis=2).reshape(B, C * S, H, W)
            xq = np.rot90(xr, -q, axes=(-2, -1))
            g_yq = np.concatenate([gyg[:, :, 2 * q], gyg[:, :, 2 * q + 1]], axis=1)
            g_yq = np.rot90(g_yq, -q, axes=(-2, -1))
            cache = self._cols[q] if self._cols is not None else None
            gxq, gbq = conv2d_same_grads(xq, bank, g_yq, cols_cache=cache)
            gbank = gbq if gbank is None else gbank + gbq
            gxr = np.rot90(gxq, q, axes=(-2, -1)).reshape(B, C, S, H, W)
            gxc = np.roll(gxr, 2 * q, axis=2)
            gx = gxc if gx is None else gx + gxc
        gbank = gbank.reshape(2 * F, C, S, k, k)
        gw = gbank[:F] + rotate_filters_adjoint(np.roll(gbank[F:], -1, axis=2), 1)
        self.gw = gw
        self._x = None
        self._cols = None
        return gx.reshape(B, C * S, H, W)


class GroupMax(Layer):
    """Orientation pooling: elementwise max over the 8 rotated copies."""

    def forward(self, x):
        B, FC, H, W = x.shape
        if FC % N_ORIENT:
            raise DataError(f"channel count {FC} not divisible by {N_ORIENT}")
        xg = x.reshape(B, FC // N_ORIENT, N_ORIENT, H, W)
        self._arg = np.argmax(xg, axis=2)
        self._shape = xg.shape
        return np.max(xg, axis=2)

    def backward(self, gy):
        g = np.zeros(self._shape, dtype=gy.dtype)
        np.put_along_axis(g, self._arg[:, :, None], gy[:, :, None], axis=2)
        B, F, S, H, W = self._shape
        return g.reshape(B, F * S, H, W)


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0)

    def backward(self, gy):
        return np.where(self._mask, gy, 0)


# ---------------------------------------------------------------------------
# optimizer

class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[int, np.ndarray] = {}
        self._v: dict[int, np.ndarray] = {}

    def step(self, layers: list[Layer]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, layer in enumerate(layers):
            if not layer.trainable:
                continue
            g = layer.gw
            if g is None:
                continue
            g = g.astype(layer.w.dtype, copy=False)
            m = self._m.setdefault(i, np.zeros_like(layer.w))
            v = self._v.setdefault(i, np.zeros_like(layer.w))
            m += (1 - b1) * (g - m)
            v += (1 - b2) * (g * g - v)
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            layer.w -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def forward_layers(layers: list[Layer], x: np.ndarray) -> np.ndarray:
    for layer in layers:
        x = layer.forward(x)
    return x


def backward_layers(layers: list[Layer], gy: np.ndarray) -> np.ndarray:
    for layer in reversed(layers):
        gy = layer.backward(gy)
    return gy
