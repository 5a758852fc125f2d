"""Digit detector: a rotation-group CNN trained on single-digit patches.

The network maps a binarized page to ten same-size activation maps, one
per digit. Four group-convolution layers (kernels 3, 3, 5, 5) carry an
8-orientation axis, orientation pooling collapses it, and three plain
convolutions (kernels 5, 1, 1) produce the digit channels. All layers
are bias-free; the final layer is linear.

Training patches contain either a single digit with a context border or
contrast content (letters, line work) with an all-zero target. The loss
is mean squared error split into bbox and context regions, the context
term down-weighted by 0.3.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.signal import fftconvolve

from . import net
from .errors import DataError, TrainingDivergedError
from .preprocess import PageImage, apply_global_transform

N_DIGITS = 10
GROUP_KERNELS = (3, 3, 5, 5)
PLAIN_KERNELS = (5, 1, 1)
RECEPTIVE_FIELD = 1 + sum(k - 1 for k in GROUP_KERNELS + PLAIN_KERNELS)

_MAGIC = b"TFPW"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Channel widths; kernel sizes and the 10-digit output are fixed."""

    group_feats: tuple[int, int, int, int] = (16, 16, 32, 64)
    plain_feats: tuple[int, int] = (64, 32)

    def __post_init__(self):
        if len(self.group_feats) != 4 or len(self.plain_feats) != 2:
            raise DataError("config needs 4 group widths and 2 plain widths")
        if any(f <= 0 for f in self.group_feats + self.plain_feats):
            raise DataError("channel widths must be positive")

    @classmethod
    def default(cls) -> "ModelConfig":
        return cls()

    @classmethod
    def desk(cls) -> "ModelConfig":
        """Small instantiation for CPU-scale experiments and tests."""
        return cls(group_feats=(3, 4, 4, 10), plain_feats=(20, 12))

    def layer_shapes(self) -> dict[str, tuple[int, ...]]:
        g1, g2, g3, g4 = self.group_feats
        p1, p2 = self.plain_feats
        k1, k2, k3, k4 = GROUP_KERNELS
        q1, q2, q3 = PLAIN_KERNELS
        return {
            "g1": (g1, 1, k1, k1),
            "g2": (g2, g1, net.N_ORIENT, k2, k2),
            "g3": (g3, g2, net.N_ORIENT, k3, k3),
            "g4": (g4, g3, net.N_ORIENT, k4, k4),
            "p1": (p1, g4, q1, q1),
            "p2": (p2, p1, q2, q2),
            "p3": (N_DIGITS, p2, q3, q3),
        }


LAYER_ORDER = ("g1", "g2", "g3", "g4", "p1", "p2", "p3")


@dataclass
class ModelWeights:
    config: ModelConfig
    arrays: dict[str, np.ndarray]

    def __post_init__(self):
        shapes = self.config.layer_shapes()
        for name in LAYER_ORDER:
            if name not in self.arrays:
                raise DataError(f"missing weight array {name}")
            got = self.arrays[name].shape
            if tuple(got) != shapes[name]:
                raise DataError(f"weight {name} has shape {got}, expected {shapes[name]}")

    def copy(self) -> "ModelWeights":
        return ModelWeights(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def digest(self) -> str:
        h = hashlib.sha256()
        for name in LAYER_ORDER:
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.arrays[name], dtype=np.float32).tobytes())
        return h.hexdigest()


def init_weights(config: ModelConfig, seed: int = 0) -> ModelWeights:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    arrays = {}
    for name, shape in config.layer_shapes().items():
        fan_in = int(np.prod(shape[1:]))
        std = np.sqrt(2.0 / fan_in)
        arrays[name] = (rng.standard_normal(shape) * std).astype(np.float32)
    return ModelWeights(config, arrays)


def build_layers(weights: ModelWeights) -> list[net.Layer]:
    a = weights.arrays
    return [
        net.GroupLift(a["g1"]),
        net.ReLU(),
        net.GroupConv(a["g2"]),
        net.ReLU(),
        net.GroupConv(a["g3"]),
        net.ReLU(),
        net.GroupConv(a["g4"]),
        net.GroupMax(),
        net.Conv(a["p1"]),
        net.ReLU(),
        net.Conv(a["p2"]),
        net.ReLU(),
        net.Conv(a["p3"]),
    ]


@dataclass
class ActivationStack:
    """Ten digit activation maps aligned with the page they came from."""

    maps: np.ndarray
    scale: float = 1.0
    rotation: int = 0

    def __post_init__(self):
        if self.maps.ndim != 3 or self.maps.shape[0] != N_DIGITS:
            raise DataError(f"activation stack must be (10, H, W), got {self.maps.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.maps.shape[1:]


def forward(page: PageImage | np.ndarray, weights: ModelWeights) -> ActivationStack:
    """Run the detector over a full binarized page."""
    pixels = page.pixels if isinstance(page, PageImage) else np.asarray(page)
    if pixels.ndim != 2:
        raise DataError(f"expected a 2-D page, got shape {pixels.shape}")
    h, w = pixels.shape
    if min(h, w) < RECEPTIVE_FIELD:
        raise DataError(f"page {h}x{w} smaller than receptive field {RECEPTIVE_FIELD}")
    x = pixels[None, None].astype(np.float32, copy=False)
    y = net.forward_layers(build_layers(weights), x)
    return ActivationStack(y[0])


# ---------------------------------------------------------------------------
# training

@dataclass
class Patch:
    """One training example: binarized pixels plus a bbox mask.

    Digit patches carry label 0..9 and a mask that is True inside the
    digit bbox; contrast patches have label None and an all-False mask.
    """

    pixels: np.ndarray
    label: int | None
    bbox_mask: np.ndarray
    kind: str = "digit"

    def __post_init__(self):
        if self.kind not in ("digit", "contrast"):
            raise DataError(f"unknown patch kind {self.kind!r}")
        if self.kind == "digit":
            if self.label is None or not (0 <= self.label <= 9):
                raise DataError("digit patch needs a label in 0..9")
            if not self.bbox_mask.any():
                raise DataError("digit patch needs a nonempty bbox mask")
        if self.pixels.shape != self.bbox_mask.shape:
            raise DataError("patch pixels and bbox mask must share a shape")


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 8
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 32
    context_weight: float = 0.3
    context_border: int = 10
    rotation_deg: float = 10.0
    translate_frac: float = 0.025
    scale_low: float = 0.8
    scale_high: float = 1.2
    shear_deg: float = 5.0
    test_fraction: float = 0.2
    plateau_patience: int = 1
    seed: int = 0


@dataclass
class TrainingHistory:
    train_loss: list[float] = field(default_factory=list)
    test_loss: list[float] = field(default_factory=list)
    best_test: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)


def augment(patch: Patch, rng: np.random.Generator, cfg: TrainingConfig) -> Patch:
    """One random affine draw per enabled transform, label preserved."""
    h, w = patch.pixels.shape
    theta = np.radians(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg))
    tx = rng.uniform(-cfg.translate_frac, cfg.translate_frac) * w
    ty = rng.uniform(-cfg.translate_frac, cfg.translate_frac) * h
    s = rng.uniform(cfg.scale_low, cfg.scale_high)
    shear = np.radians(rng.uniform(-cfg.shear_deg, cfg.shear_deg))

    rot = np.array([[np.cos(theta), np.sin(theta)], [-np.sin(theta), np.cos(theta)]])
    shr = np.array([[1.0, 0.0], [np.tan(shear), 1.0]])
    fwd = rot @ shr * s
    inv = np.linalg.inv(fwd)
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    offset = center - inv @ (center + np.array([ty, tx]))

    px = ndimage.affine_transform(patch.pixels.astype(np.float64), inv, offset=offset, order=1, cval=0.0)
    mk = ndimage.affine_transform(patch.bbox_mask.astype(np.float64), inv, offset=offset, order=1, cval=0.0)
    mask = mk >= 0.5
    if patch.kind == "digit" and not mask.any():
        mask = patch.bbox_mask.copy()  # extreme draw pushed the bbox out; keep original support
    return Patch(px.astype(np.float32), patch.label, mask, patch.kind)


def _targets_for(batch: list[Patch], cw: float) -> tuple[np.ndarray, np.ndarray]:
    h, w = batch[0].pixels.shape
    t = np.zeros((len(batch), N_DIGITS, h, w), dtype=np.float32)
    wm = np.zeros((len(batch), 1, h, w), dtype=np.float32)
    denom = N_DIGITS
    for i, p in enumerate(batch):
        if p.kind == "digit":
            t[i, p.label][p.bbox_mask] = 1.0
            n_b = int(p.bbox_mask.sum())
            n_c = h * w - n_b
            wm[i, 0][p.bbox_mask] = 1.0 / (denom * n_b)
            if n_c:
                wm[i, 0][~p.bbox_mask] = cw / (denom * n_c)
        else:
            wm[i, 0] = 1.0 / (denom * h * w)
    return t, wm


def detection_loss(y: np.ndarray, t: np.ndarray, wm: np.ndarray) -> tuple[float, np.ndarray]:
    d = y - t
    loss = float(np.sum(d * d * wm) / y.shape[0])
    grad = (2.0 / y.shape[0]) * d * wm
    return loss, grad


def _stack_pixels(patches: list[Patch]) -> np.ndarray:
    return np.stack([p.pixels for p in patches])[:, None].astype(np.float32)


def _batched_loss(layers: list[net.Layer], patches: list[Patch], cw: float, batch: int) -> float:
    total = 0.0
    for i in range(0, len(patches), batch):
        chunk = patches[i : i + batch]
        y = net.forward_layers(layers, _stack_pixels(chunk))
        t, wm = _targets_for(chunk, cw)
        loss, _ = detection_loss(y, t, wm)
        total += loss * len(chunk)
    return total / max(1, len(patches))


def split_patches(patches: list[Patch], cfg: TrainingConfig) -> tuple[list[Patch], list[Patch]]:
    """Deterministic stratified split by (kind, label)."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 11]))
    groups: dict[tuple, list[int]] = {}
    for i, p in enumerate(patches):
        groups.setdefault((p.kind, p.label), []).append(i)
    train_idx, test_idx = [], []
    for key in sorted(groups, key=str):
        idx = np.array(groups[key])
        rng.shuffle(idx)
        n_test = max(1, int(round(len(idx) * cfg.test_fraction))) if len(idx) > 1 else 0
        test_idx.extend(idx[:n_test])
        train_idx.extend(idx[n_test:])
    return [patches[i] for i in sorted(train_idx)], [patches[i] for i in sorted(test_idx)]


def train(
    patches: list[Patch],
    cfg: TrainingConfig = TrainingConfig(),
    model_config: ModelConfig = ModelConfig.desk(),
    start: ModelWeights | None = None,
) -> tuple[ModelWeights, TrainingHistory]:
    """Train the detector; returns the weights that scored best on the
    held-out split, plus the per-epoch history.

    `start` warm-starts from existing weights (its config wins) instead
    of a fresh seeded initialization.
    """
    n_digit = sum(1 for p in patches if p.kind == "digit")
    n_contrast = len(patches) - n_digit
    if n_digit == 0:
        raise DataError("no digit patches")
    if n_contrast and n_contrast != n_digit:
        raise DataError(f"patch set must balance digit and contrast counts, got {n_digit}/{n_contrast}")
    shapes = {p.pixels.shape for p in patches}
    if len(shapes) != 1:
        raise DataError(f"patches must share one window size, got {sorted(shapes)}")

    if start is not None:
        model_config = start.config
        weights = ModelWeights(model_config, {k: v.copy() for k, v in start.arrays.items()})
    else:
        weights = init_weights(model_config, cfg.seed)
    history = TrainingHistory()
    if cfg.epochs == 0:
        return weights, history

    train_set, test_set = split_patches(patches, cfg)
    aug_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 13]))
    train_set = train_set + [augment(p, aug_rng, cfg) for p in train_set]

    layers = build_layers(weights)
    opt = net.Adam(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    order_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 17]))
    best_test = np.inf
    best_arrays = {k: v.copy() for k, v in weights.arrays.items()}
    best_train = np.inf
    stall = 0

    for epoch in range(cfg.epochs):
        order = order_rng.permutation(len(train_set))
        running = 0.0
        for layer in layers:
            layer.keep_cols = True
        for i in range(0, len(order), cfg.batch_size):
            batch = [train_set[j] for j in order[i : i + cfg.batch_size]]
            y = net.forward_layers(layers, _stack_pixels(batch))
            t, wm = _targets_for(batch, cfg.context_weight)
            loss, grad = detection_loss(y, t, wm)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, loss)
            net.backward_layers(layers, grad)
            opt.step(layers)
            running += loss * len(batch)
        for layer in layers:
            layer.keep_cols = False
        train_loss = running / len(train_set)
        test_loss = _batched_loss(layers, test_set, cfg.context_weight, cfg.batch_size) if test_set else train_loss
        if not (np.isfinite(train_loss) and np.isfinite(test_loss)):
            raise TrainingDivergedError(epoch, train_loss)

        if test_loss < best_test:
            best_test = test_loss
            best_arrays = {k: v.copy() for k, v in weights.arrays.items()}
        if train_loss < best_train - 1e-6:
            best_train = train_loss
            stall = 0
        else:
            stall += 1
            if stall >= cfg.plateau_patience:
                opt.lr *= 0.5
                stall = 0
        history.train_loss.append(train_loss)
        history.test_loss.append(test_loss)
        history.best_test.append(best_test)
        history.lr.append(opt.lr)

    return ModelWeights(model_config, best_arrays), history


@dataclass
class ClassifyResult:
    digit: int
    tied: bool
    scores: np.ndarray


def classify_patch(patch: Patch, weights: ModelWeights) -> ClassifyResult:
    """Masked sum-pool over the bbox, argmax over digit channels."""
    y = net.forward_layers(build_layers(weights), patch.pixels[None, None].astype(np.float32))[0]
    mask = patch.bbox_mask if patch.bbox_mask.any() else np.ones_like(patch.bbox_mask)
    scores = (y * mask[None]).sum(axis=(1, 2))
    top = float(scores.max())
    winners = np.flatnonzero(scores == top)
    return ClassifyResult(int(winners[0]), len(winners) > 1, scores)


def evaluate_accuracy(patches: list[Patch], weights: ModelWeights) -> float:
    digit_patches = [p for p in patches if p.kind == "digit"]
    if not digit_patches:
        raise DataError("no digit patches to evaluate")
    hits = sum(1 for p in digit_patches if classify_patch(p, weights).digit == p.label)
    return hits / len(digit_patches)


# ---------------------------------------------------------------------------
# template oracle

def template_recognize(page: PageImage | np.ndarray, templates: dict[int, list[np.ndarray]]) -> ActivationStack:
    """Normalized cross-correlation against glyph templates.

    Independent of the trained network; per digit the map is the max
    over that digit's templates, rectified at zero. A blank page yields
    all-zero maps.
    """
    pixels = page.pixels if isinstance(page, PageImage) else np.asarray(page)
    x = pixels.astype(np.float64)
    h, w = x.shape
    maps = np.zeros((N_DIGITS, h, w), dtype=np.float32)
    x2 = x * x
    for digit, banks in templates.items():
        if not 0 <= digit <= 9:
            raise DataError(f"template digit {digit} out of range")
        best = np.zeros((h, w))
        for t in banks:
            t = np.asarray(t, dtype=np.float64)
            if t.shape[0] > h or t.shape[1] > w:
                raise DataError(f"template {t.shape} larger than page {x.shape}")
            t_norm = float(np.sqrt((t * t).sum()))
            if t_norm == 0.0:
                raise DataError("empty template")
            num = fftconvolve(x, t[::-1, ::-1], mode="same")
            win = fftconvolve(x2, np.ones_like(t), mode="same")
            den = np.sqrt(np.clip(win, 0.0, None)) * t_norm
            ncc = np.where(den > 1e-9, num / np.where(den > 1e-9, den, 1.0), 0.0)
            best = np.maximum(best, ncc)
        maps[digit] = np.clip(best, 0.0, None)
    return ActivationStack(maps)


# ---------------------------------------------------------------------------
# global scale / rotation search

@dataclass
class SelectionResult:
    scale: float
    rotation: int
    stack: ActivationStack
    scores: dict[tuple[float, int], float]


# Horizontal lags (px, in the transformed frame) probed by the
# reading-order tie-break. Spans the within-number digit pitch over the
# default scale set; row pitch and column gaps sit beyond it.
_READING_LAGS = range(3, 13)

# Activity scores within this relative band of the maximum count as
# tied. The group block through orientation pooling is exactly rotation
# invariant at 90-degree multiples; only the plain head after pooling
# separates candidate rotations, and its learned margin sits orders of
# magnitude above this band. Exact ties survive only for degenerate
# content (blank or four-fold symmetric pages).
_SCORE_REL_TOL = 1e-9


def _reading_order_score(maps: np.ndarray) -> float:
    """Activity autocorrelation along x at digit-advance lags.

    Digits of one number follow each other at 4-12 px in the reading
    direction, so the upright frame piles activity into horizontal
    runs; in a sideways frame those runs are vertical and the lag
    products collapse. Used only to split exact activity ties between
    candidate rotations.
    """
    total = np.clip(maps, 0.0, None).sum(axis=0).astype(np.float64)
    return float(sum((total[:, :-d] * total[:, d:]).sum() for d in _READING_LAGS))


def select_scale_rotation(
    page: PageImage,
    weights: ModelWeights,
    scales: tuple[float, ...] = (0.5, 0.65, 0.8, 0.95, 1.0),
    rotations: tuple[int, ...] = (-90, 0, 90),
) -> SelectionResult:
    """Pick the (scale, rotation) with maximal total rectified activity.

    The rotation signal comes from the plain head: the group block is
    exactly invariant at right angles, but the head after pooling
    learns the layout statistics of upright training patches and fires
    hardest in the frame that restores them. Near-exact ties (blank or
    symmetric content) fall through to a reading-order statistic that
    prefers the frame whose activity forms horizontal runs; any
    remaining tie keeps the earliest candidate in iteration order. The
    winning stack stays in its transformed frame, tagged with
    (scale, rotation), so downstream horizontal shifts act along the
    recovered reading direction.
    """
    if not scales or not rotations:
        raise DataError("need at least one scale and one rotation")
    candidates = []
    scores: dict[tuple[float, int], float] = {}
    for rotation in rotations:
        for scale in scales:
            t = apply_global_transform(page.pixels, scale, rotation)
            if min(t.shape) < RECEPTIVE_FIELD:
                continue
            stack = forward(t, weights)
            score = float(np.clip(stack.maps, 0.0, None).astype(np.float64).sum())
            scores[(scale, rotation)] = score
            candidates.append((score, scale, rotation, stack.maps))
    if not candidates:
        raise DataError("every candidate transform left the page below the receptive field")
    top = max(c[0] for c in candidates)
    tied = [c for c in candidates if c[0] >= top - _SCORE_REL_TOL * abs(top)]
    if len(tied) > 1:
        tied.sort(key=lambda c: -_reading_order_score(c[3]))
        # stable sort: equal reading scores keep iteration order
    _, scale, rotation, maps = tied[0]
    return SelectionResult(scale, rotation, ActivationStack(maps, scale=scale, rotation=rotation), scores)


# ---------------------------------------------------------------------------
# checkpoints

def save_weights(weights: ModelWeights, path: str | Path, training_config: TrainingConfig | None = None) -> None:
    """Flat binary checkpoint: magic, version, JSON layer table, float32 data."""
    path = Path(path)
    table = []
    offset = 0
    blobs = []
    for name in LAYER_ORDER:
        arr = np.ascontiguousarray(weights.arrays[name], dtype="<f4")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps(
        {
            "config": {"group_feats": list(weights.config.group_feats), "plain_feats": list(weights.config.plain_feats)},
            "layers": table,
        }
    ).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _CKPT_VERSION, len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)
    if training_config is not None:
        Path(str(path) + ".json").write_text(json.dumps(asdict(training_config), indent=2) + "\n")


def load_weights(path: str | Path) -> ModelWeights:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != _MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != _CKPT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[12 : 12 + hlen].decode())
    config = ModelConfig(
        group_feats=tuple(header["config"]["group_feats"]),
        plain_feats=tuple(header["config"]["plain_feats"]),
    )
    base = 12 + hlen
    arrays = {}
    for entry in header["layers"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) * 4
        start = base + entry["offset"]
        arrays[entry["name"]] = np.frombuffer(raw[start : start + size], dtype="<f4").reshape(shape).copy()
    return ModelWeights(config, arrays)


def load_training_sidecar(path: str | Path) -> TrainingConfig | None:
    sidecar = Path(str(path) + ".json")
    if not sidecar.exists():
        return None
    return TrainingConfig(**json.loads(sidecar.read_text()))
