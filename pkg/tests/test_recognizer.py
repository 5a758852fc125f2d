"""Detector module tests: config, training loop mechanics, patch
classification, template matcher, scale/rotation search, checkpoints.

Slow full-recipe behavior (accuracy targets, rotation selection on real
pages) lives in the acceptance suite; everything here runs on tiny
configs in seconds.
"""
from __future__ import annotations

import numpy as np
import pytest

from tablefp import net
from tablefp.errors import DataError, TrainingDivergedError
from tablefp.preprocess import PageImage
from tablefp.recognizer import (
    GROUP_KERNELS,
    LAYER_ORDER,
    N_DIGITS,
    PLAIN_KERNELS,
    RECEPTIVE_FIELD,
    ActivationStack,
    ClassifyResult,
    ModelConfig,
    ModelWeights,
    Patch,
    TrainingConfig,
    _reading_order_score,
    _targets_for,
    augment,
    classify_patch,
    detection_loss,
    evaluate_accuracy,
    forward,
    init_weights,
    load_training_sidecar,
    load_weights,
    save_weights,
    select_scale_rotation,
    split_patches,
    template_recognize,
    train,
)

TINY = ModelConfig(group_feats=(1, 1, 1, 1), plain_feats=(2, 2))


def zero_weights(config: ModelConfig = TINY) -> ModelWeights:
    return ModelWeights(config, {n: np.zeros(s, dtype=np.float32)
                                 for n, s in config.layer_shapes().items()})


def square_patch(label: int = 3, size: int = 28, fill: float = 1.0) -> Patch:
    px = np.zeros((size, size), dtype=np.float32)
    mask = np.zeros((size, size), dtype=bool)
    px[10:18, 11:17] = fill
    mask[9:19, 10:18] = True
    return Patch(px, label, mask)


def contrast_patch(size: int = 28) -> Patch:
    px = np.zeros((size, size), dtype=np.float32)
    px[4, :] = 1.0
    return Patch(px, None, np.zeros((size, size), dtype=bool), kind="contrast")


# ---------------------------------------------------------------------------
# config and weights


def test_receptive_field_matches_kernel_arithmetic():
    assert RECEPTIVE_FIELD == 1 + sum(k - 1 for k in GROUP_KERNELS + PLAIN_KERNELS)
    assert RECEPTIVE_FIELD == 17


def test_layer_shapes_desk_config():
    shapes = ModelConfig.desk().layer_shapes()
    assert shapes == {
        "g1": (3, 1, 3, 3),
        "g2": (4, 3, 8, 3, 3),
        "g3": (4, 4, 8, 5, 5),
        "g4": (10, 4, 8, 5, 5),
        "p1": (20, 10, 5, 5),
        "p2": (12, 20, 1, 1),
        "p3": (10, 12, 1, 1),
    }
    assert tuple(shapes) == LAYER_ORDER


def test_config_rejects_bad_widths():
    with pytest.raises(DataError):
        ModelConfig(group_feats=(1, 2, 3), plain_feats=(4, 5))
    with pytest.raises(DataError):
        ModelConfig(group_feats=(1, 2, 3, 0), plain_feats=(4, 5))
    with pytest.raises(DataError):
        ModelConfig(group_feats=(1, 2, 3, 4), plain_feats=(4,))


def test_init_weights_deterministic_and_seed_sensitive():
    a = init_weights(TINY, seed=4)
    b = init_weights(TINY, seed=4)
    c = init_weights(TINY, seed=5)
    for name in LAYER_ORDER:
        assert a.arrays[name].dtype == np.float32
        assert np.array_equal(a.arrays[name], b.arrays[name])
    assert any(not np.array_equal(a.arrays[n], c.arrays[n]) for n in LAYER_ORDER)


def test_init_weights_scale_tracks_fan_in():
    cfg = ModelConfig.default()
    w = init_weights(cfg, seed=0)
    for name, shape in cfg.layer_shapes().items():
        fan_in = int(np.prod(shape[1:]))
        std = w.arrays[name].std()
        expect = np.sqrt(2.0 / fan_in)
        assert 0.7 * expect < std < 1.3 * expect, name


def test_weights_validation():
    arrays = {n: np.zeros(s, dtype=np.float32) for n, s in TINY.layer_shapes().items()}
    missing = dict(arrays)
    del missing["g3"]
    with pytest.raises(DataError):
        ModelWeights(TINY, missing)
    bad = dict(arrays)
    bad["p2"] = np.zeros((3, 3), dtype=np.float32)
    with pytest.raises(DataError):
        ModelWeights(TINY, bad)


def test_weights_copy_is_independent_and_digest_tracks_values():
    w = init_weights(TINY, seed=1)
    c = w.copy()
    d0 = w.digest()
    assert c.digest() == d0
    c.arrays["g1"][0, 0, 0, 0] += 1.0
    assert c.digest() != d0
    assert w.digest() == d0


# ---------------------------------------------------------------------------
# forward


def test_forward_blank_page_is_exactly_zero():
    w = init_weights(TINY, seed=2)
    y = forward(np.zeros((30, 44), dtype=np.float32), w)
    assert y.maps.shape == (N_DIGITS, 30, 44)
    assert np.array_equal(y.maps, np.zeros((N_DIGITS, 30, 44), dtype=np.float32))


def test_forward_accepts_page_image_and_array():
    w = init_weights(TINY, seed=2)
    px = np.random.default_rng(0).random((24, 24)).astype(np.float32)
    a = forward(px, w)
    b = forward(PageImage(px), w)
    assert np.array_equal(a.maps, b.maps)


def test_forward_input_validation():
    w = init_weights(TINY, seed=2)
    with pytest.raises(DataError):
        forward(np.zeros((30,), dtype=np.float32), w)
    with pytest.raises(DataError):
        forward(np.zeros((16, 200), dtype=np.float32), w)


def test_activation_stack_validation():
    with pytest.raises(DataError):
        ActivationStack(np.zeros((9, 5, 5), dtype=np.float32))
    with pytest.raises(DataError):
        ActivationStack(np.zeros((10, 5), dtype=np.float32))
    s = ActivationStack(np.zeros((10, 6, 7), dtype=np.float32))
    assert s.shape == (6, 7)


# ---------------------------------------------------------------------------
# patches and augmentation


def test_patch_validation():
    px = np.zeros((8, 8), dtype=np.float32)
    mask = np.zeros((8, 8), dtype=bool)
    mask[2, 2] = True
    with pytest.raises(DataError):
        Patch(px, None, mask)  # digit needs a label
    with pytest.raises(DataError):
        Patch(px, 10, mask)
    with pytest.raises(DataError):
        Patch(px, 3, np.zeros((8, 8), dtype=bool))  # empty digit bbox
    with pytest.raises(DataError):
        Patch(px, 3, np.zeros((8, 9), dtype=bool))
    with pytest.raises(DataError):
        Patch(px, 3, mask, kind="texture")
    Patch(px, None, np.zeros((8, 8), dtype=bool), kind="contrast")


def test_augment_deterministic_and_preserves_metadata():
    p = square_patch(label=7)
    cfg = TrainingConfig()
    a = augment(p, np.random.default_rng(42), cfg)
    b = augment(p, np.random.default_rng(42), cfg)
    assert np.array_equal(a.pixels, b.pixels)
    assert np.array_equal(a.bbox_mask, b.bbox_mask)
    assert a.label == 7 and a.kind == "digit"
    assert a.pixels.shape == p.pixels.shape


def test_augment_identity_config_is_a_copy():
    p = square_patch(label=2)
    cfg = TrainingConfig(rotation_deg=0.0, translate_frac=0.0,
                         scale_low=1.0, scale_high=1.0, shear_deg=0.0)
    a = augment(p, np.random.default_rng(0), cfg)
    assert np.allclose(a.pixels, p.pixels, atol=1e-6)
    assert np.array_equal(a.bbox_mask, p.bbox_mask)


def test_augment_digit_mask_never_empties():
    # Extreme translations push the bbox off-patch; the original support
    # must come back as a fallback rather than an empty mask.
    p = square_patch(label=5)
    cfg = TrainingConfig(translate_frac=3.0)
    rng = np.random.default_rng(9)
    fallbacks = 0
    for _ in range(30):
        out = augment(p, rng, cfg)
        assert out.bbox_mask.any()
        if np.array_equal(out.bbox_mask, p.bbox_mask) and not np.allclose(out.pixels, p.pixels, atol=1e-6):
            fallbacks += 1
    assert fallbacks > 0


# ---------------------------------------------------------------------------
# loss plumbing


def test_target_weight_mass_digit():
    # bbox mass 1/10 plus context mass cw/10, independent of bbox size
    p = square_patch(label=4)
    t, wm = _targets_for([p], 0.3)
    assert t.shape == (1, N_DIGITS, 28, 28) and wm.shape == (1, 1, 28, 28)
    assert np.allclose(wm[0].sum(), 0.13)
    assert np.array_equal(t[0, 4] == 1.0, p.bbox_mask)
    others = [d for d in range(N_DIGITS) if d != 4]
    assert not t[0, others].any()


def test_target_weight_mass_contrast():
    t, wm = _targets_for([contrast_patch()], 0.3)
    assert not t.any()
    assert np.allclose(wm.sum(), 0.1)
    assert np.allclose(wm, wm.flat[0])  # uniform over the window


def test_detection_loss_zero_at_target_and_closed_form_grad():
    rng = np.random.default_rng(3)
    y = rng.random((2, 3, 4, 4))
    wm = rng.random((2, 1, 4, 4))
    loss, grad = detection_loss(y, y.copy(), wm)
    assert loss == 0.0
    assert not grad.any()

    t = rng.random((2, 3, 4, 4))
    loss, grad = detection_loss(y, t, wm)
    assert np.allclose(grad, 2.0 * (y - t) * wm / 2.0)


def test_detection_loss_grad_matches_finite_differences():
    rng = np.random.default_rng(4)
    y = rng.random((2, 2, 3, 3))
    t = rng.random((2, 2, 3, 3))
    wm = rng.random((2, 1, 3, 3))
    _, grad = detection_loss(y, t, wm)
    h = 1e-6
    for idx in [(0, 0, 0, 0), (1, 1, 2, 2), (0, 1, 1, 2), (1, 0, 2, 0)]:
        yp, ym = y.copy(), y.copy()
        yp[idx] += h
        ym[idx] -= h
        num = (detection_loss(yp, t, wm)[0] - detection_loss(ym, t, wm)[0]) / (2 * h)
        assert abs(num - grad[idx[0], :, idx[2], idx[3]][idx[1]]) < 1e-8


# ---------------------------------------------------------------------------
# split and training loop


def test_split_is_stratified_and_partitions():
    patches = []
    marker = 0.0
    for label in (1, 5, 9):
        for _ in range(10):
            p = square_patch(label=label)
            p.pixels[0, 0] = marker  # unique id channel
            marker += 1.0
            patches.append(p)
    cfg = TrainingConfig(seed=3)
    tr, te = split_patches(patches, cfg)
    assert len(tr) == 24 and len(te) == 6
    for label in (1, 5, 9):
        assert sum(1 for p in te if p.label == label) == 2
    ids = lambda ps: {float(p.pixels[0, 0]) for p in ps}
    assert ids(tr) | ids(te) == ids(patches)
    assert not ids(tr) & ids(te)
    tr2, te2 = split_patches(patches, cfg)
    assert ids(tr2) == ids(tr) and ids(te2) == ids(te)


def test_split_singleton_group_stays_in_train():
    patches = [square_patch(label=0)]
    tr, te = split_patches(patches, TrainingConfig())
    assert len(tr) == 1 and len(te) == 0


def test_train_zero_epochs_returns_seeded_init():
    patches = [square_patch(label=d % 10) for d in range(4)]
    cfg = TrainingConfig(epochs=0, seed=21)
    w, hist = train(patches, cfg, TINY)
    ref = init_weights(TINY, seed=21)
    for name in LAYER_ORDER:
        assert np.array_equal(w.arrays[name], ref.arrays[name])
    assert hist.train_loss == [] and hist.test_loss == []


def test_train_input_validation():
    with pytest.raises(DataError):
        train([contrast_patch()], TrainingConfig(epochs=1), TINY)
    digits = [square_patch(label=1) for _ in range(4)]
    with pytest.raises(DataError):
        train(digits + [contrast_patch()], TrainingConfig(epochs=1), TINY)
    mixed = digits + [square_patch(label=2, size=30)]
    with pytest.raises(DataError):
        train(mixed, TrainingConfig(epochs=1), TINY)


def test_train_short_run_histories_and_best_test_monotone():
    rng = np.random.default_rng(7)
    patches = []
    for label in (0, 1):
        for _ in range(4):
            p = square_patch(label=label)
            p.pixels += rng.normal(0, 0.05, p.pixels.shape).astype(np.float32)
            patches.append(p)
    cfg = TrainingConfig(epochs=3, batch_size=4, seed=2)
    w, hist = train(patches, cfg, TINY)
    assert len(hist.train_loss) == len(hist.test_loss) == len(hist.best_test) == 3
    assert all(np.isfinite(v) for v in hist.train_loss + hist.test_loss)
    assert hist.best_test == list(np.minimum.accumulate(hist.test_loss))
    assert all(b <= a + 1e-12 for a, b in zip(hist.lr, hist.lr[1:]))  # lr only decays
    ref = init_weights(TINY, seed=2)
    assert any(not np.array_equal(w.arrays[n], ref.arrays[n]) for n in LAYER_ORDER)


def test_train_warm_start_uses_given_weights():
    start = init_weights(TINY, seed=33)
    patches = [square_patch(label=d) for d in range(4)]
    w, _ = train(patches, TrainingConfig(epochs=0, seed=0), ModelConfig.desk(), start=start)
    assert w.config == TINY  # start's config wins over the argument
    for name in LAYER_ORDER:
        assert np.array_equal(w.arrays[name], start.arrays[name])
        assert w.arrays[name] is not start.arrays[name]


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_train_raises_on_divergence():
    # float32 overflow in the forward pass surfaces as a non-finite loss
    huge = ModelWeights(TINY, {n: np.full(s, 1e30, dtype=np.float32)
                               for n, s in TINY.layer_shapes().items()})
    patches = [square_patch(label=3) for _ in range(4)]
    with pytest.raises(TrainingDivergedError):
        train(patches, TrainingConfig(epochs=1, batch_size=2, seed=1), start=huge)


# ---------------------------------------------------------------------------
# classification


def test_classify_zero_weights_ties_to_digit_zero():
    res = classify_patch(square_patch(label=6), zero_weights())
    assert isinstance(res, ClassifyResult)
    assert res.digit == 0 and res.tied
    assert res.scores.shape == (N_DIGITS,)
    assert not res.scores.any()


def test_evaluate_accuracy_zero_weights_on_balanced_set():
    patches = [square_patch(label=d) for d in range(10)]
    acc = evaluate_accuracy(patches, zero_weights())
    assert acc == 0.1  # every patch classifies as 0; only label 0 is a hit


def test_evaluate_accuracy_needs_digits():
    with pytest.raises(DataError):
        evaluate_accuracy([contrast_patch()], zero_weights())


# ---------------------------------------------------------------------------
# template matcher


def test_template_peak_is_unit_at_glyph_center():
    rng = np.random.default_rng(5)
    t = (rng.random((5, 7)) > 0.4).astype(np.float64)
    t[2, 3] = 1.0  # guarantee nonzero center
    page = np.zeros((40, 40))
    page[10:15, 20:27] = t
    stack = template_recognize(page, {3: [t]})
    assert stack.maps.shape == (N_DIGITS, 40, 40)
    assert abs(stack.maps[3, 12, 23] - 1.0) < 1e-6
    assert stack.maps[3].max() < 1.0 + 1e-6
    assert not stack.maps[5].any()  # digits without templates stay silent


def test_template_blank_page_is_silent():
    t = np.ones((3, 3))
    stack = template_recognize(np.zeros((30, 30)), {0: [t]})
    assert np.allclose(stack.maps, 0.0, atol=1e-12)


def test_template_bank_max_is_monotone():
    rng = np.random.default_rng(6)
    t1 = (rng.random((5, 5)) > 0.5).astype(np.float64)
    t1[2, 2] = 1.0
    t2 = np.eye(5)
    page = (rng.random((32, 32)) > 0.7).astype(np.float64)
    single = template_recognize(page, {4: [t1]}).maps[4]
    double = template_recognize(page, {4: [t1, t2]}).maps[4]
    assert (double >= single - 1e-12).all()


def test_template_validation():
    t = np.ones((3, 3))
    with pytest.raises(DataError):
        template_recognize(np.zeros((20, 20)), {12: [t]})
    with pytest.raises(DataError):
        template_recognize(np.zeros((20, 20)), {1: [np.ones((25, 25))]})
    with pytest.raises(DataError):
        template_recognize(np.zeros((20, 20)), {1: [np.zeros((3, 3))]})


# ---------------------------------------------------------------------------
# scale / rotation search


def test_selection_identity_grid_passes_through():
    rng = np.random.default_rng(8)
    px = (rng.random((36, 52)) > 0.9).astype(np.float32)
    w = init_weights(TINY, seed=3)
    sel = select_scale_rotation(PageImage(px), w, scales=(1.0,), rotations=(0,))
    assert sel.scale == 1.0 and sel.rotation == 0
    assert np.array_equal(sel.stack.maps, forward(px, w).maps)
    assert set(sel.scores) == {(1.0, 0)}


def test_selection_stack_stays_in_rotated_frame():
    rng = np.random.default_rng(9)
    px = (rng.random((30, 50)) > 0.9).astype(np.float32)
    w = init_weights(TINY, seed=3)
    sel = select_scale_rotation(PageImage(px), w, scales=(1.0,), rotations=(90,))
    assert sel.rotation == 90
    assert sel.stack.shape == (50, 30)  # transformed, not undone
    assert np.array_equal(sel.stack.maps, forward(np.rot90(px), w).maps)
    assert sel.stack.scale == 1.0 and sel.stack.rotation == 90


def test_selection_validation():
    w = init_weights(TINY, seed=0)
    page = PageImage(np.zeros((40, 40), dtype=np.float32))
    with pytest.raises(DataError):
        select_scale_rotation(page, w, scales=(), rotations=(0,))
    with pytest.raises(DataError):
        select_scale_rotation(page, w, scales=(1.0,), rotations=())
    small = PageImage(np.zeros((20, 20), dtype=np.float32))
    with pytest.raises(DataError):
        select_scale_rotation(small, w, scales=(0.5,), rotations=(0,))


def test_reading_order_score_prefers_horizontal_runs():
    horiz = np.zeros((10, 24, 24))
    horiz[0, 12, 4:20] = 1.0
    vert = np.rot90(horiz, axes=(1, 2)).copy()
    assert _reading_order_score(horiz) > 0.0
    assert _reading_order_score(vert) == 0.0


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_roundtrip_bitwise(tmp_path):
    w = init_weights(ModelConfig.desk(), seed=12)
    path = tmp_path / "w.ckpt"
    save_weights(w, path)
    back = load_weights(path)
    assert back.config == w.config
    for name in LAYER_ORDER:
        assert np.array_equal(back.arrays[name], w.arrays[name])
        assert back.arrays[name].dtype == np.float32
    assert back.digest() == w.digest()
    assert not (tmp_path / "w.ckpt.json").exists()


def test_checkpoint_sidecar_roundtrip(tmp_path):
    w = init_weights(TINY, seed=1)
    cfg = TrainingConfig(epochs=5, lr=2e-3, seed=9)
    path = tmp_path / "w.ckpt"
    save_weights(w, path, training_config=cfg)
    assert load_training_sidecar(path) == cfg
    assert load_training_sidecar(tmp_path / "other.ckpt") is None


def test_checkpoint_rejects_bad_magic_and_version(tmp_path):
    w = init_weights(TINY, seed=1)
    path = tmp_path / "w.ckpt"
    save_weights(w, path)
    raw = bytearray(path.read_bytes())

    bad_magic = tmp_path / "m.ckpt"
    bad_magic.write_bytes(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(DataError):
        load_weights(bad_magic)

    bad_version = tmp_path / "v.ckpt"
    corrupt = bytearray(raw)
    corrupt[4:8] = (99).to_bytes(4, "little")
    bad_version.write_bytes(bytes(corrupt))
    with pytest.raises(DataError):
        load_weights(bad_version)
