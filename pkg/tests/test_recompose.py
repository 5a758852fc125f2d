"""Bigram/isolated map algebra on crafted and oracle activation stacks."""
import numpy as np
import pytest

from tablefp.errors import DataError
from tablefp.fonts import get_font
from tablefp.histograms import decode_to_histogram, peak_detect
from tablefp.recognizer import ActivationStack, template_recognize
from tablefp.recompose import (
    FEATURE_LABELS,
    N_FEATURES,
    SHIFTS,
    absence_gate,
    bigram_index,
    bigram_maps,
    iso_index,
    isolated_digit_maps,
    recompose,
    shift_left,
    shift_right,
)
from tablefp.synth import PageRenderer


def stack_of(maps):
    return ActivationStack(np.asarray(maps, dtype=np.float32))


def empty_stack(h=24, w=40):
    return stack_of(np.zeros((10, h, w)))


def test_constants():
    assert SHIFTS == (8, 10)
    assert N_FEATURES == 110
    assert FEATURE_LABELS[bigram_index(4, 2)] == "b42"
    assert FEATURE_LABELS[iso_index(7)] == "u7"


def test_shift_left_and_right_zero_fill():
    m = np.zeros((1, 3, 6))
    m[0, 1, 4] = 2.0
    left = shift_left(m, 3)
    assert left[0, 1, 1] == 2.0 and left.sum() == 2.0
    right = shift_right(m, 3)
    assert right.sum() == 0.0  # pushed out of frame
    assert np.array_equal(shift_left(m, 0), m)
    big = shift_left(m, 10)
    assert big.sum() == 0.0
    with pytest.raises(DataError):
        shift_left(m, -1)


def test_bigram_two_point_example():
    # a_1 at (5,5), a_2 at (5,13), shift 8: only b12 fires, at (5,5)
    s = empty_stack()
    s.maps[1, 5, 5] = 1.0
    s.maps[2, 5, 13] = 1.0
    big = bigram_maps(s, shifts=(8,))
    want = np.zeros_like(big)
    want[bigram_index(1, 2), 5, 5] = 1.0
    assert np.array_equal(big, want)


def test_bigram_max_over_shifts():
    s = empty_stack()
    s.maps[3, 5, 5] = 1.0
    s.maps[4, 5, 15] = 0.8   # matches shift 10 only
    big = bigram_maps(s, shifts=SHIFTS)
    assert big[bigram_index(3, 4), 5, 5] == pytest.approx(0.8)
    assert big[bigram_index(4, 3)].sum() == 0.0


def test_bigram_rejects_empty_shift_set():
    with pytest.raises(DataError):
        bigram_maps(empty_stack(), shifts=())


def test_bigram_zero_stack_is_zero():
    assert bigram_maps(empty_stack()).sum() == 0.0


def test_bigram_negative_input_rectified():
    s = empty_stack()
    s.maps[1, 5, 5] = -1.0
    s.maps[2, 5, 13] = 1.0
    assert bigram_maps(s, shifts=(8,)).sum() == 0.0


def test_isolated_lone_peak_survives():
    s = empty_stack()
    s.maps[7, 10, 20] = 1.0
    iso = isolated_digit_maps(s, deltas=8)
    assert iso[7, 10, 20] == 1.0
    assert iso.sum() == 1.0


def test_isolated_suppressed_when_neighbor_at_delta():
    s = empty_stack()
    s.maps[7, 10, 20] = 1.0
    s.maps[3, 10, 28] = 1.0   # exactly delta to the right
    iso = isolated_digit_maps(s, deltas=8)
    assert iso[7, 10, 20] == 0.0
    big = bigram_maps(s, shifts=(8,))
    assert big[bigram_index(7, 3), 10, 20] == 1.0
    # the neighbor itself has empty flanks at its own +-delta? its left
    # flank holds digit 7, so it is suppressed as well
    assert iso[3, 10, 28] == 0.0


def test_absence_gate_frame_edges_count_as_absent():
    s = empty_stack(h=10, w=30)
    s.maps[5, 4, 2] = 1.0
    gate = absence_gate(s, deltas=8)
    # at the peak itself: nothing 8 px left (out of frame) or right
    assert gate[4, 2] == 1.0
    iso = isolated_digit_maps(s, deltas=8)
    assert iso[5, 4, 2] == 1.0


def test_recompose_stacks_maps_and_records_source():
    s = empty_stack()
    s.scale = 0.8
    s.rotation = 90
    feats = recompose(s)
    assert feats.maps.shape == (110, 24, 40)
    assert feats.scale == 0.8
    assert feats.rotation == 90
    assert feats.maps.min() >= 0.0


def test_pointwise_bound_on_random_stacks():
    rng = np.random.default_rng(42)
    s = stack_of(rng.uniform(0, 2, size=(10, 20, 30)))
    big = bigram_maps(s, shifts=SHIFTS)
    shifted_best = np.maximum(shift_left(s.maps, 8), shift_left(s.maps, 10))
    for j in range(10):
        for k in range(10):
            m = big[bigram_index(j, k)]
            assert np.all(m <= s.maps[j] + 1e-6)
            assert np.all(m <= shifted_best[k] + 1e-6)


def test_positive_homogeneity():
    rng = np.random.default_rng(43)
    maps = rng.uniform(0, 3, size=(10, 16, 40)).astype(np.float32)
    maps[maps < 1.0] = 0.0  # sparse support so gates vary
    base = recompose(stack_of(maps))
    for c in (0.25, 2.0, 7.5):
        scaled = recompose(stack_of(c * maps))
        assert np.allclose(scaled.maps, c * base.maps, rtol=1e-5, atol=1e-6)


def test_left_right_asymmetry():
    s = empty_stack()
    s.maps[2, 5, 10] = 1.0
    s.maps[5, 5, 18] = 1.0
    big = bigram_maps(s, shifts=(8,))
    assert big[bigram_index(2, 5), 5, 10] == 1.0
    assert big[bigram_index(5, 2)].sum() == 0.0
    # swap the digit order at the same sites
    t = empty_stack()
    t.maps[5, 5, 10] = 1.0
    t.maps[2, 5, 18] = 1.0
    big2 = bigram_maps(t, shifts=(8,))
    assert big2[bigram_index(5, 2), 5, 10] == 1.0
    assert big2[bigram_index(2, 5)].sum() == 0.0


def test_compositional_generalization_template_oracle():
    """Adjacent 2 and 5 glyphs light b25 even though no 25 pair informed
    the template bank; the pairing logic lives in the fixed algebra."""
    font = get_font("press")
    r = PageRenderer(60, 90, font, rng=np.random.default_rng(0))
    r.draw_number(24, 30, "25")
    page = r.finish("probe")
    stack = template_recognize(page.pixels, font.templates())
    feats = recompose(stack)
    marks = peak_detect(feats)
    hits = [m for m in marks if m.map_index == bigram_index(2, 5)]
    assert hits, "bigram 25 not detected"
    ann = page.annotations[0]
    cy, cx = ann.center
    best = min(hits, key=lambda m: (m.y - cy) ** 2 + (m.x - cx) ** 2)
    assert abs(best.y - cy) <= 3.0 and abs(best.x - cx) <= 3.0


def oracle_stack(page):
    """Plateau stack straight from ground-truth annotations."""
    maps = np.zeros((10,) + page.pixels.shape, dtype=np.float32)
    for a in page.annotations:
        maps[a.digit, a.y : a.y + a.h, a.x : a.x + a.w] = 1.0
    return ActivationStack(maps)


def test_identity_config_fires_only_at_rendered_sites():
    from tablefp.store import ground_truth_histogram
    from tablefp.synth import render_random_table

    page = render_random_table(np.random.default_rng(7), rows=6, cols=3)
    stack = oracle_stack(page)
    feats = recompose(stack)
    hist = decode_to_histogram(peak_detect(feats))
    gt = ground_truth_histogram(page.annotations)
    assert np.array_equal(hist.counts, gt.counts)
