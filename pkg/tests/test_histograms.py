"""Histogram assembly: validation, peak decoding, pooling, correlation."""

import numpy as np
import pytest

from tablefp.errors import DataError, UndefinedStatisticError
from tablefp.histograms import (
    ISO_DAMPING,
    LINKAGE_CUT,
    PEAK_BIAS,
    BigramHistogram,
    decode_to_histogram,
    peak_detect,
    pearson,
    pooled_histogram,
    sqrt_transform,
    unigram_histogram,
)
from tablefp.recognizer import ActivationStack
from tablefp.recompose import N_FEATURES, FeatureMaps110, bigram_index, iso_index, recompose


def blank_maps(h=64, w=64):
    return np.zeros((N_FEATURES, h, w), dtype=np.float64)


def put_blob(maps, m, y, x, size=3, value=1.0):
    maps[m, y : y + size, x : x + size] = value


# ---------------------------------------------------------------------------
# BigramHistogram validation

def test_histogram_requires_110_bins():
    with pytest.raises(DataError):
        BigramHistogram(np.zeros(100))


def test_histogram_rejects_negative_and_nonfinite():
    bad = np.zeros(N_FEATURES)
    bad[3] = -1.0
    with pytest.raises(DataError):
        BigramHistogram(bad)
    bad[3] = np.nan
    with pytest.raises(DataError):
        BigramHistogram(bad)


def test_histogram_rejects_unknown_transform_and_method():
    with pytest.raises(DataError):
        BigramHistogram(np.zeros(N_FEATURES), transform="log")
    with pytest.raises(DataError):
        BigramHistogram(np.zeros(N_FEATURES), method="magic")


def test_histogram_total():
    c = np.zeros(N_FEATURES)
    c[0], c[42], c[105] = 2.0, 3.0, 1.0
    assert BigramHistogram(c).total == 6.0


# ---------------------------------------------------------------------------
# sqrt transform

def test_sqrt_transform_values_and_flag():
    c = np.zeros(N_FEATURES)
    c[10], c[20] = 4.0, 9.0
    h = sqrt_transform(BigramHistogram(c))
    assert h.transform == "sqrt"
    assert h.counts[10] == 2.0 and h.counts[20] == 3.0


def test_sqrt_transform_refuses_twice():
    h = sqrt_transform(BigramHistogram(np.ones(N_FEATURES)))
    with pytest.raises(DataError):
        sqrt_transform(h)


def test_sqrt_transform_preserves_argmax():
    rng = np.random.default_rng(4)
    c = rng.random(N_FEATURES) * 10
    h = sqrt_transform(BigramHistogram(c))
    assert int(np.argmax(h.counts)) == int(np.argmax(c))


# ---------------------------------------------------------------------------
# pearson

def test_pearson_perfect_and_inverse():
    x = np.array([1.0, 2.0, 3.0, 5.0])
    assert pearson(x, x) == pytest.approx(1.0)
    assert pearson(x, 10.0 - x) == pytest.approx(-1.0)


def test_pearson_affine_invariance():
    rng = np.random.default_rng(7)
    x, y = rng.random(50), rng.random(50)
    assert pearson(x, 3.0 * y + 2.0) == pytest.approx(pearson(x, y))


def test_pearson_accepts_histograms():
    rng = np.random.default_rng(8)
    a = BigramHistogram(rng.random(N_FEATURES))
    b = BigramHistogram(rng.random(N_FEATURES))
    assert pearson(a, b) == pytest.approx(pearson(a.counts, b.counts))


def test_pearson_errors():
    with pytest.raises(DataError):
        pearson(np.ones(3), np.ones(4))
    with pytest.raises(UndefinedStatisticError):
        pearson(np.ones(5), np.arange(5.0))


# ---------------------------------------------------------------------------
# peak detection

def test_two_far_blobs_give_two_decodings():
    maps = blank_maps()
    put_blob(maps, 0, 10, 10)
    put_blob(maps, 0, 10, 40)  # 30 px apart, over the 15 px cut
    dec = peak_detect(FeatureMaps110(maps))
    assert len(dec) == 2
    assert all(d.label == "b00" and d.map_index == 0 for d in dec)


def test_two_near_blobs_merge():
    maps = blank_maps()
    put_blob(maps, 0, 10, 10)
    put_blob(maps, 0, 10, 20)  # centers 10 px apart, merged at cut 15
    dec = peak_detect(FeatureMaps110(maps))
    assert len(dec) == 1


def test_center_of_mass_subpixel():
    maps = blank_maps()
    maps[bigram_index(3, 7), 10:12, 20:22] = 1.0  # 2x2 support
    dec = peak_detect(FeatureMaps110(maps))
    assert len(dec) == 1
    assert dec[0].y == pytest.approx(10.5)
    assert dec[0].x == pytest.approx(20.5)
    assert dec[0].label == "b37"


def test_iso_damping_survivor_and_casualty():
    # bigram peak 1.0 fixes gmax; iso peak 0.9 damps to 0.3 and clears
    # the 0.12 bias, iso peak 0.3 damps to 0.1 and does not.
    maps = blank_maps()
    put_blob(maps, bigram_index(4, 2), 10, 10, value=1.0)
    put_blob(maps, iso_index(7), 40, 40, value=0.9)
    labels = {d.label for d in peak_detect(FeatureMaps110(maps))}
    assert labels == {"b42", "u7"}

    maps2 = blank_maps()
    put_blob(maps2, bigram_index(4, 2), 10, 10, value=1.0)
    put_blob(maps2, iso_index(7), 40, 40, value=0.3)
    labels2 = {d.label for d in peak_detect(FeatureMaps110(maps2))}
    assert labels2 == {"b42"}


def test_iso_damping_constant_matches_rule():
    # the survivor threshold sits at alpha * beta * gmax
    assert ISO_DAMPING * PEAK_BIAS == pytest.approx(0.36)
    maps = blank_maps()
    put_blob(maps, 5, 10, 10, value=1.0)
    put_blob(maps, iso_index(2), 40, 40, value=0.37)
    assert {d.label for d in peak_detect(FeatureMaps110(maps))} == {"b05", "u2"}


def test_noise_floor_zeroes_specks():
    maps = blank_maps()
    put_blob(maps, 9, 10, 10, value=1.0)
    maps[9, 40, 40] = 1e-7  # below 1e-6 * gmax once bias is off
    dec = peak_detect(FeatureMaps110(maps), beta=0.0)
    assert len(dec) == 1
    maps[9, 40, 40] = 1e-5  # above the floor, now counts
    dec = peak_detect(FeatureMaps110(maps), beta=0.0)
    assert len(dec) == 2


def test_empty_maps_decode_to_nothing():
    assert peak_detect(FeatureMaps110(blank_maps())) == []
    h = decode_to_histogram([])
    assert h.total == 0.0


def test_alpha_must_be_positive():
    with pytest.raises(DataError):
        peak_detect(FeatureMaps110(blank_maps()), alpha=0.0)


def test_decode_counts_per_bin():
    maps = blank_maps(h=64, w=160)
    put_blob(maps, 57, 10, 10)
    put_blob(maps, 57, 10, 60)
    put_blob(maps, 57, 10, 110)
    put_blob(maps, 3, 40, 10)
    h = decode_to_histogram(peak_detect(FeatureMaps110(maps)))
    assert h.counts[57] == 3.0
    assert h.counts[3] == 1.0
    assert h.total == 4.0
    assert h.method == "peaks"


def test_decodings_sorted_within_map():
    maps = blank_maps()
    put_blob(maps, 0, 40, 10)
    put_blob(maps, 0, 10, 40)
    dec = peak_detect(FeatureMaps110(maps))
    assert (dec[0].y, dec[0].x) < (dec[1].y, dec[1].x)


# ---------------------------------------------------------------------------
# pooled and unigram variants

def test_pooled_histogram_is_spatial_sums():
    rng = np.random.default_rng(11)
    maps = rng.random((N_FEATURES, 8, 9))
    h = pooled_histogram(FeatureMaps110(maps))
    assert h.method == "pooled"
    np.testing.assert_allclose(h.counts, maps.sum(axis=(1, 2)))


def test_unigram_counts_digit_peaks():
    maps = np.zeros((10, 64, 160))
    maps[5, 10:13, 10:13] = 1.0
    maps[5, 10:13, 60:63] = 1.0
    maps[5, 40:43, 10:13] = 1.0
    maps[2, 40:43, 110:113] = 1.0
    h = unigram_histogram(ActivationStack(maps))
    assert h.method == "unigram"
    assert h.counts[100 + 5] == 3.0
    assert h.counts[100 + 2] == 1.0
    assert h.counts[:100].sum() == 0.0
    assert h.total == 4.0


def test_unigram_blank_stack():
    h = unigram_histogram(ActivationStack(np.zeros((10, 32, 32))))
    assert h.total == 0.0


# ---------------------------------------------------------------------------
# invariances through the full recompose -> decode path

def test_translation_invariance_of_decoded_histogram():
    rng = np.random.default_rng(21)
    stack = np.zeros((10, 96, 128))
    # scatter a few digit plateaus well inside the frame
    for d, y, x in ((1, 30, 30), (4, 30, 38), (7, 60, 50), (7, 60, 90)):
        stack[d, y : y + 10, x : x + 6] = 1.0
    rolled = np.roll(stack, (7, 11), axis=(1, 2))

    h0 = decode_to_histogram(peak_detect(recompose(ActivationStack(stack))))
    h1 = decode_to_histogram(peak_detect(recompose(ActivationStack(rolled))))
    np.testing.assert_array_equal(h0.counts, h1.counts)
    assert h0.total > 0


def test_map_permutation_does_not_leak_between_bins():
    # activity in map j must never contribute counts to bin k != j
    maps = blank_maps()
    put_blob(maps, 31, 20, 20)
    h = decode_to_histogram(peak_detect(FeatureMaps110(maps)))
    assert h.counts[31] == 1.0
    assert h.total == 1.0
