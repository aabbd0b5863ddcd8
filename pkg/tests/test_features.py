import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from freqdgt.config import DEFAULT_BAND_EDGES
from freqdgt.fap import band_energies
from freqdgt.features import (
    RawRecording,
    ZeroPowerWarning,
    band_masks,
    extract_features,
    rpsd,
    sliding_windows,
)


def _rec(T, fs=250.0, C=2, seed=0):
    return RawRecording(np.random.default_rng(seed).standard_normal((C, T)), fs)


def test_windows_exact_division():
    w = sliding_windows(_rec(1000), 1.0, 1.0)
    assert len(w) == 4 and all(x.shape == (2, 250) for x in w)


def test_windows_half_overlap():
    assert len(sliding_windows(_rec(1000), 1.0, 0.5)) == 7


def test_window_longer_than_recording():
    with pytest.raises(ValueError):
        sliding_windows(_rec(100), 1.0, 1.0)


@pytest.mark.oracle
@settings(max_examples=100, deadline=None)
@given(st.integers(10, 600), st.integers(1, 60), st.integers(0, 1000))
def test_windows_reconstruct_prefix(T, W, seed):
    if W > T:
        return
    fs = 100.0
    rec = _rec(T, fs, C=3, seed=seed)
    wins = sliding_windows(rec, W / fs, W / fs)
    n = (T - W) // W + 1
    assert len(wins) == n
    assert np.array_equal(np.concatenate(wins, axis=1), rec.samples[:, : n * W])


def test_rpsd_single_tone():
    fs, W = 250.0, 250
    t = np.arange(W) / fs
    seg = np.sin(2 * np.pi * 10 * t)[None, :]
    rel, freqs, zero = rpsd(seg, fs)
    assert zero == []
    assert rel.sum() == pytest.approx(1.0, abs=1e-9)
    assert freqs[np.argmax(rel[0])] == 10.0
    # the Hann main lobe covers the neighbouring bins; everything else is leakage
    near = rel[0, np.abs(freqs - 10.0) <= 1.0].sum()
    assert near > 0.999


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 5))
def test_rpsd_rows_sum_to_one(seed, C):
    seg = np.random.default_rng(seed).standard_normal((C, 250))
    rel, _, _ = rpsd(seg, 250.0)
    np.testing.assert_allclose(rel.sum(1), 1.0, atol=1e-9)


def _direct_dft_rpsd(seg, fs, f_min, f_max):
    C, W = seg.shape
    n = np.arange(W)
    taper = 0.5 - 0.5 * np.cos(2 * math.pi * n / (W - 1))
    rows = []
    for c in range(C):
        powers = []
        for k in range(W // 2 + 1):
            f = k * fs / W
            if f_min <= f < f_max:
                re = sum(seg[c, j] * taper[j] * math.cos(2 * math.pi * k * j / W) for j in range(W))
                im = -sum(seg[c, j] * taper[j] * math.sin(2 * math.pi * k * j / W) for j in range(W))
                powers.append(re * re + im * im)
        powers = np.array(powers)
        rows.append(powers / powers.sum())
    return np.array(rows)


@pytest.mark.oracle
def test_rpsd_matches_direct_dft():
    seg = np.random.default_rng(7).standard_normal((2, 128))
    rel, _, _ = rpsd(seg, 128.0, 1.0, 50.0)
    np.testing.assert_allclose(rel, _direct_dft_rpsd(seg, 128.0, 1.0, 50.0), rtol=0, atol=1e-9)


def test_rpsd_zero_channel_falls_back_to_uniform():
    seg = np.zeros((2, 250))
    seg[1] = np.random.default_rng(0).standard_normal(250)
    rel, freqs, zero = rpsd(seg, 250.0)
    assert zero == [0]
    np.testing.assert_allclose(rel[0], 1.0 / len(freqs))


def test_band_masks_one_bin_each():
    m = band_masks([2, 6, 10, 20, 40])
    np.testing.assert_array_equal(m.masks, np.eye(5))


def test_band_mask_edge_is_half_open():
    m = band_masks([4.0, 8.0, 13.0, 30.0, 50.0])
    assert m.masks[1, 0] == 1 and m.masks[0, 0] == 0
    assert m.masks[:, -1].sum() == 0


def test_band_masks_reject_overlap():
    with pytest.raises(ValueError):
        band_masks(range(1, 50), [(1, 5), (4, 8), (8, 13), (13, 30), (30, 50)])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.5, 20.0), min_size=5, max_size=5),
       st.lists(st.floats(0.0, 120.0), min_size=1, max_size=40), st.floats(0.0, 10.0))
@pytest.mark.oracle
def test_band_masks_membership_oracle(widths, bins, start):
    edges, lo = [], start
    for w in widths:
        edges.append((lo, lo + w))
        lo += w
    m = band_masks(bins, edges).masks
    for f_idx, f in enumerate(bins):
        owners = [b for b, (a, z) in enumerate(edges) if a <= f < z]
        assert len(owners) <= 1
        expected = np.zeros(5)
        if owners:
            expected[owners[0]] = 1
        np.testing.assert_array_equal(m[:, f_idx], expected)
        inside = edges[0][0] <= f < edges[-1][1]
        assert m[:, f_idx].sum() == (1 if inside else 0)


def test_extract_features_shape():
    rec = _rec(1000, C=2)
    t = extract_features(rec)
    # 1 Hz resolution, bins 1..49 Hz
    assert t.shape == (4, 2, 49)
    assert t.freq_bin_hz[0] == 1.0 and t.freq_bin_hz[-1] == 49.0


def test_extract_features_zero_recording():
    flagged = []
    with pytest.warns(ZeroPowerWarning):
        t = extract_features(RawRecording(np.zeros((2, 1000)), 250.0), warnings_out=flagged)
    np.testing.assert_allclose(t.data, 1.0 / 49)
    assert len(flagged) == 8


def test_extract_features_deterministic():
    rec = _rec(1000, C=3, seed=5)
    assert np.array_equal(extract_features(rec).data, extract_features(rec).data)


@pytest.mark.oracle
def test_injected_tones_rank_first():
    fs, T = 250.0, 2000
    t = np.arange(T) / fs
    rng = np.random.default_rng(1)
    x = 3 * np.sin(2 * np.pi * 10 * t) + 2 * np.sin(2 * np.pi * 20 * t)
    x = np.stack([x + 0.3 * rng.standard_normal(T) for _ in range(3)])
    feats = extract_features(RawRecording(x, fs))
    masks = band_masks(feats.freq_bin_hz, DEFAULT_BAND_EDGES).masks
    P = band_energies(torch.as_tensor(feats.data), torch.as_tensor(masks)).mean(0)
    top2 = set(torch.argsort(P, descending=True)[:2].tolist())
    assert top2 == {2, 3}  # alpha and beta
