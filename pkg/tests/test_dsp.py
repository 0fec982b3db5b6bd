import numpy as np
import pytest

from spectral_ged.dsp import (StftConfig, Waveform, hann_window, istft_overlap_add,
                              mel_filterbank, overcomplete_basis, stft_complex,
                              stft_magnitude, window_envelope)

from conftest import direct_dft_magnitudes


def test_hann_quarter_points():
    np.testing.assert_allclose(hann_window(4), [0.0, 0.5, 1.0, 0.5], atol=1e-15)


def test_hann_length_one():
    assert hann_window(1).tolist() == [0.0]


def test_hann_rejects_zero():
    with pytest.raises(ValueError):
        hann_window(0)


def test_hann_overlap_add_is_constant():
    w = hann_window(8)
    np.testing.assert_allclose(w[:4] + w[4:], np.ones(4), atol=1e-15)


def test_squared_envelope_constant_in_interior():
    env = window_envelope(16, 4, 12)
    interior = env[16:-16]
    assert np.ptp(interior) < 1e-12
    assert np.all(window_envelope(16, 8, 10)[8:-8] > 0)


def test_zero_signal_gives_zero_spectrogram():
    spec = stft_magnitude(np.zeros(256), StftConfig(64, oversample_m=1))
    assert spec.magnitudes.shape == (7, 33)
    assert not spec.magnitudes.any()


def test_cosine_peaks_at_its_bin_and_matches_direct_dft():
    n = np.arange(256)
    x = np.cos(2 * np.pi * 8 * n / 64)
    spec = stft_magnitude(x, StftConfig(64, hop=32, oversample_m=1)).magnitudes
    assert (spec.argmax(axis=1) == 8).all()
    np.testing.assert_allclose(spec, direct_dft_magnitudes(x, 64, 32), rtol=0, atol=1e-9)


def test_overcomplete_matches_direct_sums(rng):
    x = rng.standard_normal(200)
    spec = stft_magnitude(x, StftConfig(32, oversample_m=4)).magnitudes
    np.testing.assert_allclose(spec, direct_dft_magnitudes(x, 32, 16, m=4), atol=1e-10)


def test_dense_basis_agrees_with_fft_path(rng):
    x = rng.standard_normal(64)
    cos, sin = overcomplete_basis(64, 8)
    seg = x * hann_window(64)
    dense = np.hypot(cos @ seg, sin @ seg)
    fast = stft_magnitude(x, StftConfig(64, oversample_m=8)).magnitudes[0]
    np.testing.assert_allclose(fast, dense, atol=1e-11)


def test_bin_count_for_oversampling():
    assert StftConfig(64, oversample_m=8).n_bins == 257
    spec = stft_magnitude(np.ones(64), StftConfig(64, oversample_m=8))
    assert spec.n_bins == 257


def test_frame_count_formula(rng):
    x = rng.standard_normal(1000)
    spec = stft_magnitude(x, StftConfig(128, hop=50, oversample_m=1))
    assert spec.n_frames == (1000 - 128) // 50 + 1


def test_short_signal_rejected():
    with pytest.raises(ValueError):
        stft_magnitude(np.zeros(32), StftConfig(64))


def test_config_validation():
    with pytest.raises(ValueError):
        StftConfig(63)
    with pytest.raises(ValueError):
        StftConfig(64, hop=65)
    with pytest.raises(ValueError):
        StftConfig(64, oversample_m=0)


def test_complex_dc_frame():
    spec = stft_complex(np.ones(4), StftConfig(4, oversample_m=1))
    assert spec[0, 0].real == pytest.approx(2.0)
    assert spec[0, 0].imag == pytest.approx(0.0)


def test_complex_modulus_equals_magnitude(rng):
    x = rng.standard_normal(300)
    cfg = StftConfig(64, oversample_m=1)
    np.testing.assert_allclose(np.abs(stft_complex(x, cfg)), stft_magnitude(x, cfg).magnitudes,
                               rtol=0, atol=1e-12)


def test_complex_requires_m1():
    with pytest.raises(ValueError):
        stft_complex(np.zeros(64), StftConfig(64, oversample_m=2))


def test_complex_of_zero_is_zero():
    assert not stft_complex(np.zeros(128), StftConfig(32, oversample_m=1)).any()


def test_round_trip_interior(rng):
    x = rng.standard_normal(256)
    k = 32
    y = istft_overlap_add(stft_complex(x, StftConfig(k, oversample_m=1)), k)
    err = np.abs(y[k:len(x) - k] - x[k:len(x) - k]).max()
    assert err / np.abs(x).max() < 1e-10


def test_istft_zero_frames():
    assert not istft_overlap_add(np.zeros((5, 9), dtype=complex), 16).any()


def test_istft_single_frame_length():
    assert istft_overlap_add(np.zeros((1, 3), dtype=complex), 4).shape == (4,)


def test_istft_length_formula():
    assert istft_overlap_add(np.zeros((6, 17), dtype=complex), 32).shape == (5 * 16 + 32,)


def test_istft_rejects_other_hops():
    with pytest.raises(ValueError):
        istft_overlap_add(np.zeros((3, 9), dtype=complex), 16, hop=4)


def test_sign_flip_leaves_magnitudes_unchanged(rng):
    x = rng.standard_normal(512)
    a = stft_magnitude(x, StftConfig(128)).magnitudes
    b = stft_magnitude(-x, StftConfig(128)).magnitudes
    assert np.array_equal(a, b)


def test_doubling_m_keeps_coincident_bins(rng):
    x = rng.standard_normal(256)
    coarse = stft_magnitude(x, StftConfig(64, oversample_m=2)).magnitudes
    fine = stft_magnitude(x, StftConfig(64, oversample_m=4)).magnitudes
    assert fine.shape[-1] == 2 * coarse.shape[-1] - 1
    np.testing.assert_allclose(fine[:, ::2], coarse, rtol=0, atol=1e-12)


def test_waveform_validation():
    with pytest.raises(ValueError):
        Waveform([], 8000)
    with pytest.raises(ValueError):
        Waveform([0.0, np.nan], 8000)
    with pytest.raises(ValueError):
        Waveform([0.0], 0)
    assert len(Waveform([0.1, 0.2], 8000)) == 2


def test_mel_rows_contiguous_and_positive():
    fb = mel_filterbank(257, 40, 24000)
    assert fb.shape == (40, 257)
    assert (fb >= 0).all()
    for row in fb:
        support = np.flatnonzero(row)
        assert support.size > 0
        assert (np.diff(support) == 1).all()


def test_mel_peaks_increase():
    fb = mel_filterbank(513, 64, 16000)
    peaks = fb.argmax(axis=1)
    assert (np.diff(peaks) >= 0).all()
    assert peaks[-1] > peaks[0]


def test_mel_flat_spectrum_positive():
    fb = mel_filterbank(129, 32, 8000)
    assert (fb @ np.ones(129) > 0).all()


def test_mel_rejects_too_many_bands():
    with pytest.raises(ValueError):
        mel_filterbank(33, 33, 8000)
