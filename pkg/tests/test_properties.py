import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spectral_ged.dsp import StftConfig, istft_overlap_add, stft_complex
from spectral_ged.ged_core import (ged_population_estimate, induced_distance, mmd2_ustat,
                                   power_distance)
from spectral_ged.spectral_distance import DistanceConfig, multiscale_distance

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
CFG = DistanceConfig(window_lens=(64, 128), oversample_m=2)


def samples(n_min=2, n_max=6, dim=2):
    return st.integers(n_min, n_max).flatmap(lambda n: arrays(np.float64, (n, dim), elements=finite))


@settings(max_examples=40, deadline=None)
@given(samples(), samples())
def test_mmd_ged_identity(X, Y):
    def kernel(a, b):
        return float(np.exp(-np.sum((a - b) ** 2)))

    ged = ged_population_estimate(X, Y, induced_distance(kernel))
    assert abs(mmd2_ustat(X, Y, kernel) - ged) < 1e-12


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 3, elements=finite), arrays(np.float64, 3, elements=finite),
       st.floats(0.1, 2.0), st.floats(0.05, 1.0))
def test_power_distance_symmetric_nonnegative(x, y, alpha, frac):
    beta = frac * alpha
    d = power_distance(x, y, alpha, beta)
    assert d >= 0
    assert d == power_distance(y, x, alpha, beta)
    assert power_distance(x, x, alpha, beta) == 0


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, 256, elements=st.floats(-1, 1)), st.sampled_from([8, 16, 32]))
def test_stft_round_trip(x, k):
    y = istft_overlap_add(stft_complex(x, StftConfig(k, oversample_m=1)), k)
    np.testing.assert_allclose(y[k:-k], x[k:-k], atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(arrays(np.float64, 256, elements=st.floats(-1, 1)),
       arrays(np.float64, 256, elements=st.floats(-1, 1)))
def test_spectral_distance_symmetric(a, b):
    assert multiscale_distance(a, a, CFG) == 0.0
    assert np.isclose(multiscale_distance(a, b, CFG), multiscale_distance(b, a, CFG), rtol=1e-12)


@settings(max_examples=20, deadline=None)
@given(arrays(np.float64, 256, elements=st.floats(-1, 1)), st.floats(-1, 1))
def test_spectral_distance_sign_invariant(a, c):
    # magnitudes ignore a global sign flip
    b = a + c
    assert np.isclose(multiscale_distance(a, b, CFG), multiscale_distance(-a, -b, CFG),
                      rtol=1e-12, atol=1e-12)
