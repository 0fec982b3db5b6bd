import numpy as np
import pytest
from scipy import special

from spectral_ged.dsp import Waveform
from spectral_ged.evaluation import (GaussianStats, embed_spectral, frechet_gaussian, jacobi_eigh,
                                     mode_coverage, norm_projection_stats, pitch_peak_match)
from spectral_ged.experiments import GMM_SIGMA, gmm_means, sample_gmm


def random_psd(rng, n):
    a = rng.standard_normal((n, n))
    return a @ a.T + 0.1 * np.eye(n)


def test_mode_coverage_at_modes():
    modes = np.array([[0.0, 0.0], [1.0, 1.0]])
    report = mode_coverage(np.repeat(modes, 5, axis=0), modes, 0.1)
    assert report["fraction_within"] == 1.0
    assert report["median_nearest_dist"] == 0.0
    assert report["per_mode_share"] == [0.5, 0.5]


def test_mode_coverage_outlier():
    modes = np.array([[0.0, 0.0]])
    samples = np.vstack([np.zeros((9, 2)), [[50.0, 0.0]]])
    assert mode_coverage(samples, modes, 1.0)["fraction_within"] == pytest.approx(0.9)


def test_mode_coverage_true_mixture(rng):
    report = mode_coverage(sample_gmm(rng, 20000), gmm_means(), 3 * GMM_SIGMA)
    assert report["fraction_within"] >= 0.98
    assert sum(report["per_mode_share"]) == 1.0
    assert min(report["per_mode_share"]) > 0.3


def test_mode_coverage_errors():
    with pytest.raises(ValueError):
        mode_coverage(np.zeros((0, 2)), np.zeros((1, 2)), 1.0)


def test_gmm_geometry():
    means = gmm_means()
    sides = [np.linalg.norm(means[i] - means[j]) for i, j in [(0, 1), (1, 2), (0, 2)]]
    np.testing.assert_allclose(sides, 2.0)
    np.testing.assert_allclose(means.mean(axis=0), 0.0, atol=1e-12)


def test_norm_stats_zero():
    stats = norm_projection_stats(np.zeros((4, 3)))
    assert all(v == 0.0 for v in stats.values())


def test_norm_stats_chi_mean(rng):
    chi = np.sqrt(2) * np.exp(special.gammaln(50.5) - special.gammaln(50))
    assert chi == pytest.approx(9.975, abs=1e-3)
    stats = norm_projection_stats(rng.standard_normal((20000, 100)))
    assert stats["mean_l2_norm"] == pytest.approx(chi, rel=2e-3)
    assert abs(stats["mean_coord_avg"]) < 3 * 0.1 / np.sqrt(20000)


def test_frechet_identity_and_scalar_case(rng):
    a = GaussianStats(rng.standard_normal(3), random_psd(rng, 3))
    assert frechet_gaussian(a, a) == pytest.approx(0.0, abs=1e-9)
    one = GaussianStats([0.0], [1.0], diagonal=True)
    four = GaussianStats([1.0], [4.0], diagonal=True)
    assert frechet_gaussian(one, four) == pytest.approx(2.0)


def test_frechet_full_matches_eigen_oracle(rng):
    for _ in range(5):
        sa, sb = random_psd(rng, 2), random_psd(rng, 2)
        ma, mb = rng.standard_normal(2), rng.standard_normal(2)
        w, v = np.linalg.eigh(sa)
        root = (v * np.sqrt(w)) @ v.T
        inner = np.linalg.eigvalsh(root @ sb @ root)
        expected = np.sum((ma - mb) ** 2) + np.trace(sa + sb) - 2 * np.sum(np.sqrt(inner))
        got = frechet_gaussian(GaussianStats(ma, sa), GaussianStats(mb, sb))
        assert got == pytest.approx(expected, abs=1e-8)


def test_frechet_symmetric_and_nonnegative(rng):
    for _ in range(5):
        a = GaussianStats(rng.standard_normal(4), random_psd(rng, 4))
        b = GaussianStats(rng.standard_normal(4), random_psd(rng, 4))
        ab, ba = frechet_gaussian(a, b), frechet_gaussian(b, a)
        assert ab >= 0
        assert ab == pytest.approx(ba, abs=1e-10)


def test_frechet_rejects_bad_covariance():
    bad = GaussianStats([0.0, 0.0], [[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(ValueError):
        frechet_gaussian(bad, bad)
    with pytest.raises(ValueError):
        frechet_gaussian(GaussianStats([0.0], [1.0], True), GaussianStats([0.0, 0.0], [1.0, 1.0], True))


def test_jacobi_matches_numpy(rng):
    a = random_psd(rng, 5)
    w, v = jacobi_eigh(a)
    np.testing.assert_allclose(np.sort(w), np.linalg.eigvalsh(a), rtol=1e-10)
    np.testing.assert_allclose(v @ np.diag(w) @ v.T, a, atol=1e-10)


def tone(f0, n=2048, sr=8000, phase=0.0):
    return np.sin(2 * np.pi * f0 * np.arange(n) / sr + phase)


def test_embedding_shapes_and_order_invariance(rng):
    waves = [rng.standard_normal(512) for _ in range(6)]
    stats = embed_spectral(waves, 128)
    assert stats.dim == 65
    assert embed_spectral(waves, 128, oversample_m=2).dim == 129
    shuffled = embed_spectral([waves[i] for i in rng.permutation(6)], 128)
    assert np.array_equal(stats.mean, shuffled.mean) and np.array_equal(stats.cov, shuffled.cov)
    same = embed_spectral([waves[0]] * 3, 128)
    np.testing.assert_allclose(same.cov, 0.0, atol=1e-25)
    with pytest.raises(ValueError):
        embed_spectral(waves[:1], 128)


def test_embedding_separates_tone_populations(rng):
    low = [tone(200 + rng.uniform(-5, 5), phase=rng.uniform(0, 6)) for _ in range(20)]
    low2 = [tone(200 + rng.uniform(-5, 5), phase=rng.uniform(0, 6)) for _ in range(20)]
    high = [tone(900 + rng.uniform(-5, 5), phase=rng.uniform(0, 6)) for _ in range(20)]
    within = frechet_gaussian(embed_spectral(low, 256), embed_spectral(low2, 256))
    across = frechet_gaussian(embed_spectral(low, 256), embed_spectral(high, 256))
    assert across > 20 * within


def test_pitch_peak_match_cases():
    sr, k = 8000, 512
    f_bin = 20 * sr / k
    assert pitch_peak_match(tone(f_bin), f_bin, k, sr)
    assert not pitch_peak_match(tone(2 * f_bin), f_bin, k, sr)
    f0 = 173.0
    harmonic = tone(f0) + 0.5 * tone(2 * f0) + 0.25 * tone(3 * f0)
    assert pitch_peak_match(Waveform(harmonic, sr), f0, k)


def test_pitch_peak_match_errors():
    with pytest.raises(ValueError):
        pitch_peak_match(np.zeros(1024), 5000.0, 512, 8000)
    with pytest.raises(ValueError):
        pitch_peak_match(np.zeros(100), 200.0, 512, 8000)
    with pytest.raises(ValueError):
        pitch_peak_match(np.zeros(1024), 200.0, 512)
