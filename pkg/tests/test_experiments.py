import json
import math

import numpy as np
import pytest

from spectral_ged import experiments as ex
from spectral_ged.evaluation import pitch_peak_match


def test_csv_formatting():
    text = ex.csv_text(["a", "b", "c"], [[1, 0.1, True], [2, 1e-20, "x"]])
    assert text == "a,b,c\n1,0.1,true\n2,1e-20,x\n"


def test_json_is_strict(tmp_path):
    ex.write_json(tmp_path / "r.json", {"b": np.float64(1.5), "a": np.arange(2)})
    assert json.loads((tmp_path / "r.json").read_text()) == {"a": [0, 1], "b": 1.5}
    with pytest.raises(ValueError):
        ex.write_json(tmp_path / "bad.json", {"x": float("nan")})


def test_metrics_log_streams_and_finalizes(tmp_path):
    with ex.MetricsLog(tmp_path) as log:
        log({"step": 1, "loss": 0.5, "loss_attract": 1.0, "loss_repulse": 0.5, "lr": 1e-3,
             "wall_ms": 2.0})
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines == ["step,loss,loss_attract,loss_repulse,lr,wall_ms", "1,0.5,1.0,0.5,0.001,2.0"]
    assert sorted(p.name for p in tmp_path.iterdir()) == ["metrics.csv"]


def test_chi_mean():
    assert ex.chi_mean(100) == pytest.approx(9.975, abs=1e-3)
    assert ex.chi_mean(1) == pytest.approx(math.sqrt(2 / math.pi))


def test_exact_expected_loss_by_hand():
    support = np.array([[0.0], [1.0]])
    dist = lambda a, b: abs(float(a[0] - b[0]))
    # p puts all mass on 0, q on 1: 2 * d(0, 1) - d(1, 1) = 2 per example
    assert ex.exact_expected_loss(support, np.array([1.0, 0.0]), np.array([0.0, 1.0]), 3,
                                  dist) == pytest.approx(6.0)
    # q uniform: attract 2 * 0.5, repulse 0.5
    assert ex.exact_expected_loss(support, np.array([1.0, 0.0]), np.array([0.5, 0.5]), 1,
                                  dist) == pytest.approx(0.5)


def test_unbiasedness_small_run():
    report = ex.run_unbiasedness(draws=20000, n_blocks=10, seed=1)
    assert abs(report["z_score"]) < 3
    no_rep = ex.run_unbiasedness(draws=20000, n_blocks=10, seed=1, repulsive=False)
    assert no_rep["exact"] > report["exact"]


def test_harmonic_tones_have_expected_pitch(rng):
    f0 = ex.heldout_f0(10)
    tones = ex.harmonic_tones(rng, f0, 2048)
    assert tones.shape == (10, 2048)
    assert all(pitch_peak_match(t, f, ex.PITCH_WINDOW, ex.AUDIO_SAMPLE_RATE)
               for t, f in zip(tones, f0))


def test_condition_mapping():
    np.testing.assert_allclose(ex.f0_to_cond(np.array(ex.F0_RANGE)), [-1.0, 1.0])
    f0 = ex.heldout_f0(50)
    assert f0.size == 50 and ex.F0_RANGE[0] < f0.min() and f0.max() < ex.F0_RANGE[1]
    assert np.all(np.diff(f0) > 0)


def test_ablation_grid_shape():
    grid = ex.ablation_grid()
    assert len(grid) == 12
    assert grid[0][0] == "multiscale"
    assert sum(name.startswith("window_") for name, _, _ in grid) == 6
    assert [m for name, _, m in grid if name.startswith("oversample_")] == [1, 2, 4, 8, 16]


def test_tiny_gmm_run_writes_files(tmp_path):
    report = ex.run_gmm(tmp_path, steps=5, batch=8, n_train=100, n_samples=20)
    assert report["experiment"] == "gmm"
    assert len((tmp_path / "samples.csv").read_text().splitlines()) == 21
    assert len((tmp_path / "metrics.csv").read_text().splitlines()) == 6


def test_tiny_audio_run_is_deterministic(tmp_path):
    kwargs = dict(steps=2, batch=2, blocks=1, hidden_channels=8, bottleneck_channels=4,
                  n_chunks=64, n_train=16, n_heldout=4, write_wavs=False)
    a = ex.run_audio(tmp_path / "a", **kwargs)
    ex.run_audio(tmp_path / "b", **kwargs)
    for name in ("pitch.csv", "report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert a["eval_length"] == 2048
    assert a["real_vs_real_distance"] > 0


def test_tiny_ablation(tmp_path):
    report = ex.run_ablate(tmp_path, steps=1, batch=2, blocks=1, hidden_channels=4,
                           bottleneck_channels=2, n_train=8, n_heldout=3,
                           windows=(64, 128), oversample_list=(1, 2))
    assert report["n_rows"] == 1 + 2 + 2
    assert report["all_finite"]
    lines = (tmp_path / "ablation.csv").read_text().splitlines()
    assert lines[0] == ",".join(ex.ABLATION_FIELDS)
    assert len(lines) == 6


def test_ablation_rejects_long_window():
    with pytest.raises(ValueError):
        ex.run_ablate(steps=1, n_chunks=2, chunk=16)
