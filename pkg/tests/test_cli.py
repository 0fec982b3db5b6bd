import io
import json

import numpy as np
import pytest

from spectral_ged import cli
from spectral_ged.spectral_distance import DistanceConfig, multiscale_distance
from spectral_ged.wav import wav_read, wav_write


def run(argv):
    out = io.StringIO()
    code = cli.main(argv, out=out)
    return code, out.getvalue()


@pytest.fixture
def wav_pair(tmp_path, rng):
    x = 0.5 * np.sin(2 * np.pi * 300 * np.arange(4096) / 8000) + 0.05 * rng.standard_normal(4096)
    a, b = tmp_path / "a.wav", tmp_path / "b.wav"
    wav_write(a, x, 8000)
    wav_write(b, 0.5 * x, 8000)
    return a, b


def test_distance_same_file(wav_pair):
    a, _ = wav_pair
    code, text = run(["distance", str(a), str(a)])
    assert code == cli.EXIT_OK
    assert text.splitlines()[0] == "distance 0.0"


def test_distance_matches_library(wav_pair):
    a, b = wav_pair
    code, text = run(["distance", str(a), str(b)])
    lines = text.splitlines()
    value = float(lines[0].split()[1])
    expected = multiscale_distance(wav_read(a).samples, wav_read(b).samples,
                                   DistanceConfig(sample_rate_hz=8000))
    assert value > 0
    assert value == pytest.approx(expected, rel=1e-12)
    assert lines[1] == "k,term,value"
    ks = sorted({int(line.split(",")[0]) for line in lines[2:]})
    assert ks == [64, 128, 256, 512, 1024, 2048]
    assert sum(float(line.split(",")[2]) for line in lines[2:]) == pytest.approx(value)


def test_distance_flags(wav_pair):
    a, b = wav_pair
    code, text = run(["distance", str(a), str(b), "--windows", "64,128", "--oversample", "2",
                      "--mel", "--log-eps", "1e-3"])
    assert code == 0
    assert len(text.splitlines()) == 2 + 4


def test_distance_rate_mismatch(tmp_path):
    wav_write(tmp_path / "a.wav", np.zeros(4096), 8000)
    wav_write(tmp_path / "b.wav", np.zeros(4096), 16000)
    code, _ = run(["distance", str(tmp_path / "a.wav"), str(tmp_path / "b.wav")])
    assert code == cli.EXIT_INVALID


def test_distance_bad_file(tmp_path, capsys):
    (tmp_path / "bad.wav").write_bytes(b"garbage")
    code, _ = run(["distance", str(tmp_path / "bad.wav"), str(tmp_path / "bad.wav")])
    assert code == cli.EXIT_IO
    assert "bad.wav" in capsys.readouterr().err


def test_missing_file(tmp_path):
    code, _ = run(["distance", str(tmp_path / "nope.wav"), str(tmp_path / "nope.wav")])
    assert code == cli.EXIT_IO


def test_seed_is_required(tmp_path):
    with pytest.raises(SystemExit) as info:
        cli.main(["train-gmm", "--out", str(tmp_path)])
    assert info.value.code == cli.EXIT_INVALID


def test_bad_list_argument(tmp_path):
    with pytest.raises(SystemExit) as info:
        cli.main(["ablate", "--seed", "0", "--out", str(tmp_path), "--oversample-list", "1,x"])
    assert info.value.code == cli.EXIT_INVALID


def test_bad_thread_count(tmp_path, monkeypatch):
    monkeypatch.setenv("GED_THREADS", "0")
    code, _ = run(["train-locscale", "--seed", "0", "--out", str(tmp_path), "--steps", "2"])
    assert code == cli.EXIT_INVALID


def test_train_locscale_outputs(tmp_path):
    out = tmp_path / "run"
    code, text = run(["train-locscale", "--seed", "1", "--out", str(out), "--steps", "20"])
    assert code == 0
    assert text.startswith("locscale: mu=")
    report = json.loads((out / "report.json").read_text())
    assert report["schema_version"] == 1
    metrics = (out / "metrics.csv").read_text().splitlines()
    assert metrics[0] == "step,loss,loss_attract,loss_repulse,lr,wall_ms"
    assert len(metrics) == 21
    assert (out / "samples.csv").read_text().splitlines()[0] == "y"


def test_train_gmm_no_repulsive_flag(tmp_path):
    code, _ = run(["train-gmm", "--seed", "0", "--out", str(tmp_path), "--steps", "3",
                   "--no-repulsive"])
    assert code == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["repulsive"] is False
    rows = (tmp_path / "metrics.csv").read_text().splitlines()[1:]
    assert all(row.split(",")[3] == "0.0" for row in rows)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code(tmp_path):
    code, _ = run(["train-locscale", "--seed", "0", "--out", str(tmp_path), "--steps", "5",
                   "--lr", "inf"])
    assert code == cli.EXIT_DIVERGED
    assert (tmp_path / "metrics.csv").read_text().startswith("step,")


def test_unbiasedness_command(tmp_path):
    code, text = run(["unbiasedness", "--seed", "0", "--out", str(tmp_path), "--draws", "2000"])
    assert code == 0
    assert "z=" in text
    assert (tmp_path / "estimates.csv").read_text().splitlines()[0] == "block,mean"


def test_train_audio_tiny(tmp_path):
    code, text = run(["train-audio", "--seed", "0", "--out", str(tmp_path), "--steps", "2",
                      "--batch", "2", "--blocks", "1", "--hidden", "8", "--bottleneck", "4",
                      "--n-chunks", "64", "--no-repulsive"])
    assert code == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["label"] == "no-repulsive"
    wavs = sorted((tmp_path / "wavs").iterdir())
    assert len(wavs) == 50
    assert wav_read(wavs[0]).sample_rate_hz == 8000
    assert len((tmp_path / "pitch.csv").read_text().splitlines()) == 51


def test_gradcheck_command():
    code, text = run(["gradcheck", "--points", "1"])
    assert code == 0
    assert text.splitlines()[-1].endswith("(tolerance 0.0001)")
    assert "FAIL" not in text
