import os
import struct

import numpy as np
import pytest

from spectral_ged.checkpoint import CheckpointError, checkpoint_bytes, parse_checkpoint
from spectral_ged.dsp import Waveform
from spectral_ged.wav import WavFormatError, encode_pcm16, wav_bytes, wav_read, wav_write


def test_ramp_round_trip(tmp_path):
    ramp = np.linspace(-1.0, 0.999, 1001)
    path = tmp_path / "ramp.wav"
    wav_write(path, ramp, 8000)
    back = wav_read(path)
    assert back.sample_rate_hz == 8000
    assert np.abs(back.samples - ramp).max() <= 1 / 32768


def test_canonical_header():
    data = wav_bytes(Waveform([0.0, 0.5], 8000))
    assert len(data) == 48
    assert data[:4] == b"RIFF" and data[8:16] == b"WAVEfmt "
    assert data[36:40] == b"data"
    assert struct.unpack_from("<I", data, 40)[0] == 4
    assert struct.unpack_from("<HHIIHH", data, 20) == (1, 1, 8000, 16000, 2, 16)


def test_pcm_rounding_and_clamping():
    values = encode_pcm16([0.5 / 32768, -0.5 / 32768, 1.5, -1.5, 1.4 / 32768])
    assert values.tolist() == [1, -1, 32767, -32768, 1]


def stereo_file(path):
    pcm = np.zeros(4, dtype="<i2").tobytes()
    header = struct.pack("<4sI4s4sIHHIIHH4sI", b"RIFF", 36 + len(pcm), b"WAVE", b"fmt ", 16,
                         1, 2, 8000, 32000, 4, 16, b"data", len(pcm))
    path.write_bytes(header + pcm)


def test_stereo_rejected(tmp_path):
    path = tmp_path / "stereo.wav"
    stereo_file(path)
    with pytest.raises(WavFormatError, match="fmt"):
        wav_read(path)


def test_truncated_data_chunk(tmp_path):
    path = tmp_path / "short.wav"
    path.write_bytes(wav_bytes(Waveform(np.zeros(10), 8000))[:-6])
    with pytest.raises(WavFormatError, match="data"):
        wav_read(path)


def test_non_pcm_and_garbage(tmp_path):
    data = bytearray(wav_bytes(Waveform(np.zeros(4), 8000)))
    data[20] = 3
    (tmp_path / "float.wav").write_bytes(bytes(data))
    with pytest.raises(WavFormatError):
        wav_read(tmp_path / "float.wav")
    (tmp_path / "junk.wav").write_bytes(b"not a wav file")
    with pytest.raises(WavFormatError):
        wav_read(tmp_path / "junk.wav")


def test_write_needs_rate(tmp_path):
    with pytest.raises(ValueError):
        wav_write(tmp_path / "x.wav", np.zeros(4))


def test_written_file_mode_respects_umask(tmp_path):
    path = tmp_path / "mode.wav"
    wav_write(path, np.zeros(4), 8000)
    umask = os.umask(0)
    os.umask(umask)
    assert os.stat(path).st_mode & 0o777 == 0o666 & ~umask
    assert [p.name for p in tmp_path.iterdir()] == ["mode.wav"]


def test_checkpoint_bytes_round_trip(rng):
    arrays = {"a": rng.standard_normal((2, 3)), "b": np.array(1.5), "c": np.zeros(0)}
    out = parse_checkpoint(checkpoint_bytes(arrays))
    assert list(out) == ["a", "b", "c"]
    for k in arrays:
        assert out[k].shape == arrays[k].shape
        assert out[k].tobytes() == arrays[k].tobytes()


def test_checkpoint_errors(rng):
    data = checkpoint_bytes({"w": rng.standard_normal(4)})
    with pytest.raises(CheckpointError):
        parse_checkpoint(b"XXXXXXXX" + data[8:])
    with pytest.raises(CheckpointError):
        parse_checkpoint(data[:-3])
    with pytest.raises(CheckpointError):
        parse_checkpoint(data[:8] + struct.pack("<I", 9) + data[12:])
