"""16-bit mono PCM WAV reading and writing."""

import os
import struct
import tempfile

import numpy as np

from .dsp import Waveform


class WavFormatError(OSError):
    """The file is not a readable 16-bit mono PCM RIFF/WAVE file."""


def _chunks(data, path):
    pos = 12
    while pos < len(data):
        if pos + 8 > len(data):
            raise WavFormatError(f"{path}: truncated chunk header at byte {pos}")
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            name = chunk_id.decode("latin-1")
            raise WavFormatError(f"{path}: truncated {name!r} chunk "
                                 f"({len(body)} of {size} bytes)")
        yield chunk_id, body
        pos += 8 + size + (size & 1)


def wav_read(path):
    """Read a PCM 16-bit mono WAV file; samples are scaled by 1/32768."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: missing RIFF/WAVE header")
    fmt = None
    pcm = None
    for chunk_id, body in _chunks(data, path):
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise WavFormatError(f"{path}: 'fmt ' chunk is {len(body)} bytes, need 16")
            fmt = struct.unpack_from("<HHIIHH", body)
        elif chunk_id == b"data":
            pcm = body
    if fmt is None:
        raise WavFormatError(f"{path}: no 'fmt ' chunk")
    if pcm is None:
        raise WavFormatError(f"{path}: no 'data' chunk")
    audio_format, channels, rate, _, _, bits = fmt
    if audio_format != 1:
        raise WavFormatError(f"{path}: 'fmt ' chunk has format code {audio_format}, "
                             "only PCM (1) is supported")
    if channels != 1:
        raise WavFormatError(f"{path}: 'fmt ' chunk declares {channels} channels, "
                             "only mono is supported")
    if bits != 16:
        raise WavFormatError(f"{path}: 'fmt ' chunk declares {bits}-bit samples, "
                             "only 16-bit is supported")
    if len(pcm) % 2:
        raise WavFormatError(f"{path}: 'data' chunk has an odd byte count")
    samples = np.frombuffer(pcm, dtype="<i2").astype(np.float64) / 32768.0
    if samples.size == 0:
        raise WavFormatError(f"{path}: 'data' chunk is empty")
    return Waveform(samples, rate)


def encode_pcm16(samples):
    """Round half away from zero and clamp to the int16 range."""
    scaled = np.asarray(samples, dtype=np.float64) * 32768.0
    rounded = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    return np.clip(rounded, -32768, 32767).astype("<i2")


def wav_bytes(waveform):
    pcm = encode_pcm16(waveform.samples).tobytes()
    rate = waveform.sample_rate_hz
    header = struct.pack("<4sI4s4sIHHIIHH4sI",
                         b"RIFF", 36 + len(pcm), b"WAVE",
                         b"fmt ", 16, 1, 1, rate, rate * 2, 2, 16,
                         b"data", len(pcm))
    return header + pcm


def default_file_mode():
    """``0o666`` masked by the process umask, as ``open`` would apply."""
    umask = os.umask(0)
    os.umask(umask)
    return 0o666 & ~umask


def atomic_write_bytes(path, payload):
    """Write to a temp file in the target directory, then rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.chmod(tmp, default_file_mode())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def wav_write(path, waveform, sample_rate_hz=None):
    """Write a canonical 44-byte-header PCM 16-bit mono file."""
    if not isinstance(waveform, Waveform):
        if sample_rate_hz is None:
            raise ValueError("sample_rate_hz is required for raw sample arrays")
        waveform = Waveform(waveform, sample_rate_hz)
    atomic_write_bytes(path, wav_bytes(waveform))
