"""Windowing, overcomplete STFT magnitudes, overlap-add inverse STFT, mel
filters.

Frames are never centered or padded: frame ``t`` covers samples
``[t*hop, t*hop + k)``. The m-times overcomplete basis uses frequencies
``i / (m*k)`` cycles per sample for ``i = 0..m*k/2``, so ``m = 1`` is the plain
real DFT of the window.
"""

from dataclasses import dataclass

import numpy as np

ENVELOPE_FLOOR = 1e-12


@dataclass(frozen=True)
class Waveform:
    """Mono audio: float samples in nominal [-1, 1] plus a sample rate."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 1:
            raise ValueError("a waveform needs a 1-D array with at least one sample")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform samples must be finite")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self):
        return self.samples.size


@dataclass(frozen=True)
class StftConfig:
    window_len_k: int
    hop: int = None
    oversample_m: int = 8
    center_pad: bool = False

    def __post_init__(self):
        k = self.window_len_k
        if k <= 0 or k % 2:
            raise ValueError(f"window length must be a positive even integer, got {k}")
        if self.hop is None:
            object.__setattr__(self, "hop", k // 2)
        if not 0 < self.hop <= k:
            raise ValueError(f"hop must lie in (0, {k}], got {self.hop}")
        if self.oversample_m < 1:
            raise ValueError(f"oversampling must be >= 1, got {self.oversample_m}")

    @property
    def n_bins(self):
        return self.oversample_m * self.window_len_k // 2 + 1


@dataclass(frozen=True)
class Spectrogram:
    window_len_k: int
    magnitudes: np.ndarray

    @property
    def n_frames(self):
        return self.magnitudes.shape[-2]

    @property
    def n_bins(self):
        return self.magnitudes.shape[-1]


def _samples(x):
    if isinstance(x, Waveform):
        return x.samples
    return np.asarray(x, dtype=np.float64)


def hann_window(n):
    """Periodic Hann window ``0.5 * (1 - cos(2 pi i / n))``."""
    if n < 1:
        raise ValueError(f"window length must be >= 1, got {n}")
    i = np.arange(n)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * i / n))


def overcomplete_basis(k, m=1):
    """Dense cosine and sine matrices of shape ``(m*k/2 + 1, k)``."""
    i = np.arange(m * k // 2 + 1)[:, None]
    n = np.arange(k)[None, :]
    phase = 2.0 * np.pi * i * n / (m * k)
    return np.cos(phase), np.sin(phase)


def frames(x, k, hop, center_pad=False):
    """Frame the last axis of ``x`` into ``(..., T, k)``."""
    x = _samples(x)
    if center_pad:
        pad = [(0, 0)] * (x.ndim - 1) + [(k // 2, k // 2)]
        x = np.pad(x, pad)
    if x.shape[-1] < k:
        raise ValueError(f"signal of length {x.shape[-1]} is shorter than window {k}")
    view = np.lib.stride_tricks.sliding_window_view(x, k, axis=-1)
    return view[..., ::hop, :]


def _windowed_spectrum(x, cfg):
    k = cfg.window_len_k
    fr = frames(x, k, cfg.hop, cfg.center_pad) * hann_window(k)
    return np.fft.rfft(fr, n=cfg.oversample_m * k, axis=-1)


def stft_magnitude(x, cfg):
    """Magnitude spectrogram over the overcomplete basis.

    Works on a single waveform or on a stack ``(..., N)``; the result has shape
    ``(..., T, m*k/2 + 1)``.
    """
    if isinstance(cfg, int):
        cfg = StftConfig(cfg)
    spectrum = _windowed_spectrum(x, cfg)
    return Spectrogram(cfg.window_len_k, np.abs(spectrum))


def stft_complex(x, cfg):
    """Windowed real DFT per frame, shape ``(..., T, k/2 + 1)`` complex.

    ``imag`` follows the usual ``exp(-2 pi i ...)`` sign convention.
    """
    if isinstance(cfg, int):
        cfg = StftConfig(cfg, oversample_m=1)
    if cfg.oversample_m != 1:
        raise ValueError("stft_complex needs oversample_m == 1")
    return _windowed_spectrum(x, cfg)


def window_envelope(k, hop, n_frames):
    """Accumulated squared synthesis window for overlap-add."""
    w2 = hann_window(k) ** 2
    env = np.zeros((n_frames - 1) * hop + k)
    for t in range(n_frames):
        env[t * hop:t * hop + k] += w2
    return env


def istft_overlap_add(spectra, k, hop=None):
    """Invert ``(T, k/2 + 1)`` complex frames by windowed overlap-add.

    Each frame is inverse-transformed, multiplied by the Hann window, summed
    at offset ``t*hop`` and divided by the squared-window envelope. Output
    length is ``(T - 1)*hop + k``.
    """
    if hop is None:
        hop = k // 2
    if hop * 2 != k:
        raise ValueError(f"only hop = k/2 is supported (k={k}, hop={hop})")
    spectra = np.asarray(spectra)
    if spectra.shape[-1] != k // 2 + 1:
        raise ValueError(f"expected {k // 2 + 1} bins per frame, got {spectra.shape[-1]}")
    n_frames = spectra.shape[-2]
    time_frames = np.fft.irfft(spectra, n=k, axis=-1) * hann_window(k)
    out = np.zeros(spectra.shape[:-2] + ((n_frames - 1) * hop + k,))
    for t in range(n_frames):
        out[..., t * hop:t * hop + k] += time_frames[..., t, :]
    return out / np.maximum(window_envelope(k, hop, n_frames), ENVELOPE_FLOOR)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel) / 2595.0) - 1.0)


def mel_filterbank(bins, n_mel, sample_rate_hz):
    """Triangular filters on the mel scale, shape ``(n_mel, bins)``.

    ``bins`` frequency points span 0 Hz to Nyquist. A filter narrower than the
    bin spacing collapses onto the bin nearest its center so every row keeps
    positive mass.
    """
    if n_mel < 1 or n_mel >= bins:
        raise ValueError(f"need 1 <= n_mel < bins, got n_mel={n_mel}, bins={bins}")
    nyquist = sample_rate_hz / 2.0
    freqs = np.linspace(0.0, nyquist, bins)
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(nyquist), n_mel + 2))
    lo, center, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (center - lo)
    falling = (hi - freqs) / (hi - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    for row in np.flatnonzero(fb.sum(axis=1) <= 0):
        fb[row, np.argmin(np.abs(freqs - center[row, 0]))] = 1.0
    return fb
