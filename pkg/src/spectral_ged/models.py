"""Implicit generators ``y = f(c, z)``.

* :class:`MlpGenerator` for low-dimensional toy targets.
* :class:`LocationScaleGenerator`, ``y = mu + sigma * z``.
* :class:`IstftGenerator`, a residual stack that emits STFT coefficients per
  conditioning chunk and turns them into audio by overlap-add.
"""

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .dsp import hann_window, window_envelope, ENVELOPE_FLOOR


class LatentSampler:
    """Standard-normal latents, optionally truncated by per-coordinate
    rejection (any coordinate with ``|z| > truncation`` is redrawn)."""

    def __init__(self, dim, truncation=None):
        if dim < 1:
            raise ValueError(f"latent dim must be positive, got {dim}")
        if truncation is not None and truncation <= 0:
            raise ValueError(f"truncation must be positive, got {truncation}")
        self.dim = int(dim)
        self.truncation = truncation

    def sample(self, rng, batch_shape=()):
        shape = tuple(batch_shape) if np.iterable(batch_shape) else (int(batch_shape),)
        z = rng.standard_normal(shape + (self.dim,))
        if self.truncation is not None:
            bad = np.abs(z) > self.truncation
            while bad.any():
                z[bad] = rng.standard_normal(int(bad.sum()))
                bad = np.abs(z) > self.truncation
        return z


class GeneratorParams(OrderedDict):
    """Trainable tensors addressed by stable names."""

    def add(self, name, value):
        self[name] = ad.Tensor(value, requires_grad=True, name=name)
        return self[name]

    def arrays(self):
        return OrderedDict((k, t.data) for k, t in self.items())

    def load(self, arrays):
        missing = set(self) - set(arrays)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for name, t in self.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != t.shape:
                raise ValueError(f"{name}: shape {value.shape} != {t.shape}")
            t.data = value.copy()

    def count(self):
        return int(sum(t.size for t in self.values()))


def orthogonal(rng, shape, gain=1.0):
    """Orthogonal initialization for a matrix (or a stack of kernel taps
    flattened over all but the last axis)."""
    rows = int(np.prod(shape[:-1]))
    cols = shape[-1]
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols].reshape(shape)


class MlpGenerator:
    """Fully connected generator on ``concat(c, z)``.

    Parameters
    ----------
    cond_dim, latent_dim, out_dim : int
    hidden : sequence of int
    activation : {"relu", "tanh"}
    seed : int
    """

    def __init__(self, cond_dim, latent_dim, out_dim, hidden=(64, 64),
                 activation="relu", seed=0):
        if activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {activation!r}")
        self.cond_dim = int(cond_dim)
        self.latent_dim = int(latent_dim)
        self.out_dim = int(out_dim)
        self.layer_sizes = [self.cond_dim + self.latent_dim, *hidden, self.out_dim]
        self.activation = activation
        self.sampler = LatentSampler(self.latent_dim)
        rng = np.random.default_rng(seed)
        gain = np.sqrt(2.0) if activation == "relu" else 1.0
        self.params = GeneratorParams()
        for i, (n_in, n_out) in enumerate(zip(self.layer_sizes, self.layer_sizes[1:])):
            last = i == len(self.layer_sizes) - 2
            self.params.add(f"layer{i}.w", orthogonal(rng, (n_in, n_out), 1.0 if last else gain))
            self.params.add(f"layer{i}.b", np.zeros(n_out))

    def latent_shape(self, n):
        return (n,)

    def forward(self, c, z):
        z = ad.as_tensor(z)
        if z.shape[-1] != self.latent_dim:
            raise ValueError(f"latent has dim {z.shape[-1]}, expected {self.latent_dim}")
        if self.cond_dim:
            c = ad.as_tensor(c)
            if c.shape[-1] != self.cond_dim:
                raise ValueError(f"conditioning has dim {c.shape[-1]}, expected {self.cond_dim}")
            h = ad.concat([c, z], axis=-1)
        else:
            h = z
        act = ad.relu if self.activation == "relu" else ad.tanh
        n_layers = len(self.layer_sizes) - 1
        for i in range(n_layers):
            h = ad.affine(h, self.params[f"layer{i}.w"], self.params[f"layer{i}.b"])
            if i < n_layers - 1:
                h = act(h)
        return h


class LocationScaleGenerator:
    """``y = mu + sigma * z`` with scalar (or vector) ``mu`` and ``sigma``."""

    def __init__(self, dim=1, mu=0.0, sigma=1.0):
        self.cond_dim = 0
        self.latent_dim = int(dim)
        self.out_dim = int(dim)
        self.sampler = LatentSampler(self.latent_dim)
        self.params = GeneratorParams()
        self.params.add("mu", np.full(dim, mu, dtype=np.float64))
        self.params.add("sigma", np.full(dim, sigma, dtype=np.float64))

    def latent_shape(self, n):
        return (n,)

    def forward(self, c, z):
        return ad.add(self.params["mu"], ad.mul(self.params["sigma"], z))


@dataclass(frozen=True)
class IstftPreset:
    chunk_size: int
    n_blocks: int
    hidden_channels: int
    bottleneck_channels: int


DESK_PRESET = IstftPreset(chunk_size=16, n_blocks=4, hidden_channels=128, bottleneck_channels=32)
PAPER_PRESET = IstftPreset(chunk_size=120, n_blocks=12, hidden_channels=2048, bottleneck_channels=512)


def coefficient_layout(chunk_size):
    """Map each of the ``2C - 1`` coefficient slots to ``(bin, part)``.

    Slot 0 is the DC real part; slots ``2j-1, 2j`` are the real and imaginary
    parts of bin ``j`` for ``j = 1..C-1``. The Nyquist bin is left at zero.
    """
    layout = [(0, "real")]
    for j in range(1, chunk_size):
        layout += [(j, "real"), (j, "imag")]
    return layout


def coefficients_to_spectra(coeffs, chunk_size):
    """Place ``(..., 2C - 1)`` coefficients into ``(..., C + 1)`` complex bins."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    spectra = np.zeros(coeffs.shape[:-1] + (chunk_size + 1,), dtype=np.complex128)
    for slot, (j, part) in enumerate(coefficient_layout(chunk_size)):
        spectra[..., j] += coeffs[..., slot] * (1.0 if part == "real" else 1j)
    return spectra


def synthesis_matrix(chunk_size):
    """``(2C - 1, 2C)`` matrix: coefficients to Hann-windowed time frame.

    Scaled by ``C`` so that a unit coefficient in bin ``j > 0`` yields a
    unit-amplitude sinusoid before windowing.
    """
    k = 2 * chunk_size
    eye = np.eye(2 * chunk_size - 1)
    frames = np.fft.irfft(coefficients_to_spectra(eye, chunk_size), n=k, axis=-1)
    return chunk_size * frames * hann_window(k)


class IstftGenerator:
    """Residual 1x1 / kernel-5 convolution stack emitting per-chunk STFT frames.

    Per chunk the network outputs ``2C`` values. The first, through ``exp``,
    scales the other ``2C - 1``, which fill the non-redundant bins of a
    window-``2C`` frame (see :func:`coefficient_layout`). Frames are
    overlap-added at hop ``C`` and normalized by the squared-window envelope;
    ``C/2`` samples are trimmed from each end so the output has exactly
    ``n_chunks * C`` samples.

    Conditioning enters through per-channel scale and shift computed from
    ``c`` by a learned linear map before every nonlinearity.
    """

    def __init__(self, cond_dim, latent_dim=16, chunk_size=16, n_blocks=4,
                 hidden_channels=128, bottleneck_channels=32, seed=0):
        if chunk_size < 2 or chunk_size % 2:
            raise ValueError(f"chunk size must be even and >= 2, got {chunk_size}")
        self.cond_dim = int(cond_dim)
        self.latent_dim = int(latent_dim)
        self.chunk_size = int(chunk_size)
        self.n_blocks = int(n_blocks)
        self.hidden_channels = int(hidden_channels)
        self.bottleneck_channels = int(bottleneck_channels)
        self.sampler = LatentSampler(self.latent_dim)
        self._synthesis = synthesis_matrix(self.chunk_size)
        self._envelopes = {}

        rng = np.random.default_rng(seed)
        h, b, c = self.hidden_channels, self.bottleneck_channels, self.cond_dim
        p = self.params = GeneratorParams()
        p.add("stem.w", orthogonal(rng, (1, c + self.latent_dim, h)))
        p.add("stem.b", np.zeros(h))
        for i in range(self.n_blocks):
            widths = [(h, b, 1), (b, b, 5), (b, b, 5), (b, h, 1)]
            for j, (n_in, n_out, k) in enumerate(widths):
                p.add(f"block{i}.mod{j}.scale", np.zeros((c, n_in)))
                p.add(f"block{i}.mod{j}.shift", np.zeros((c, n_in)))
                p.add(f"block{i}.conv{j}.w", orthogonal(rng, (k, n_in, n_out)))
                p.add(f"block{i}.conv{j}.b", np.zeros(n_out))
        p.add("out.mod.scale", np.zeros((c, h)))
        p.add("out.mod.shift", np.zeros((c, h)))
        p.add("out.w", orthogonal(rng, (1, h, 2 * self.chunk_size)))
        p.add("out.b", np.zeros(2 * self.chunk_size))

    def latent_shape(self, n, n_chunks):
        return (n, n_chunks)

    def output_length(self, n_chunks):
        return n_chunks * self.chunk_size

    def _modulate(self, h, c, prefix):
        scale = ad.add(ad.matmul(c, self.params[prefix + ".scale"]), 1.0)
        shift = ad.matmul(c, self.params[prefix + ".shift"])
        return ad.leaky_relu(ad.add(ad.mul(h, scale), shift), 0.2)

    def _inverse_envelope(self, n_chunks):
        if n_chunks not in self._envelopes:
            env = window_envelope(2 * self.chunk_size, self.chunk_size, n_chunks)
            self._envelopes[n_chunks] = 1.0 / np.maximum(env, ENVELOPE_FLOOR)
        return self._envelopes[n_chunks]

    def coefficients(self, c, z):
        """Scaled STFT coefficients ``(B, n_chunks, 2C - 1)``."""
        c, z = ad.as_tensor(c), ad.as_tensor(z)
        if c.ndim != 3 or z.ndim != 3 or c.shape[:2] != z.shape[:2]:
            raise ValueError(f"expected c (B, T, {self.cond_dim}) and z (B, T, "
                             f"{self.latent_dim}), got {c.shape} and {z.shape}")
        if c.shape[2] != self.cond_dim or z.shape[2] != self.latent_dim:
            raise ValueError(f"feature dims {c.shape[2]}/{z.shape[2]} do not match "
                             f"{self.cond_dim}/{self.latent_dim}")
        if c.shape[1] < 2:
            raise ValueError(f"need at least 2 chunks, got {c.shape[1]}")
        p = self.params
        h = ad.conv1d(ad.concat([c, z], axis=-1), p["stem.w"], p["stem.b"])
        for i in range(self.n_blocks):
            a = h
            for j in range(4):
                a = self._modulate(a, c, f"block{i}.mod{j}")
                a = ad.conv1d(a, p[f"block{i}.conv{j}.w"], p[f"block{i}.conv{j}.b"])
            h = ad.add(h, a)
        h = self._modulate(h, c, "out.mod")
        out = ad.conv1d(h, p["out.w"], p["out.b"])
        gain = ad.exp(ad.slice(out, (Ellipsis, np.s_[0:1])))
        return ad.mul(gain, ad.slice(out, (Ellipsis, np.s_[1:])))

    def synthesize(self, coeffs):
        """Overlap-add ``(B, T, 2C - 1)`` coefficients into ``(B, T*C)`` audio."""
        coeffs = ad.as_tensor(coeffs)
        n_chunks = coeffs.shape[-2]
        frames = ad.matmul(coeffs, self._synthesis)
        audio = ad.mul(ad.overlap_add(frames, self.chunk_size), self._inverse_envelope(n_chunks))
        lo = self.chunk_size // 2
        return ad.slice(audio, (Ellipsis, np.s_[lo:lo + n_chunks * self.chunk_size]))

    def forward(self, c, z):
        return self.synthesize(self.coefficients(c, z))


def sample_pair(generator, c, rng, n=None):
    """Two forward passes sharing ``c`` and parameters, with independent
    latents drawn from ``rng`` (``z`` first, then ``z'``)."""
    c_arr = np.asarray(c.data if isinstance(c, ad.Tensor) else c, dtype=np.float64)
    if isinstance(generator, IstftGenerator):
        shape = c_arr.shape[:2]
    else:
        shape = (n if n is not None else c_arr.shape[0],)
    z = generator.sampler.sample(rng, shape)
    z2 = generator.sampler.sample(rng, shape)
    return generator.forward(c, z), generator.forward(c, z2)
