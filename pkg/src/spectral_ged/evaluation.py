"""Diagnostics: mode coverage, norm/projection moments, Frechet distance
between Gaussian fits, spectral embeddings and a pitch-peak check."""

from dataclasses import dataclass

import numpy as np

from .dsp import StftConfig, Waveform, stft_magnitude, _samples


def mode_coverage(samples, modes, radius):
    """Summarize how model samples sit relative to known mode centers.

    Returns
    -------
    dict
        ``fraction_within`` (share of samples within ``radius`` of their nearest
        mode), ``per_mode_share`` (share assigned to each nearest mode),
        ``per_mode_count`` and ``median_nearest_dist``.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    modes = np.atleast_2d(np.asarray(modes, dtype=np.float64))
    if modes.shape[0] == 0 or modes.size == 0:
        raise ValueError("modes must be nonempty")
    if samples.size == 0:
        raise ValueError("samples must be nonempty")
    dist = np.linalg.norm(samples[:, None, :] - modes[None, :, :], axis=-1)
    nearest = dist.min(axis=1)
    counts = np.bincount(dist.argmin(axis=1), minlength=modes.shape[0])
    n = samples.shape[0]
    return {
        "fraction_within": float(np.count_nonzero(nearest <= radius) / n),
        "per_mode_share": [float(c / n) for c in counts],
        "per_mode_count": [int(c) for c in counts],
        "median_nearest_dist": float(np.median(nearest)),
    }


def norm_projection_stats(samples):
    """Moments of ``||x||_2`` and of the coordinate average ``sum(x)/n``."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.size == 0:
        raise ValueError("samples must be nonempty")
    norms = np.linalg.norm(samples, axis=1)
    coord_avg = samples.mean(axis=1)
    return {
        "mean_l2_norm": float(norms.mean()),
        "std_l2_norm": float(norms.std()),
        "mean_coord_avg": float(coord_avg.mean()),
        "std_coord_avg": float(coord_avg.std()),
    }


@dataclass(frozen=True)
class GaussianStats:
    """Mean and covariance; ``cov`` is a vector of variances when
    ``diagonal`` is true."""

    mean: np.ndarray
    cov: np.ndarray
    diagonal: bool = False

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.asarray(self.cov, dtype=np.float64)
        expected = (mean.size,) if self.diagonal else (mean.size, mean.size)
        if cov.shape != expected:
            raise ValueError(f"covariance shape {cov.shape} does not match {expected}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self):
        return self.mean.size

    def full_cov(self):
        return np.diag(self.cov) if self.diagonal else self.cov

    @classmethod
    def fit(cls, X, diagonal=True):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        mean = X.mean(axis=0)
        centered = X - mean
        if diagonal:
            return cls(mean, (centered ** 2).sum(axis=0) / max(X.shape[0] - 1, 1), True)
        return cls(mean, centered.T @ centered / max(X.shape[0] - 1, 1), False)


def jacobi_eigh(a, tol=1e-14, max_sweeps=100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvectors as columns.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    scale = max(np.abs(a).max(), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                if theta == 0:
                    t = 1.0
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for m in (a, v):
                    col_p, col_q = m[:, p].copy(), m[:, q].copy()
                    m[:, p] = c * col_p - s * col_q
                    m[:, q] = s * col_p + c * col_q
                row_p, row_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
    return np.diag(a).copy(), v


def _check_psd(cov, diagonal, tol=1e-10):
    if diagonal:
        if np.any(cov < -tol * max(1.0, np.abs(cov).max(initial=0.0))):
            raise ValueError("diagonal covariance has negative variances")
        return
    scale = max(1.0, np.abs(cov).max())
    if np.abs(cov - cov.T).max() > tol * scale:
        raise ValueError("covariance is not symmetric")
    eigvals, _ = jacobi_eigh(0.5 * (cov + cov.T))
    if eigvals.min() < -tol * scale:
        raise ValueError(f"covariance is not positive semi-definite (eigenvalue {eigvals.min():.3g})")


def _psd_sqrt(a):
    w, v = jacobi_eigh(0.5 * (a + a.T))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_gaussian(a, b):
    """``|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))``.

    When both inputs are diagonal the square root is taken element-wise;
    otherwise it is computed as ``Tr((A^(1/2) B A^(1/2))^(1/2))`` with Jacobi
    eigen-decompositions.
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    _check_psd(a.cov, a.diagonal)
    _check_psd(b.cov, b.diagonal)
    mean_term = float(np.sum((a.mean - b.mean) ** 2))
    if a.diagonal and b.diagonal:
        va, vb = np.clip(a.cov, 0, None), np.clip(b.cov, 0, None)
        cov_term = float(np.sum(va + vb - 2.0 * np.sqrt(va * vb)))
    else:
        sa, sb = a.full_cov(), b.full_cov()
        root_a = _psd_sqrt(sa)
        middle = root_a @ sb @ root_a
        w, _ = jacobi_eigh(0.5 * (middle + middle.T))
        cov_term = float(np.trace(sa) + np.trace(sb) - 2.0 * np.sum(np.sqrt(np.clip(w, 0, None))))
    return max(mean_term + cov_term, 0.0)


def spectral_embedding(x, k, oversample_m=1, eps=1e-5):
    """Time-averaged ``log(s + eps)`` for one waveform (or a stack)."""
    s = stft_magnitude(_samples(x), StftConfig(k, oversample_m=oversample_m)).magnitudes
    return np.log(s + eps).mean(axis=-2)


def embed_spectral(samples, k, oversample_m=1, eps=1e-5, diagonal=True):
    """Gaussian fit of spectral embeddings of equal-length waveforms.

    Rows are sorted before reduction, so the result does not depend on sample
    order.
    """
    arrays = [_samples(s) for s in samples]
    if len(arrays) < 2:
        raise ValueError("need at least two waveforms")
    if len({a.size for a in arrays}) != 1:
        raise ValueError("waveforms must have equal length")
    emb = spectral_embedding(np.stack(arrays), k, oversample_m, eps)
    emb = emb[np.lexsort(emb.T[::-1])]
    return GaussianStats.fit(emb, diagonal=diagonal)


def average_spectrum(y, k):
    s = stft_magnitude(_samples(y), StftConfig(k, oversample_m=1)).magnitudes
    return s.mean(axis=-2)


def pitch_peak_match(y, f0_hz, k, sample_rate_hz=None):
    """True when the loudest bin of the time-averaged spectrum (window ``k``)
    is within one bin of ``f0_hz``."""
    if isinstance(y, Waveform):
        sample_rate_hz = sample_rate_hz or y.sample_rate_hz
    if sample_rate_hz is None:
        raise ValueError("sample rate is required")
    if f0_hz > sample_rate_hz / 2:
        raise ValueError(f"f0 {f0_hz} Hz is above Nyquist ({sample_rate_hz / 2} Hz)")
    samples = _samples(y)
    if samples.size < k:
        raise ValueError(f"waveform of length {samples.size} is shorter than window {k}")
    peak = int(np.argmax(average_spectrum(samples, k)))
    return abs(peak - f0_hz * k / sample_rate_hz) <= 1.0
