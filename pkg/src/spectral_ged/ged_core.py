"""Kernel/distance conversion, MMD and energy-distance estimators, and the
minibatch energy-score training loss."""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import autodiff as ad


class Provenance(Enum):
    DATA = "data"
    MODEL = "model"


@dataclass
class SampleBatch:
    """Homogeneous batch of samples drawn from the data or from a model."""

    items: list
    provenance: Provenance = Provenance.DATA

    def __post_init__(self):
        self.items = [np.asarray(x, dtype=np.float64) for x in self.items]
        if not self.items:
            raise ValueError("a sample batch must be nonempty")
        shape = self.items[0].shape
        if any(x.shape != shape for x in self.items):
            raise ValueError("samples in a batch must share one shape")

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)


def _items(batch):
    if isinstance(batch, SampleBatch):
        return batch.items
    return [np.asarray(x, dtype=np.float64) for x in batch]


def _distance_fn(distance):
    return distance if callable(distance) else distance.__call__


def kernel_to_distance(kernel, x, y):
    """Distance induced by a kernel: ``(k(x,x) + k(y,y) - 2k(x,y)) / 2``."""
    return 0.5 * (kernel(x, x) + kernel(y, y) - 2.0 * kernel(x, y))


def induced_distance(kernel):
    """Wrap :func:`kernel_to_distance` as a two-argument callable."""
    def distance(x, y):
        return kernel_to_distance(kernel, x, y)
    return distance


def _within_mean(items, fn):
    n = len(items)
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                total += fn(items[i], items[j])
    return total / (n * (n - 1))


def _cross_mean(xs, ys, fn):
    total = 0.0
    for x in xs:
        for y in ys:
            total += fn(x, y)
    return total / (len(xs) * len(ys))


def mmd2_ustat(X, Y, kernel):
    """Unbiased squared MMD with distinct-index within-sample sums.

    Raises
    ------
    ValueError
        If either sample has fewer than two items.
    """
    xs, ys = _items(X), _items(Y)
    if len(xs) < 2 or len(ys) < 2:
        raise ValueError("mmd2_ustat needs at least two samples on each side")
    return (_within_mean(xs, kernel) + _within_mean(ys, kernel)
            - 2.0 * _cross_mean(xs, ys, kernel))


def ged_population_estimate(X, Y, distance):
    """U-statistic estimate of ``E[2d(x,y) - d(x,x') - d(y,y')]``."""
    xs, ys = _items(X), _items(Y)
    if len(xs) < 2 or len(ys) < 2:
        raise ValueError("ged_population_estimate needs at least two samples on each side")
    d = _distance_fn(distance)
    return (2.0 * _cross_mean(xs, ys, d) - _within_mean(xs, d) - _within_mean(ys, d))


def energy_score(x, y, y_prime, distance):
    """Single-draw energy score ``2d(x,y) - d(y,y')``."""
    d = _distance_fn(distance)
    return 2.0 * d(x, y) - d(y, y_prime)


def power_distance(x, y, alpha=2.0, beta=1.0, allow_improper=False):
    """``||x - y||_alpha ** beta``.

    The energy score with this distance is proper for ``alpha`` in (0, 2] and
    ``beta`` in (0, alpha]; ``alpha=2, beta=1`` (Euclidean) is strictly proper.
    """
    _check_power_params(alpha, beta, allow_improper)
    diff = np.abs(np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64))
    norm = (diff ** alpha).sum(axis=-1) ** (1.0 / alpha)
    out = norm ** beta
    return float(out) if np.ndim(out) == 0 else out


def _check_power_params(alpha, beta, allow_improper):
    if allow_improper:
        if alpha <= 0 or beta <= 0:
            raise ValueError("alpha and beta must be positive")
        return
    if not 0 < alpha <= 2:
        raise ValueError(f"alpha must lie in (0, 2], got {alpha}")
    if not 0 < beta <= alpha:
        raise ValueError(f"beta must lie in (0, alpha], got {beta}")


class PowerDistance:
    """``||x - y||_alpha ** beta`` over the last axis, numeric and graph forms."""

    def __init__(self, alpha=2.0, beta=1.0, allow_improper=False):
        _check_power_params(alpha, beta, allow_improper)
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.allow_improper = allow_improper

    def __call__(self, x, y):
        return power_distance(x, y, self.alpha, self.beta, self.allow_improper)

    def node(self, x, y):
        diff = ad.sub(x, y)
        if self.alpha == 2.0:
            norm = ad.l2_norm_rows(diff, eps=0.0)
        else:
            norm = ad.power(ad.sum(ad.power(ad.abs(diff), self.alpha), axis=-1),
                            1.0 / self.alpha)
        return norm if self.beta == 1.0 else ad.power(norm, self.beta)

    def features(self, x):
        return ad.as_tensor(x)

    def from_features(self, fa, fb):
        return self.node(fa, fb)

    def __repr__(self):
        return f"PowerDistance(alpha={self.alpha}, beta={self.beta})"


def check_distance(distance, sample_shape, n_probes=16, seed=0, rtol=1e-9):
    """Probe symmetry and non-negativity on random standard-normal pairs.

    Raises
    ------
    ValueError
        On the first probe that violates either property.
    """
    rng = np.random.default_rng(seed)
    d = _distance_fn(distance)
    for _ in range(n_probes):
        a = rng.standard_normal(sample_shape)
        b = rng.standard_normal(sample_shape)
        dab, dba = float(d(a, b)), float(d(b, a))
        if dab < 0 or dba < 0:
            raise ValueError(f"distance returned a negative value ({min(dab, dba)})")
        if abs(dab - dba) > rtol * max(abs(dab), abs(dba), 1.0):
            raise ValueError(f"distance is not symmetric: {dab} vs {dba}")


@dataclass
class GedLossConfig:
    """Training-loss settings.

    ``probe_shape``, when given, triggers :func:`check_distance` at
    construction.
    """

    repulsive: bool = True
    distance: object = field(default_factory=PowerDistance)
    probe_shape: tuple = None

    def __post_init__(self):
        if self.probe_shape is not None:
            check_distance(self.distance, self.probe_shape)


def minibatch_ged_loss(xs, ys, ys_prime, cfg=None):
    """``sum_i 2d(x_i, y_i) - [repulsive] d(y_i, y_i')`` on plain arrays."""
    cfg = cfg or GedLossConfig()
    if not len(xs) == len(ys) == len(ys_prime):
        raise ValueError(f"length mismatch: {len(xs)}, {len(ys)}, {len(ys_prime)}")
    if len(xs) < 1:
        raise ValueError("minibatch must be nonempty")
    d = _distance_fn(cfg.distance)
    total = 0.0
    for x, y, y2 in zip(xs, ys, ys_prime):
        total += 2.0 * d(x, y)
        if cfg.repulsive:
            total -= d(y, y2)
    return total


def minibatch_ged_loss_node(x, y, y_prime, cfg=None):
    """Graph form over stacked batches (leading axis = example).

    Returns
    -------
    loss, attract, repulse : Tensor
        Scalars with ``loss = attract - repulse``; ``attract`` is
        ``sum_i 2d(x_i, y_i)``. With ``repulsive=False`` the repulsive scalar
        is a constant zero and ``y_prime`` is not evaluated.
    """
    cfg = cfg or GedLossConfig()
    x, y = ad.as_tensor(x), ad.as_tensor(y)
    if y_prime is not None:
        y_prime = ad.as_tensor(y_prime)
        if y_prime.shape != y.shape:
            raise ValueError(f"shape mismatch: {y.shape} vs {y_prime.shape}")
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    dist = cfg.distance
    fx, fy = dist.features(x), dist.features(y)
    attract = ad.mul(ad.sum(dist.from_features(fx, fy)), 2.0)
    if cfg.repulsive:
        if y_prime is None:
            raise ValueError("repulsive loss needs a second model sample")
        repulse = ad.sum(dist.from_features(fy, dist.features(y_prime)))
    else:
        repulse = ad.Tensor(0.0)
    return ad.sub(attract, repulse), attract, repulse
