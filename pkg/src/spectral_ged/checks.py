"""Finite-difference gradient checks for every differentiation primitive and
for the waveform-to-distance and generator-to-loss pipelines."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .ged_core import GedLossConfig, minibatch_ged_loss_node
from .models import IstftGenerator
from .spectral_distance import DistanceConfig, SpectralDistance, multiscale_distance_node

TOLERANCE = 1e-4
STEP = 1e-5


@dataclass(frozen=True)
class GradCase:
    """``build(rng)`` returns ``(f, x)``: a scalar graph function and the point
    at which to check it."""

    name: str
    build: object
    max_coords: int = None
    screen_kinks: bool = False


def _weighted(op):
    """Case builder for ``sum(w * op(x))`` with fixed random weights."""

    def build_with(sample):
        def build(rng):
            x = sample(rng)
            out = op(ad.Tensor(x)).data
            w = rng.standard_normal(out.shape)
            return (lambda t: ad.sum(ad.mul(op(t), w))), x
        return build
    return build_with


def _normal(*shape):
    return lambda rng: rng.standard_normal(shape)


def _positive(*shape):
    return lambda rng: rng.uniform(0.5, 2.0, shape)


def _away_from_zero(*shape):
    """Normal draws pushed at least 0.1 away from kinks at 0."""
    def sample(rng):
        x = rng.standard_normal(shape)
        return np.where(x >= 0, x + 0.1, x - 0.1)
    return sample


def _binary(name, op, sample_a, sample_b):
    """Two cases: gradient with respect to each operand."""
    def wrt_a(rng):
        b = sample_b(rng)
        return _weighted(lambda t: op(t, b))(sample_a)(rng)

    def wrt_b(rng):
        a = sample_a(rng)
        return _weighted(lambda t: op(a, t))(sample_b)(rng)
    return [GradCase(f"{name}[a]", wrt_a), GradCase(f"{name}[b]", wrt_b)]


def _conv_cases():
    def wrt(which):
        def build(rng):
            args = {"x": rng.standard_normal((2, 7, 3)),
                    "w": rng.standard_normal((5, 3, 4)),
                    "b": rng.standard_normal(4)}
            x = args.pop(which)

            def op(t):
                full = dict(args, **{which: t})
                return ad.conv1d(full["x"], full["w"], full["b"])
            w = rng.standard_normal(op(ad.Tensor(x)).shape)
            return (lambda t: ad.sum(ad.mul(op(t), w))), x
        return build
    return [GradCase(f"conv1d[{k}]", wrt(k)) for k in ("x", "w", "b")]


def primitive_cases():
    unary = [
        ("neg", ad.neg, _normal(3, 4)),
        ("square", ad.square, _normal(3, 4)),
        ("relu", ad.relu, _away_from_zero(3, 4)),
        ("leaky_relu", ad.leaky_relu, _away_from_zero(3, 4)),
        ("tanh", ad.tanh, _normal(3, 4)),
        ("exp", ad.exp, _normal(3, 4)),
        ("log", ad.log, _positive(3, 4)),
        ("sqrt", ad.sqrt, _positive(3, 4)),
        ("abs", ad.abs, _away_from_zero(3, 4)),
        ("power", lambda t: ad.power(t, 1.7), _positive(3, 4)),
        ("sum_axis", lambda t: ad.sum(t, axis=1, keepdims=True), _normal(3, 4)),
        ("mean", lambda t: ad.mean(t, axis=0), _normal(3, 4)),
        ("reshape", lambda t: ad.reshape(t, (4, 3)), _normal(3, 4)),
        ("slice_basic", lambda t: ad.slice(t, np.s_[1:, ::2]), _normal(3, 4)),
        ("slice_fancy", lambda t: ad.slice(t, (np.array([0, 2, 0]),)), _normal(3, 4)),
        ("concat", lambda t: ad.concat([t, ad.mul(t, 2.0)], axis=0), _normal(3, 4)),
        ("frame_extract", lambda t: ad.frame_extract(t, 8, 4), _normal(2, 32)),
        ("overlap_add", lambda t: ad.overlap_add(t, 4), _normal(2, 5, 8)),
        ("l2_norm_rows", ad.l2_norm_rows, _normal(3, 5)),
        ("cos_transform", lambda t: ad.cos_transform(t, 32), _normal(3, 16)),
        ("sin_transform", lambda t: ad.sin_transform(t, 32), _normal(3, 16)),
        ("fourier_modulus", lambda t: ad.fourier_modulus(t, 32), _normal(3, 16)),
    ]
    cases = [GradCase(name, _weighted(op)(sample)) for name, op, sample in unary]
    cases += _binary("add", ad.add, _normal(3, 4), _normal(4))
    cases += _binary("sub", ad.sub, _normal(3, 4), _normal(3, 1))
    cases += _binary("mul", ad.mul, _normal(3, 4), _normal(3, 4))
    cases += _binary("div", ad.div, _normal(3, 4), _positive(3, 4))
    cases += _binary("matmul", ad.matmul, _normal(2, 3, 4), _normal(4, 5))
    cases += _binary("modulus", ad.modulus, _away_from_zero(3, 4), _away_from_zero(3, 4))
    cases += _conv_cases()
    cases.append(GradCase("affine", _weighted(
        lambda t: ad.affine(t, np.arange(12.0).reshape(4, 3) / 10, np.ones(3)))(_normal(5, 4))))
    return cases


def _spectral_case(cfg, length):
    def build(rng):
        target = rng.standard_normal(length)
        return (lambda t: multiscale_distance_node(t, target, cfg)), rng.standard_normal(length)
    return build


def _generator_case(param_name):
    """Loss of a tiny generator as a function of one of its parameters."""

    def build(rng):
        g = IstftGenerator(cond_dim=2, latent_dim=3, chunk_size=4, n_blocks=1,
                           hidden_channels=6, bottleneck_channels=3,
                           seed=int(rng.integers(1 << 31)))
        # move modulation weights off their zero init so every path is live
        for name, p in g.params.items():
            if ".mod" in name:
                p.data = 0.1 * rng.standard_normal(p.shape)
        c = rng.standard_normal((2, 3, 2))
        z, z2 = rng.standard_normal((2, 2, 3, 3))
        x = rng.standard_normal((2, 12))
        cfg = GedLossConfig(distance=SpectralDistance(
            DistanceConfig(window_lens=(4, 8), oversample_m=2)))
        param = g.params[param_name]
        start = param.data.copy()

        def f(t):
            saved = param.data
            g.params[param_name] = t
            try:
                y = g.forward(np.concatenate([c, c]), np.concatenate([z, z2]))
                loss, _, _ = minibatch_ged_loss_node(x, ad.slice(y, np.s_[:2]),
                                                     ad.slice(y, np.s_[2:]), cfg)
            finally:
                g.params[param_name] = param
                param.data = saved
            return loss
        return f, start
    return build


GENERATOR_PARAMS = ("stem.w", "block0.mod0.scale", "block0.conv1.w", "block0.conv3.b",
                    "out.mod.shift", "out.w", "out.b")


def pipeline_cases():
    return [
        GradCase("pipeline_spectral_m2", _spectral_case(
            DistanceConfig(window_lens=(64, 128), oversample_m=2), 256), max_coords=24, screen_kinks=True),
        GradCase("pipeline_spectral_mel", _spectral_case(
            DistanceConfig(window_lens=(64,), oversample_m=4, use_mel=True, n_mel=20,
                           sample_rate_hz=8000), 192), max_coords=24, screen_kinks=True),
        GradCase("pipeline_spectral_default_scales", _spectral_case(
            DistanceConfig(oversample_m=1), 2048), max_coords=12, screen_kinks=True),
    ] + [GradCase(f"pipeline_generator[{p}]", _generator_case(p), max_coords=24, screen_kinks=True)
         for p in GENERATOR_PARAMS]


def _central(f, x, i, h):
    shifted = x.copy().ravel()
    shifted[i] += h
    plus = f(ad.Tensor(shifted.reshape(x.shape))).item()
    shifted[i] -= 2 * h
    minus = f(ad.Tensor(shifted.reshape(x.shape))).item()
    return (plus - minus) / (2 * h)


def smooth_coordinates(f, x, n, rng, h=STEP, rtol=2e-5):
    """Up to ``n`` random coordinates along which ``f`` looks smooth on
    ``[x - h, x + h]``: central differences at ``h`` and ``h / 2`` agree.

    Uses only function values, so the analytic gradient plays no part in
    choosing where it is tested. Coordinates whose interval straddles a kink
    (an L1 tie, a leaky_relu input near 0) are skipped.
    """
    picked = []
    for i in rng.permutation(np.size(x)):
        wide, narrow = _central(f, x, i, h), _central(f, x, i, h / 2)
        if abs(wide - narrow) <= rtol * max(abs(wide), abs(narrow), 1e-8):
            picked.append(int(i))
            if len(picked) == n:
                break
    return picked


def run_case(case, rng, h=STEP):
    f, x = case.build(rng)
    x = np.asarray(x, dtype=np.float64)
    n = case.max_coords or np.size(x)
    if case.screen_kinks:
        indices = smooth_coordinates(f, x, n, rng, h)
    elif n < np.size(x):
        indices = rng.choice(np.size(x), n, replace=False)
    else:
        indices = None
    return ad.grad_check(f, x, h=h, indices=indices)


def gradcheck_suite(n_points=10, seed=0, cases=None, h=STEP):
    """Run every case at ``n_points`` random points.

    Returns
    -------
    list of (name, worst_error)
    """
    cases = cases if cases is not None else primitive_cases() + pipeline_cases()
    results = []
    for i, case in enumerate(cases):
        rng = np.random.default_rng([seed, i])
        worst = max(run_case(case, rng, h) for _ in range(n_points))
        results.append((case.name, float(worst)))
    return results
