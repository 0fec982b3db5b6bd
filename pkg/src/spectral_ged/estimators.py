"""scikit-learn style wrappers: train implicit generators with ``fit`` and draw
from them with ``sample``/``predict``; turn waveforms into spectral features
with ``transform``."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .evaluation import spectral_embedding
from .ged_core import GedLossConfig, PowerDistance, minibatch_ged_loss
from .models import IstftGenerator, LocationScaleGenerator, MlpGenerator
from .optim import Adam, Ema, step_rng, train_step
from .spectral_distance import DistanceConfig, SpectralDistance


class _GedTrainerMixin:
    """Shared minibatch loop for the generator estimators."""

    def _run(self, generator, X, C, distance, latent_shape):
        self.generator_ = generator
        self.loss_config_ = GedLossConfig(repulsive=self.repulsive, distance=distance)
        self.optimizer_ = Adam(generator.params, base_lr=self.learning_rate,
                               warmup_steps=self.warmup_steps)
        self.ema_ = Ema(generator.params, self.ema_decay) if self.ema_decay else None
        self.history_ = []
        n = X.shape[0]
        for step in range(1, self.n_steps + 1):
            idx = step_rng(self.random_state, step, 0).integers(0, n, self.batch_size)
            record = train_step(generator, X[idx], None if C is None else C[idx],
                                self.loss_config_, self.optimizer_, self.ema_,
                                seed=self.random_state, step=step,
                                latent_shape=latent_shape(self.batch_size))
            self.history_.append(record)
            if self.callback is not None:
                self.callback(record)
        return self

    def _use_weights(self, use_ema):
        if not use_ema:
            return None
        if self.ema_ is None:
            raise ValueError("fit with ema_decay set to sample from EMA weights")
        saved = {k: t.data for k, t in self.generator_.params.items()}
        self.generator_.params.load(self.ema_.shadow)
        return saved

    def _restore(self, saved):
        if saved is not None:
            self.generator_.params.load(saved)


class EnergyScoreGenerator(_GedTrainerMixin, BaseEstimator):
    """Implicit generator for vector data trained by minimizing the energy
    score ``2 d(x, y) - d(y, y')``.

    Parameters
    ----------
    model : {"mlp", "location_scale"}
    latent_dim : int
        Latent size for the MLP; the location-scale model uses the data dim.
    hidden : tuple of int
    activation : {"relu", "tanh"}
    repulsive : bool
        Keep the ``-d(y, y')`` term.
    alpha, beta : float
        Distance ``||x - y||_alpha ** beta``.
    n_steps, batch_size, learning_rate, warmup_steps : optimizer settings
    ema_decay : float or None
    random_state : int
    callback : callable, optional
        Called with each step's metrics record.
    """

    def __init__(self, model="mlp", latent_dim=2, hidden=(64, 64), activation="relu",
                 repulsive=True, alpha=2.0, beta=1.0, n_steps=5000, batch_size=64,
                 learning_rate=1e-3, warmup_steps=0, ema_decay=None, random_state=0,
                 callback=None):
        self.model = model
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.activation = activation
        self.repulsive = repulsive
        self.alpha = alpha
        self.beta = beta
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.warmup_steps = warmup_steps
        self.ema_decay = ema_decay
        self.random_state = random_state
        self.callback = callback

    def _build(self, n_features, cond_dim):
        if self.model == "mlp":
            return MlpGenerator(cond_dim, self.latent_dim, n_features, hidden=tuple(self.hidden),
                                activation=self.activation, seed=self.random_state)
        if self.model == "location_scale":
            if cond_dim:
                raise ValueError("the location-scale model takes no conditioning")
            return LocationScaleGenerator(n_features)
        raise ValueError(f"unknown model {self.model!r}")

    def fit(self, X, y=None, cond=None):
        """Train on rows of ``X`` (optionally paired with rows of ``cond``)."""
        X = check_array(X, dtype=np.float64)
        C = None
        if cond is not None:
            C = check_array(cond, dtype=np.float64)
            if C.shape[0] != X.shape[0]:
                raise ValueError("X and cond must have the same number of rows")
        self.n_features_in_ = X.shape[1]
        generator = self._build(X.shape[1], 0 if C is None else C.shape[1])
        return self._run(generator, X, C, PowerDistance(self.alpha, self.beta),
                         lambda n: (n,))

    def sample(self, n_samples=1, cond=None, random_state=None, truncation=None,
               use_ema=False):
        """Draw ``n_samples`` rows (one per row of ``cond`` when given)."""
        check_is_fitted(self, "generator_")
        g = self.generator_
        rng = np.random.default_rng(random_state)
        if cond is not None:
            cond = check_array(cond, dtype=np.float64)
            n_samples = cond.shape[0]
        sampler = g.sampler if truncation is None else type(g.sampler)(g.latent_dim, truncation)
        z = sampler.sample(rng, (n_samples,))
        saved = self._use_weights(use_ema)
        try:
            return g.forward(cond, z).data.copy()
        finally:
            self._restore(saved)

    def score(self, X, y=None, cond=None, random_state=0):
        """Negative mean energy score of ``X`` under the model (higher is
        better)."""
        X = check_array(X, dtype=np.float64)
        rng = np.random.default_rng(random_state)
        ys = self.sample(X.shape[0], cond=cond, random_state=rng)
        ys2 = self.sample(X.shape[0], cond=cond, random_state=rng)
        cfg = GedLossConfig(repulsive=True, distance=PowerDistance(self.alpha, self.beta))
        return -minibatch_ged_loss(X, ys, ys2, cfg) / X.shape[0]


class SpectralGedSynthesizer(_GedTrainerMixin, BaseEstimator):
    """Conditional waveform generator (overlap-add iSTFT network) trained with
    the spectral energy score.

    ``fit(X, cond)`` takes waveforms ``(n, n_chunks * chunk_size)`` and
    conditioning ``(n, cond_dim)`` (held constant over chunks) or
    ``(n, n_chunks, cond_dim)``.
    """

    def __init__(self, chunk_size=16, n_blocks=4, hidden_channels=128,
                 bottleneck_channels=32, latent_dim=16, repulsive=True,
                 window_lens=(64, 128, 256, 512, 1024), oversample_m=2, log_eps=1e-5,
                 use_mel=False, sample_rate_hz=8000, n_steps=10000, batch_size=8,
                 learning_rate=3e-4, warmup_steps=0, ema_decay=None, random_state=0,
                 callback=None):
        self.chunk_size = chunk_size
        self.n_blocks = n_blocks
        self.hidden_channels = hidden_channels
        self.bottleneck_channels = bottleneck_channels
        self.latent_dim = latent_dim
        self.repulsive = repulsive
        self.window_lens = window_lens
        self.oversample_m = oversample_m
        self.log_eps = log_eps
        self.use_mel = use_mel
        self.sample_rate_hz = sample_rate_hz
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.warmup_steps = warmup_steps
        self.ema_decay = ema_decay
        self.random_state = random_state
        self.callback = callback

    def distance_config(self):
        return DistanceConfig(window_lens=tuple(self.window_lens),
                              oversample_m=self.oversample_m, log_eps=self.log_eps,
                              use_mel=self.use_mel, sample_rate_hz=self.sample_rate_hz)

    def _chunk_cond(self, cond, n_chunks):
        cond = np.asarray(cond, dtype=np.float64)
        if cond.ndim == 1:
            cond = cond[:, None]
        if cond.ndim == 2:
            cond = np.repeat(cond[:, None, :], n_chunks, axis=1)
        if cond.ndim != 3 or cond.shape[1] != n_chunks:
            raise ValueError(f"conditioning of shape {cond.shape} does not match "
                             f"{n_chunks} chunks")
        return cond

    def fit(self, X, cond):
        X = check_array(X, dtype=np.float64)
        if X.shape[1] % self.chunk_size:
            raise ValueError(f"waveform length {X.shape[1]} is not a multiple of "
                             f"chunk size {self.chunk_size}")
        n_chunks = X.shape[1] // self.chunk_size
        C = self._chunk_cond(cond, n_chunks)
        if C.shape[0] != X.shape[0]:
            raise ValueError("X and cond must have the same number of rows")
        self.n_chunks_ = n_chunks
        self.cond_dim_ = C.shape[2]
        generator = IstftGenerator(self.cond_dim_, self.latent_dim, self.chunk_size,
                                   self.n_blocks, self.hidden_channels,
                                   self.bottleneck_channels, seed=self.random_state)
        return self._run(generator, X, C, SpectralDistance(self.distance_config()),
                         lambda n: (n, n_chunks))

    def predict(self, cond, n_chunks=None, random_state=None, truncation=None,
                use_ema=False, batch_size=16):
        """Generate one waveform per row of ``cond``."""
        check_is_fitted(self, "generator_")
        g = self.generator_
        n_chunks = n_chunks or self.n_chunks_
        C = self._chunk_cond(cond, n_chunks)
        rng = np.random.default_rng(random_state)
        sampler = g.sampler if truncation is None else type(g.sampler)(g.latent_dim, truncation)
        z = sampler.sample(rng, (C.shape[0], n_chunks))
        saved = self._use_weights(use_ema)
        try:
            out = [g.forward(C[i:i + batch_size], z[i:i + batch_size]).data
                   for i in range(0, C.shape[0], batch_size)]
        finally:
            self._restore(saved)
        return np.concatenate(out, axis=0)


class MultiScaleSpectrogram(TransformerMixin, BaseEstimator):
    """Stateless transformer: waveforms ``(n, N)`` to time-averaged
    log-magnitude features, concatenated over ``window_lens``."""

    def __init__(self, window_lens=(256,), oversample_m=1, log_eps=1e-5):
        self.window_lens = window_lens
        self.oversample_m = oversample_m
        self.log_eps = log_eps

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if X.shape[1] < max(self.window_lens):
            raise ValueError(f"waveforms of length {X.shape[1]} are shorter than "
                             f"window {max(self.window_lens)}")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_array(X, dtype=np.float64)
        return np.concatenate([spectral_embedding(X, k, self.oversample_m, self.log_eps)
                               for k in self.window_lens], axis=1)
