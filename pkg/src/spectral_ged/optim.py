"""Adam with linear warmup, parameter EMA, and the two-sample training step."""

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .ged_core import GedLossConfig, minibatch_ged_loss_node


class InvalidStateError(RuntimeError):
    pass


class TrainingDivergedError(RuntimeError):
    """Raised when the loss becomes non-finite; ``step`` holds the index."""

    def __init__(self, step, loss):
        super().__init__(f"training diverged at step {step} (loss={loss})")
        self.step = step
        self.loss = loss


@dataclass(frozen=True)
class OptimPreset:
    base_lr: float
    warmup_steps: int
    batch_size: int
    steps: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    ema_decay: float = 0.9999


PAPER_PRESET = OptimPreset(base_lr=3e-4, warmup_steps=6000, batch_size=1024, steps=1_000_000)
TOY_PRESET = OptimPreset(base_lr=1e-3, warmup_steps=0, batch_size=64, steps=5000)


class Adam:
    """Adam with bias correction and a linear learning-rate warmup.

    ``lr_t = base_lr * min(1, t / warmup_steps)`` where ``t`` counts updates
    starting from 1; ``warmup_steps = 0`` disables the warmup.
    """

    def __init__(self, params, base_lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 warmup_steps=0):
        self.params = params
        self.base_lr = base_lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.warmup_steps = warmup_steps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def lr_at(self, t):
        if self.warmup_steps <= 0:
            return self.base_lr
        return self.base_lr * min(1.0, t / self.warmup_steps)

    def step(self):
        missing = [name for name, p in self.params.items() if p.grad is None]
        if missing:
            raise InvalidStateError(f"no gradient for {missing[:5]}")
        self.t += 1
        lr = self.lr_at(self.t)
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return lr

    def zero_grad(self):
        ad.zero_grad(self.params.values())


def adam_step(state, params=None, grads=None):
    """Functional wrapper: copy ``grads`` (name -> array) onto ``params`` and
    run one :meth:`Adam.step`."""
    if grads is not None:
        for name, p in (params or state.params).items():
            if name not in grads:
                raise InvalidStateError(f"no gradient for {name}")
            p.grad = np.asarray(grads[name], dtype=np.float64)
    return state.step()


class Ema:
    """Exponential moving average of parameters:
    ``shadow <- decay * shadow + (1 - decay) * param``."""

    def __init__(self, params, decay=0.9999):
        if not 0.0 <= decay <= 1.0:
            raise ValueError(f"decay must lie in [0, 1], got {decay}")
        self.decay = decay
        self.shadow = {name: p.data.copy() for name, p in params.items()}

    def update(self, params):
        for name, p in params.items():
            if name not in self.shadow or self.shadow[name].shape != p.data.shape:
                raise ValueError(f"parameter {name!r} does not match the EMA shadow")
            self.shadow[name] = self.decay * self.shadow[name] + (1.0 - self.decay) * p.data


def ema_update(ema, params):
    ema.update(params)


def step_rng(seed, step, stream):
    """Independent generator for ``(seed, step, stream)``.

    Stream 0 picks the minibatch, streams 1 and 2 draw the two latent sets.
    """
    return np.random.default_rng([seed, step, stream])


def train_step(generator, x, c, loss_cfg, adam, ema=None, seed=0, step=None,
               latent_shape=None):
    """One update on a minibatch.

    Parameters
    ----------
    generator
        Object with ``params``, ``sampler`` and ``forward(c, z)``.
    x : ndarray
        Data batch, leading axis = example.
    c : ndarray or None
        Conditioning aligned with ``x``.
    loss_cfg : GedLossConfig
    adam : Adam
    ema : Ema, optional
    seed, step : int
        Latents come from :func:`step_rng` streams 1 and 2 for this step;
        ``step`` defaults to the optimizer's next update index.
    latent_shape : tuple, optional
        Batch shape of the latent draw; defaults to ``(len(x),)``.

    Returns
    -------
    dict
        ``step, loss, loss_attract, loss_repulse, lr, wall_ms``; losses are
        minibatch sums.

    Raises
    ------
    TrainingDivergedError
        If the loss is not finite; parameters are left untouched.
    """
    start = time.perf_counter()
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 1:
        raise ValueError("batch must be nonempty")
    step = adam.t + 1 if step is None else step
    shape = latent_shape or (x.shape[0],)
    z = generator.sampler.sample(step_rng(seed, step, 1), shape)
    z2 = generator.sampler.sample(step_rng(seed, step, 2), shape)
    loss_cfg = loss_cfg or GedLossConfig()

    adam.zero_grad()
    if loss_cfg.repulsive:
        # one forward pass for both latent sets
        cc = None if c is None else np.concatenate([c, c], axis=0)
        both = generator.forward(cc, np.concatenate([z, z2], axis=0))
        n = x.shape[0]
        y = ad.slice(both, np.s_[:n])
        y2 = ad.slice(both, np.s_[n:])
    else:
        y = generator.forward(c, z)
        y2 = None
    loss, attract, repulse = minibatch_ged_loss_node(x, y, y2, loss_cfg)
    value = float(loss.data)
    if not np.isfinite(value):
        raise TrainingDivergedError(step, value)
    ad.backward(loss)
    lr = adam.step()
    if ema is not None:
        ema.update(generator.params)
    return {
        "step": step,
        "loss": value,
        "loss_attract": float(attract.data),
        "loss_repulse": float(repulse.data),
        "lr": lr,
        "wall_ms": (time.perf_counter() - start) * 1000.0,
    }
