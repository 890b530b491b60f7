"""Velocity predictors: a closed-form Gaussian oracle and a tiny trainable network.

The tiny network works on fixed-size grid patches. Inputs are the flattened
noisy patch, the flattened mixture patch, a learned projection of the
sinusoidal timestep embedding and a learned category embedding; three
fully-connected layers (SiLU between them) map the concatenation back to a
patch. Gradients are written out by hand.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import diffusion
from .schedule import NoiseSchedule

logger = logging.getLogger(__name__)

PARAM_NAMES = ("Wt", "bt", "E", "W1", "b1", "W2", "b2", "W3", "b3")


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""


def sinusoidal_embedding(t, dim: int) -> np.ndarray:
    """``[sin(t / 10000^(2i/dim)), cos(t / 10000^(2i/dim))]`` for ``i < dim/2``.

    Scalar ``t`` gives shape ``(dim,)``; an array of timesteps gives ``(n, dim)``.
    """
    if dim < 2 or dim % 2:
        raise ValueError(f"embedding width must be even and >= 2, got {dim}")
    t_arr = np.asarray(t, dtype=np.float64)
    half = dim // 2
    freqs = 10000.0 ** (-2.0 * np.arange(half) / dim)
    angles = np.multiply.outer(t_arr, freqs)
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


def _sigmoid(x):
    # exp(-log(1 + e^-x)) never overflows
    return np.exp(-np.logaddexp(0.0, -x))


def silu(x):
    return x * _sigmoid(x)


def _silu_grad(x):
    s = _sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


# ---------------------------------------------------------------------------
# Gaussian oracle


def gaussian_oracle_predict_v(x_t, t, schedule: NoiseSchedule, mu0, sigma0: float):
    """Exact E[v | x_t] when the data are N(mu0, sigma0^2 I)."""
    if sigma0 < 0:
        raise ValueError("sigma0 must be nonnegative")
    abar = schedule.alpha_bar(t)
    if abar >= 1.0 and sigma0 == 0:
        raise ValueError("alpha_bar == 1 with sigma0 == 0 leaves nothing to condition on")
    x_t = np.asarray(x_t, dtype=np.float64)
    mu0 = np.broadcast_to(np.asarray(mu0, dtype=np.float64), x_t.shape)
    sa = math.sqrt(abar)
    so = math.sqrt(1.0 - abar)
    var0 = sigma0 * sigma0
    x0_mean = (sa * var0 * x_t + (1.0 - abar) * mu0) / (abar * var0 + (1.0 - abar))
    if abar < 1.0:
        eps_mean = (x_t - sa * x0_mean) / so
    else:
        eps_mean = np.zeros_like(x_t)
    return sa * eps_mean - so * x0_mean


class GaussianOracle:
    """Denoiser-interface wrapper around :func:`gaussian_oracle_predict_v`."""

    def __init__(self, schedule: NoiseSchedule, mu0, sigma0: float):
        self.schedule = schedule
        self.mu0 = mu0
        self.sigma0 = sigma0

    def predict_v(self, x_t, m, c, t):
        return gaussian_oracle_predict_v(x_t, t, self.schedule, self.mu0, self.sigma0)

    __call__ = predict_v


# ---------------------------------------------------------------------------
# Tiny network


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 24
    epochs: int = 20
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning rate must be nonnegative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch size must be positive and epochs nonnegative")


def init_params(n_categories: int, patch_frames: int = 16, n_bins: int = 64,
                hidden: int = 512, emb_dim: int = 256, seed=0, dtype=np.float64) -> Dict[str, np.ndarray]:
    """He-style initialisation; the output layer starts at zero."""
    rng = np.random.default_rng(seed)
    d = patch_frames * n_bins
    d_in = 2 * d + 2 * emb_dim

    def dense(fan_in, fan_out):
        return (rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in)).astype(dtype)

    return {
        "Wt": dense(emb_dim, emb_dim),
        "bt": np.zeros(emb_dim, dtype),
        "E": (rng.standard_normal((n_categories, emb_dim)) * 0.1).astype(dtype),
        "W1": dense(d_in, hidden),
        "b1": np.zeros(hidden, dtype),
        "W2": dense(hidden, hidden),
        "b2": np.zeros(hidden, dtype),
        "W3": np.zeros((hidden, d), dtype),
        "b3": np.zeros(d, dtype),
    }


def param_dims(params) -> dict:
    hidden, d = params["W3"].shape
    return {"n_categories": params["E"].shape[0], "emb_dim": params["E"].shape[1],
            "hidden": hidden, "patch_size": d}


def _forward(params, x_t, m, c, t, dtype):
    """Forward pass on a batch of flattened patches, keeping intermediates for backprop."""
    n = x_t.shape[0]
    emb_dim = params["E"].shape[1]
    t = np.broadcast_to(np.asarray(t), (n,))
    c = np.broadcast_to(np.asarray(c), (n,))
    s = sinusoidal_embedding(t, emb_dim).astype(dtype)
    zt = s @ params["Wt"] + params["bt"]
    ht = silu(zt)
    ec = params["E"][c]
    z = np.concatenate([x_t, m, ht, ec], axis=1)
    z1 = z @ params["W1"] + params["b1"]
    a1 = silu(z1)
    z2 = a1 @ params["W2"] + params["b2"]
    a2 = silu(z2)
    out = a2 @ params["W3"] + params["b3"]
    return out, (s, zt, z, z1, a1, z2, a2, c)


def _flatten_inputs(params, x_t, m, c):
    x_t = np.asarray(x_t)
    m = np.asarray(m)
    if x_t.shape != m.shape:
        raise ValueError(f"shape mismatch between x_t and m: {x_t.shape} vs {m.shape}")
    d = params["W3"].shape[1]
    if x_t.size % d:
        raise ValueError(f"input of shape {x_t.shape} is not a whole number of {d}-element patches")
    n_cat = params["E"].shape[0]
    c_arr = np.asarray(c)
    if not np.issubdtype(c_arr.dtype, np.integer) or np.any(c_arr < 0) or np.any(c_arr >= n_cat):
        raise ValueError(f"category token out of range [0, {n_cat}): {c}")
    return x_t.reshape(-1, d), m.reshape(-1, d)


def tiny_predict_v(params, x_t, m, c, t, schedule: Optional[NoiseSchedule] = None):
    """Predict the velocity for ``x_t`` (any shape holding whole patches)."""
    if schedule is not None:
        schedule.alpha_bar(t)  # range check only
    xf, mf = _flatten_inputs(params, x_t, m, c)
    dtype = params["W1"].dtype
    n = xf.shape[0]
    c_arr = np.asarray(c)
    if c_arr.ndim and c_arr.size != n:
        c_arr = np.repeat(c_arr, n // c_arr.size)
    t_arr = np.asarray(t)
    if t_arr.ndim and t_arr.size != n:
        t_arr = np.repeat(t_arr, n // t_arr.size)
    out, _ = _forward(params, xf.astype(dtype, copy=False), mf.astype(dtype, copy=False),
                      c_arr, t_arr, dtype)
    return out.reshape(np.shape(x_t))


class TinyDenoiser:
    """Binds parameters so the network fits the sampler's denoiser interface."""

    def __init__(self, params, schedule: Optional[NoiseSchedule] = None):
        self.params = params
        self.schedule = schedule

    def predict_v(self, x_t, m, c, t):
        return tiny_predict_v(self.params, x_t, m, c, t, self.schedule)

    __call__ = predict_v


def draw_training_noise(n: int, shape, T: int, rng: np.random.Generator):
    """Timesteps uniform on [1, T] and standard-normal noise, in that draw order."""
    t = rng.integers(1, T + 1, size=n)
    eps = rng.standard_normal((n,) + tuple(shape))
    return t, eps


def loss_and_gradients(params, x0, m, c, schedule: NoiseSchedule, rng=None, t=None, eps=None):
    """Mean-squared v-prediction error over a batch and its parameter gradients.

    ``x0`` and ``m`` are ``(n, ...)`` batches of patches and ``c`` holds ``n``
    category indices. Timesteps and noise are drawn from ``rng`` unless given.

    Returns:
        ``(loss, grads)`` where ``grads`` maps parameter names to arrays.
    """
    x0 = np.asarray(x0)
    n = x0.shape[0] if x0.ndim else 0
    if n == 0:
        raise ValueError("empty batch")
    if t is None or eps is None:
        if rng is None:
            raise ValueError("either rng or explicit (t, eps) draws are required")
        t, eps = draw_training_noise(n, x0.shape[1:], schedule.T, rng)
    x_t = diffusion.forward_sample(x0, t, eps, schedule)
    target = diffusion.v_target(x0, eps, t, schedule)
    dtype = params["W1"].dtype
    xf, mf = _flatten_inputs(params, x_t, m, c)
    if xf.shape[0] != n:
        raise ValueError("each batch item must hold exactly one patch")
    tf = target.reshape(n, -1).astype(dtype)
    out, cache = _forward(params, xf.astype(dtype), mf.astype(dtype), np.asarray(c), np.asarray(t), dtype)
    s, zt, z, z1, a1, z2, a2, c_idx = cache
    diff = out - tf
    loss = float(np.mean(diff.astype(np.float64) ** 2))

    dout = (2.0 / diff.size) * diff
    g = {}
    g["W3"] = a2.T @ dout
    g["b3"] = dout.sum(axis=0)
    dz2 = (dout @ params["W3"].T) * _silu_grad(z2)
    g["W2"] = a1.T @ dz2
    g["b2"] = dz2.sum(axis=0)
    dz1 = (dz2 @ params["W2"].T) * _silu_grad(z1)
    g["W1"] = z.T @ dz1
    g["b1"] = dz1.sum(axis=0)
    dz = dz1 @ params["W1"].T
    d = xf.shape[1]
    emb_dim = params["E"].shape[1]
    dht = dz[:, 2 * d: 2 * d + emb_dim]
    dec = dz[:, 2 * d + emb_dim:]
    dzt = dht * _silu_grad(zt)
    g["Wt"] = s.T @ dzt
    g["bt"] = dzt.sum(axis=0)
    g["E"] = np.zeros_like(params["E"])
    np.add.at(g["E"], c_idx, dec)
    return loss, g


class Adam:
    """Adam with decoupled weight decay; state is plain arrays so it checkpoints easily."""

    def __init__(self, params, config: TrainConfig):
        self.config = config
        self.step = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def update(self, params, grads):
        cfg = self.config
        self.step += 1
        bc1 = 1.0 - cfg.beta1**self.step
        bc2 = 1.0 - cfg.beta2**self.step
        for k in PARAM_NAMES:
            gk = grads[k]
            self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * gk
            self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * gk * gk
            update = (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + cfg.adam_eps)
            params[k] = params[k] - cfg.learning_rate * (update + cfg.weight_decay * params[k])
        return params


@dataclass
class LossRecord:
    epoch: int
    step: int
    loss: float


def train(params, dataset, config: TrainConfig, schedule: NoiseSchedule,
          optimizer: Optional[Adam] = None, start_epoch: int = 1,
          history: Optional[List[LossRecord]] = None, callback=None):
    """Fit the tiny network with Adam on ``dataset = (x0, m, c)`` patch arrays.

    Epochs are numbered from 1. Each epoch draws its own generator from
    ``(seed, epoch)`` so a run resumed at ``start_epoch`` reproduces an
    uninterrupted one exactly.

    Returns:
        ``(params, history, optimizer)``.
    """
    x0, m, c = (np.asarray(a) for a in dataset)
    n = len(x0)
    if n == 0:
        raise ValueError("empty dataset")
    params = {k: v.copy() for k, v in params.items()}
    optimizer = optimizer or Adam(params, config)
    optimizer.config = config
    history = list(history or [])
    step = history[-1].step if history else 0
    for epoch in range(start_epoch, config.epochs + 1):
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(n)
        for lo in range(0, n, config.batch_size):
            idx = order[lo: lo + config.batch_size]
            loss, grads = loss_and_gradients(params, x0[idx], m[idx], c[idx], schedule, rng=rng)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(gv)) for gv in grads.values()):
                raise TrainingDivergedError(
                    f"non-finite loss/gradient at epoch {epoch}, step {step + 1} (loss={loss})")
            try:
                with np.errstate(over="raise", invalid="raise"):
                    params = optimizer.update(params, grads)
            except FloatingPointError as exc:
                raise TrainingDivergedError(
                    f"optimizer overflow at epoch {epoch}, step {step + 1} (loss={loss})") from exc
            step += 1
            history.append(LossRecord(epoch, step, loss))
        epoch_losses = [r.loss for r in history if r.epoch == epoch]
        if epoch_losses:
            logger.info("epoch %d: mean loss %.6f", epoch, float(np.mean(epoch_losses)))
        if callback is not None:
            callback(epoch, params, optimizer, history)
    return params, history, optimizer


def epoch_means(history: Sequence[LossRecord]) -> dict:
    out: dict = {}
    for r in history:
        out.setdefault(r.epoch, []).append(r.loss)
    return {e: float(np.mean(v)) for e, v in out.items()}
