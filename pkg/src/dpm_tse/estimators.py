"""scikit-learn style estimators wrapping the pipeline.

``LogMelTransformer`` turns waveforms into normalised log-mel grids (and back
through Griffin-Lim). ``TargetSoundExtractor`` fits the tiny conditional
denoiser on (mixture, target, category) grids and predicts target grids by
ancestral sampling.
"""

from __future__ import annotations

import logging
import math
import time
import warnings

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import audio, diffusion
from .denoiser import TinyDenoiser, TrainConfig, init_params, train
from .schedule import build_linear_schedule, plan_inference_steps, rescale_zero_terminal_snr

logger = logging.getLogger(__name__)


def _check_grids(X, name="X"):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"{name} must be (n_samples, frames, bins), got shape {X.shape}")
    if X.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    return X


def _check_categories(categories, n, n_categories):
    c = np.asarray(categories)
    if c.ndim == 0:
        c = np.full(n, int(c))
    if c.shape != (n,):
        raise ValueError(f"expected {n} category tokens, got shape {c.shape}")
    if not np.issubdtype(c.dtype, np.integer):
        raise ValueError("category tokens must be integer indices")
    if np.any(c < 0) or np.any(c >= n_categories):
        raise ValueError(f"category token out of range [0, {n_categories})")
    return c.astype(np.int64)


class LogMelTransformer(TransformerMixin, BaseEstimator):
    """Waveforms ``(n_samples, n_times)`` to normalised log-mel grids ``(n, frames, n_mels)``.

    ``fit`` records the log-domain maximum of the training waveforms; the
    minimum is pinned to the log floor so silence maps to -1.
    """

    def __init__(self, sample_rate=16000, n_fft=1024, window=1024, hop=160, n_mels=64,
                 fmin=0.0, fmax=8000.0, log_floor=1e-5, griffin_lim_iters=60, nnls_iters=50):
        self.sample_rate = sample_rate
        self.n_fft = n_fft
        self.window = window
        self.hop = hop
        self.n_mels = n_mels
        self.fmin = fmin
        self.fmax = fmax
        self.log_floor = log_floor
        self.griffin_lim_iters = griffin_lim_iters
        self.nnls_iters = nnls_iters

    def _base_config(self):
        return audio.MelConfig(self.sample_rate, self.n_fft, self.window, self.hop, self.n_mels,
                               self.fmin, self.fmax, self.log_floor, math.log(self.log_floor))

    def fit(self, X, y=None):
        X = self._check_waves(X)
        cfg = self._base_config()
        log_max = max(float(audio.log_mel_raw(x, cfg).max()) for x in X)
        if log_max <= cfg.log_min:
            log_max = cfg.log_min + 1.0
        self.config_ = cfg.with_stats(cfg.log_min, log_max)
        self.n_samples_ = X.shape[1]
        return self

    @classmethod
    def from_config(cls, config: audio.MelConfig):
        tr = cls(config.sample_rate, config.n_fft, config.window, config.hop, config.n_mels,
                 config.fmin, config.fmax, config.log_floor)
        tr.config_ = config
        return tr

    def _check_waves(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None]
        if X.ndim != 2 or X.shape[1] == 0:
            raise ValueError("expected waveforms shaped (n_samples, n_times)")
        if not np.all(np.isfinite(X)):
            raise ValueError("waveforms contain non-finite values")
        return X

    def transform(self, X):
        check_is_fitted(self, "config_")
        X = self._check_waves(X)
        return np.stack([audio.log_mel(x, self.config_).values for x in X])

    def inverse_transform(self, X, length=None):
        check_is_fitted(self, "config_")
        X = _check_grids(X)
        return np.stack([
            audio.griffin_lim(g, self.griffin_lim_iters, self.config_, self.nnls_iters, length=length)
            for g in X
        ])


class TargetSoundExtractor(BaseEstimator):
    """Conditional v-prediction diffusion model over log-mel patches.

    Parameters mirror the experimental knobs: schedule (``n_steps``, betas,
    ``zero_terminal_snr``), sampler (``inference_steps``, ``noise_variance``,
    ``clamp``), network size and optimiser settings.
    """

    def __init__(self, n_steps=1000, beta_start=1e-4, beta_end=0.02, zero_terminal_snr=True,
                 inference_steps=50, noise_variance="forward", clamp=1.2, n_categories=8,
                 patch_frames=16, hidden=512, emb_dim=256, clip_frames=64, clips_per_item=4,
                 learning_rate=1e-4, weight_decay=1e-4, batch_size=24, epochs=20,
                 random_state=0, dtype="float64"):
        self.n_steps = n_steps
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.zero_terminal_snr = zero_terminal_snr
        self.inference_steps = inference_steps
        self.noise_variance = noise_variance
        self.clamp = clamp
        self.n_categories = n_categories
        self.patch_frames = patch_frames
        self.hidden = hidden
        self.emb_dim = emb_dim
        self.clip_frames = clip_frames
        self.clips_per_item = clips_per_item
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.random_state = random_state
        self.dtype = dtype

    # -- helpers ---------------------------------------------------------

    def build_schedule(self):
        sched = build_linear_schedule(self.n_steps, self.beta_start, self.beta_end)
        return rescale_zero_terminal_snr(sched) if self.zero_terminal_snr else sched

    def train_config(self):
        return TrainConfig(learning_rate=self.learning_rate, weight_decay=self.weight_decay,
                           batch_size=self.batch_size, epochs=self.epochs, seed=self.random_state)

    def _pad(self, grid, fill=audio.SILENCE):
        extra = (-grid.shape[0]) % self.patch_frames
        if extra:
            grid = np.concatenate([grid, np.full((extra, grid.shape[1]), fill)])
        return grid

    def make_patches(self, X, y, categories):
        """Random clips that overlap target activity, cut into patches."""
        if self.clip_frames % self.patch_frames:
            raise ValueError("clip_frames must be a multiple of patch_frames")
        rng = np.random.default_rng([self.random_state, 7919])
        xs, ms, cs = [], [], []
        for mix, tgt, c in zip(X, y, categories):
            mix, tgt = self._pad(mix), self._pad(tgt)
            n_frames = mix.shape[0]
            clip = min(self.clip_frames, n_frames - n_frames % self.patch_frames)
            active = np.flatnonzero(tgt.max(axis=1) > audio.SILENCE + 1e-6)
            for _ in range(self.clips_per_item):
                if active.size:
                    anchor = int(active[rng.integers(active.size)])
                    lo = max(0, min(anchor - int(rng.integers(clip)), n_frames - clip))
                else:
                    lo = int(rng.integers(n_frames - clip + 1))
                for p in range(lo, lo + clip, self.patch_frames):
                    xs.append(tgt[p: p + self.patch_frames])
                    ms.append(mix[p: p + self.patch_frames])
                    cs.append(c)
        return np.stack(xs), np.stack(ms), np.asarray(cs, dtype=np.int64)

    # -- estimator API ---------------------------------------------------

    def fit(self, X, y, categories):
        """Train on mixture grids ``X``, target grids ``y`` and category indices."""
        X = _check_grids(X, "X")
        y = _check_grids(y, "y")
        if X.shape != y.shape:
            raise ValueError(f"X and y shapes differ: {X.shape} vs {y.shape}")
        c = _check_categories(categories, X.shape[0], self.n_categories)
        self.schedule_ = self.build_schedule()
        params = init_params(self.n_categories, self.patch_frames, X.shape[2], self.hidden,
                             self.emb_dim, seed=self.random_state, dtype=np.dtype(self.dtype))
        data = self.make_patches(X, y, c)
        t0 = time.perf_counter()
        self.params_, self.history_, self.optimizer_ = train(params, data, self.train_config(),
                                                             self.schedule_)
        logger.info("trained on %d patches in %.1fs", len(data[0]), time.perf_counter() - t0)
        self.n_bins_ = X.shape[2]
        return self

    def set_fitted(self, params, history=(), optimizer=None):
        """Attach trained parameters (e.g. loaded from a checkpoint)."""
        self.schedule_ = self.build_schedule()
        self.params_ = params
        self.history_ = list(history)
        self.optimizer_ = optimizer
        self.n_bins_ = params["W3"].shape[1] // self.patch_frames
        return self

    def predict_one(self, mixture, category, seed, plan=None, step_callback=None):
        check_is_fitted(self, "params_")
        mixture = np.asarray(mixture, dtype=np.float64)
        n = mixture.shape[0]
        m = self._pad(mixture)
        patches = m.reshape(-1, self.patch_frames, m.shape[1])
        plan = plan or plan_inference_steps(self.schedule_, self.inference_steps)
        model = TinyDenoiser(self.params_, self.schedule_)
        clamp = (-self.clamp, self.clamp) if self.clamp else None
        if step_callback is not None:
            inner = model.predict_v

            def timed(x_t, m_, c_, t):
                t0 = time.perf_counter()
                out = inner(x_t, m_, c_, t)
                step_callback(t, time.perf_counter() - t0)
                return out
            model = timed
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            x0 = diffusion.sample(model, patches, int(category), plan, self.schedule_, seed=seed,
                                  clamp=clamp, noise_variance=self.noise_variance)
        return x0.reshape(-1, m.shape[1])[:n]

    def predict(self, X, categories):
        """Sampled target grids; item ``i`` uses seed ``random_state + i``."""
        check_is_fitted(self, "params_")
        X = _check_grids(X, "X")
        c = _check_categories(categories, X.shape[0], self.n_categories)
        plan = plan_inference_steps(self.schedule_, self.inference_steps)
        return np.stack([self.predict_one(x, ci, self.random_state + i, plan)
                         for i, (x, ci) in enumerate(zip(X, c))])
