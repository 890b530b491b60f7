"""Waveform <-> log-mel spectrogram pipeline with Griffin-Lim reconstruction.

Grids are ``frames x bins`` arrays. Normalised log-mel values map the log
floor to -1 and the corpus maximum to +1.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
import wave
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

SILENCE = -1.0


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = 16000
    n_fft: int = 1024
    window: int = 1024
    hop: int = 160
    n_mels: int = 64
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-5
    # log-domain range mapped onto [-1, 1]; log_max is refit from corpus data
    log_min: float = math.log(1e-5)
    log_max: float = 5.0

    def __post_init__(self):
        if self.hop > self.window:
            raise ValueError("hop must not exceed the window")
        if self.window > self.n_fft:
            raise ValueError("window must not exceed the FFT size")
        if self.fmax > self.sample_rate / 2:
            raise ValueError(f"fmax {self.fmax} exceeds Nyquist {self.sample_rate / 2}")
        if not 0 <= self.fmin < self.fmax:
            raise ValueError("need 0 <= fmin < fmax")
        if not self.log_max > self.log_min:
            raise ValueError("log_max must exceed log_min")

    @property
    def n_freqs(self) -> int:
        return self.n_fft // 2 + 1

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_stats(self, log_min: float, log_max: float) -> "MelConfig":
        return replace(self, log_min=float(log_min), log_max=float(log_max))


@dataclass
class MelGrid:
    """Normalised log-mel grid plus the metadata needed to invert it."""

    values: np.ndarray
    sample_rate: int = 16000
    hop: int = 160
    window: int = 1024
    original_frames: Optional[int] = None
    config_hash: str = field(default="")

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ValueError("MelGrid values must be frames x bins")
        if self.original_frames is None:
            self.original_frames = self.values.shape[0]

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def bins(self) -> int:
        return self.values.shape[1]


# ---------------------------------------------------------------------------
# STFT


def hann(n: int) -> np.ndarray:
    # periodic Hann, the usual choice for overlap-add
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _analysis_window(config: MelConfig) -> np.ndarray:
    w = np.zeros(config.n_fft)
    off = (config.n_fft - config.window) // 2
    w[off: off + config.window] = hann(config.window)
    return w


def _frames(padded: np.ndarray, n_frames: int, config: MelConfig) -> np.ndarray:
    idx = np.arange(config.n_fft)[None, :] + config.hop * np.arange(n_frames)[:, None]
    return padded[idx]


def frame_stft(padded: np.ndarray, n_frames: int, config: MelConfig) -> np.ndarray:
    """STFT of an already padded signal (no centering)."""
    return np.fft.rfft(_frames(padded, n_frames, config) * _analysis_window(config), axis=1)


def overlap_add(spec: np.ndarray, config: MelConfig) -> np.ndarray:
    """Least-squares inverse of :func:`frame_stft`; returns the padded-length signal."""
    n_frames = spec.shape[0]
    w = _analysis_window(config)
    frames = np.fft.irfft(spec, n=config.n_fft, axis=1) * w
    length = config.n_fft + config.hop * (n_frames - 1)
    out = np.zeros(length)
    norm = np.zeros(length)
    for i in range(n_frames):
        s = i * config.hop
        out[s: s + config.n_fft] += frames[i]
        norm[s: s + config.n_fft] += w * w
    nz = norm > 1e-10
    out[nz] /= norm[nz]
    return out


def n_frames_for(length: int, hop: int) -> int:
    return -(-length // hop)


def stft(wave_: np.ndarray, config: MelConfig = MelConfig()) -> np.ndarray:
    """Centred, reflection-padded, Hann-windowed STFT: ``(ceil(len/hop), n_fft/2 + 1)``."""
    x = np.asarray(wave_, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("stft needs a non-empty 1-D waveform")
    pad = config.n_fft // 2
    padded = np.pad(x, pad, mode="reflect")
    return frame_stft(padded, n_frames_for(x.size, config.hop), config)


def istft(spec: np.ndarray, length: int, config: MelConfig = MelConfig()) -> np.ndarray:
    out = overlap_add(spec, config)
    pad = config.n_fft // 2
    out = out[pad: pad + length]
    if out.size < length:
        out = np.pad(out, (0, length - out.size))
    return out


# ---------------------------------------------------------------------------
# Mel filterbank


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: MelConfig = MelConfig()) -> np.ndarray:
    """HTK-scale triangular filters, each row summing to 1.

    The outer slopes of the first and last filters are held flat so the bins
    at ``fmin`` and ``fmax`` themselves carry weight.
    """
    if config.fmax > config.sample_rate / 2:
        raise ValueError("fmax exceeds Nyquist")
    freqs = np.arange(config.n_freqs) * config.sample_rate / config.n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax), config.n_mels + 2))
    fb = np.zeros((config.n_mels, config.n_freqs))
    for i in range(config.n_mels):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        up = (freqs - lo) / (mid - lo)
        down = (hi - freqs) / (hi - mid)
        if i == 0:
            up = np.where(freqs >= config.fmin, 1.0, 0.0)
        if i == config.n_mels - 1:
            down = np.where(freqs <= config.fmax, 1.0, 0.0)
        fb[i] = np.clip(np.minimum(up, down), 0.0, None)
    sums = fb.sum(axis=1, keepdims=True)
    if np.any(sums == 0):
        raise ValueError("a mel filter covers no FFT bin; increase n_fft or reduce n_mels")
    return fb / sums


def mel_centers(config: MelConfig = MelConfig()) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax), config.n_mels + 2))
    return edges[1:-1]


# ---------------------------------------------------------------------------
# Log-mel


def log_mel_raw(wave_, config: MelConfig = MelConfig()) -> np.ndarray:
    """Unnormalised ``log(max(mel @ |stft|, floor))``, shape ``(frames, n_mels)``."""
    mag = np.abs(stft(wave_, config))
    mel = mag @ mel_filterbank(config).T
    return np.log(np.maximum(mel, config.log_floor))


def normalize(log_values, config: MelConfig):
    return 2.0 * (np.asarray(log_values) - config.log_min) / (config.log_max - config.log_min) - 1.0


def denormalize(values, config: MelConfig):
    return (np.asarray(values) + 1.0) * 0.5 * (config.log_max - config.log_min) + config.log_min


def silence_value(config: MelConfig) -> float:
    return float(normalize(math.log(config.log_floor), config))


def pad_to_multiple(grid: MelGrid, multiple: int = 4, fill: float = SILENCE) -> MelGrid:
    """Append ``fill`` frames until the frame count divides ``multiple``."""
    extra = (-grid.frames) % multiple
    if extra == 0:
        return grid
    values = np.concatenate([grid.values, np.full((extra, grid.bins), fill, dtype=grid.values.dtype)])
    return replace(grid, values=values, original_frames=grid.original_frames)


def pad_to_multiple4(grid: MelGrid, fill: float = SILENCE) -> MelGrid:
    return pad_to_multiple(grid, 4, fill)


def log_mel(wave_, config: MelConfig = MelConfig()) -> MelGrid:
    values = normalize(log_mel_raw(wave_, config), config)
    grid = MelGrid(values, sample_rate=config.sample_rate, hop=config.hop, window=config.window,
                   config_hash=config.config_hash())
    return pad_to_multiple4(grid, fill=silence_value(config))


# ---------------------------------------------------------------------------
# Griffin-Lim


def mel_to_linear(mel: np.ndarray, config: MelConfig = MelConfig(), iterations: int = 50) -> np.ndarray:
    """Nonnegative least squares ``min ||fb @ S - mel||`` by multiplicative updates.

    ``mel`` is ``(frames, n_mels)`` in linear amplitude; returns ``(frames, n_freqs)``.
    """
    fb = mel_filterbank(config)
    target = np.maximum(np.asarray(mel, dtype=np.float64), 0.0).T  # (n_mels, frames)
    spec = np.maximum(fb.T @ target, 1e-12)
    numer = fb.T @ target
    gram = fb.T @ fb
    for _ in range(iterations):
        spec *= numer / np.maximum(gram @ spec, 1e-30)
    return spec.T


def _weighted_norm(spec: np.ndarray, n_fft: int) -> float:
    # rfft bins strictly between DC and Nyquist stand for two full-spectrum bins
    w = np.full(spec.shape[1], 2.0)
    w[0] = 1.0
    if n_fft % 2 == 0:
        w[-1] = 1.0
    return float(np.sqrt(np.sum(w * np.abs(spec) ** 2)))


def griffin_lim_magnitude(magnitude: np.ndarray, length: int, config: MelConfig = MelConfig(),
                          iterations: int = 60, seed=0, return_errors: bool = False):
    """Phase retrieval for a ``(frames, n_freqs)`` magnitude.

    Iterates on the padded signal so every projection is an exact
    least-squares step; the spectral-convergence error (measured with
    full-spectrum weighting) is then non-increasing.
    """
    mag = np.asarray(magnitude, dtype=np.float64)
    n_frames = mag.shape[0]
    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(mag.shape))
    ref = _weighted_norm(mag, config.n_fft) or 1.0
    errors = []
    spec = mag * phase
    for _ in range(iterations):
        y = overlap_add(spec, config)
        rebuilt = frame_stft(y, n_frames, config)
        errors.append(_weighted_norm(np.abs(rebuilt) - mag, config.n_fft) / ref)
        spec = mag * np.exp(1j * np.angle(rebuilt))
    y = overlap_add(spec, config)
    pad = config.n_fft // 2
    out = y[pad: pad + length]
    if out.size < length:
        out = np.pad(out, (0, length - out.size))
    if return_errors:
        return out, errors
    return out


def griffin_lim(grid, iterations: int = 60, config: MelConfig = MelConfig(), nnls_iterations: int = 50,
                seed=0, length: Optional[int] = None, return_errors: bool = False):
    """Invert a normalised log-mel grid to a waveform (vocoder substitute)."""
    values = grid.values if isinstance(grid, MelGrid) else np.asarray(grid)
    if not np.all(np.isfinite(values)):
        raise ValueError("grid contains non-finite values")
    frames = grid.original_frames if isinstance(grid, MelGrid) else values.shape[0]
    values = values[:frames]
    mel = np.exp(denormalize(values, config))
    mag = mel_to_linear(mel, config, nnls_iterations)
    if length is None:
        length = frames * config.hop
    out, errors = griffin_lim_magnitude(mag, length, config, iterations, seed, return_errors=True)
    peak = np.max(np.abs(out)) if out.size else 0.0
    if peak > 1.0:
        out = out / peak
    if return_errors:
        return out, errors
    return out


# ---------------------------------------------------------------------------
# File formats


def write_wav(path, samples, sample_rate: int = 16000):
    """16-bit PCM mono little-endian RIFF."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.round(x * 32767.0).astype("<i2")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(sample_rate))
        fh.writeframes(pcm.tobytes())


def read_wav(path):
    """Returns ``(samples, sample_rate)`` with samples scaled to [-1, 1]."""
    with wave.open(str(path), "rb") as fh:
        if fh.getsampwidth() != 2:
            raise ValueError(f"{path}: only 16-bit PCM is supported")
        n_ch = fh.getnchannels()
        rate = fh.getframerate()
        data = np.frombuffer(fh.readframes(fh.getnframes()), dtype="<i2").astype(np.float64)
    if n_ch > 1:
        data = data.reshape(-1, n_ch).mean(axis=1)
    return data / 32767.0, rate


_MEL_MAGIC = b"MELG"
_MEL_HEADER = struct.Struct("<4sIIII16s")


def write_melgrid(path, grid: MelGrid):
    """Header (magic, version, frames, bins, original frames, config hash) + row-major float32."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    h = (grid.config_hash or "").encode("ascii")[:16].ljust(16, b"\0")
    with open(path, "wb") as fh:
        fh.write(_MEL_HEADER.pack(_MEL_MAGIC, 1, grid.frames, grid.bins, grid.original_frames, h))
        fh.write(np.ascontiguousarray(grid.values, dtype="<f4").tobytes())


def read_melgrid(path, config: Optional[MelConfig] = None) -> MelGrid:
    with open(path, "rb") as fh:
        head = fh.read(_MEL_HEADER.size)
        magic, version, frames, bins, original, h = _MEL_HEADER.unpack(head)
        if magic != _MEL_MAGIC or version != 1:
            raise ValueError(f"{path}: not a version-1 mel grid file")
        values = np.frombuffer(fh.read(), dtype="<f4")
    if values.size != frames * bins:
        raise ValueError(f"{path}: expected {frames * bins} values, found {values.size}")
    cfg = config or MelConfig()
    return MelGrid(values.reshape(frames, bins).astype(np.float64), sample_rate=cfg.sample_rate,
                   hop=cfg.hop, window=cfg.window, original_frames=original,
                   config_hash=h.rstrip(b"\0").decode("ascii"))
