"""Synthetic sound-event mixtures with known stems, regions and SNRs.

Each mixture is a 10 s filtered-noise background with one target event and
1-3 interfering events, every event scaled to a drawn SNR against the
background over its own active region.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import audio

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1
SPLITS = ("train", "valid", "test")
RAMP_SECONDS = 0.01


class ManifestError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Event synthesis


def _time(n, sr):
    return np.arange(n) / sr


def _band_noise(n, sr, rng, lo, hi):
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / sr)
    spec[(f < lo) | (f > hi)] = 0.0
    return np.fft.irfft(spec, n=n)


def _pure_tone(n, sr, rng, p):
    freq = p.get("freq", rng.uniform(250.0, 1000.0))
    return np.sin(2 * np.pi * freq * _time(n, sr) + rng.uniform(0, 2 * np.pi))


def _harmonic_tone(n, sr, rng, p):
    f0 = p.get("freq", rng.uniform(100.0, 300.0))
    t = _time(n, sr)
    return sum(np.sin(2 * np.pi * k * f0 * t) / k for k in range(1, 7))


def _linear_chirp(n, sr, rng, p):
    f0 = p.get("f0", rng.uniform(500.0, 1500.0))
    f1 = p.get("f1", rng.uniform(2000.0, 4000.0))
    t = _time(n, sr)
    dur = max(n / sr, 1e-9)
    return np.sin(2 * np.pi * (f0 * t + (f1 - f0) * t * t / (2 * dur)))


def _noise_burst(n, sr, rng, p):
    centre = p.get("freq", rng.uniform(3000.0, 5000.0))
    x = _band_noise(n, sr, rng, centre - 800.0, centre + 800.0)
    rate = p.get("rate", rng.uniform(1.5, 4.0))
    env = np.exp(-((_time(n, sr) * rate) % 1.0) * 5.0)
    return x * env


def _am_tone(n, sr, rng, p):
    carrier = p.get("freq", rng.uniform(1000.0, 3000.0))
    rate = p.get("rate", rng.uniform(4.0, 12.0))
    t = _time(n, sr)
    return (1.0 + 0.8 * np.sin(2 * np.pi * rate * t)) * np.sin(2 * np.pi * carrier * t)


def _click_train(n, sr, rng, p):
    rate = p.get("rate", rng.uniform(5.0, 20.0))
    x = np.zeros(n)
    click_len = int(0.005 * sr)
    click = rng.standard_normal(click_len) * np.exp(-np.arange(click_len) / (0.001 * sr))
    period = max(int(sr / rate), 1)
    for start in range(0, n, period):
        seg = click[: n - start]
        x[start: start + seg.size] += seg
    return x


def _gated_noise(n, sr, rng, p):
    x = _band_noise(n, sr, rng, 50.0, p.get("cutoff", 800.0))
    rate = p.get("rate", rng.uniform(2.0, 6.0))
    gate = (np.sin(2 * np.pi * rate * _time(n, sr)) > 0).astype(float)
    return x * gate


def _exp_sweep(n, sr, rng, p):
    f0 = p.get("f0", 100.0)
    f1 = p.get("f1", rng.uniform(4000.0, 7000.0))
    dur = max(n / sr, 1e-9)
    k = math.log(f1 / f0)
    t = _time(n, sr)
    return np.sin(2 * np.pi * f0 * dur / k * (np.exp(t / dur * k) - 1.0))


CATEGORY_REGISTRY: Dict[str, Callable] = {
    "pure_tone": _pure_tone,
    "harmonic_tone": _harmonic_tone,
    "linear_chirp": _linear_chirp,
    "noise_burst": _noise_burst,
    "am_tone": _am_tone,
    "click_train": _click_train,
    "gated_noise": _gated_noise,
    "exp_sweep": _exp_sweep,
}
CATEGORIES = tuple(CATEGORY_REGISTRY)


@dataclass
class EventSpec:
    category: str
    duration: float
    onset: float = 0.0
    snr_db: float = 0.0
    seed: int = 0
    params: dict = field(default_factory=dict)

    def validate(self, canvas_seconds: float = 10.0, duration_range=(0.3, 10.0), snr_range=(-5.0, 10.0)):
        if not duration_range[0] <= self.duration <= duration_range[1]:
            raise ValueError(f"duration {self.duration} outside {duration_range}")
        if self.onset < 0 or self.onset + self.duration > canvas_seconds + 1e-9:
            raise ValueError(f"event [{self.onset}, {self.onset + self.duration}] does not fit the canvas")
        if not snr_range[0] <= self.snr_db <= snr_range[1]:
            raise ValueError(f"snr {self.snr_db} dB outside {snr_range}")


def raised_cosine_ramps(x: np.ndarray, sample_rate: int, seconds: float = RAMP_SECONDS) -> np.ndarray:
    n = min(int(round(seconds * sample_rate)), x.size // 2)
    if n <= 0:
        return x
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(n) / n)
    x = x.copy()
    x[:n] *= ramp
    x[-n:] *= ramp[::-1]
    return x


def synth_event(spec: EventSpec, sample_rate: int = 16000, registry=None) -> np.ndarray:
    """Deterministic unit-peak waveform for ``spec`` with 10 ms raised-cosine ramps."""
    registry = registry or CATEGORY_REGISTRY
    if spec.category not in registry:
        raise ValueError(f"unknown category {spec.category!r}")
    n = int(round(spec.duration * sample_rate))
    if n <= 0:
        raise ValueError("event duration rounds to zero samples")
    rng = np.random.default_rng(spec.seed)
    x = raised_cosine_ramps(np.asarray(registry[spec.category](n, sample_rate, rng, spec.params), float),
                            sample_rate)
    peak = np.max(np.abs(x))
    if peak == 0:
        raise ValueError(f"{spec.category} produced a silent event")
    return x / peak


def rms(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.mean(x * x))) if x.size else 0.0


def scale_to_snr(foreground, background, snr_db: float, region: Tuple[int, int]) -> float:
    """Gain ``g`` with ``20 log10(rms(g * fg[region]) / rms(bg[region])) == snr_db``."""
    lo, hi = region
    if hi <= lo:
        raise ValueError("empty SNR region")
    fg = rms(np.asarray(foreground)[lo:hi])
    bg = rms(np.asarray(background)[lo:hi])
    if fg == 0:
        raise ValueError("foreground is silent over the region")
    if bg == 0:
        raise ValueError("background is silent over the region")
    return 10.0 ** (snr_db / 20.0) * bg / fg


def realized_snr(stem, background, region: Tuple[int, int]) -> float:
    lo, hi = region
    return 20.0 * math.log10(rms(np.asarray(stem)[lo:hi]) / rms(np.asarray(background)[lo:hi]))


def background_noise(n: int, sample_rate: int, rng: np.random.Generator, level: float) -> np.ndarray:
    """Pink-ish noise bed rolled off above 6 kHz, at RMS ``level``."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    shape = 1.0 / np.sqrt(np.maximum(f, 20.0))
    shape /= 1.0 + (f / 6000.0) ** 4
    x = np.fft.irfft(spec * shape, n=n)
    return x * (level / rms(x))


# ---------------------------------------------------------------------------
# Mixtures


@dataclass
class CorpusConfig:
    n_train: int = 64
    n_valid: int = 16
    n_test: int = 16
    seed: int = 0
    sample_rate: int = 16000
    canvas_seconds: float = 10.0
    interferers: Tuple[int, int] = (1, 3)
    allow_clean: bool = False
    snr_range: Tuple[float, float] = (-5.0, 10.0)
    duration_range: Tuple[float, float] = (0.3, 5.0)
    background_level: float = 0.05
    categories: Tuple[str, ...] = CATEGORIES
    allow_same_category: bool = False

    def __post_init__(self):
        self.interferers = tuple(int(v) for v in self.interferers)
        self.snr_range = tuple(float(v) for v in self.snr_range)
        self.duration_range = tuple(float(v) for v in self.duration_range)
        self.categories = tuple(self.categories)
        lo, hi = self.interferers
        if lo < 0 or hi < lo:
            raise ValueError(f"bad interferer range {self.interferers}")
        if lo == 0 and not self.allow_clean:
            raise ValueError("mixtures need 1-3 interfering sounds; pass allow_clean to permit 0")
        if self.duration_range[1] > self.canvas_seconds or self.duration_range[0] <= 0:
            raise ValueError("event durations must fit inside the canvas")
        if not self.categories:
            raise ValueError("empty category registry")
        unknown = set(self.categories) - set(CATEGORY_REGISTRY)
        if unknown:
            raise ValueError(f"unknown categories: {sorted(unknown)}")
        if not self.allow_same_category and hi > 0 and len(self.categories) < 2:
            raise ValueError("need at least two categories when interferers must differ from the target")

    def split_sizes(self) -> Dict[str, int]:
        return {"train": self.n_train, "valid": self.n_valid, "test": self.n_test}


@dataclass
class MixtureSample:
    mixture: np.ndarray
    target_stem: np.ndarray
    target_category: str
    events: List[EventSpec]
    background: np.ndarray
    event_stems: List[np.ndarray]
    regions: List[Tuple[float, float]]
    sample_seed: int
    background_seed: int
    overlap_fraction: float
    peak_scale: float
    sample_rate: int = 16000

    @property
    def interferers(self) -> List[EventSpec]:
        return self.events[1:]

    def event_region(self, i: int) -> Tuple[int, int]:
        ev = self.events[i]
        lo = int(round(ev.onset * self.sample_rate))
        return lo, lo + int(round(ev.duration * self.sample_rate))

    def realized_snrs(self) -> List[float]:
        return [realized_snr(stem, self.background, self.event_region(i))
                for i, stem in enumerate(self.event_stems)]


def sample_seed(corpus_seed: int, split: str, index: int) -> int:
    ss = np.random.SeedSequence([int(corpus_seed), SPLITS.index(split), int(index)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def make_mixture(config: CorpusConfig, seed: int, target_category: Optional[str] = None) -> MixtureSample:
    """Draw and render one mixture; identical ``seed`` gives identical samples."""
    rng = np.random.default_rng(seed)
    sr = config.sample_rate
    n = int(round(config.canvas_seconds * sr))
    cats = list(config.categories)
    target = target_category if target_category is not None else cats[rng.integers(len(cats))]
    if target not in cats:
        raise ValueError(f"target category {target!r} not in the registry")
    n_int = int(rng.integers(config.interferers[0], config.interferers[1] + 1))
    pool = cats if config.allow_same_category else [c for c in cats if c != target]
    int_cats = [pool[i] for i in rng.integers(len(pool), size=n_int)] if n_int else []

    dmin, dmax = config.duration_range
    dmax = min(dmax, config.canvas_seconds)
    if dmin > dmax:
        raise ValueError("infeasible placement: minimum duration exceeds the canvas")
    events = []
    for cat in [target] + int_cats:
        dur = round(float(rng.uniform(dmin, dmax)), 4)
        onset = round(float(rng.uniform(0.0, config.canvas_seconds - dur)), 4)
        snr_db = round(float(rng.uniform(*config.snr_range)), 4)
        ev = EventSpec(cat, dur, onset, snr_db, int(rng.integers(2**31 - 1)))
        ev.validate(config.canvas_seconds, (dmin, config.canvas_seconds), config.snr_range)
        events.append(ev)

    bg_seed = int(rng.integers(2**31 - 1))
    bg = background_noise(n, sr, np.random.default_rng(bg_seed), config.background_level)
    stems = []
    for ev in events:
        x = synth_event(ev, sr)
        lo = int(round(ev.onset * sr))
        hi = min(lo + x.size, n)
        placed = np.zeros(n)
        placed[lo:hi] = x[: hi - lo]
        g = scale_to_snr(placed, bg, ev.snr_db, (lo, hi))
        stems.append(g * placed)

    mixture = bg + np.sum(stems, axis=0)
    peak = float(np.max(np.abs(mixture)))
    scale = 1.0
    if peak > 1.0:
        scale = 1.0 / peak
        mixture = mixture / peak
        bg = bg / peak
        stems = [s / peak for s in stems]

    t_lo = int(round(events[0].onset * sr))
    t_hi = t_lo + int(round(events[0].duration * sr))
    if len(events) > 1:
        busy = np.zeros(n, bool)
        for ev in events[1:]:
            lo = int(round(ev.onset * sr))
            busy[lo: lo + int(round(ev.duration * sr))] = True
        overlap = float(busy[t_lo:t_hi].mean())
    else:
        overlap = 0.0
    return MixtureSample(
        mixture=mixture, target_stem=stems[0], target_category=target, events=events,
        background=bg, event_stems=stems,
        regions=[(events[0].onset, round(events[0].onset + events[0].duration, 6))],
        sample_seed=int(seed), background_seed=bg_seed, overlap_fraction=overlap,
        peak_scale=scale, sample_rate=sr,
    )


# ---------------------------------------------------------------------------
# Manifest


REQUIRED_FIELDS = ("version", "id", "split", "mixture", "target", "target_category", "regions")


def sample_record(sample: MixtureSample, sample_id: str, split: str, mixture_path: str,
                  target_path: str, norm: Optional[dict] = None, config_hash: str = "") -> dict:
    realized = sample.realized_snrs()
    events = []
    for ev, snr_r in zip(sample.events, realized):
        d = asdict(ev)
        d["realized_snr_db"] = snr_r
        events.append(d)
    return {
        "version": MANIFEST_VERSION,
        "id": sample_id,
        "split": split,
        "mixture": mixture_path,
        "target": target_path,
        "target_category": sample.target_category,
        "category_index": CATEGORIES.index(sample.target_category)
        if sample.target_category in CATEGORIES else None,
        "events": events,
        "regions": [list(r) for r in sample.regions],
        "seed": sample.sample_seed,
        "background_seed": sample.background_seed,
        "overlap_fraction": sample.overlap_fraction,
        "peak_scale": sample.peak_scale,
        "sample_rate": sample.sample_rate,
        "norm": dict(norm or {}),
        "config_hash": config_hash,
    }


def write_manifest(records: Sequence[dict], path) -> None:
    """JSON lines, one record per sample, keys sorted for byte-stable output."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_manifest(path) -> List[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise ManifestError(f"{path}: line {lineno}: expected an object")
            missing = [k for k in REQUIRED_FIELDS if k not in rec]
            if missing:
                raise ManifestError(f"{path}: line {lineno}: missing fields {missing}")
            if rec["version"] != MANIFEST_VERSION:
                raise ManifestError(f"{path}: line {lineno}: unsupported version {rec['version']}")
            records.append(rec)
    return records


def resolve(record: dict, key: str, root) -> Path:
    p = Path(record[key])
    return p if p.is_absolute() else Path(root) / p


def generate_corpus(config: CorpusConfig, out_dir, mel_config: audio.MelConfig = audio.MelConfig(),
                    config_hash: str = "") -> Dict[str, List[dict]]:
    """Write ``{split}/{mixture,target}/NNNNN.wav`` plus one manifest per split.

    The log-mel normalisation range is fit on the training mixtures and stored
    in every record and in ``stats.json``.
    """
    out = Path(out_dir)
    records: Dict[str, List[dict]] = {}
    log_max = -np.inf
    for split, count in config.split_sizes().items():
        records[split] = []
        for i in range(count):
            s = make_mixture(config, sample_seed(config.seed, split, i))
            sid = f"{i:05d}"
            mix_rel = f"{split}/mixture/{sid}.wav"
            tgt_rel = f"{split}/target/{sid}.wav"
            audio.write_wav(out / mix_rel, s.mixture, s.sample_rate)
            audio.write_wav(out / tgt_rel, s.target_stem, s.sample_rate)
            if split == "train":
                log_max = max(log_max, float(audio.log_mel_raw(s.mixture, mel_config).max()))
            records[split].append(sample_record(s, sid, split, mix_rel, tgt_rel, None, config_hash))
        logger.info("generated %d %s samples", count, split)
    if not np.isfinite(log_max):
        log_max = mel_config.log_max
    norm = {"log_min": mel_config.log_min, "log_max": log_max}
    for split, recs in records.items():
        for rec in recs:
            rec["norm"] = dict(norm)
        write_manifest(recs, out / split / "manifest.jsonl")
    with open(out / "stats.json", "w", encoding="utf-8") as fh:
        json.dump({"norm": norm, "config_hash": config_hash}, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return records
