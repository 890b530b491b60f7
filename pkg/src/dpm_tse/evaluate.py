"""Objective proxy metrics with whole-audio and target-region variants.

None of these are perceptual metrics. They stand in for them at desk scale:
``purity`` measures residual energy where the target is silent and
``extraction`` measures log-mel error where it is active.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .audio import SILENCE, MelGrid

logger = logging.getLogger(__name__)

SI_SDR_CAP = 100.0
REPORT_COLUMNS = ("sample_id", "si_sdr", "mel_mse", "mel_mse_target", "purity", "extraction")


def _values(grid):
    return grid.values if isinstance(grid, MelGrid) else np.asarray(grid, dtype=np.float64)


def region_mask(regions: Sequence[Tuple[float, float]], n_frames: int, sample_rate: int = 16000,
                hop: int = 160, window: int = 1024, original_frames: Optional[int] = None) -> np.ndarray:
    """Frames whose analysis window overlaps any region (half-window dilation).

    Frame ``i`` is centred at ``i * hop`` samples and spans ``window`` samples.
    Padding frames beyond ``original_frames`` are never active.
    """
    mask = np.zeros(n_frames, dtype=bool)
    centres = np.arange(n_frames) * hop / sample_rate
    half = 0.5 * window / sample_rate
    for onset, offset in regions:
        mask |= (centres + half > onset) & (centres - half < offset)
    if original_frames is not None:
        mask[original_frames:] = False
    return mask


def si_sdr(estimate, reference) -> float:
    """Scale-invariant SDR in dB, capped at +100."""
    est = np.asarray(estimate, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {ref.shape}")
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0:
        raise ValueError("reference is all zeros")
    proj = (np.dot(est, ref) / ref_energy) * ref
    resid = est - proj
    num = float(np.dot(proj, proj))
    den = float(np.dot(resid, resid))
    if den == 0:
        return SI_SDR_CAP
    if num == 0:
        return -SI_SDR_CAP
    return float(min(10.0 * math.log10(num / den), SI_SDR_CAP))


def log_mel_distance(estimate, reference, mask=None) -> float:
    """Mean squared error over all frames, or over the frames selected by ``mask``."""
    est, ref = _values(estimate), _values(reference)
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {ref.shape}")
    if mask is None:
        return float(np.mean((est - ref) ** 2))
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[0] != est.shape[0]:
        raise ValueError("mask length differs from the frame count")
    if not mask.any():
        raise ValueError("empty mask")
    return float(np.mean((est[mask] - ref[mask]) ** 2))


def purity_score(estimate, mask, floor: float = SILENCE) -> float:
    """Mean squared excess over ``floor`` in non-target frames (lower is better)."""
    est = _values(estimate)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[0] != est.shape[0]:
        raise ValueError("mask length differs from the frame count")
    outside = ~mask
    if not outside.any():
        raise ValueError("mask has no non-target frames")
    excess = np.maximum(est[outside] - floor, 0.0)
    return float(np.mean(excess**2))


def extraction_score(estimate, reference, mask) -> float:
    """Log-mel MSE restricted to target-active frames (lower is better)."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty mask")
    return log_mel_distance(estimate, reference, mask)


# ---------------------------------------------------------------------------
# Corpus evaluation


@dataclass
class Extraction:
    """What an extractor returns for one sample; ``wave`` is optional."""

    mel: MelGrid
    wave: Optional[np.ndarray] = None


@dataclass
class SampleInputs:
    sample_id: str
    reference_mel: MelGrid
    reference_wave: Optional[np.ndarray]
    mask: np.ndarray
    record: dict = field(default_factory=dict)


@dataclass
class Report:
    rows: List[dict]
    missing: List[str]
    failed: Dict[str, str]

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def summary(self) -> Dict[str, Tuple[float, float]]:
        return {c: mean_ci(self.column(c)) for c in REPORT_COLUMNS[1:]}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([r["sample_id"]] + [repr(float(r[c])) for c in REPORT_COLUMNS[1:]])
        return buf.getvalue()

    def summary_table(self) -> str:
        lines = [f"metric (desk-scale proxy)   mean +/- 95% CI    n={len(self.rows)}"]
        for name, (mean, half) in self.summary().items():
            lines.append(f"{name:<27} {mean:10.4f} +/- {half:.4f}")
        if self.missing:
            lines.append(f"missing: {len(self.missing)} ({', '.join(self.missing)})")
        if self.failed:
            lines.append(f"failed: {len(self.failed)} ({', '.join(self.failed)})")
        return "\n".join(lines)


def mean_ci(values) -> Tuple[float, float]:
    """Mean and 95% normal-approximation half-width ``1.96 * stderr``."""
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return float("nan"), float("nan")
    if v.size == 1:
        return float(v[0]), float("nan")
    return float(v.mean()), float(1.96 * v.std(ddof=1) / math.sqrt(v.size))


def score_sample(inputs: SampleInputs, result: Extraction) -> dict:
    est, ref, mask = result.mel, inputs.reference_mel, inputs.mask
    if result.wave is not None and inputs.reference_wave is not None and np.any(inputs.reference_wave):
        n = min(len(result.wave), len(inputs.reference_wave))
        sdr = si_sdr(np.asarray(result.wave)[:n], np.asarray(inputs.reference_wave)[:n])
    else:
        sdr = float("nan")
    return {
        "sample_id": inputs.sample_id,
        "si_sdr": sdr,
        "mel_mse": log_mel_distance(est, ref),
        "mel_mse_target": log_mel_distance(est, ref, mask),
        "purity": purity_score(est, mask),
        "extraction": extraction_score(est, ref, mask),
    }


def evaluate_corpus(samples: Sequence, extractor: Callable, load: Optional[Callable] = None) -> Report:
    """Score ``extractor`` on every sample.

    ``samples`` holds :class:`SampleInputs`, or manifest records turned into
    them by ``load``. A :class:`FileNotFoundError` from ``load`` or
    ``extractor`` marks the sample missing; any other error marks it failed.
    Evaluation always continues.
    """
    rows, missing, failed = [], [], {}
    for item in samples:
        sid = item.sample_id if isinstance(item, SampleInputs) else str(item.get("id"))
        try:
            inputs = item if isinstance(item, SampleInputs) else load(item)
            result = extractor(inputs)
            rows.append(score_sample(inputs, result))
        except FileNotFoundError as exc:
            logger.warning("sample %s missing: %s", sid, exc)
            missing.append(sid)
        except (ValueError, RuntimeError) as exc:
            logger.warning("sample %s failed: %s", sid, exc)
            failed[sid] = str(exc)
    return Report(rows, missing, failed)
