"""Diffusion-based target sound extraction at desk scale.

Noise schedules with zero-terminal-SNR correction, v-prediction ancestral
sampling, a tiny conditional denoiser with hand-written gradients, a log-mel
front end with Griffin-Lim inversion, a synthetic mixture generator and
region-aware evaluation.
"""

from .estimators import LogMelTransformer, TargetSoundExtractor
from .schedule import (NoiseSchedule, StepPlan, build_linear_schedule, plan_inference_steps,
                       rescale_zero_terminal_snr, snr)

__version__ = "0.1.0"

__all__ = [
    "LogMelTransformer",
    "NoiseSchedule",
    "StepPlan",
    "TargetSoundExtractor",
    "build_linear_schedule",
    "plan_inference_steps",
    "rescale_zero_terminal_snr",
    "snr",
]
