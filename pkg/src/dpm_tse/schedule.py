"""Noise schedules: construction, zero-terminal-SNR rescaling and step plans.

Arrays are stored 0-based (index ``t - 1``) but every public accessor takes a
timestep ``t`` in ``[1, T]``. ``alpha_bar(0)`` is defined as 1 (clean data).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variances and the cumulative signal/noise coefficients."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    terminal_is_zero: bool = False
    sqrt_alpha_bars: np.ndarray = field(init=False, repr=False)
    sqrt_one_minus_alpha_bars: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        for name in ("betas", "alphas", "alpha_bars"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (len(self.betas) == len(self.alphas) == len(self.alpha_bars)):
            raise ValueError("betas, alphas and alpha_bars must have equal length")
        s = np.sqrt(self.alpha_bars)
        n = np.sqrt(1.0 - self.alpha_bars)
        s.setflags(write=False)
        n.setflags(write=False)
        object.__setattr__(self, "sqrt_alpha_bars", s)
        object.__setattr__(self, "sqrt_one_minus_alpha_bars", n)

    @property
    def T(self) -> int:
        return len(self.betas)

    def _index(self, t):
        t = np.asarray(t)
        if not np.issubdtype(t.dtype, np.integer):
            if not np.all(t == np.round(t)):
                raise ValueError("timesteps must be integers")
            t = t.astype(np.int64)
        if np.any(t < 0) or np.any(t > self.T):
            raise ValueError(f"timestep out of range [0, {self.T}]: {t}")
        return t

    def alpha_bar(self, t):
        """Cumulative product at ``t`` (scalar or array), with ``alpha_bar(0) == 1``."""
        t = self._index(t)
        padded = np.concatenate([[1.0], self.alpha_bars])
        out = padded[t]
        return float(out) if out.ndim == 0 else out

    def alpha(self, t):
        t = self._index(t)
        if np.any(t < 1):
            raise ValueError("alpha is defined for t >= 1")
        out = self.alphas[t - 1]
        return float(out) if out.ndim == 0 else out

    def beta(self, t):
        t = self._index(t)
        if np.any(t < 1):
            raise ValueError("beta is defined for t >= 1")
        out = self.betas[t - 1]
        return float(out) if out.ndim == 0 else out

    def posterior_variance(self, t: int) -> float:
        """Adjacent-step posterior variance (1 - abar_{t-1}) / (1 - abar_t) * beta_t."""
        return (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)) * self.beta(t)


@dataclass(frozen=True)
class StepPlan:
    """Strictly descending timesteps visited at inference, starting at T."""

    steps: tuple
    includes_zero_endpoint: bool = True

    def __post_init__(self):
        steps = tuple(int(s) for s in self.steps)
        if not steps:
            raise ValueError("empty step plan")
        if any(a <= b for a, b in zip(steps, steps[1:])):
            raise ValueError("steps must be strictly descending")
        if steps[-1] < 1:
            raise ValueError("last step must be >= 1")
        object.__setattr__(self, "steps", steps)

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def transitions(self):
        """Pairs ``(t_hi, t_lo)`` ending with a transition to ``t_lo = 0``."""
        lows = list(self.steps[1:]) + ([0] if self.includes_zero_endpoint else [])
        return list(zip(self.steps, lows))


def from_alpha_bars(alpha_bars: Sequence[float], terminal_is_zero: bool = False) -> NoiseSchedule:
    """Back-derive alphas and betas from cumulative products."""
    abar = np.asarray(alpha_bars, dtype=np.float64)
    if abar.ndim != 1 or abar.size == 0:
        raise ValueError("alpha_bars must be a non-empty 1-D sequence")
    if np.any(abar < 0) or np.any(abar >= 1):
        raise ValueError("alpha_bars must lie in [0, 1)")
    if np.any(np.diff(abar) >= 0):
        raise ValueError("alpha_bars must be strictly decreasing")
    prev = np.concatenate([[1.0], abar[:-1]])
    alphas = abar / prev
    betas = 1.0 - alphas
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=abar, terminal_is_zero=terminal_is_zero)


def build_linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linearly spaced variances from ``beta_start`` to ``beta_end`` inclusive."""
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T}")
    if not (0 < beta_start < 1 and 0 < beta_end < 1):
        raise ValueError("variances must lie in (0, 1)")
    if beta_start > beta_end:
        raise ValueError("beta_start must not exceed beta_end")
    T = int(T)
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))


def snr(schedule: NoiseSchedule, t):
    """Signal-to-noise ratio abar_t / (1 - abar_t); exactly 0 where abar_t is 0."""
    abar = np.asarray(schedule.alpha_bar(t), dtype=np.float64)
    if np.any(abar >= 1.0):
        raise ZeroDivisionError("alpha_bar == 1 gives an infinite SNR; invalid schedule")
    out = abar / (1.0 - abar)
    return float(out) if out.ndim == 0 else out


def rescale_zero_terminal_snr(schedule: NoiseSchedule) -> NoiseSchedule:
    """Shift and scale sqrt(abar) so the first value is kept and the last is 0.

    ``s'_t = s_1 * (s_t - s_T) / (s_1 - s_T)``. Betas are back-derived, so the
    terminal beta is exactly 1 and the terminal alpha exactly 0.
    """
    if schedule.T < 2:
        raise ValueError("rescaling needs at least two timesteps")
    s = schedule.sqrt_alpha_bars
    s_first, s_last = s[0], s[-1]
    if not s_first > s_last:
        raise ValueError("degenerate schedule: sqrt(alpha_bar_1) must exceed sqrt(alpha_bar_T)")
    scaled = s_first * (s - s_last) / (s_first - s_last)
    scaled[0] = s_first
    scaled[-1] = 0.0
    abar = scaled**2
    abar[0] = schedule.alpha_bars[0]
    # abar_T == 0 makes alpha_T = 0 / abar_{T-1} == 0 and beta_T == 1 exactly.
    return from_alpha_bars(abar, terminal_is_zero=True)


def plan_inference_steps(schedule: NoiseSchedule, num_steps: int) -> StepPlan:
    """Trailing uniform spacing anchored at T: ``round(T - i * T / S)``."""
    T = schedule.T if isinstance(schedule, NoiseSchedule) else int(schedule)
    if int(num_steps) != num_steps or num_steps <= 0:
        raise ValueError(f"number of inference steps must be positive, got {num_steps}")
    if num_steps > T:
        raise ValueError(f"cannot plan {num_steps} steps on a {T}-step schedule")
    steps = []
    for i in range(int(num_steps)):
        s = math.floor(T - i * T / num_steps + 0.5)
        s = min(max(s, 1), T)
        if not steps or s < steps[-1]:
            steps.append(s)
    return StepPlan(steps=tuple(steps), includes_zero_endpoint=True)


CSV_HEADER = ("t", "beta", "alpha_bar", "sqrt_alpha_bar", "snr", "in_plan")


def dump_schedule(schedule: NoiseSchedule, plan: StepPlan | None = None) -> list[dict]:
    """One row per timestep; ``in_plan`` marks timesteps visited by ``plan``."""
    visited = set(plan.steps) if plan is not None else set()
    snrs = snr(schedule, np.arange(1, schedule.T + 1))
    rows = []
    for i in range(schedule.T):
        rows.append(
            {
                "t": i + 1,
                "beta": float(schedule.betas[i]),
                "alpha_bar": float(schedule.alpha_bars[i]),
                "sqrt_alpha_bar": float(schedule.sqrt_alpha_bars[i]),
                "snr": float(snrs[i]),
                "in_plan": int(i + 1 in visited),
            }
        )
    return rows


def schedule_csv(rows: Iterable[dict]) -> str:
    # repr() round-trips float64 exactly
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow([row["t"], repr(row["beta"]), repr(row["alpha_bar"]),
                         repr(row["sqrt_alpha_bar"]), repr(row["snr"]), row["in_plan"]])
    return buf.getvalue()
