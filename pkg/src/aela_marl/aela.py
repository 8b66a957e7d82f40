"""Adaptive episode-length controller.

Entropy of the softmax over Q-values is summed over a replay batch once per
update.  Every ``w`` readings a least-squares line is fitted to the last
``w`` of them and, if its slope is negative, the episode length limit grows
by one step (never beyond ``e_max``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class LengthSchedule:
    e_l0: int
    e_max: int
    e_l: int | None = None

    def __post_init__(self):
        if self.e_l is None:
            self.e_l = self.e_l0
        if not 1 <= self.e_l0 <= self.e_l <= self.e_max:
            raise ValueError(f"need 1 <= e_l0 <= e_l <= e_max, got {self.e_l0}, {self.e_l}, {self.e_max}")

    @property
    def delta_l(self) -> int:
        return self.e_max - self.e_l0


@dataclass
class TrendFit:
    alpha: float
    beta: float


@dataclass
class EntropyWindow:
    w: int | None  # None: never fit
    history: list[float] = field(default_factory=list)
    fits_done: int = 0

    def __post_init__(self):
        if self.w is not None and self.w < 2:
            raise ValueError("window must hold at least two readings")

    def push(self, h_total: float) -> TrendFit | None:
        """Record a reading; returns the fit when this reading completes a window."""
        if h_total < 0:
            raise ValueError("entropy readings are non-negative")
        self.history.append(float(h_total))
        if self.w is None or len(self.history) % self.w:
            return None
        self.fits_done += 1
        return fit_trend(self.history[-self.w :])


def softmax_policy(q, tau: float = 1.0) -> np.ndarray:
    """Boltzmann distribution over the last axis of ``q`` at temperature ``tau``."""
    if tau <= 0:
        raise ValueError("temperature must be positive")
    z = np.asarray(q, dtype=np.float64) / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def action_entropy(p) -> np.ndarray | float:
    """Shannon entropy in nats over the last axis, with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError("probabilities must be non-negative")
    logp = np.log(np.where(p > 0, p, 1.0))
    h = -(p * logp).sum(axis=-1)
    return float(h) if h.ndim == 0 else h


def batch_total_entropy(q, filled, tau: float = 1.0) -> float:
    """Sum of per-(episode, step, agent) entropies over filled steps.

    ``q`` is (B, T, I, A) and ``filled`` is (B, T).
    """
    q = np.asarray(q, dtype=np.float64)
    filled = np.asarray(filled, dtype=bool)
    if q.ndim != 4 or filled.shape != q.shape[:2]:
        raise ValueError(f"q must be (B, T, I, A) and mask (B, T); got {q.shape} and {filled.shape}")
    h = action_entropy(softmax_policy(q[filled], tau))  # (n_filled, I)
    return float(np.sum(h))


def fit_trend(values) -> TrendFit:
    """Ordinary least squares line over abscissae 0..w-1."""
    y = np.asarray(values, dtype=np.float64)
    w = y.size
    if w < 2:
        raise ValueError("need at least two points for a trend")
    x = np.arange(w, dtype=np.float64)
    xc = x - x.mean()
    alpha = float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))
    return TrendFit(alpha, float(y.mean() - alpha * x.mean()))


def maybe_extend(schedule: LengthSchedule, alpha: float) -> LengthSchedule:
    if alpha < 0 and schedule.e_l < schedule.e_max:
        schedule.e_l += 1
    return schedule


def initial_length(e_max: int, fraction: float) -> int:
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    return max(1, math.floor(fraction * e_max))


def recommend_window(t_budget: float, e_max: int, e_l0: int) -> int:
    """Smallest w with t_budget / (mean_len * (e_max - e_l0)) <= w, mean_len = (e_max + e_l0) / 2."""
    if e_l0 >= e_max:
        raise ValueError("e_l0 must be below e_max for the window rule to apply")
    if t_budget <= 0:
        raise ValueError("t_budget must be positive")
    mean_len = (e_max + e_l0) / 2.0
    return max(1, math.ceil(t_budget / (mean_len * (e_max - e_l0))))


def steps_to_reach_max(w: int, e_l0: int, e_max: int, learn_start: int = 0) -> int:
    """Env steps until E_L hits e_max if every trend fit extends and every episode fills the limit.

    One update (one entropy reading) per episode once ``learn_start`` episodes
    have been collected.
    """
    if e_l0 >= e_max:
        return 0
    t, e_l, readings, episodes = 0, e_l0, 0, 0
    while e_l < e_max:
        t += e_l
        episodes += 1
        if episodes > learn_start:
            readings += 1
            if readings % w == 0:
                e_l += 1
    return t


class AelaController:
    """Owns the length schedule and entropy window for one training run."""

    def __init__(self, e_l0: int, e_max: int, window: int | None, tau: float = 1.0):
        if tau <= 0:
            raise ValueError("temperature must be positive")
        self.schedule = LengthSchedule(e_l0, e_max)
        self.window = EntropyWindow(window)
        self.tau = tau
        self.last_h: float = float("nan")
        self.last_alpha: float = float("nan")

    @property
    def e_l(self) -> int:
        return self.schedule.e_l

    def observe(self, q, filled) -> float:
        """Entropy of a sampled batch's q-values, pushed through :meth:`record`."""
        return self.record(batch_total_entropy(q, filled, self.tau))

    def record(self, h: float) -> float:
        self.last_h = h
        fit = self.window.push(h)
        if fit is not None:
            self.last_alpha = fit.alpha
            maybe_extend(self.schedule, fit.alpha)
        return h
