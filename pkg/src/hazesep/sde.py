"""Variance-exploding diffusion: schedule, corruption kernel, Euler-Maruyama step.

The forward SDE has zero drift and diffusion ``g(t) = sigma**t``. Its
perturbation kernel is ``x_t = x_0 + std(t) z`` with accumulated variance
``beta(t) = (sigma**(2t) - 1) / (2 ln sigma)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._validation import as_array, check_same_shape, check_time
from .tensor import SeededRng


@dataclass(frozen=True)
class VESchedule:
    sigma: float = 25.0
    steps: int = 200
    tau: float = 0.8

    def __post_init__(self):
        if not self.sigma > 1:
            raise ValueError(f"sigma must be > 1, got {self.sigma}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")
        if not 0 < self.tau <= 1:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")

    @property
    def dt(self) -> float:
        return 1.0 / self.steps

    @property
    def start_step(self) -> int:
        """Index k of the CCDF start time t = k / steps."""
        return int(round(self.tau * self.steps))

    def drift(self, t: float) -> float:
        return 0.0

    def diffusion(self, t: float) -> float:
        return self.sigma**t

    def beta(self, t: float) -> float:
        return math.expm1(2.0 * t * math.log(self.sigma)) / (2.0 * math.log(self.sigma))

    def std(self, t: float) -> float:
        return math.sqrt(self.beta(t))

    def times(self) -> np.ndarray:
        """Reverse-time grid from the CCDF start down to (but excluding) 0."""
        k = self.start_step
        return np.arange(k, 0, -1) / self.steps


@dataclass(frozen=True)
class DiffusionState:
    x: np.ndarray
    t: float


def kernel_std(schedule: VESchedule, t: float) -> float:
    return schedule.std(check_time(t))


def forward_perturb(x0, t: float, schedule: VESchedule, rng: SeededRng) -> np.ndarray:
    """Sample x_t ~ q(x_t | x_0) = N(x_0, beta(t) I)."""
    x0 = as_array(x0, "x0")
    std = kernel_std(schedule, t)
    if std == 0.0:
        return x0.copy()
    return x0 + std * rng.normal(x0.shape)


def reverse_step(
    state: DiffusionState,
    score,
    schedule: VESchedule,
    rng: SeededRng | None,
    noise: np.ndarray | None = None,
) -> DiffusionState:
    """One Euler-Maruyama step of the reverse-time SDE, t -> t - dt.

    ``noise`` overrides the Gaussian draw (used by tests to make the step
    deterministic). The step that lands on t = 0 injects no noise.
    """
    t = state.t
    if not t > 0:
        raise ValueError(f"reverse_step needs t > 0, got {t}")
    score = np.asarray(score, dtype=np.float64)
    check_same_shape(state.x, score, "state and score")
    dt = schedule.dt
    g = schedule.diffusion(t)
    x = state.x - schedule.drift(t) * state.x * dt + g * g * score * dt
    t_next = t - dt
    if t_next <= 0.5 * dt:
        t_next = 0.0
    else:
        if noise is None:
            noise = rng.normal(x.shape)
        x = x + g * math.sqrt(dt) * noise
    return DiffusionState(x, t_next)


def dsm_target(x0, xt, t: float, schedule: VESchedule) -> np.ndarray:
    """Score of the Gaussian kernel, -(x_t - x_0) / beta(t)."""
    t = check_time(t)
    if t == 0:
        raise ValueError("the score-matching target is undefined at t = 0")
    x0 = as_array(x0, "x0")
    xt = as_array(xt, "xt")
    check_same_shape(x0, xt, "x0 and xt")
    return -(xt - x0) / schedule.beta(t)


def sample(
    score_fn: Callable[[np.ndarray, float], np.ndarray],
    shape,
    schedule: VESchedule,
    rng: SeededRng,
    t_start: float = 1.0,
) -> np.ndarray:
    """Unconditional reverse sampling from pure kernel noise at ``t_start``."""
    k = int(round(t_start * schedule.steps))
    t = k / schedule.steps
    state = DiffusionState(schedule.std(t) * rng.normal(shape), t)
    for _ in range(k):
        state = reverse_step(state, score_fn(state.x, state.t), schedule, rng)
    return state.x
