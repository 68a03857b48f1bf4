"""Discrete variance-preserving noise schedule and the ancestral reverse step.

Step indices run ``0 .. T-1``. Level ``t`` means ``x_t = sqrt(abar[t]) x0 +
sqrt(1 - abar[t]) eps``; the reverse step at index ``t`` maps level ``t`` to
level ``t-1`` (level ``-1`` being clean data).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import RngStream, gaussian

__all__ = [
    "ScheduleError",
    "NoiseSchedule",
    "linear_schedule",
    "forward_marginal",
    "posterior_mean",
    "ancestral_update",
    "ancestral_step",
    "one_step_denoise",
]


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma_sq: np.ndarray
    variance_kind: str = "beta_tilde"

    @property
    def T(self) -> int:
        return len(self.beta)

    def check_step(self, t: int) -> int:
        if not 0 <= int(t) < self.T:
            raise ScheduleError(f"step index {t} out of range [0, {self.T})")
        return int(t)

    def alpha_bar_at(self, level: int) -> float:
        """``abar`` at a level, with level -1 (clean data) mapped to 1."""
        return 1.0 if level < 0 else float(self.alpha_bar[level])


def linear_schedule(T: int = 200, beta_start: float = 1e-4, beta_end: float = 0.02,
                    variance_kind: str = "beta_tilde") -> NoiseSchedule:
    if T < 2:
        raise ScheduleError(f"T must be >= 2, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ScheduleError(
            f"need 0 < beta_start <= beta_end < 1, got beta_start={beta_start}, beta_end={beta_end}")
    if variance_kind not in ("beta", "beta_tilde"):
        raise ScheduleError(f"variance_kind must be 'beta' or 'beta_tilde', got {variance_kind!r}")
    beta = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    if variance_kind == "beta":
        sigma_sq = beta.copy()
    else:
        prev = np.concatenate([[1.0], alpha_bar[:-1]])
        sigma_sq = (1.0 - prev) / (1.0 - alpha_bar) * beta
    for arr in (beta, alpha, alpha_bar, sigma_sq):
        arr.setflags(write=False)
    return NoiseSchedule(beta, alpha, alpha_bar, sigma_sq, variance_kind)


def forward_marginal(x0: np.ndarray, t: int, noise: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    t = sched.check_step(t)
    if noise.shape != x0.shape:
        raise ScheduleError(f"noise shape {noise.shape} != x0 shape {x0.shape}")
    ab = sched.alpha_bar[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


def posterior_mean(x_t: np.ndarray, eps_hat: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Mean of the ancestral update, (x_t - (1-a_t)/sqrt(1-abar_t) eps) / sqrt(a_t)."""
    t = sched.check_step(t)
    if eps_hat.shape != x_t.shape:
        raise ScheduleError(f"eps_hat shape {eps_hat.shape} != x_t shape {x_t.shape}")
    a, ab = sched.alpha[t], sched.alpha_bar[t]
    return (x_t - (1.0 - a) / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(a)


def ancestral_update(x_t: np.ndarray, eps_hat: np.ndarray, t: int, sched: NoiseSchedule,
                     z: np.ndarray | None) -> np.ndarray:
    """Reverse step from level ``t`` to ``t-1`` with an explicit normal draw ``z``.

    ``z`` is ignored at ``t = 0``; the last step is noiseless.
    """
    mean = posterior_mean(x_t, eps_hat, t, sched)
    if t == 0:
        return mean
    if z is None or z.shape != x_t.shape:
        raise ScheduleError(f"need a noise draw of shape {x_t.shape} for t > 0")
    return mean + np.sqrt(sched.sigma_sq[t]) * z


def ancestral_step(x_t: np.ndarray, eps_hat: np.ndarray, t: int, sched: NoiseSchedule,
                   rng: RngStream) -> tuple[np.ndarray, RngStream]:
    """Draw x_{t-1} ~ N(posterior_mean, sigma_sq[t]); returns the advanced stream too."""
    t = sched.check_step(t)
    if t == 0:
        return posterior_mean(x_t, eps_hat, t, sched), rng
    z, rng = gaussian(rng, x_t.shape)
    return ancestral_update(x_t, eps_hat, t, sched, z), rng


def one_step_denoise(x_t: np.ndarray, eps_hat: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    t = sched.check_step(t)
    ab = sched.alpha_bar[t]
    if ab <= 0.0:
        raise ScheduleError(f"alpha_bar[{t}] = 0; one-step prediction undefined")
    return (x_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)
