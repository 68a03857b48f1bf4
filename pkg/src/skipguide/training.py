"""Denoising score matching objective, exact gradients and an Adam trainer."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .net import TransformerDenoiser, backward, forward_with_cache
from .numerics import RngStream, gaussian, split, uniform
from .schedule import NoiseSchedule
from .toydata import ToyClip, stack_clips

__all__ = ["DSMDraws", "draw_dsm", "dsm_loss", "dsm_loss_and_grads", "AdamState", "train_step",
           "TrainConfig", "train"]

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DSMDraws:
    """Everything random about one loss evaluation."""
    t: np.ndarray           # (B,) step indices
    noise: np.ndarray       # (B, f, c, h, w)
    drop: np.ndarray        # (B,) bool: replace class with the null token


def draw_dsm(batch_size: int, video_shape, t_draws, rng: RngStream, p_uncond: float) -> DSMDraws:
    noise, _ = gaussian(split(rng, 0), (batch_size, *video_shape))
    u, _ = uniform(split(rng, 1), batch_size)
    return DSMDraws(np.asarray(t_draws, dtype=np.int64), noise, u < p_uncond)


def _noised(videos, sched, draws):
    ab = sched.alpha_bar[draws.t].reshape(-1, 1, 1, 1, 1)
    return np.sqrt(ab) * videos + np.sqrt(1.0 - ab) * draws.noise


def _classes(model, classes, draws):
    return np.where(draws.drop, model.arch.n_classes, classes)


def dsm_loss(model: TransformerDenoiser, batch: list[ToyClip], t_draws, rng: RngStream,
             sched: NoiseSchedule, p_uncond: float = 0.1, per_clip: bool = False,
             draws: DSMDraws | None = None):
    """Mean squared epsilon error, averaged over clips and elements.

    With ``per_clip`` the per-clip mean errors are returned instead.
    """
    if not batch:
        raise ValueError("dsm_loss needs a non-empty batch")
    videos, classes = stack_clips(batch)
    if draws is None:
        draws = draw_dsm(len(batch), videos.shape[1:], t_draws, rng, p_uncond)
    eps, _ = forward_with_cache(model, _noised(videos, sched, draws), draws.t,
                                _classes(model, classes, draws))
    err = ((eps - draws.noise) ** 2).reshape(len(batch), -1).mean(axis=1)
    return err if per_clip else float(err.mean())


def dsm_loss_and_grads(model: TransformerDenoiser, batch: list[ToyClip], t_draws, rng: RngStream,
                       sched: NoiseSchedule, p_uncond: float = 0.1,
                       draws: DSMDraws | None = None) -> tuple[float, dict[str, np.ndarray]]:
    videos, classes = stack_clips(batch)
    if draws is None:
        draws = draw_dsm(len(batch), videos.shape[1:], t_draws, rng, p_uncond)
    eps, cache = forward_with_cache(model, _noised(videos, sched, draws), draws.t,
                                    _classes(model, classes, draws))
    diff = eps - draws.noise
    loss = float((diff ** 2).mean())
    grads = backward(model, cache, 2.0 * diff / diff.size)
    return loss, grads


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, model: TransformerDenoiser) -> AdamState:
        return cls({k: np.zeros_like(p) for k, p in model.params.items()},
                   {k: np.zeros_like(p) for k, p in model.params.items()})


def train_step(model: TransformerDenoiser, grads: dict, lr: float, state: AdamState,
               betas=(0.9, 0.999), eps: float = 1e-8) -> tuple[TransformerDenoiser, AdamState]:
    """One Adam update; returns a new model and state, inputs untouched."""
    b1, b2 = betas
    step = state.step + 1
    new_params, m_new, v_new = {}, {}, {}
    for k, p in model.params.items():
        g = grads[k]
        m = b1 * state.m[k] + (1 - b1) * g
        v = b2 * state.v[k] + (1 - b2) * g * g
        mhat = m / (1 - b1 ** step)
        vhat = v / (1 - b2 ** step)
        new_params[k] = p - lr * mhat / (np.sqrt(vhat) + eps)
        m_new[k], v_new[k] = m, v
    return TransformerDenoiser(model.arch, new_params), AdamState(m_new, v_new, step)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    lr: float = 3e-3
    batch_size: int = 8
    p_uncond: float = 0.1

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("training.steps must be >= 0")
        if self.lr < 0:
            raise ValueError("training.lr must be >= 0")
        if self.batch_size < 1:
            raise ValueError("training.batch_size must be >= 1")
        if not 0.0 <= self.p_uncond <= 1.0:
            raise ValueError("training.p_uncond must lie in [0, 1]")


def train(model: TransformerDenoiser, dataset: list[ToyClip], sched: NoiseSchedule,
          cfg: TrainConfig, rng: RngStream, log_every: int = 50):
    """Run ``cfg.steps`` Adam steps on minibatches; returns (model, per-step losses)."""
    state = AdamState.zeros_like(model)
    losses = []
    n = len(dataset)
    for step in range(cfg.steps):
        srng = split(rng, step)
        u, _ = uniform(split(srng, 0), 2 * cfg.batch_size)
        idx = np.minimum((u[:cfg.batch_size] * n).astype(np.int64), n - 1)
        t_draws = np.minimum((u[cfg.batch_size:] * sched.T).astype(np.int64), sched.T - 1)
        batch = [dataset[i] for i in idx]
        loss, grads = dsm_loss_and_grads(model, batch, t_draws, split(srng, 1), sched, cfg.p_uncond)
        model, state = train_step(model, grads, cfg.lr, state)
        losses.append(loss)
        if log_every and (step % log_every == 0 or step == cfg.steps - 1):
            log.info("step %d loss %.4f", step, loss)
    return model, losses
