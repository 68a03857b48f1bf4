"""Central finite-difference check of the analytic DSM gradients."""
from __future__ import annotations

import numpy as np

from .net import TransformerDenoiser
from .numerics import RngStream, split, uniform
from .schedule import NoiseSchedule
from .toydata import ToyClip
from .training import draw_dsm, dsm_loss, dsm_loss_and_grads

__all__ = ["tensor_rel_error", "gradient_check"]


def tensor_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(max |a|, max |n|); 0 when both vanish."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)))
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric)) / scale)


def gradient_check(model: TransformerDenoiser, batch: list[ToyClip], sched: NoiseSchedule,
                   rng: RngStream, step: float = 1e-5, entries_per_tensor: int | None = 6,
                   t: int | None = None, p_uncond: float = 0.1) -> dict[str, float]:
    """Per-tensor relative error of analytic vs central-difference gradients.

    The noise, step and class-drop draws are fixed once so the loss is a
    deterministic function of the weights. ``entries_per_tensor`` limits how
    many (randomly chosen) entries of each tensor are perturbed; ``None``
    checks every entry.
    """
    if t is None:
        u, _ = uniform(split(rng, 0), len(batch))
        t_draws = np.minimum((u * sched.T).astype(np.int64), sched.T - 1)
    else:
        t_draws = np.full(len(batch), int(t))
    draws = draw_dsm(len(batch), batch[0].video.shape, t_draws, split(rng, 1), p_uncond)
    _, grads = dsm_loss_and_grads(model, batch, None, rng, sched, p_uncond, draws=draws)
    work = model.copy()
    out = {}
    for i, (name, p) in enumerate(work.params.items()):
        flat = p.reshape(-1)
        if entries_per_tensor is None or flat.size <= entries_per_tensor:
            idx = np.arange(flat.size)
        else:
            u, _ = uniform(split(split(rng, 2), i), flat.size)
            idx = np.sort(np.argsort(u, kind="stable")[:entries_per_tensor])
        numeric = np.empty(len(idx))
        for j, k in enumerate(idx):
            orig = flat[k]
            flat[k] = orig + step
            lp = dsm_loss(work, batch, None, rng, sched, p_uncond, draws=draws)
            flat[k] = orig - step
            lm = dsm_loss(work, batch, None, rng, sched, p_uncond, draws=draws)
            flat[k] = orig
            numeric[j] = (lp - lm) / (2.0 * step)
        out[name] = tensor_rel_error(grads[name].reshape(-1)[idx], numeric)
    return out
