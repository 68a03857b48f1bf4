"""Gaussian-mixture experiments with exact epsilon oracles.

These are the small, closed-form setups behind ``oracle-demo`` and the
frozen regression values in the test suite.
"""
from __future__ import annotations

import numpy as np

from .guidance import GuidanceSpec
from .metrics import alignment_cosines
from .net import PerturbationConfig, TransformerDenoiser, forward
from .numerics import RngStream, gaussian, split, uniform
from .oracle import GaussianMixture, eight_mode_mixture, guided_terminal_variance, weaken
from .sampler import OracleBinding, RestartConfig, SamplerRun, sample
from .schedule import NoiseSchedule, forward_marginal, linear_schedule
from .sweep import MetricsRow, SweepSetup, sweep

__all__ = [
    "CFG_SCALES",
    "STG_SCALES",
    "diversity_setup",
    "diversity_sweeps",
    "sharpening_run",
    "restart_moments",
    "single_gaussian",
    "noised_probes",
    "alignment_experiment",
]

CFG_SCALES = (0.0, 1.0, 2.0, 4.0)
STG_SCALES = (0.0, 1.0, 2.0, 4.0)


def single_gaussian(mean: float, var: float, dim: int = 1) -> GaussianMixture:
    return GaussianMixture(np.ones(1), np.full((1, dim), mean), np.array([var]))


def diversity_setup(n_chains: int = 10_000, seed: int = 0, sched: NoiseSchedule | None = None,
                    n_reference: int = 2000) -> SweepSetup:
    """Class 0 of the 8-mode mixture, with both repelling branches available.

    ``uncond`` is the class-merged marginal (the CFG analog); ``weak`` is the
    class-0 mixture with doubled variances (an aligned weak model).
    """
    sched = sched or linear_schedule()
    gm = eight_mode_mixture()
    c0 = gm.conditional(0)
    binding = OracleBinding(sched, c0, uncond=weaken(gm, "merge_to_marginal"),
                            weak=weaken(c0, "inflate_variance", 2.0))
    reference = c0.sample(n_reference, np.random.default_rng(seed))
    return SweepSetup(sched, binding, (2,), reference, n_chains=n_chains, seed=seed, mixture=c0)


def diversity_sweeps(n_chains: int = 10_000, seed: int = 0) -> dict[str, list[MetricsRow]]:
    setup = diversity_setup(n_chains, seed)
    cfg_grid = [(f"cfg{s:g}", GuidanceSpec(cfg_scale=s)) for s in CFG_SCALES]
    stg_grid = [(f"stg{s:g}", GuidanceSpec(stg="joint", w=s)) for s in STG_SCALES]
    return {"cfg": sweep(setup, cfg_grid), "aligned": sweep(setup, stg_grid)}


def sharpening_run(n_chains: int = 10_000, seed: int = 0, sigma_sq: float = 1.0,
                   inflate: float = 2.0, w: float = 1.0, T: int = 200) -> dict:
    """Guided sampling of N(0, s^2) repelled from N(0, c s^2); compare with the closed form."""
    sched = linear_schedule(T)
    main = single_gaussian(0.0, sigma_sq)
    binding = OracleBinding(sched, main, weak=weaken(main, "inflate_variance", inflate))
    x, _ = sample(SamplerRun(sched, GuidanceSpec(stg="joint", w=w), binding, (1,), n_chains, seed))
    return {"sample_variance": float(x.var()),
            "closed_form": guided_terminal_variance(sigma_sq, inflate * sigma_sq, w)}


def restart_moments(restart: RestartConfig | None, n_chains: int = 10_000, seed: int = 0,
                    mean: float = 0.3, var: float = 0.25) -> tuple[float, float]:
    """Terminal mean and variance of unguided sampling of a 1-D Gaussian."""
    sched = linear_schedule()
    binding = OracleBinding(sched, single_gaussian(mean, var))
    x, _ = sample(SamplerRun(sched, GuidanceSpec(), binding, (1,), n_chains, seed, restart))
    return float(x.mean()), float(x.var())


def noised_probes(clips, sched: NoiseSchedule, rng: RngStream, n: int = 100) -> list:
    """``n`` (x_t, t) pairs: dataset clips noised to uniformly drawn steps."""
    u, _ = uniform(split(rng, 0), 2 * n)
    idx = np.minimum((u[:n] * len(clips)).astype(np.int64), len(clips) - 1)
    ts = np.minimum((u[n:] * sched.T).astype(np.int64), sched.T - 1)
    probes = []
    for i, (k, t) in enumerate(zip(idx, ts)):
        z, _ = gaussian(split(split(rng, 1), i), clips[k].video.shape)
        probes.append((forward_marginal(clips[k].video, int(t), z, sched), int(t)))
    return probes


def alignment_experiment(model: TransformerDenoiser, fresh: TransformerDenoiser, probes,
                         class_id: int | None = 0, layer: int | None = None):
    """Per-probe cosines of the clean prediction against (a) the same net with one
    late block skipped and (b) an untrained net of the same shape."""
    layer = model.arch.layers - 1 if layer is None else layer
    skip = PerturbationConfig("residual_skip", (layer,))

    def base(x, t):
        return forward(model, x, t, class_id)

    def skipped(x, t):
        return forward(model, x, t, class_id, skip)

    def other(x, t):
        return forward(fresh, x, t, class_id)
    return alignment_cosines(base, skipped, probes), alignment_cosines(base, other, probes)
