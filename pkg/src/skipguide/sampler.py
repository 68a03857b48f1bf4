"""Guided ancestral sampling, restart sampling and trace capture.

Each chain draws from its own counter-based streams, one per purpose (initial
state, per-step noise, restart noise), so a chain's output depends only on the
run seed and its chain index: not on batch size, and not on whether restart
is enabled with ``K = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from . import oracle as _oracle
from .guidance import GuidanceSpec, cfg_combine, compose_cfg_stg
from .net import TransformerDenoiser, forward
from .numerics import gaussian_many, stream_keys
from .schedule import NoiseSchedule, ancestral_update, one_step_denoise

__all__ = [
    "SamplerError",
    "Denoiser",
    "OracleBinding",
    "NetBinding",
    "RestartConfig",
    "SamplerRun",
    "TraceRecord",
    "SampleTrace",
    "sample",
    "sample_restart",
    "capture_one_step_predictions",
    "BRANCHES",
]

BRANCHES = ("cond", "uncond", "weak", "weak_s", "weak_t")

_INIT, _STEP, _RESTART = 0, 1, 2


class SamplerError(ValueError):
    pass


class Denoiser(Protocol):
    def has(self, branch: str) -> bool: ...

    def predict(self, x: np.ndarray, t: int, branch: str) -> np.ndarray: ...


@dataclass(eq=False)
class OracleBinding:
    """Exact mixture predictions for each branch; ``x`` is (B, D)."""
    sched: NoiseSchedule
    main: _oracle.GaussianMixture
    uncond: _oracle.GaussianMixture | None = None
    weak: _oracle.GaussianMixture | None = None
    weak_s: _oracle.GaussianMixture | None = None
    weak_t: _oracle.GaussianMixture | None = None

    def _gm(self, branch):
        return self.main if branch == "cond" else getattr(self, branch)

    def has(self, branch: str) -> bool:
        return self._gm(branch) is not None

    def predict(self, x, t, branch):
        return _oracle.epsilon_at(self._gm(branch), x, float(self.sched.alpha_bar[t]))


@dataclass(eq=False)
class NetBinding:
    """Transformer predictions; perturbed branches use the conditional class."""
    model: TransformerDenoiser
    class_id: int | None
    spec: GuidanceSpec

    def has(self, branch: str) -> bool:
        if branch in ("cond", "uncond"):
            return True
        pert = {"weak": self.spec.perturb, "weak_s": self.spec.perturb_spatial,
                "weak_t": self.spec.perturb_temporal}[branch]
        return pert.active

    def predict(self, x, t, branch):
        if branch == "cond":
            return forward(self.model, x, t, self.class_id)
        if branch == "uncond":
            return forward(self.model, x, t, None)
        pert = {"weak": self.spec.perturb, "weak_s": self.spec.perturb_spatial,
                "weak_t": self.spec.perturb_temporal}[branch]
        return forward(self.model, x, t, self.class_id, pert)


@dataclass(frozen=True)
class RestartConfig:
    """Restart interval and iteration count.

    ``restart_noise``: ``forward_renoise`` (exact variance-preserving bridge),
    ``variance_gap`` (additive noise with the variance difference) or ``none``
    (no noise; only useful for checking loop plumbing).
    """
    t_min: int
    t_max: int
    K: int = 1
    restart_noise: str = "forward_renoise"

    def validate(self, T: int) -> None:
        if not 0 <= self.t_min < self.t_max < T:
            raise SamplerError(f"restart interval needs 0 <= t_min < t_max < T, got "
                               f"t_min={self.t_min}, t_max={self.t_max}, T={T}")
        if self.K < 0:
            raise SamplerError(f"restart K must be >= 0, got {self.K}")
        if self.restart_noise not in ("forward_renoise", "variance_gap", "none"):
            raise SamplerError(f"unknown restart_noise {self.restart_noise!r}")


@dataclass(eq=False)
class SamplerRun:
    sched: NoiseSchedule
    spec: GuidanceSpec
    binding: Denoiser
    shape: tuple[int, ...]
    n_chains: int = 1
    seed: int = 0
    restart: RestartConfig | None = None
    trace_stride: int | None = None   # None -> T // 10
    chain_offset: int = 0

    def stream_ids(self, purpose: int) -> np.ndarray:
        chains = np.arange(self.chain_offset, self.chain_offset + self.n_chains, dtype=np.int64)
        return (purpose << 48) | chains


@dataclass(eq=False)
class TraceRecord:
    t: int
    segment: int                # 0 for the main pass, k >= 1 for restart pass k
    x: np.ndarray               # state before the step
    branches: dict[str, np.ndarray]
    eps_tilde: np.ndarray


@dataclass(eq=False)
class SampleTrace:
    records: list[TraceRecord] = field(default_factory=list)
    final: np.ndarray | None = None
    one_step: dict[int, dict[str, np.ndarray]] = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "n_records": len(self.records),
            "steps": [r.t for r in self.records],
            "segments": [r.segment for r in self.records],
            "eps_tilde_rms": [float(np.sqrt(np.mean(r.eps_tilde ** 2))) for r in self.records],
            "x_rms": [float(np.sqrt(np.mean(r.x ** 2))) for r in self.records],
        }


def _required_branches(spec: GuidanceSpec) -> list[str]:
    need = ["cond"]
    if spec.needs_uncond:
        need.append("uncond")
    if spec.needs_weak:
        need.append("weak")
    if spec.needs_spatial:
        need.append("weak_s")
    if spec.needs_temporal:
        need.append("weak_t")
    return need


def _guided(run: SamplerRun, x, t, extra=()):
    need = _required_branches(run.spec)
    names = need + [b for b in extra if b not in need and run.binding.has(b)]
    eps = {b: run.binding.predict(x, t, b) for b in names}
    weak = eps.get("weak")
    if run.spec.stg == "factorized":
        weak = (eps.get("weak_s"), eps.get("weak_t"))
    axes = tuple(range(1, x.ndim))
    tilde = compose_cfg_stg(eps["cond"], eps.get("uncond"), weak, run.spec, axes=axes)
    return tilde, eps


class _Driver:
    def __init__(self, run: SamplerRun, capture_ts=(), capture_branches=None):
        self.run = run
        self.sched = run.sched
        self.trace = SampleTrace()
        T = self.sched.T
        self.stride = max(1, T // 10) if run.trace_stride is None else run.trace_stride
        self.step_ids = run.stream_ids(_STEP)
        self.restart_ids = run.stream_ids(_RESTART)
        self.step_keys = stream_keys(run.seed, self.step_ids)
        self.restart_keys = stream_keys(run.seed, self.restart_ids)
        self.step_counter = 0
        self.restart_counter = 0
        self.capture_ts = set(int(t) for t in capture_ts)
        self.capture_branches = BRANCHES if capture_branches is None else tuple(capture_branches)

    def init_state(self):
        x, _ = gaussian_many(self.run.seed, self.run.stream_ids(_INIT), 0, self.run.shape)
        return x

    def step(self, x, t, segment):
        capture = t in self.capture_ts and segment == 0
        extra = [b for b in self.capture_branches if b in BRANCHES] if capture else ()
        tilde, eps = _guided(self.run, x, t, extra)
        if self.stride and (t % self.stride == 0):
            self.trace.records.append(TraceRecord(t, segment, x.copy(), eps, tilde))
        if capture:
            self._capture(x, t, eps)
        z = None
        if t > 0:
            z, self.step_counter = gaussian_many(self.run.seed, self.step_ids, self.step_counter,
                                                 self.run.shape, self.step_keys)
        return ancestral_update(x, tilde, t, self.sched, z)

    def _capture(self, x, t, eps):
        spec = self.run.spec
        preds = {"x_t": x.copy()}
        wanted = set(self.capture_branches)
        for b in BRANCHES:
            if b in wanted and b in eps:
                preds[b] = one_step_denoise(x, eps[b], t, self.sched)
        if "cfg" in wanted and "uncond" in eps:
            preds["cfg"] = one_step_denoise(x, cfg_combine(eps["cond"], eps["uncond"], spec.cfg_scale),
                                            t, self.sched)
        if "stg" in wanted:
            stg_only = GuidanceSpec(0.0, spec.stg, spec.w, spec.w1, spec.w2, spec.orthogonalize, 0.0)
            weak = (eps.get("weak_s"), eps.get("weak_t")) if spec.stg == "factorized" else eps.get("weak")
            try:
                e = compose_cfg_stg(eps["cond"], None, weak, stg_only, axes=tuple(range(1, x.ndim)))
                preds["stg"] = one_step_denoise(x, e, t, self.sched)
            except ValueError:
                pass
        if "guided" in wanted:
            tilde, _ = _guided(self.run, x, t)
            preds["guided"] = one_step_denoise(x, tilde, t, self.sched)
        self.trace.one_step[t] = preds

    def restart_noise(self, x, level_from: int, level_to: int):
        cfg = self.run.restart
        ab_from = self.sched.alpha_bar_at(level_from)
        ab_to = self.sched.alpha_bar_at(level_to)
        z, self.restart_counter = gaussian_many(self.run.seed, self.restart_ids, self.restart_counter,
                                                self.run.shape, self.restart_keys)
        if cfg.restart_noise == "none":
            return x
        if cfg.restart_noise == "variance_gap":
            return x + np.sqrt(ab_from - ab_to) * z
        ratio = ab_to / ab_from
        return np.sqrt(ratio) * x + np.sqrt(1.0 - ratio) * z


def _run_loop(run: SamplerRun, restart: RestartConfig | None, capture_ts=(), capture_branches=None):
    if run.n_chains < 1:
        raise SamplerError("n_chains must be >= 1")
    T = run.sched.T
    for b in _required_branches(run.spec):
        if not run.binding.has(b):
            raise SamplerError(f"guidance needs branch {b!r} but the denoiser binding does not provide it")
    for t in capture_ts:
        run.sched.check_step(t)
    drv = _Driver(run, capture_ts, capture_branches)
    x = drv.init_state()
    for t in range(T - 1, -1, -1):
        x = drv.step(x, t, 0)
        if restart is not None and t == restart.t_min:
            # state now sits at level t_min - 1
            for k in range(restart.K):
                x = drv.restart_noise(x, restart.t_min - 1, restart.t_max)
                for tp in range(restart.t_max, restart.t_min - 1, -1):
                    x = drv.step(x, tp, k + 1)
    drv.trace.final = x
    return x, drv.trace


def sample(run: SamplerRun, capture_ts=(), capture_branches=None) -> tuple[np.ndarray, SampleTrace]:
    """Guided ancestral sampling from level T-1 down to clean data.

    Returns the final states, shape ``(n_chains, *run.shape)``, and the trace.
    """
    if run.restart is not None:
        return sample_restart(run, capture_ts, capture_branches)
    return _run_loop(run, None, capture_ts, capture_branches)


def sample_restart(run: SamplerRun, capture_ts=(), capture_branches=None) -> tuple[np.ndarray, SampleTrace]:
    """Sampling with restart: after the step at ``t_min`` re-noise up to ``t_max``
    and re-run steps ``t_max .. t_min``, ``K`` times, then finish the main pass."""
    if run.restart is None:
        raise SamplerError("sample_restart needs run.restart")
    run.restart.validate(run.sched.T)
    return _run_loop(run, run.restart, capture_ts, capture_branches)


def capture_one_step_predictions(run: SamplerRun, t_list, branches=None) -> list[dict[str, np.ndarray]]:
    """One-step clean-data predictions at each listed step of a sampling run.

    ``branches`` picks from ``cond``, ``uncond``, ``weak``, ``weak_s``,
    ``weak_t``, ``cfg`` (CFG-combined), ``stg`` (STG-only combination) and
    ``guided`` (the full run spec). Unavailable branches are omitted. Each
    dict also holds the state itself under ``x_t``.
    """
    t_list = [int(t) for t in t_list]
    if not t_list:
        return []
    branches = BRANCHES + ("cfg", "stg", "guided") if branches is None else tuple(branches)
    if not branches:
        return [{} for _ in t_list]
    _, trace = _run_loop(run, run.restart, t_list, branches)
    return [trace.one_step.get(t, {}) for t in t_list]
