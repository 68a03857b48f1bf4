"""Epsilon-space guidance combinators.

All combinators take the base (conditional) prediction ``eps`` plus one or more
predictions from weaker branches and extrapolate away from the weak ones.
They are pure elementwise functions and accept any array shape, including a
leading batch axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .net import PerturbationConfig

__all__ = [
    "GuidanceError",
    "GuidanceSpec",
    "GuidanceDelta",
    "cfg_combine",
    "stg_combine",
    "stg_factorized",
    "orthogonalize_delta",
    "stg_orthogonalized",
    "rescale_output",
    "compose_cfg_stg",
    "REFERENCE_SCALES",
]

# Reference scales used by the large video models: CFG per model, STG per skip kind.
REFERENCE_SCALES = {
    "cfg": {"svd": 3.0, "open_sora": 7.0, "mochi": 4.5},
    "stg": {"attention_skip": 2.0, "residual_skip": 1.0},
}


class GuidanceError(ValueError):
    pass


def _check(op: str, *arrays):
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise GuidanceError(f"{op}: shape mismatch {shape} vs {a.shape}")


@dataclass(frozen=True)
class GuidanceSpec:
    """Every guidance knob of one sampling run.

    ``stg`` is ``"off"``, ``"joint"`` (uses ``w`` and ``perturb``) or
    ``"factorized"`` (uses ``w1``/``w2`` and ``perturb_spatial``/``perturb_temporal``).
    """
    cfg_scale: float = 0.0
    stg: str = "off"
    w: float = 0.0
    w1: float = 0.0
    w2: float = 0.0
    orthogonalize: bool = False
    rescale: float = 0.0
    perturb: PerturbationConfig = field(default_factory=PerturbationConfig)
    perturb_spatial: PerturbationConfig = field(default_factory=PerturbationConfig)
    perturb_temporal: PerturbationConfig = field(default_factory=PerturbationConfig)

    def __post_init__(self):
        if self.cfg_scale < 0:
            raise GuidanceError(f"cfg_scale must be >= 0, got {self.cfg_scale}")
        if self.stg not in ("off", "joint", "factorized"):
            raise GuidanceError(f"stg must be off/joint/factorized, got {self.stg!r}")
        if not 0.0 <= self.rescale <= 1.0:
            raise GuidanceError(f"rescale must lie in [0, 1], got {self.rescale}")
        if self.orthogonalize and self.stg != "factorized":
            raise GuidanceError("orthogonalize is only valid with factorized STG")

    @property
    def needs_uncond(self) -> bool:
        return self.cfg_scale != 0.0

    @property
    def needs_weak(self) -> bool:
        return self.stg == "joint" and self.w != 0.0

    @property
    def needs_spatial(self) -> bool:
        return self.stg == "factorized" and (self.w1 != 0.0 or (self.orthogonalize and self.w2 != 0.0))

    @property
    def needs_temporal(self) -> bool:
        return self.stg == "factorized" and self.w2 != 0.0

    def scales(self) -> dict:
        return {"cfg_scale": self.cfg_scale, "w": self.w, "w1": self.w1, "w2": self.w2,
                "rescale": self.rescale}


@dataclass(frozen=True, eq=False)
class GuidanceDelta:
    delta_s: np.ndarray
    delta_t: np.ndarray

    @classmethod
    def from_branches(cls, eps, eps_s, eps_t) -> GuidanceDelta:
        _check("GuidanceDelta", eps, eps_s, eps_t)
        return cls(eps - eps_s, eps - eps_t)


def cfg_combine(eps_cond: np.ndarray, eps_uncond: np.ndarray, scale: float) -> np.ndarray:
    """eps + scale * (eps - eps_uncond); ``scale`` is added on top of the conditional."""
    _check("cfg_combine", eps_cond, eps_uncond)
    if scale == 0:
        return eps_cond
    return eps_cond + scale * (eps_cond - eps_uncond)


def stg_combine(eps: np.ndarray, eps_weak: np.ndarray, w: float) -> np.ndarray:
    _check("stg_combine", eps, eps_weak)
    if w == 0:
        return eps
    return eps + w * (eps - eps_weak)


def stg_factorized(eps, eps_s, eps_t, w1: float, w2: float) -> np.ndarray:
    _check("stg_factorized", eps, eps_s, eps_t)
    if w1 == 0 and w2 == 0:
        return eps
    return eps + w1 * (eps - eps_s) + w2 * (eps - eps_t)


def orthogonalize_delta(delta_s: np.ndarray, delta_t: np.ndarray, axes=None) -> np.ndarray:
    """Remove from ``delta_t`` its projection onto ``delta_s``.

    Inner products run over ``axes`` (default: all), so a leading batch axis
    can be kept separate. Where ``delta_s`` is exactly zero the projection is
    undefined and ``delta_t`` is returned unchanged.
    """
    _check("orthogonalize_delta", delta_s, delta_t)
    dot = np.sum(delta_s * delta_t, axis=axes, keepdims=True)
    nrm = np.sum(delta_s * delta_s, axis=axes, keepdims=True)
    safe = np.where(nrm > 0, nrm, 1.0)
    coef = np.where(nrm > 0, dot / safe, 0.0)
    return delta_t - coef * delta_s


def stg_orthogonalized(eps, eps_s, eps_t, w1: float, w2: float, axes=None) -> np.ndarray:
    d = GuidanceDelta.from_branches(eps, eps_s, eps_t)
    if w1 == 0 and w2 == 0:
        return eps
    return eps + w1 * d.delta_s + w2 * orthogonalize_delta(d.delta_s, d.delta_t, axes)


def rescale_output(eps_base: np.ndarray, eps_guided: np.ndarray, rescale: float,
                   axes=None) -> np.ndarray:
    """Pull the guided prediction's std back toward the base prediction's.

    ``factor = rescale * std(eps_base) / std(eps_guided) + (1 - rescale)``.
    Standard deviations are population stds over ``axes`` (default: every
    element, i.e. one sample). Pass ``axes`` excluding a batch axis to rescale
    each sample independently.
    """
    _check("rescale_output", eps_base, eps_guided)
    if not 0.0 <= rescale <= 1.0:
        raise GuidanceError(f"rescale must lie in [0, 1], got {rescale}")
    if rescale == 0:
        return eps_guided
    std_base = np.std(eps_base, axis=axes, keepdims=True)
    std_guided = np.std(eps_guided, axis=axes, keepdims=True)
    if np.any(std_guided == 0):
        raise GuidanceError("rescale_output: guided prediction has zero std")
    factor = rescale * (std_base / std_guided) + (1.0 - rescale)
    return eps_guided * factor


def compose_cfg_stg(eps_cond: np.ndarray, eps_uncond: np.ndarray | None,
                    eps_weak, spec: GuidanceSpec, axes=None) -> np.ndarray:
    """Sum the CFG delta and the STG delta(s) onto the conditional prediction, then rescale.

    ``eps_weak`` is one array for joint STG or an ``(eps_s, eps_t)`` pair for
    factorized STG. Branches whose scale is zero may be ``None``.
    """
    if spec.needs_uncond and eps_uncond is None:
        raise GuidanceError(f"cfg_scale={spec.cfg_scale} but no unconditional prediction given")
    out = eps_cond
    if spec.needs_uncond:
        _check("compose_cfg_stg", eps_cond, eps_uncond)
        out = out + spec.cfg_scale * (eps_cond - eps_uncond)
    if spec.stg == "joint" and spec.w != 0:
        if eps_weak is None or isinstance(eps_weak, tuple):
            raise GuidanceError(f"joint STG with w={spec.w} needs one perturbed prediction")
        _check("compose_cfg_stg", eps_cond, eps_weak)
        out = out + spec.w * (eps_cond - eps_weak)
    elif spec.stg == "factorized" and (spec.w1 != 0 or spec.w2 != 0):
        if not isinstance(eps_weak, tuple) or len(eps_weak) != 2:
            raise GuidanceError("factorized STG needs an (eps_spatial, eps_temporal) pair")
        eps_s, eps_t = eps_weak
        if (spec.needs_spatial and eps_s is None) or (spec.needs_temporal and eps_t is None):
            raise GuidanceError("factorized STG is missing a perturbed branch for a non-zero scale")
        delta_s = np.zeros_like(eps_cond) if eps_s is None else eps_cond - eps_s
        delta_t = np.zeros_like(eps_cond) if eps_t is None else eps_cond - eps_t
        _check("compose_cfg_stg", eps_cond, delta_s, delta_t)
        if spec.orthogonalize:
            delta_t = orthogonalize_delta(delta_s, delta_t, axes)
        out = out + spec.w1 * delta_s + spec.w2 * delta_t
    return rescale_output(eps_cond, out, spec.rescale, axes)
