"""Closed-form Gaussian-mixture denoiser.

For isotropic components the noised marginal stays a mixture,
``p_t(x) = sum_k w_k N(x; sqrt(abar) mu_k, (1 - abar + abar s_k^2) I)``, so the
score (and the epsilon prediction ``-sqrt(1 - abar) * score``) is exact at every
noise level. This gives main and weak "models" with no training error.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .schedule import NoiseSchedule

__all__ = [
    "OracleError",
    "GaussianMixture",
    "log_density",
    "noised_epsilon",
    "epsilon_at",
    "weaken",
    "guided_terminal_variance",
    "eight_mode_mixture",
]


class OracleError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    weights: np.ndarray            # (K,)
    means: np.ndarray              # (K, D)
    variances: np.ndarray          # (K,) isotropic per-component variance
    class_labels: np.ndarray | None = field(default=None)  # (K,) ints

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        var = np.asarray(self.variances, dtype=np.float64).reshape(-1)
        if var.size == 1 and len(w) > 1:
            var = np.full(len(w), float(var[0]))
        if not (w.ndim == 1 and mu.shape[0] == len(w) == len(var)):
            raise OracleError(f"inconsistent mixture sizes: weights {w.shape}, means {mu.shape}, "
                              f"variances {var.shape}")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise OracleError("mixture weights must be positive and sum to 1")
        if np.any(var <= 0):
            raise OracleError("component variances must be positive")
        labels = None
        if self.class_labels is not None:
            labels = np.asarray(self.class_labels, dtype=np.int64)
            if labels.shape != w.shape:
                raise OracleError("class_labels must have one entry per component")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)
        object.__setattr__(self, "class_labels", labels)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def conditional(self, class_id: int) -> GaussianMixture:
        """The sub-mixture of one class, weights renormalised."""
        if self.class_labels is None:
            raise OracleError("mixture has no class labels")
        keep = self.class_labels == class_id
        if not keep.any():
            raise OracleError(f"no components with class {class_id}")
        w = self.weights[keep]
        return GaussianMixture(w / w.sum(), self.means[keep], self.variances[keep],
                               self.class_labels[keep])

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        k = rng.choice(self.n_components, size=n, p=self.weights)
        return self.means[k] + np.sqrt(self.variances[k])[:, None] * rng.standard_normal((n, self.dim))

    def to_dict(self) -> dict:
        d = {"weights": self.weights.tolist(), "means": self.means.tolist(),
             "variances": self.variances.tolist()}
        if self.class_labels is not None:
            d["class_labels"] = self.class_labels.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> GaussianMixture:
        return cls(np.asarray(d["weights"]), np.asarray(d["means"]), np.asarray(d["variances"]),
                   None if d.get("class_labels") is None else np.asarray(d["class_labels"]))


def _component_logits(gm: GaussianMixture, x: np.ndarray, alpha_bar: float):
    if x.shape[-1] != gm.dim:
        raise OracleError(f"x has trailing dim {x.shape[-1]}, mixture dim is {gm.dim}")
    v = 1.0 - alpha_bar + alpha_bar * gm.variances                  # (K,)
    diff = x[..., None, :] - np.sqrt(alpha_bar) * gm.means          # (..., K, D)
    sq = (diff ** 2).sum(axis=-1)                                   # (..., K)
    logits = np.log(gm.weights) - 0.5 * gm.dim * np.log(2 * np.pi * v) - 0.5 * sq / v
    return logits, diff, v


def log_density(gm: GaussianMixture, x: np.ndarray, alpha_bar: float) -> np.ndarray:
    """Explicit log p_t(x) at noise level ``alpha_bar``; ``x`` has shape (..., D)."""
    logits, _, _ = _component_logits(gm, np.asarray(x, dtype=np.float64), alpha_bar)
    return logsumexp(logits, axis=-1)


def epsilon_at(gm: GaussianMixture, x: np.ndarray, alpha_bar: float) -> np.ndarray:
    """Exact epsilon prediction at an arbitrary ``alpha_bar`` in (0, 1]."""
    if not 0.0 < alpha_bar <= 1.0:
        raise OracleError(f"alpha_bar must lie in (0, 1], got {alpha_bar}")
    x = np.asarray(x, dtype=np.float64)
    logits, diff, v = _component_logits(gm, x, alpha_bar)
    resp = np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))
    score = -(resp[..., None] * diff / v[:, None]).sum(axis=-2)
    return -np.sqrt(1.0 - alpha_bar) * score


def noised_epsilon(gm: GaussianMixture, x_t: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    t = sched.check_step(t)
    return epsilon_at(gm, x_t, float(sched.alpha_bar[t]))


def weaken(gm: GaussianMixture, mode: str, c: float | None = None) -> GaussianMixture:
    """Degraded copy of ``gm``.

    ``inflate_variance`` multiplies every variance by ``c > 1`` (an aligned weak
    model). ``merge_to_marginal`` keeps every component with its joint weight and
    forgets the labels (the unconditional model CFG pushes away from).
    ``drop_condition`` forgets the labels and the class priors, weighting all
    components equally.
    """
    if mode == "inflate_variance":
        if c is None or c <= 1.0:
            raise OracleError(f"inflate_variance needs c > 1, got {c}")
        return GaussianMixture(gm.weights, gm.means, gm.variances * c, gm.class_labels)
    if mode == "merge_to_marginal":
        return GaussianMixture(gm.weights, gm.means, gm.variances, None)
    if mode == "drop_condition":
        k = gm.n_components
        return GaussianMixture(np.full(k, 1.0 / k), gm.means, gm.variances, None)
    raise OracleError(f"unknown weaken mode {mode!r}")


def guided_terminal_variance(sigma_sq: float, sigma_b_sq: float, w: float) -> float:
    """Variance of N(0, s^2)^(1+w) / N(0, s_b^2)^w, i.e. the guided Gaussian at t -> 0."""
    precision = (1.0 + w) / sigma_sq - w / sigma_b_sq
    if precision <= 0.0:
        raise OracleError(f"guided precision {precision:g} <= 0; scale w={w} too large for this pair")
    return 1.0 / precision


def eight_mode_mixture(radius: float = 1.0, std: float = 0.1, shared_weight: float = 0.97) -> GaussianMixture:
    """Two-class, 8-component 2-D mixture used by the diversity experiments.

    Class 0 owns four modes on a circle. Class 1 owns four modes too, one of
    which sits on top of class 0's first mode and carries most of class 1's
    mass, so the unconditional density there is dominated by class 1. This is
    the situation in which a misaligned (unconditional) weak model suppresses
    part of the conditioned class.
    """
    ang0 = np.deg2rad([0.0, 90.0, 180.0, 270.0])
    m0 = radius * np.stack([np.cos(ang0), np.sin(ang0)], axis=1)
    ang1 = np.deg2rad([45.0, 135.0, 225.0])
    m1 = np.concatenate([m0[:1], 1.8 * radius * np.stack([np.cos(ang1), np.sin(ang1)], axis=1)])
    rest = (1.0 - shared_weight) / 3.0
    w = np.concatenate([np.full(4, 0.125), 0.5 * np.array([shared_weight, rest, rest, rest])])
    return GaussianMixture(w, np.concatenate([m0, m1]), np.full(8, std ** 2),
                           np.array([0, 0, 0, 0, 1, 1, 1, 1]))
