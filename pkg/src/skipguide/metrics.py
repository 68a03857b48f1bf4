"""Desk-scale proxy metrics for sample sets and individual clips."""
from __future__ import annotations

import math

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .oracle import GaussianMixture

__all__ = [
    "MetricError",
    "mmd_rbf",
    "median_bandwidth",
    "mode_coverage",
    "flicker_score",
    "sharpness_proxy",
    "dynamics_proxy",
    "cosine",
    "alignment_cosines",
    "alignment_cosine",
]


class MetricError(ValueError):
    pass


def _flat(samples) -> np.ndarray:
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] == 0:
        return arr.reshape(0, max(1, int(np.prod(arr.shape[1:]))))
    return arr.reshape(arr.shape[0], -1)


def mmd_rbf(samples_a, samples_b, bandwidth: float) -> float:
    """Unbiased MMD^2 with kernel exp(-|x - y|^2 / (2 h^2)); not clamped at zero.

    Kernel sums use ``math.fsum`` so the value is exactly symmetric in its
    arguments.
    """
    a, b = _flat(samples_a), _flat(samples_b)
    if len(a) < 2 or len(b) < 2:
        raise MetricError("mmd_rbf needs at least two samples in each set")
    if bandwidth <= 0:
        raise MetricError(f"bandwidth must be positive, got {bandwidth}")
    g = 0.5 / bandwidth ** 2
    m, n = len(a), len(b)
    kaa = np.exp(-g * cdist(a, a, "sqeuclidean"))
    kbb = np.exp(-g * cdist(b, b, "sqeuclidean"))
    kab = np.exp(-g * cdist(a, b, "sqeuclidean"))
    saa = (math.fsum(kaa.ravel()) - m) / (m * (m - 1))
    sbb = (math.fsum(kbb.ravel()) - n) / (n * (n - 1))
    sab = math.fsum(kab.ravel()) / (m * n)
    return (saa + sbb) - 2.0 * sab


def median_bandwidth(samples, max_points: int = 2000) -> float:
    """Median pairwise distance of (the first ``max_points`` of) a sample set."""
    x = _flat(samples)[:max_points]
    if len(x) < 2:
        raise MetricError("median heuristic needs at least two samples")
    h = float(np.median(pdist(x)))
    return h if h > 0 else 1.0


def mode_coverage(samples, gm: GaussianMixture, radius_in_sds: float = 3.0,
                  group_size: int | None = None) -> float:
    """Fraction of components with at least one sample within ``radius_in_sds`` sds of the mean.

    With ``group_size`` the samples are cut into disjoint groups of that size
    (the remainder is dropped) and the per-group coverages are averaged, which
    gives coverage at a fixed sample budget.
    """
    if radius_in_sds <= 0:
        raise MetricError("radius must be positive")
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        return 0.0
    x = x.reshape(len(x), -1)
    d2 = ((x[:, None, :] - gm.means[None]) ** 2).sum(axis=-1)
    hit = d2 <= (radius_in_sds ** 2) * gm.variances[None]
    if group_size is None:
        return float(hit.any(axis=0).mean())
    n_groups = len(x) // group_size
    if n_groups == 0:
        raise MetricError(f"need at least group_size={group_size} samples")
    groups = hit[:n_groups * group_size].reshape(n_groups, group_size, -1)
    return float(groups.any(axis=1).mean())


def flicker_score(video: np.ndarray) -> float:
    """Mean absolute difference between consecutive frames (lower is smoother)."""
    v = np.asarray(video, dtype=np.float64)
    if v.shape[0] < 2:
        raise MetricError("flicker_score needs at least two frames")
    return float(np.abs(np.diff(v, axis=0)).mean())


def sharpness_proxy(video: np.ndarray) -> float:
    """Mean spatial gradient magnitude from forward differences."""
    v = np.asarray(video, dtype=np.float64)
    gx = np.diff(v, axis=-1)[..., :-1, :]
    gy = np.diff(v, axis=-2)[..., :, :-1]
    return float(np.sqrt(gx ** 2 + gy ** 2).mean())


def _circular_centroids(v: np.ndarray) -> np.ndarray:
    """Per-frame (angle_x, angle_y, has_mass) of the intensity mass above the frame minimum."""
    f, _, h, w = v.shape
    mass = v.sum(axis=1)                                   # (f, h, w)
    mass = mass - mass.reshape(f, -1).min(axis=1)[:, None, None]
    px = np.exp(2j * np.pi * np.arange(w) / w)
    py = np.exp(2j * np.pi * np.arange(h) / h)
    zx = (mass.sum(axis=1) * px).sum(axis=1)
    zy = (mass.sum(axis=2) * py).sum(axis=1)
    return np.stack([np.angle(zx), np.angle(zy), (mass.sum(axis=(1, 2)) > 0).astype(float)], axis=1)


def dynamics_proxy(video: np.ndarray) -> float:
    """Mean per-frame displacement (pixels) of the intensity-mass centroid.

    Centroids are circular means on the periodic frame; the mass is measured
    above each frame's minimum, so a constant intensity offset has no effect.
    """
    v = np.asarray(video, dtype=np.float64)
    if v.ndim != 4 or v.shape[0] < 2:
        raise MetricError("dynamics_proxy needs a [frames>=2, c, h, w] video")
    h, w = v.shape[2:]
    c = _circular_centroids(v)
    dang = np.diff(c[:, :2], axis=0)
    dang = (dang + np.pi) % (2 * np.pi) - np.pi
    dx = dang[:, 0] * w / (2 * np.pi)
    dy = dang[:, 1] * h / (2 * np.pi)
    valid = c[1:, 2] * c[:-1, 2]
    return float((np.hypot(dx, dy) * valid).mean())


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.ravel(a)
    b = np.ravel(b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def alignment_cosines(predict_a, predict_b, probes) -> np.ndarray:
    """Per-probe cosine similarity of two predictors; probes are (x_t, t) pairs."""
    if len(probes) == 0:
        raise MetricError("alignment_cosine needs at least one probe")
    return np.array([cosine(predict_a(x, t), predict_b(x, t)) for x, t in probes])


def alignment_cosine(predict_a, predict_b, probes) -> float:
    return float(alignment_cosines(predict_a, predict_b, probes).mean())
