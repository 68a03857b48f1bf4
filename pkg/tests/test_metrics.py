import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skipguide.metrics import (MetricError, alignment_cosine, alignment_cosines, cosine, dynamics_proxy,
                               flicker_score, median_bandwidth, mmd_rbf, mode_coverage, sharpness_proxy)
from skipguide.oracle import GaussianMixture
from skipguide.toydata import ClipConfig, render_clip


def test_mmd_identical_sets_small():
    a = np.random.default_rng(0).standard_normal(1000)
    assert abs(mmd_rbf(a, a, 1.0)) <= 2 / np.sqrt(1000)


def test_mmd_same_distribution_small():
    rng = np.random.default_rng(1)
    assert abs(mmd_rbf(rng.standard_normal(1000), rng.standard_normal(1000), 1.0)) <= 2 / np.sqrt(1000)


def test_mmd_separated():
    rng = np.random.default_rng(2)
    assert mmd_rbf(rng.standard_normal(1000), 3 + rng.standard_normal(1000), 1.0) > 0.5


def test_mmd_symmetric_exactly():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((200, 3)), rng.standard_normal((150, 3)) + 0.5
    assert mmd_rbf(a, b, 0.8) == mmd_rbf(b, a, 0.8)


def test_mmd_errors():
    with pytest.raises(MetricError):
        mmd_rbf(np.zeros((0, 2)), np.zeros((5, 2)), 1.0)
    with pytest.raises(MetricError):
        mmd_rbf(np.zeros((5, 2)), np.zeros((5, 2)), 0.0)


def test_median_bandwidth():
    assert median_bandwidth(np.array([[0.0], [1.0], [3.0]])) == 2.0
    assert median_bandwidth(np.zeros((4, 2))) == 1.0


def ring(k=8):
    ang = 2 * np.pi * np.arange(k) / k
    return GaussianMixture(np.full(k, 1 / k), np.stack([np.cos(ang), np.sin(ang)], 1), np.full(k, 0.01))


def test_coverage_examples():
    gm = ring()
    assert mode_coverage(gm.means, gm) == 1.0
    assert mode_coverage(np.repeat(gm.means[:1], 10, axis=0), gm) == 0.125
    assert mode_coverage(np.zeros((0, 2)), gm) == 0.0
    with pytest.raises(MetricError):
        mode_coverage(gm.means, gm, radius_in_sds=0.0)


def test_grouped_coverage():
    gm = ring()
    first = np.repeat(gm.means[:1], 4, axis=0)
    x = np.concatenate([gm.means[:4], first])       # group 1 hits 4 modes, group 2 hits 1
    assert mode_coverage(x, gm, group_size=4) == pytest.approx((4 / 8 + 1 / 8) / 2)
    with pytest.raises(MetricError):
        mode_coverage(x, gm, group_size=100)


def test_flicker_examples():
    static = np.zeros((5, 1, 4, 4))
    assert flicker_score(static) == 0.0
    alt = np.stack([np.full((1, 4, 4), (-1.0) ** i) for i in range(6)])
    assert flicker_score(alt) == 2.0
    with pytest.raises(MetricError):
        flicker_score(static[:1])


def dot(speed, cfg=ClipConfig()):
    return render_clip((1.0, 2.0), (speed, 0.0), 1.0, cfg)


def test_motion_metrics_scale_with_speed():
    assert flicker_score(dot(2.0)) > flicker_score(dot(1.0)) > 0
    d1, d2 = dynamics_proxy(dot(1.0)), dynamics_proxy(dot(2.0))
    assert d2 / d1 == pytest.approx(2.0, rel=0.05)
    assert d1 == pytest.approx(1.0, rel=0.05)


def test_static_and_constant():
    v = np.repeat(dot(0.0)[:1], 4, axis=0)
    assert dynamics_proxy(v) == 0.0
    assert sharpness_proxy(np.full((3, 1, 5, 5), 0.3)) == 0.0
    assert sharpness_proxy(v) > 0


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(0.0, 2.5))
def test_intensity_shift_invariance(c, speed):
    v = dot(speed)
    assert flicker_score(v + c) == pytest.approx(flicker_score(v), abs=1e-12)
    assert dynamics_proxy(v + c) == pytest.approx(dynamics_proxy(v), abs=1e-9)


def test_cosine_and_alignment():
    assert cosine(np.array([1.0, 0.0]), np.array([0.0, 2.0])) == 0.0
    assert cosine(np.zeros(3), np.ones(3)) == 0.0
    probes = [(np.random.default_rng(i).standard_normal(6), i) for i in range(5)]

    def f(x, t):
        return x * (t + 1)
    assert alignment_cosine(f, f, probes) == pytest.approx(1.0, abs=1e-12)
    e1 = lambda x, t: np.array([1.0, 0.0])
    e2 = lambda x, t: np.array([0.0, 1.0])
    assert alignment_cosine(e1, e2, probes) == 0.0
    assert alignment_cosines(f, lambda x, t: -x, probes).tolist() == pytest.approx([-1.0] * 5)
    with pytest.raises(MetricError):
        alignment_cosine(f, f, [])
