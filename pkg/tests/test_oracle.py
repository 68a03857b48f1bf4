import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import fd_gradient, mixture_log_density
from skipguide.oracle import (GaussianMixture, OracleError, eight_mode_mixture, epsilon_at,
                              guided_terminal_variance, log_density, noised_epsilon, weaken)


def random_mixture(rng, k, d):
    w = rng.uniform(0.2, 1.0, k)
    return GaussianMixture(w / w.sum(), rng.uniform(-1, 1, (k, d)), rng.uniform(0.1, 1.0, k))


def test_unit_gaussian_fixed_point(sched):
    gm = GaussianMixture(np.ones(1), np.zeros((1, 3)), np.ones(1))
    x = np.array([0.4, -1.2, 2.0])
    for t in (0, 57, 199):
        np.testing.assert_allclose(noised_epsilon(gm, x, t, sched),
                                   x * np.sqrt(1 - sched.alpha_bar[t]), rtol=1e-13)


def test_symmetric_midpoint(sched):
    gm = GaussianMixture(np.array([0.5, 0.5]), np.array([[-1.0, 0.3], [1.0, 0.3]]), np.array([0.2, 0.2]))
    x = np.array([0.0, 0.8])
    eps = noised_epsilon(gm, x, 30, sched)
    assert abs(eps[0]) < 1e-15
    assert eps[1] != 0


@pytest.mark.parametrize("d", [1, 2, 5])
def test_epsilon_matches_finite_differences(d, sched):
    rng = np.random.default_rng(d)
    gm = random_mixture(rng, 3, d)
    for _ in range(20):
        t = int(rng.integers(0, sched.T))
        ab = sched.alpha_bar[t]
        x = np.sqrt(ab) * gm.means[rng.integers(3)] + rng.normal(0, 0.7, d)
        f = lambda y: mixture_log_density(gm.weights, gm.means, gm.variances, y, ab)
        ref = -np.sqrt(1 - ab) * fd_gradient(f, x)
        eps = noised_epsilon(gm, x, t, sched)
        assert np.linalg.norm(eps - ref) <= 1e-4 * np.linalg.norm(ref)


def test_log_density_matches_direct_sum():
    rng = np.random.default_rng(0)
    gm = random_mixture(rng, 4, 3)
    x = rng.normal(size=3)
    assert log_density(gm, x, 0.7) == pytest.approx(
        mixture_log_density(gm.weights, gm.means, gm.variances, x, 0.7), rel=1e-12)


def test_far_tail_is_finite(sched):
    gm = eight_mode_mixture()
    x = np.array([[1e3, -1e3], [1e5, 0.0]])
    eps = noised_epsilon(gm, x, 0, sched)
    assert np.all(np.isfinite(eps))


def test_batched_matches_single(sched):
    gm = eight_mode_mixture()
    x = np.random.default_rng(1).normal(size=(6, 2))
    batch = noised_epsilon(gm, x, 40, sched)
    for i in range(6):
        np.testing.assert_allclose(batch[i], noised_epsilon(gm, x[i], 40, sched), rtol=1e-13)


def test_epsilon_at_bounds():
    gm = eight_mode_mixture()
    with pytest.raises(OracleError):
        epsilon_at(gm, np.zeros(2), 0.0)
    with pytest.raises(OracleError):
        epsilon_at(gm, np.zeros(3), 0.5)


def test_inflate_variance():
    gm = GaussianMixture(np.ones(1), np.array([[0.5, 1.0]]), np.ones(1))
    w = weaken(gm, "inflate_variance", 2.0)
    assert w.variances[0] == 2.0
    assert np.array_equal(w.means, gm.means)
    for c in (1.0, 0.5, None):
        with pytest.raises(OracleError):
            weaken(gm, "inflate_variance", c)


def test_merge_to_marginal():
    gm = eight_mode_mixture()
    m = weaken(gm, "merge_to_marginal")
    assert m.n_components == 8
    assert m.class_labels is None
    assert np.array_equal(m.weights, gm.weights)


def test_drop_condition():
    m = weaken(eight_mode_mixture(), "drop_condition")
    np.testing.assert_allclose(m.weights, np.full(8, 0.125))
    assert m.class_labels is None


def test_unknown_weaken_mode():
    with pytest.raises(OracleError):
        weaken(eight_mode_mixture(), "sharpen")


def test_guided_terminal_variance_examples():
    assert guided_terminal_variance(1.0, 2.0, 1.0) == pytest.approx(2.0 / 3.0, rel=1e-15)
    assert guided_terminal_variance(0.7, 3.0, 0.0) == pytest.approx(0.7)
    with pytest.raises(OracleError):
        guided_terminal_variance(1.0, 0.5, 2.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.05, 5.0), st.floats(0.0, 20.0))
def test_identical_models_cancel(s2, w):
    assert guided_terminal_variance(s2, s2, w) == pytest.approx(s2, rel=1e-12)


def test_mixture_validation():
    with pytest.raises(OracleError):
        GaussianMixture(np.array([0.5, 0.6]), np.zeros((2, 1)), np.ones(2))
    with pytest.raises(OracleError):
        GaussianMixture(np.array([0.5, 0.5]), np.zeros((2, 1)), np.array([1.0, 0.0]))
    with pytest.raises(OracleError):
        GaussianMixture(np.array([0.5, 0.5]), np.zeros((3, 1)), np.ones(2))
    with pytest.raises(OracleError):
        GaussianMixture(np.array([1.0]), np.zeros((1, 1)), np.ones(1), np.array([0, 1]))


def test_eight_mode_structure():
    gm = eight_mode_mixture()
    assert gm.n_components == 8 and gm.dim == 2
    c0, c1 = gm.conditional(0), gm.conditional(1)
    assert c0.n_components == c1.n_components == 4
    np.testing.assert_allclose(c0.weights, 0.25)
    # one class-1 mode sits on a class-0 mode and carries most of class 1's mass
    assert np.array_equal(c1.means[0], c0.means[0])
    assert c1.weights[0] > 0.9
    with pytest.raises(OracleError):
        gm.conditional(5)
    with pytest.raises(OracleError):
        weaken(gm, "merge_to_marginal").conditional(0)


def test_dict_round_trip():
    gm = eight_mode_mixture()
    back = GaussianMixture.from_dict(gm.to_dict())
    assert np.array_equal(back.means, gm.means)
    assert np.array_equal(back.weights, gm.weights)
    assert np.array_equal(back.class_labels, gm.class_labels)


def test_sample_moments():
    gm = GaussianMixture(np.ones(1), np.array([[1.0, -2.0]]), np.array([0.25]))
    x = gm.sample(20000, np.random.default_rng(0))
    np.testing.assert_allclose(x.mean(axis=0), [1.0, -2.0], atol=0.02)
    np.testing.assert_allclose(x.var(axis=0), 0.25, rtol=0.05)
