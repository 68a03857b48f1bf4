"""Independent reference computations used by the tests.

These do not call into the sampler or the guidance code: they redo the
arithmetic from scratch so the package can be checked against them.
"""
import numpy as np


def gaussian_guided_moments(sched, mu, s2, s2_weak=None, w=0.0, start=(0.0, 1.0)):
    """Exact mean/variance after a full guided ancestral pass on a 1-D Gaussian.

    Both the main and the weak epsilon are affine in x for Gaussian targets,
    so the chain stays Gaussian and its two moments propagate in closed form.
    """
    m, v = start
    for t in range(sched.T - 1, -1, -1):
        ab, a, b = sched.alpha_bar[t], sched.alpha[t], sched.beta[t]
        k_main = np.sqrt(1 - ab) / (1 - ab + ab * s2)
        slope, icept = k_main, -k_main * np.sqrt(ab) * mu
        if w:
            k_weak = np.sqrt(1 - ab) / (1 - ab + ab * s2_weak)
            slope = (1 + w) * k_main - w * k_weak
            icept = -slope * np.sqrt(ab) * mu
        g = b / np.sqrt(1 - ab)
        at = (1 - g * slope) / np.sqrt(a)
        bt = -g * icept / np.sqrt(a)
        m = at * m + bt
        v = at * at * v + (sched.sigma_sq[t] if t > 0 else 0.0)
    return m, v


def mixture_log_density(weights, means, variances, x, ab):
    """log p_t(x) by direct summation (no log-sum-exp), for moderate x."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    tot = 0.0
    for wk, mk, vk in zip(weights, means, variances):
        var = 1 - ab + ab * vk
        r2 = np.sum((x - np.sqrt(ab) * mk) ** 2)
        tot += wk * np.exp(-0.5 * r2 / var) / (2 * np.pi * var) ** (d / 2)
    return np.log(tot)


def fd_gradient(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g
