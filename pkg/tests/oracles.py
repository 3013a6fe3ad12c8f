"""Slow, obviously-correct reference implementations used only by the tests."""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.integrate import quad
from scipy.stats import norm


def naive_theta_nk(xs, zs, g, kern1d, h, z_tuple):
    """Nested loops over every injective tuple; returns (theta_hat or nan, N_k)."""
    xs = np.asarray(xs, dtype=float)
    zs = np.asarray(zs, dtype=float)
    n = xs.shape[0]
    k = len(z_tuple)
    den = 0.0
    num = 0.0
    count = 0
    for sigma in itertools.permutations(range(n), k):
        w = 1.0
        for i, s in enumerate(sigma):
            u = (zs[s] - np.asarray(z_tuple[i], dtype=float)) / h
            w *= math.prod(kern1d(float(c)) for c in np.atleast_1d(u)) / h ** np.size(u)
        count += 1
        den += w
        if w != 0.0:
            num += w * float(g(*[xs[s] for s in sigma]))
    theta = num / den if den > 0 else math.nan
    return theta, den / count


def epan1d(u):
    return 0.75 * (1.0 - u * u) if abs(u) <= 1.0 else 0.0


def unif1d(u):
    return 0.5 if abs(u) <= 1.0 else 0.0


def gauss1d(u):
    return math.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi)


def nadaraya_watson(gx, zs, z, kern1d, h):
    w = np.array([kern1d((zi - z) / h) for zi in np.ravel(zs)])
    return float(np.sum(w * gx) / np.sum(w))


def grid_minimum(objective, lo=-2.0, hi=2.0, points=201):
    grid = np.linspace(lo, hi, points)
    best = math.inf
    arg = None
    for a in grid:
        for b in grid:
            val = objective(np.array([a, b]))
            if val < best:
                best, arg = val, (a, b)
    return best, np.array(arg)


def lasso_obj(X, y, beta, lam, w=None):
    w = np.ones(X.shape[1]) if w is None else np.asarray(w)
    r = y - X @ beta
    return float(r @ r / X.shape[0] + lam * np.sum(w * np.abs(beta)))


def beta_bound_second_route(c1, c2, c5, c6, c7, c8, f_min, c_k_alpha, alpha, k, p,
                            kappa, s, gamma, t, h, n, n_tuples):
    """Written out term by term, independently of the library."""
    m = n // k
    e1 = math.exp(-m * f_min**2 * h ** (k * p) / (16 * c1 + 4 * c2 * f_min))
    e2 = math.exp(-m * t**2 * h ** (k * p) / (4 * c8**2 * c6 + 2 * c8 * c7 * t))
    prob = 1 - 2 * n_tuples * (e1 + e2)
    hmax = min((f_min * math.factorial(alpha) / (4 * c_k_alpha)) ** (1 / alpha),
               (t / (2 * c5 * c8)) ** (1 / (k + alpha)))
    return prob, hmax, 4 * (gamma + 1) * t * math.sqrt(s) / kappa


def rank_prob_moments_quad(z1, z2):
    """theta, theta_11, theta_22 for 1{x1 <= x2} with X|z ~ N(z, 1), by scipy quad."""
    th = norm.cdf((z2 - z1) / math.sqrt(2.0))
    t11 = quad(lambda x: norm.cdf(z2 - x) ** 2 * norm.pdf(x - z1), -np.inf, np.inf, epsabs=1e-13)[0]
    t22 = quad(lambda x: norm.cdf(x - z1) ** 2 * norm.pdf(x - z2), -np.inf, np.inf, epsabs=1e-13)[0]
    return th, t11, t22


def truncated_density(z, radius=1.0):
    return norm.pdf(z) / (norm.cdf(radius) - norm.cdf(-radius)) if abs(z) <= radius else 0.0
