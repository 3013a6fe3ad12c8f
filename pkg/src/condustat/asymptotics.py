"""Asymptotic variances of conditional U-statistics and their Monte Carlo oracles.

Notation for a query ``z = (z_1, ..., z_k)`` and slots ``j, l`` (0-based):

* ``theta(z) = E[g(X_1..X_k)]`` with ``X_i ~ P(X | Z = z_i)`` independent;
* ``theta_jl(z)`` is the mean of a product of two g's sharing one draw
  ``X ~ P(X | Z = z_j)``, placed in slot ``j`` of the first and slot ``l`` of
  the second, every other slot drawn independently at its own ``z_i``;
* ``tilde_theta_jl(z, z')`` is the same with the second g's free slots
  conditioned on ``z'`` instead of ``z``;
* ``theta_jlm`` extends the sharing to three g's.

The limiting variance at one query is

    rho^2 = sum_{j,l} 1{z_j = z_l} (theta_jl - theta^2) |K|_2^2 / f_Z(z_j)

and its multi-query and design-tuple versions are ``h_matrix`` and
``tilde_h_matrix``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import ndtr, ndtri

from .functionals import Link, UStatFunctional
from .kernels import SmoothingKernel

__all__ = [
    "GenerativeModel",
    "truncated_gaussian_model",
    "MODELS",
    "get_model",
    "MCEstimate",
    "mc_conditional_moment",
    "analytic_conditional_moment",
    "AsymptoticCovariance",
    "rho_squared",
    "h_matrix",
    "tilde_h_matrix",
    "quadratic_limit_covariance",
]

DEFAULT_REPS = 100_000
_GH_NODES, _GH_WEIGHTS = hermegauss(120)
_GH_WEIGHTS = _GH_WEIGHTS / math.sqrt(2.0 * math.pi)


def _uniform_open(rng, size):
    # Keep ndtri finite: rng.random() can return exactly 0.
    u = rng.random(size)
    return np.where(u == 0.0, 2.0**-60, u)


@dataclass(frozen=True)
class GenerativeModel:
    """Joint law of ``(X, Z)`` described by samplers and optional analytic pieces.

    ``projection(name, slot, z_tuple)`` returns ``x -> E[g | X_slot = x]``
    with the other slots at their conditional laws, or ``None`` when not
    available. ``x_nodes(z)`` returns quadrature nodes and weights for
    ``P(X | Z = z)``. Both are needed for the analytic oracle mode.
    """

    name: str
    p: int
    x_dim: int
    sample_z: Callable = field(repr=False)
    sample_x_given_z: Callable = field(repr=False)
    f_z: Callable | None = field(default=None, repr=False)
    z_domain: tuple[float, float] = (-math.inf, math.inf)
    projection: Callable | None = field(default=None, repr=False)
    x_nodes: Callable | None = field(default=None, repr=False)
    theta_closed_form: Callable | None = field(default=None, repr=False)

    def sample(self, rng_z, rng_x, n):
        z = self.sample_z(rng_z, n)
        return self.sample_x_given_z(rng_x, z), z

    def theta(self, functional: UStatFunctional, z_tuple) -> float:
        """Exact conditional functional from the analytic pieces."""
        z = _tuple(z_tuple, functional.arity, self.p)
        if self.theta_closed_form is not None:
            val = self.theta_closed_form(functional.name, z)
            if val is not None:
                return float(val)
        return analytic_conditional_moment(self, functional, "theta", z)


def _tuple(z, k, p):
    z = np.asarray(z, dtype=float)
    if z.ndim == 1 and p == 1:
        z = z[:, None]
    if z.shape != (k, p):
        raise ValueError(f"expected shape ({k}, {p}), got {z.shape}")
    return z


# --------------------------------------------------------------------------
# Truncated Gaussian covariate, Gaussian location response


def _tg_projection(name, slot, z):
    z = np.asarray(z, dtype=float)[:, 0]
    if z.size != 2:
        return None
    other = z[1 - slot]
    if name == "rank_prob":
        # P(x <= X_2) = Phi(z_2 - x); P(X_1 <= x) = Phi(x - z_1)
        return (lambda x: ndtr(other - x)) if slot == 0 else (lambda x: ndtr(x - other))
    if name == "gini":
        def gini(x):
            mu = x - other
            return mu * (2.0 * ndtr(mu) - 1.0) + 2.0 * np.exp(-0.5 * mu * mu) / math.sqrt(2 * math.pi)
        return gini
    if name == "cond_variance":
        if slot == 0:
            return lambda x: x * x - x * other
        return lambda x: (other * other + 1.0) - other * x
    return None


def _tg_closed_form(name, z):
    if name == "rank_prob":
        return ndtr((z[1, 0] - z[0, 0]) / math.sqrt(2.0))
    return None


def truncated_gaussian_model(radius: float = 1.0) -> GenerativeModel:
    """``Z ~ N(0, 1)`` truncated to ``[-radius, radius]`` and ``X | Z = z ~ N(z, 1)``.

    Both draws use the inverse-CDF method, one uniform per coordinate, so a
    sample of size ``n`` is a prefix of any larger sample from the same
    generators.
    """
    lo, hi = ndtr(-radius), ndtr(radius)
    norm = hi - lo

    def sample_z(rng, n):
        return ndtri(lo + _uniform_open(rng, n) * norm)[:, None]

    def sample_x_given_z(rng, z):
        z = np.asarray(z, dtype=float).reshape(-1, 1)
        return z + ndtri(_uniform_open(rng, z.shape[0]))[:, None]

    def f_z(z):
        z = np.asarray(z, dtype=float)[..., 0]
        dens = np.exp(-0.5 * z * z) / (math.sqrt(2.0 * math.pi) * norm)
        return np.where(np.abs(z) <= radius, dens, 0.0)

    def x_nodes(z):
        return float(np.asarray(z).ravel()[0]) + _GH_NODES, _GH_WEIGHTS

    return GenerativeModel(
        name="truncated-gaussian",
        p=1,
        x_dim=1,
        sample_z=sample_z,
        sample_x_given_z=sample_x_given_z,
        f_z=f_z,
        z_domain=(-radius, radius),
        projection=_tg_projection,
        x_nodes=x_nodes,
        theta_closed_form=_tg_closed_form,
    )


def truncated_normal_rejection(rng, n: int, radius: float = 1.0) -> np.ndarray:
    """Rejection sampler for the truncated normal, used to cross-check the inverse CDF."""
    out = np.empty(0)
    while out.size < n:
        draw = rng.standard_normal(2 * (n - out.size) + 16)
        out = np.concatenate([out, draw[np.abs(draw) <= radius]])
    return out[:n]


MODELS = {"paper-sec4": truncated_gaussian_model, "truncated-gaussian": truncated_gaussian_model}


def get_model(name: str) -> GenerativeModel:
    try:
        return MODELS[name]()
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None


# --------------------------------------------------------------------------
# Conditional moments


@dataclass(frozen=True)
class MCEstimate:
    value: float
    stderr: float
    reps: int
    seed: int | None


_ARITY_FACTOR = {"theta": 1, "theta_jl": 1, "tilde_theta_jl": 2, "theta_jlm": 3}


def _draws(model, rng, z, reps):
    return model.sample_x_given_z(rng, np.repeat(z[None, :], reps, axis=0))


def mc_conditional_moment(
    model: GenerativeModel,
    functional: UStatFunctional,
    which: str,
    z_args,
    j: int = 0,
    l: int = 0,
    m: int = 0,
    reps: int = DEFAULT_REPS,
    seed: int | None = 0,
    coupled: bool = True,
) -> MCEstimate:
    """Monte Carlo estimate of ``theta``, ``theta_jl``, ``tilde_theta_jl`` or ``theta_jlm``.

    ``z_args`` holds ``k`` points for ``theta``/``theta_jl``, ``2k`` for
    ``tilde_theta_jl`` and ``3k`` for ``theta_jlm``. With ``coupled=False``
    the shared draw is replaced by independent draws at the same ``z_j``.
    """
    if reps < 2:
        raise ValueError("need at least two replications")
    if which not in _ARITY_FACTOR:
        raise ValueError(f"unknown moment {which!r}")
    k = functional.arity
    z = np.asarray(z_args, dtype=float).reshape(-1, model.p)
    expected = k * (2 if which == "tilde_theta_jl" else 3 if which == "theta_jlm" else 1)
    if z.shape[0] != expected:
        raise ValueError(f"{which} needs {expected} points, got {z.shape[0]}")
    rng = np.random.default_rng(seed)

    if which == "theta":
        xs = [_draws(model, rng, z[i], reps) for i in range(k)]
        vals = functional.evaluate(*xs)
    else:
        if which == "theta_jl":
            blocks, slots = [z, z], [j, l]
        elif which == "tilde_theta_jl":
            blocks, slots = [z[:k], z[k:]], [j, l]
        else:
            blocks, slots = [z[:k], z[k : 2 * k], z[2 * k :]], [j, l, m]
        shared = _draws(model, rng, z[j], reps)
        vals = np.ones(reps)
        for b, (block, slot) in enumerate(zip(blocks, slots)):
            xs = []
            for i in range(k):
                if i == slot:
                    use_shared = coupled or b == 0
                    xs.append(shared if use_shared else _draws(model, rng, z[j], reps))
                else:
                    xs.append(_draws(model, rng, block[i], reps))
            vals = vals * functional.evaluate(*xs)
    return MCEstimate(float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(reps)), reps, seed)


def analytic_conditional_moment(
    model: GenerativeModel,
    functional: UStatFunctional,
    which: str,
    z_args,
    j: int = 0,
    l: int = 0,
    m: int = 0,
) -> float:
    """Quadrature version of :func:`mc_conditional_moment` from slot projections."""
    if model.projection is None or model.x_nodes is None:
        raise ValueError(f"model {model.name!r} has no analytic projections")
    k = functional.arity
    z = np.asarray(z_args, dtype=float).reshape(-1, model.p)

    def proj(block, slot):
        f = model.projection(functional.name, slot, block)
        if f is None:
            raise ValueError(f"no analytic projection for {functional.name!r}")
        return f

    if which == "theta":
        nodes, weights = model.x_nodes(z[0])
        return float(weights @ proj(z[:k], 0)(nodes))
    if which == "theta_jl":
        blocks, slots = [z, z], [j, l]
    elif which == "tilde_theta_jl":
        blocks, slots = [z[:k], z[k:]], [j, l]
    elif which == "theta_jlm":
        blocks, slots = [z[:k], z[k : 2 * k], z[2 * k :]], [j, l, m]
    else:
        raise ValueError(f"unknown moment {which!r}")
    nodes, weights = model.x_nodes(z[j])
    vals = np.ones_like(nodes)
    for block, slot in zip(blocks, slots):
        vals = vals * proj(block, slot)(nodes)
    return float(weights @ vals)


# --------------------------------------------------------------------------
# Covariances


@dataclass
class AsymptoticCovariance:
    value: np.ndarray
    stderr: np.ndarray
    mode: str
    seed: int | None
    reps: int | None
    queries: np.ndarray = field(repr=False)
    thetas: np.ndarray = field(repr=False)

    @property
    def rho_sq(self) -> float:
        return float(self.value[0, 0])

    def as_dict(self) -> dict:
        return {
            "value": self.value.tolist(),
            "stderr": self.stderr.tolist(),
            "mode": self.mode,
            "seed": self.seed,
            "reps": self.reps,
            "queries": self.queries.tolist(),
            "thetas": self.thetas.tolist(),
        }


def _same(a, b, atol):
    if atol is None:
        return bool(np.array_equal(a, b))
    return bool(np.allclose(a, b, rtol=0.0, atol=atol))


def _entry_seed(seed, *counter):
    if seed is None:
        return None
    return np.random.SeedSequence(seed, spawn_key=tuple(counter))


class _Oracle:
    """Caches theta values and evaluates (tilde_)theta_jl in the chosen mode."""

    def __init__(self, model, functional, mode, reps, seed):
        if mode not in ("analytic", "mc"):
            raise ValueError("mode must be 'analytic' or 'mc'")
        self.model, self.functional, self.mode = model, functional, mode
        self.reps, self.seed = reps, seed
        self._theta = {}

    def theta(self, idx, z):
        if idx not in self._theta:
            try:
                self._theta[idx] = (self.model.theta(self.functional, z), 0.0)
            except ValueError:
                if self.mode == "analytic":
                    raise
                est = mc_conditional_moment(
                    self.model, self.functional, "theta", z, reps=self.reps,
                    seed=_entry_seed(self.seed, 0, idx),
                )
                self._theta[idx] = (est.value, est.stderr)
        return self._theta[idx]

    def pair(self, a, b, za, zb, j, l):
        args = np.concatenate([za, zb])
        if self.mode == "analytic":
            return analytic_conditional_moment(self.model, self.functional, "tilde_theta_jl", args, j, l), 0.0
        est = mc_conditional_moment(
            self.model, self.functional, "tilde_theta_jl", args, j, l,
            reps=self.reps, seed=_entry_seed(self.seed, 1, a, b, j, l),
        )
        return est.value, est.stderr


def h_matrix(
    model: GenerativeModel,
    functional: UStatFunctional,
    kernel: SmoothingKernel,
    queries,
    mode: str = "analytic",
    reps: int = DEFAULT_REPS,
    seed: int | None = 0,
    atol: float | None = None,
    link: Link | None = None,
) -> AsymptoticCovariance:
    """Limiting covariance of ``sqrt(n h^p) (theta_hat - theta)`` across query tuples.

    Built entrywise on the upper triangle and mirrored, so the result is
    exactly symmetric. Coordinate equality is exact unless ``atol`` is set.
    With ``link`` each entry is multiplied by ``Lambda'(theta_a) Lambda'(theta_b)``.
    """
    k = functional.arity
    q = np.asarray(queries, dtype=float).reshape(-1, k, model.p)
    if model.f_z is None:
        raise ValueError("model needs a covariate density")
    oracle = _Oracle(model, functional, mode, reps, seed)
    N = q.shape[0]
    thetas = np.array([oracle.theta(a, q[a])[0] for a in range(N)])
    theta_se = np.array([oracle.theta(a, q[a])[1] for a in range(N)])
    value = np.zeros((N, N))
    var = np.zeros((N, N))
    for a in range(N):
        for b in range(a, N):
            total = 0.0
            tot_var = 0.0
            for j in range(k):
                for l in range(k):
                    if not _same(q[a, j], q[b, l], atol):
                        continue
                    dens = float(model.f_z(q[a, j][None])[0])
                    if dens <= 0:
                        raise ValueError(f"covariate density vanishes at {q[a, j].tolist()}")
                    factor = kernel.l2_norm_sq / dens
                    mom, mom_se = oracle.pair(a, b, q[a], q[b], j, l)
                    total += factor * (mom - thetas[a] * thetas[b])
                    prod_se2 = (thetas[b] * theta_se[a]) ** 2 + (thetas[a] * theta_se[b]) ** 2
                    tot_var += factor**2 * (mom_se**2 + prod_se2)
            if link is not None:
                scale = float(link.derivative(thetas[a]) * link.derivative(thetas[b]))
                total *= scale
                tot_var *= scale**2
            value[a, b] = value[b, a] = total
            var[a, b] = var[b, a] = tot_var
    return AsymptoticCovariance(
        value, np.sqrt(var), mode, seed, reps if mode == "mc" else None, q, thetas
    )


def rho_squared(
    model: GenerativeModel,
    functional: UStatFunctional,
    kernel: SmoothingKernel,
    z_tuple,
    mode: str = "analytic",
    reps: int = DEFAULT_REPS,
    seed: int | None = 0,
    atol: float | None = None,
) -> AsymptoticCovariance:
    """Single-query variance; ``.rho_sq`` holds the value.

    At one query ``tilde_theta_jl(z, z)`` coincides with ``theta_jl(z)``.
    """
    z = _tuple(z_tuple, functional.arity, model.p)
    return h_matrix(model, functional, kernel, z[None], mode, reps, seed, atol)


def tilde_h_matrix(
    model: GenerativeModel,
    functional: UStatFunctional,
    kernel: SmoothingKernel,
    link: Link,
    z_points,
    tuple_set,
    mode: str = "analytic",
    reps: int = DEFAULT_REPS,
    seed: int | None = 0,
    atol: float | None = None,
) -> AsymptoticCovariance:
    """Covariance of the limiting noise vector ``W`` over the design tuples."""
    z_points = np.asarray(z_points, dtype=float).reshape(-1, model.p)
    queries = z_points[np.asarray(tuple_set.tuples)]
    return h_matrix(model, functional, kernel, queries, mode, reps, seed, atol, link)


def quadratic_limit_covariance(design: np.ndarray, tilde_h: np.ndarray) -> np.ndarray:
    """Covariance of ``argmin_u 2/m W^T Z u + 1/m |Z u|^2`` with ``W ~ N(0, H~)``.

    The minimiser is ``-(Z^T Z)^{-1} Z^T W``.
    """
    design = np.asarray(design, dtype=float)
    solve = np.linalg.solve(design.T @ design, design.T)
    return solve @ tilde_h @ solve.T
