"""Two-step l1-penalized regression of Lambda(theta_hat) on the basis psi."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .estimator import (
    CondEstimate,
    ObservationSample,
    TupleSet,
    estimate_theta_batch,
    estimate_theta_on_design,
)
from .functionals import BasisModel, UStatFunctional
from .kernels import SmoothingKernel

__all__ = [
    "DesignMatrix",
    "Response",
    "LassoSolution",
    "PenaltySpec",
    "KappaReport",
    "TwoStepResult",
    "build_design",
    "build_response",
    "lasso_objective",
    "kkt_residual",
    "fit_lasso",
    "fit_adaptive_lasso",
    "restricted_eigenvalue",
    "two_step_fit",
]

DEGRADED_FRACTION = 0.10


@dataclass(frozen=True)
class DesignMatrix:
    matrix: np.ndarray
    tuple_set: TupleSet
    z_points: np.ndarray = field(repr=False)

    @property
    def shape(self):
        return self.matrix.shape

    def scaled_norm(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return float(np.linalg.norm(v) / math.sqrt(v.shape[0]))


def build_design(basis: BasisModel, z_points, tuple_set: TupleSet) -> DesignMatrix:
    """Rows ``psi(z'_sigma(1), ..., z'_sigma(k))`` in tuple-set order."""
    z_points = np.asarray(z_points, dtype=float).reshape(-1, basis.p)
    if tuple_set.base_size != z_points.shape[0]:
        raise ValueError("tuple set base size differs from the number of design points")
    if tuple_set.k != basis.k:
        raise ValueError("tuple arity differs from the basis arity")
    matrix = basis.evaluate(z_points[np.asarray(tuple_set.tuples)])
    return DesignMatrix(matrix, tuple_set, z_points)


@dataclass
class Response:
    y: np.ndarray
    mask: np.ndarray
    dropped: np.ndarray
    clamped: int

    @property
    def dropped_fraction(self) -> float:
        return self.dropped.size / self.mask.size


def build_response(estimates: Sequence[CondEstimate], basis: BasisModel) -> Response:
    """``Y_i = Lambda(theta_hat_i)`` for valid estimates; invalid rows are masked out."""
    mask = np.array([e.valid for e in estimates], dtype=bool)
    if not mask.any():
        raise ValueError("every estimate is invalid; nothing to fit")
    values = np.array([e.value for e in estimates], dtype=float)[mask]
    clamped = 0
    y = np.empty_like(values)
    for i, v in enumerate(values):
        y[i], hit = basis.link.apply_flagged(v)
        clamped += hit
    return Response(y, mask, np.flatnonzero(~mask), int(clamped))


# --------------------------------------------------------------------------
# Lasso


@dataclass
class LassoSolution:
    beta: np.ndarray
    lam: float
    objective: float
    active_set: np.ndarray
    kkt_residual: float
    iterations: int
    converged: bool
    penalty_weights: np.ndarray | None = None
    forced_zero: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))
    history: list[float] = field(default_factory=list, repr=False)


def _weights(r, penalty_weights):
    if penalty_weights is None:
        return np.ones(r)
    w = np.asarray(penalty_weights, dtype=float)
    if w.shape != (r,) or np.any(w < 0):
        raise ValueError("penalty weights must be a nonnegative vector of length r")
    return w


def lasso_objective(X, y, beta, lam, penalty_weights=None) -> float:
    """``(1/m) |y - X beta|_2^2 + lam * sum_j w_j |beta_j|`` (``0 * inf`` read as 0)."""
    X = np.asarray(X, dtype=float)
    resid = y - X @ beta
    w = _weights(X.shape[1], penalty_weights)
    active = beta != 0
    return float(resid @ resid / X.shape[0] + lam * np.sum(w[active] * np.abs(beta[active])))


def kkt_residual(X, y, beta, lam, penalty_weights=None) -> float:
    """Largest violation of the subgradient optimality conditions."""
    X = np.asarray(X, dtype=float)
    m = X.shape[0]
    w = _weights(X.shape[1], penalty_weights)
    grad = 2.0 / m * (X.T @ (y - X @ beta))
    worst = 0.0
    for j in range(X.shape[1]):
        if not math.isfinite(w[j]):
            continue
        if beta[j] != 0:
            viol = abs(grad[j] - lam * w[j] * np.sign(beta[j]))
        else:
            viol = max(abs(grad[j]) - lam * w[j], 0.0)
        worst = max(worst, viol)
    return float(worst)


def _polish(X, y, beta, lam, w):
    """Solve the stationarity equations exactly on the current active set.

    Accepted only if signs are preserved, inactive coordinates still satisfy
    their subgradient bound, and the objective does not increase.
    """
    active = np.flatnonzero(beta)
    if active.size == 0:
        return None
    m = X.shape[0]
    Xa = X[:, active]
    gram = Xa.T @ Xa
    rhs = Xa.T @ y - 0.5 * m * lam * w[active] * np.sign(beta[active])
    try:
        sol = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        return None
    if np.any(np.sign(sol) != np.sign(beta[active])):
        return None
    cand = np.zeros_like(beta)
    cand[active] = sol
    return cand


def _with_roundoff(obj: float) -> float:
    # The exact active-set solution can differ from a converged iterate by an ulp.
    return obj + 1e-12 * max(1.0, abs(obj))


def fit_lasso(
    X,
    y,
    lam: float,
    penalty_weights=None,
    tol: float = 1e-8,
    step_tol: float = 1e-10,
    max_sweeps: int = 100_000,
    standardize: bool = False,
    beta0=None,
) -> LassoSolution:
    """Cyclic coordinate descent for ``(1/m)|y - X beta|^2 + lam * sum w_j |beta_j|``.

    Iterates full sweeps until the KKT residual drops below ``tol``. A sweep
    whose largest coordinate move is below ``step_tol`` but whose KKT
    residual is still above ``tol`` keeps going; the run stops early only if
    a sweep changes nothing at all. Coordinates with infinite weight are
    fixed at zero. With ``standardize`` the columns are rescaled to unit
    mean square before fitting and the coefficients mapped back.
    """
    if isinstance(X, DesignMatrix) or hasattr(X, "matrix"):
        X = X.matrix
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("design and response must be finite")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    m, r = X.shape
    w = _weights(r, penalty_weights)

    scale = np.ones(r)
    if standardize:
        scale = np.sqrt(np.mean(X * X, axis=0))
        scale[scale == 0] = 1.0
        X = X / scale

    forced = np.flatnonzero(~np.isfinite(w))
    free = np.flatnonzero(np.isfinite(w))
    beta = np.zeros(r) if beta0 is None else np.asarray(beta0, dtype=float) * scale
    beta[forced] = 0.0
    col_sq = np.einsum("ij,ij->j", X, X)
    resid = y - X @ beta
    history = [lasso_objective(X, y, beta, lam, w)]
    kkt = kkt_residual(X, y, beta, lam, w)
    sweeps = 0
    while kkt > tol and sweeps < max_sweeps:
        sweeps += 1
        biggest = 0.0
        for j in free:
            if col_sq[j] == 0:
                new = 0.0
            else:
                rho = X[:, j] @ resid + col_sq[j] * beta[j]
                thresh = 0.5 * m * lam * w[j]
                new = np.sign(rho) * max(abs(rho) - thresh, 0.0) / col_sq[j]
                new = 0.0 if new == 0 else float(new)
            delta = new - beta[j]
            if delta != 0.0:
                resid -= delta * X[:, j]
                beta[j] = new
                biggest = max(biggest, abs(delta))
        history.append(lasso_objective(X, y, beta, lam, w))
        kkt = kkt_residual(X, y, beta, lam, w)
        if kkt > tol and biggest < step_tol:
            cand = _polish(X, y, beta, lam, w)
            if cand is not None:
                cand_kkt = kkt_residual(X, y, cand, lam, w)
                cand_obj = lasso_objective(X, y, cand, lam, w)
                if cand_kkt < kkt and cand_obj <= _with_roundoff(history[-1]):
                    beta, kkt = cand, cand_kkt
                    resid = y - X @ beta
                    history.append(cand_obj)
            if biggest == 0.0:
                break

    if kkt <= tol:
        cand = _polish(X, y, beta, lam, w)
        if cand is not None:
            cand_kkt = kkt_residual(X, y, cand, lam, w)
            cand_obj = lasso_objective(X, y, cand, lam, w)
            if cand_kkt <= kkt and cand_obj <= _with_roundoff(history[-1]):
                beta, kkt = cand, cand_kkt
                history.append(cand_obj)

    beta = beta / scale
    beta[beta == 0] = 0.0
    X_orig = X * scale
    return LassoSolution(
        beta=beta,
        lam=float(lam),
        objective=lasso_objective(X_orig, y, beta, lam, w * scale),
        active_set=np.flatnonzero(beta),
        kkt_residual=kkt,
        iterations=sweeps,
        converged=kkt <= tol,
        penalty_weights=None if penalty_weights is None else w,
        forced_zero=forced,
        history=history,
    )


def fit_adaptive_lasso(
    X, y, tilde_lambda: float, delta: float, pilot_beta, **options
) -> LassoSolution:
    """Weighted Lasso with penalty ``tilde_lambda / |pilot_j|^delta`` per coordinate.

    Coordinates whose pilot coefficient is exactly zero get an infinite
    penalty and stay at zero (listed in ``forced_zero``).
    """
    if tilde_lambda <= 0 or delta <= 0:
        raise ValueError("tilde_lambda and delta must be positive")
    pilot = np.asarray(pilot_beta, dtype=float)
    if not np.all(np.isfinite(pilot)):
        raise ValueError("pilot coefficients must be finite")
    if np.all(pilot == 0):
        raise ValueError("all pilot coefficients are zero")
    with np.errstate(divide="ignore"):
        weights = np.where(pilot == 0, np.inf, np.abs(pilot) ** -delta)
    return fit_lasso(X, y, tilde_lambda, penalty_weights=weights, **options)


# --------------------------------------------------------------------------
# Restricted eigenvalue


@dataclass
class KappaReport:
    kappa: float
    lower_bound: float
    certificate: str
    direction: np.ndarray
    support: tuple[int, ...]
    s: int
    c0: float
    strategy: str


def _ratio(gram, delta):
    return math.sqrt(max(float(delta @ gram @ delta), 0.0)) / float(np.linalg.norm(delta))


def _in_cone(delta, support, c0, slack=1e-9):
    mask = np.zeros(delta.size, dtype=bool)
    mask[list(support)] = True
    return np.sum(np.abs(delta[~mask])) <= c0 * np.sum(np.abs(delta[mask])) + slack


def _cone_minimize(gram, support, signs, c0, starts):
    """Local minimisation of the Rayleigh quotient on one signed cone piece.

    Variables ``(d_J, a, b)`` with ``d_{J^c} = a - b``; all constraints are
    linear except the unit-sphere equality.
    """
    r = gram.shape[0]
    J = list(support)
    Jc = [j for j in range(r) if j not in support]
    s, q = len(J), len(Jc)

    def unpack(v):
        d = np.zeros(r)
        d[J] = v[:s]
        d[Jc] = v[s : s + q] - v[s + q :]
        return d

    def fun(v):
        d = unpack(v)
        return float(d @ gram @ d)

    def jac(v):
        g = 2.0 * gram @ unpack(v)
        return np.concatenate([g[J], g[Jc], -g[Jc]])

    cons = [
        {"type": "eq", "fun": lambda v: float(unpack(v) @ unpack(v)) - 1.0,
         "jac": lambda v: np.concatenate([2 * unpack(v)[J], 2 * unpack(v)[Jc], -2 * unpack(v)[Jc]])},
        {"type": "ineq",
         "fun": lambda v: c0 * float(signs @ v[:s]) - float(np.sum(v[s:])),
         "jac": lambda v: np.concatenate([c0 * signs, -np.ones(2 * q)])},
    ]
    bounds = [(0, None) if sg > 0 else (None, 0) for sg in signs] + [(0, None)] * (2 * q)
    best = None
    for d0 in starts:
        v0 = np.concatenate([d0[J], np.maximum(d0[Jc], 0), np.maximum(-d0[Jc], 0)])
        res = minimize(fun, v0, jac=jac, bounds=bounds, constraints=cons, method="SLSQP",
                       options={"maxiter": 500, "ftol": 1e-14})
        d = unpack(res.x)
        if np.linalg.norm(d) == 0 or not _in_cone(d, support, c0, 1e-7):
            continue
        val = _ratio(gram, d)
        if best is None or val < best[0]:
            best = (val, d / np.linalg.norm(d))
    return best


def restricted_eigenvalue(
    X,
    s: int,
    c0: float,
    strategy: str = "exhaustive",
    n_samples: int = 20_000,
    seed: int | None = 0,
) -> KappaReport:
    """Estimate ``kappa(s, c0)`` for the scaled norm ``|X d|_2 / sqrt(m)``.

    ``exhaustive`` (r <= 12) runs a local constrained minimisation on every
    support of size ``s`` and sign pattern; ``sampled`` evaluates random
    feasible directions. Both return feasible directions, so ``kappa`` is an
    upper bound on the true constant. ``lower_bound`` is the smallest
    singular value of the scaled design, valid for every cone. The
    certificate is ``"exact"`` when the two meet, else ``"upper_bound"``.
    """
    if hasattr(X, "matrix"):
        X = X.matrix
    X = np.asarray(X, dtype=float)
    m, r = X.shape
    if not 1 <= s <= r:
        raise ValueError(f"s must lie in [1, {r}]")
    if c0 <= 0:
        raise ValueError("c0 must be positive")
    gram = X.T @ X / m
    evals, evecs = np.linalg.eigh(gram)
    lower = math.sqrt(max(evals[0], 0.0))
    rng = np.random.default_rng(seed)

    best_val, best_dir, best_sup = math.inf, None, ()
    if strategy == "exhaustive":
        if r > 12:
            raise ValueError("exhaustive strategy is limited to r <= 12")
        v_min = evecs[:, 0]
        for support in itertools.combinations(range(r), s):
            # delta -> -delta leaves the ratio unchanged: fix the first sign.
            for tail in itertools.product((1.0, -1.0), repeat=s - 1):
                signs = np.array((1.0,) + tail)
                starts = []
                for cand in (v_min, -v_min):
                    if np.all(np.sign(cand[list(support)]) * signs >= 0) and _in_cone(cand, support, c0):
                        starts.append(cand)
                d0 = np.zeros(r)
                d0[list(support)] = signs / math.sqrt(s)
                starts.append(d0)
                for _ in range(2):
                    d = np.zeros(r)
                    d[list(support)] = signs * rng.uniform(0.2, 1.0, s)
                    rest = [j for j in range(r) if j not in support]
                    if rest:
                        noise = rng.normal(size=len(rest))
                        budget = c0 * np.sum(np.abs(d)) * rng.uniform(0.0, 1.0)
                        d[rest] = noise / max(np.sum(np.abs(noise)), 1e-300) * budget
                    starts.append(d / np.linalg.norm(d))
                found = _cone_minimize(gram, support, signs, c0, starts)
                if found is not None and found[0] < best_val:
                    best_val, best_dir, best_sup = found[0], found[1], support
    elif strategy == "sampled":
        for _ in range(n_samples):
            support = tuple(sorted(rng.choice(r, size=s, replace=False)))
            d = np.zeros(r)
            d[list(support)] = rng.normal(size=s)
            rest = [j for j in range(r) if j not in support]
            if rest:
                noise = rng.normal(size=len(rest))
                budget = c0 * np.sum(np.abs(d)) * rng.uniform(0.0, 1.0)
                d[rest] = noise / max(np.sum(np.abs(noise)), 1e-300) * budget
            val = _ratio(gram, d)
            if val < best_val:
                best_val, best_dir, best_sup = val, d / np.linalg.norm(d), support
    else:
        raise ValueError(f"unknown strategy {strategy!r}")

    exact = best_val - lower <= 1e-8 * max(1.0, lower)
    return KappaReport(
        kappa=float(best_val),
        lower_bound=lower,
        certificate="exact" if exact else "upper_bound",
        direction=best_dir,
        support=best_sup,
        s=s,
        c0=c0,
        strategy=strategy,
    )


# --------------------------------------------------------------------------
# Two-step procedure


@dataclass(frozen=True)
class PenaltySpec:
    """Plain Lasso (``lam``) or adaptive Lasso (``tilde_lambda``, ``delta``).

    The adaptive pilot is the plain fit at ``pilot_lambda``.
    """

    lam: float = 0.0
    adaptive: bool = False
    tilde_lambda: float = 0.0
    delta: float = 1.0
    pilot_lambda: float = 0.0


@dataclass
class TwoStepResult:
    solution: LassoSolution
    estimates: list[CondEstimate]
    response: Response
    design: DesignMatrix
    pilot: LassoSolution | None = None
    predictions: np.ndarray | None = None

    @property
    def degraded(self) -> bool:
        return self.response.dropped_fraction > DEGRADED_FRACTION


def two_step_fit(
    sample: ObservationSample,
    functional: UStatFunctional,
    kernel: SmoothingKernel,
    h: float,
    basis: BasisModel,
    z_points,
    tuple_set: TupleSet,
    penalty: PenaltySpec = PenaltySpec(),
    predict_queries=None,
    estimates: Sequence[CondEstimate] | None = None,
    workers: int = 1,
) -> TwoStepResult:
    """Estimate theta on every design tuple, then fit the penalized regression.

    ``estimates`` may be supplied to skip the first step (they must follow
    the tuple-set order).
    """
    design = build_design(basis, z_points, tuple_set)
    if estimates is None:
        if functional.arity == 2:
            estimates = estimate_theta_on_design(sample, functional, kernel, h, design.z_points, tuple_set)
        else:
            queries = design.z_points[np.asarray(tuple_set.tuples)]
            estimates = estimate_theta_batch(sample, functional, kernel, h, queries, workers)
    response = build_response(estimates, basis)
    X = design.matrix[response.mask]
    pilot = None
    if penalty.adaptive:
        pilot = fit_lasso(X, response.y, penalty.pilot_lambda)
        solution = fit_adaptive_lasso(X, response.y, penalty.tilde_lambda, penalty.delta, pilot.beta)
    else:
        solution = fit_lasso(X, response.y, penalty.lam)
    predictions = None
    if predict_queries is not None:
        q = np.asarray(predict_queries, dtype=float).reshape(-1, basis.k, basis.p)
        predictions = basis.link.inverse(basis.evaluate(q) @ solution.beta)
    return TwoStepResult(solution, list(estimates), response, design, pilot, predictions)
