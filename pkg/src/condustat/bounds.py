"""Finite-sample constants and exponential probability bounds.

Every probability lower bound is returned as a :class:`BoundValue` holding
the raw formula value (possibly negative) and its clamp to ``[0, 1]``.
``[n/k]`` is read as ``floor(n / k)``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .kernels import SmoothingKernel

__all__ = [
    "BoundPreconditionError",
    "BoundValue",
    "BoundConstants",
    "DerivedConstants",
    "derive_constants",
    "worked_example_constants",
    "PRESETS",
    "berk_bound",
    "nk_deviation_bound",
    "existence_probability",
    "min_sample_size_for_existence",
    "closed_form_existence_threshold",
    "theta_deviation_bound",
    "beta_error_bound",
    "kernel_holder_constant",
    "truncated_gaussian_holder_constant",
]

SEARCH_MAX_N = 10**9


class BoundPreconditionError(ValueError):
    """A bound was requested outside the parameter region where it holds."""


@dataclass(frozen=True)
class BoundValue:
    raw: float
    clamped: float
    vacuous: bool
    flags: tuple[str, ...] = ()
    formula: str = ""

    @classmethod
    def lower(cls, raw: float, flags=(), formula: str = "") -> "BoundValue":
        clamped = min(max(raw, 0.0), 1.0)
        return cls(raw, clamped, clamped == 0.0, tuple(flags), formula)

    def as_dict(self) -> dict:
        return {
            "raw": self.raw,
            "clamped": self.clamped,
            "vacuous": self.vacuous,
            "flags": list(self.flags),
            "formula": self.formula,
        }


@dataclass(frozen=True)
class BoundConstants:
    """Model constants entering the bounds.

    ``c_k_alpha_prime`` and ``c_g_f_alpha`` are only needed by the theta and
    beta bounds; ``c_psi`` and ``c_lambda_prime`` only by the beta bound.
    Supply ``c_g`` for a bounded kernel g, or ``b_gz`` and ``b_tilde`` for
    the conditional Bernstein regime.
    """

    k: int
    p: int
    alpha: int
    f_min: float
    f_max: float
    c_k: float
    l2_k: float
    c_k_alpha: float
    c_k_alpha_prime: float | None = None
    c_g_f_alpha: float | None = None
    c_g: float | None = None
    b_gz: float | None = None
    b_tilde: float | None = None
    c_psi: float | None = None
    c_lambda_prime: float | None = None

    @property
    def regime(self) -> str | None:
        if self.c_g is not None:
            return "bounded"
        if self.b_gz is not None and self.b_tilde is not None:
            return "bernstein"
        return None


@dataclass(frozen=True)
class DerivedConstants:
    raw: BoundConstants
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float | None
    c6: float | None
    c7: float | None
    c6_tilde: float | None
    c7_tilde: float | None
    c8: float | None

    def c6_c7(self) -> tuple[float, float]:
        """The pair for the declared tail regime (bounded wins if both are set)."""
        if self.c6 is not None:
            return self.c6, self.c7
        if self.c6_tilde is not None:
            return self.c6_tilde, self.c7_tilde
        raise BoundPreconditionError("no tail model: set c_g or (b_gz, b_tilde)")

    def as_dict(self) -> dict:
        out = {k: getattr(self, k) for k in
               ("c1", "c2", "c3", "c4", "c5", "c6", "c7", "c6_tilde", "c7_tilde", "c8")}
        return out


def _positive(name, value):
    if value is not None and not value > 0:
        raise ValueError(f"{name} must be positive, got {value}")


def derive_constants(c: BoundConstants) -> DerivedConstants:
    for name in ("f_min", "f_max", "c_k", "l2_k", "c_k_alpha", "c_k_alpha_prime",
                 "c_g_f_alpha", "c_g", "b_tilde", "c_psi", "c_lambda_prime"):
        _positive(name, getattr(c, name))
    if c.b_gz is not None and c.b_gz < 0:
        raise ValueError("b_gz must be nonnegative")
    if c.f_min > c.f_max:
        raise ValueError(f"f_min={c.f_min} exceeds f_max={c.f_max}")
    k, a = c.k, c.alpha
    fact = math.factorial(a)
    c1 = 2.0 * c.f_max**k * c.l2_k**k
    c2 = (4.0 / 3.0) * c.c_k**k
    c4 = 4.0 * c.f_max**k * c.f_min ** (-2 * k)
    c3 = c4 * c.c_k_alpha / fact
    c5 = None
    if c.c_g_f_alpha is not None and c.c_k_alpha_prime is not None:
        c5 = c.c_g_f_alpha * c.c_k_alpha_prime * c.f_min ** (-k) / fact
    c6 = c7 = c6t = c7t = None
    if c.c_g is not None:
        c6 = 2.0 * c.c_g**2 * c.f_max**k * c.f_min ** (-2 * k) * c.l2_k**k
        c7 = (8.0 / 3.0) * c.c_k**k * c.c_g**k * c.f_min ** (-k)
    if c.b_gz is not None and c.b_tilde is not None:
        b = c.b_gz + c.b_tilde
        c6t = 128.0 * b**2 * c.c_k ** (2 * k - 1) * c.f_min ** (-2 * k)
        c7t = 2.0 * b * c.c_k**k * c.f_min ** (-k)
    c8 = None
    if c.c_psi is not None and c.c_lambda_prime is not None:
        c8 = c.c_psi * c.c_lambda_prime * (1.0 + c4 * c.f_min / 2.0)
    return DerivedConstants(c, c1, c2, c3, c4, c5, c6, c7, c6t, c7t, c8)


def _as_derived(c) -> DerivedConstants:
    return c if isinstance(c, DerivedConstants) else derive_constants(c)


# --------------------------------------------------------------------------
# Constants of the truncated-Gaussian worked example


def kernel_holder_constant(kernel: SmoothingKernel, k: int, alpha: int, resolution: int = 200_000) -> float:
    """``sum_{m_1+..+m_k=alpha} multinom(alpha; m) prod_i int K(u) u^{m_i} |u| du`` for p = 1.

    Compositions run over nonnegative ``m_i``. Moments by midpoint rule
    over the kernel support (or truncation radius).
    """
    if kernel.dim != 1:
        raise ValueError("only implemented for univariate kernels")
    radius = kernel.support_radius if kernel.compact else kernel.truncation
    step = 2.0 * radius / resolution
    u = -radius + step * (np.arange(resolution) + 0.5)
    ku = kernel.univariate(u)
    mom = [float(np.sum(ku * u**m * np.abs(u)) * step) for m in range(alpha + 1)]
    total = 0.0

    def compositions(remaining, slots):
        if slots == 1:
            yield (remaining,)
            return
        for first in range(remaining + 1):
            for rest in compositions(remaining - first, slots - 1):
                yield (first,) + rest

    for ms in compositions(alpha, k):
        coef = math.factorial(alpha) / math.prod(math.factorial(m) for m in ms)
        total += coef * math.prod(mom[m] for m in ms)
    return total


@functools.lru_cache(maxsize=None)
def truncated_gaussian_holder_constant(k: int = 2, g_range: float = 1.0, radius: float = 1.0) -> float:
    """Upper bound on the Hoelder-type constant for ``X | Z=z ~ N(z, 1)``, Z truncated normal.

    With ``alpha = k`` every part ``m_i`` equals 1 and the integrand is
    bounded by ``prod_i |g - theta| |u_i| sup_z |d^2/dz^2 f_XZ(x_i, z)|``,
    giving ``(g_range * M)^k`` with ``M = int sup_{|z|<=radius} |d^2 f_XZ/dz^2|(x, z) dx``.
    """
    norm = 1.0 - 2.0 * ndtr(-radius)
    x = np.linspace(-12.0, 12.0, 4_801)
    z = np.linspace(-radius, radius, 801)
    xx, zz = np.meshgrid(x, z, indexing="ij")
    dens = np.exp(-0.5 * zz**2 - 0.5 * (xx - zz) ** 2) / (2.0 * math.pi * norm)
    second = np.abs(dens * ((xx - 2.0 * zz) ** 2 - 2.0))
    sup_z = second.max(axis=1)
    m = float(np.sum(sup_z) * (x[1] - x[0]))
    return (g_range * m) ** k


def worked_example_constants(**overrides) -> BoundConstants:
    """Epanechnikov kernel, Z ~ N(0,1) truncated to [-1,1], k=2, p=1, alpha=2, C_g=1.

    ``c_k_alpha``, ``f_min`` and ``f_max`` are the published values; the two
    Hoelder constants are computed by :func:`kernel_holder_constant` and
    :func:`truncated_gaussian_holder_constant`.
    """
    from .kernels import epanechnikov

    base = dict(
        k=2,
        p=1,
        alpha=2,
        f_min=0.35,
        f_max=0.59,
        c_k=0.75,
        l2_k=0.6,
        c_k_alpha=0.2,
        c_k_alpha_prime=kernel_holder_constant(epanechnikov(), 2, 2),
        c_g_f_alpha=truncated_gaussian_holder_constant(2),
        c_g=1.0,
        c_psi=1.0,
        c_lambda_prime=1.0,
    )
    base.update(overrides)
    return BoundConstants(**base)


PRESETS = {"paper-sec4": worked_example_constants}


# --------------------------------------------------------------------------
# Bounds


def berk_bound(n: int, k: int, sigma_sq: float, b_minus_theta: float, t: float) -> float:
    """Upper bound on ``P(U_n - theta >= t)`` for a U-statistic of a kernel bounded above by ``b``."""
    if not t > 0:
        raise ValueError("t must be positive")
    if sigma_sq < 0:
        raise ValueError("sigma_sq must be nonnegative")
    if n < k:
        raise ValueError("n must be at least k")
    return math.exp(-(n // k) * t * t / (2.0 * sigma_sq + (2.0 / 3.0) * b_minus_theta * t))


@dataclass(frozen=True)
class DeviationBound:
    epsilon: float
    prob_lower: BoundValue

    def as_dict(self) -> dict:
        return {"epsilon": self.epsilon, "prob_lower": self.prob_lower.as_dict()}


def _exp_term(n, k, h, p, num, den):
    return math.exp(-(n // k) * num * h ** (k * p) / den)


def nk_deviation_bound(c, n: int, h: float, t: float) -> DeviationBound:
    """``P(|N_k - prod f_Z(z_i)| <= C_{K,a} h^a / a! + t) >= 1 - 2 exp(...)``."""
    d = _as_derived(c)
    raw = d.raw
    if not (t > 0 and h > 0):
        raise ValueError("t and h must be positive")
    eps = raw.c_k_alpha * h**raw.alpha / math.factorial(raw.alpha) + t
    prob = 1.0 - 2.0 * _exp_term(n, raw.k, h, raw.p, t * t, d.c1 + d.c2 * t)
    return DeviationBound(
        eps,
        BoundValue.lower(prob, formula="1 - 2 exp(-[n/k] t^2 h^{kp} / (C1 + C2 t))"),
    )


def existence_probability(c, n: int, h: float) -> BoundValue:
    """Lower bound on ``P(N_k > 0)``.

    Requires ``C_{K,a} h^a / a! < f_min``. When ``f_min < 1`` and ``k > 1``
    the flag ``kth_power_stricter`` notes that the same condition written
    with ``f_min^k`` would be stricter.
    """
    d = _as_derived(c)
    raw = d.raw
    if not h > 0:
        raise ValueError("h must be positive")
    bias = raw.c_k_alpha * h**raw.alpha / math.factorial(raw.alpha)
    if not bias < raw.f_min:
        raise BoundPreconditionError(
            f"C_K,alpha h^alpha / alpha! = {bias:.4g} must be below f_min = {raw.f_min}"
        )
    gap = raw.f_min - bias
    prob = 1.0 - 2.0 * _exp_term(n, raw.k, h, raw.p, gap * gap, d.c1 + d.c2 * gap)
    flags = []
    if raw.f_min < 1.0 and raw.k > 1:
        flags.append("kth_power_stricter")
        if not bias < raw.f_min**raw.k:
            flags.append("kth_power_condition_violated")
    return BoundValue.lower(
        prob, flags,
        "1 - 2 exp(-[n/k] h^{kp} (f_min - C_{K,a} h^a/a!)^2 / (C1 + C2 (f_min - C_{K,a} h^a/a!)))",
    )


def min_sample_size_for_existence(c, h: float, target_prob: float) -> int:
    """Smallest ``n >= k`` whose existence bound reaches ``target_prob`` (integer bisection)."""
    if not 0 < target_prob < 1:
        raise ValueError("target probability must lie in (0, 1)")
    d = _as_derived(c)
    k = d.raw.k
    if existence_probability(d, k, h).raw >= target_prob:
        return k
    if existence_probability(d, SEARCH_MAX_N, h).raw < target_prob:
        raise BoundPreconditionError(f"target not reached for n <= {SEARCH_MAX_N}")
    lo, hi = k, SEARCH_MAX_N
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if existence_probability(d, mid, h).raw >= target_prob:
            hi = mid
        else:
            lo = mid
    return hi


def closed_form_existence_threshold(h: float) -> float:
    """Published sample-size threshold ``3 (0.52 + 1.5 a) / (h^2 a^2)``, ``a = 0.35 - 0.1 h^2``.

    Kept for comparison with :func:`min_sample_size_for_existence`; the
    factor 3 corresponds to ``2 exp(-3) ~ 0.0996``, i.e. a 0.90 guarantee,
    not 0.99.
    """
    a = 0.35 - 0.1 * h * h
    return 3.0 * (0.52 + 1.5 * a) / (h * h * a * a)


def theta_deviation_bound(c, n: int, h: float, t: float, t_prime: float) -> DeviationBound:
    """Exponential bound on ``|theta_hat - theta|`` at a fixed query.

    Requires ``C_{K,a} h^a / a! + t < f_min / 2``. Uses ``(C6, C7)`` if
    ``c_g`` is set, otherwise the Bernstein pair at ``b_gz``.
    """
    d = _as_derived(c)
    raw = d.raw
    if not (t > 0 and t_prime > 0 and h > 0):
        raise ValueError("t, t_prime and h must be positive")
    if d.c5 is None:
        raise BoundPreconditionError("c_g_f_alpha and c_k_alpha_prime are required")
    bias = raw.c_k_alpha * h**raw.alpha / math.factorial(raw.alpha)
    if not bias + t < raw.f_min / 2.0:
        raise BoundPreconditionError(
            f"C_K,alpha h^alpha/alpha! + t = {bias + t:.4g} must be below f_min/2 = {raw.f_min / 2}"
        )
    c6, c7 = d.c6_c7()
    eps = (1.0 + d.c3 * h**raw.alpha + d.c4 * t) * (d.c5 * h ** (raw.k + raw.alpha) + t_prime)
    prob = (
        1.0
        - 2.0 * _exp_term(n, raw.k, h, raw.p, t * t, d.c1 + d.c2 * t)
        - 2.0 * _exp_term(n, raw.k, h, raw.p, t_prime**2, c6 + c7 * t_prime)
    )
    regime = "bounded" if d.c6 is not None else "bernstein"
    return DeviationBound(eps, BoundValue.lower(prob, (regime,), "1 - 2exp(..C1,C2..) - 2exp(..C6,C7..)"))


@dataclass(frozen=True)
class BetaErrorBound:
    h_ok: bool
    h_max: float
    pred_bound: float
    est_bound: dict[float, float] = field(default_factory=dict)
    prob_lower: BoundValue | None = None

    def as_dict(self) -> dict:
        return {
            "h_ok": self.h_ok,
            "h_max": self.h_max,
            "pred_bound": self.pred_bound,
            "est_bound": {str(q): v for q, v in self.est_bound.items()},
            "prob_lower": self.prob_lower.as_dict() if self.prob_lower else None,
        }


def beta_error_bound(
    c,
    kappa: float,
    s: int,
    gamma: float,
    t: float,
    h: float,
    n: int,
    n_tuples: int | None = None,
    b_g_per_tuple: Sequence[float] | None = None,
    qs: Sequence[float] = (1.0, 1.5, 2.0),
) -> BetaErrorBound:
    """Prediction and estimation error bounds for the penalized fit with ``lambda = gamma t``.

    Either ``n_tuples`` (bounded g: every tuple shares ``C6, C7``) or
    ``b_g_per_tuple`` (Bernstein: one ``B_g`` value per design tuple, with
    ``C_{6,sigma}`` built from ``C_K^{2k}``) must be given.
    """
    d = _as_derived(c)
    raw = d.raw
    if gamma < 4:
        raise ValueError("gamma must be at least 4")
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    if not (t > 0 and h > 0):
        raise ValueError("t and h must be positive")
    if d.c5 is None or d.c8 is None:
        raise BoundPreconditionError("C5 and C8 need c_g_f_alpha, c_k_alpha_prime, c_psi, c_lambda_prime")
    a, k, p = raw.alpha, raw.k, raw.p
    h1 = (raw.f_min * math.factorial(a) / (4.0 * raw.c_k_alpha)) ** (1.0 / a)
    h2 = (t / (2.0 * d.c5 * d.c8)) ** (1.0 / (k + a))
    h_max = min(h1, h2)

    if b_g_per_tuple is not None:
        pairs = []
        for b in b_g_per_tuple:
            tot = b + raw.b_tilde
            pairs.append((
                128.0 * tot**2 * raw.c_k ** (2 * k) * raw.f_min ** (-2 * k),
                2.0 * tot * raw.c_k**k * raw.f_min ** (-k),
            ))
    else:
        if n_tuples is None:
            raise ValueError("give n_tuples or b_g_per_tuple")
        pairs = [d.c6_c7()] * n_tuples

    first = _exp_term(n, k, h, p, raw.f_min**2, 16.0 * d.c1 + 4.0 * d.c2 * raw.f_min)
    total = 0.0
    for c6, c7 in pairs:
        total += first + _exp_term(n, k, h, p, t * t, 4.0 * d.c8**2 * c6 + 2.0 * d.c8 * c7 * t)
    prob = 1.0 - 2.0 * total
    flags = () if h <= h_max else ("h_condition_violated",)
    est = {float(q): 4.0 ** (2.0 / q) * (gamma + 1.0) * t * s ** (1.0 / q) / kappa**2 for q in qs}
    return BetaErrorBound(
        h_ok=h <= h_max,
        h_max=h_max,
        pred_bound=4.0 * (gamma + 1.0) * t * math.sqrt(s) / kappa,
        est_bound=est,
        prob_lower=BoundValue.lower(prob, flags, "1 - 2 sum_sigma [exp(..) + exp(..)]"),
    )
