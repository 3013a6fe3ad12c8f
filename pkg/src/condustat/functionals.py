"""U-statistic kernels g, basis families psi, link functions and identifiability."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, logit, ndtr, ndtri

__all__ = [
    "BoundedTail",
    "BernsteinTail",
    "UStatFunctional",
    "builtin_functional",
    "Link",
    "get_link",
    "identity_link",
    "logit_link",
    "probit_link",
    "BasisModel",
    "constant_basis",
    "polynomial_basis",
    "trigonometric_basis",
    "indicator_basis",
    "custom_basis",
    "concat_basis",
    "eval_basis",
    "link_apply",
    "link_inverse",
    "link_derivative",
    "IdentifiabilityReport",
    "check_identifiability",
]


# --------------------------------------------------------------------------
# U-statistic kernels


@dataclass(frozen=True)
class BoundedTail:
    c_g: float


@dataclass(frozen=True)
class BernsteinTail:
    """Conditional moment envelope ``E[|g|^l | Z=z] <= B_g(z)^l l!``."""

    b_g: Callable = field(repr=False)
    b_tilde: float


@dataclass(frozen=True)
class UStatFunctional:
    """Kernel ``g`` of arity ``k`` acting on points of R^{p_X}.

    ``evaluate`` receives ``k`` arrays, each with trailing axis ``x_dim``,
    broadcast against each other, and returns the broadcast shape without
    the trailing axis.
    """

    name: str
    arity: int
    x_dim: int
    evaluate: Callable = field(repr=False)
    tail: BoundedTail | BernsteinTail | None = None
    symmetric: bool = False

    def __call__(self, *xs) -> np.ndarray:
        if len(xs) != self.arity:
            raise ValueError(f"{self.name} takes {self.arity} arguments, got {len(xs)}")
        return self.evaluate(*[np.asarray(x, dtype=float) for x in xs])


def _rank_prob(x1, x2):
    return (x1[..., 0] <= x2[..., 0]).astype(float)


def _cond_variance(x1, x2):
    return x1[..., 0] ** 2 - x1[..., 0] * x2[..., 0]


def _cond_covariance(x1, x2):
    return x1[..., 0] * x2[..., 0] - x1[..., 0] * x2[..., 1]


def _gini(x1, x2):
    return np.abs(x1[..., 0] - x2[..., 0])


def _bernstein(params) -> BernsteinTail | None:
    b_g = params.get("b_g")
    b_tilde = params.get("b_tilde")
    if b_g is None and b_tilde is None:
        return None
    if b_g is None or b_tilde is None:
        raise ValueError("Bernstein envelope needs both b_g and b_tilde")
    if not callable(b_g):
        value = float(b_g)
        b_g = lambda *z: value  # noqa: E731
    return BernsteinTail(b_g, float(b_tilde))


def builtin_functional(name: str, **params) -> UStatFunctional:
    """Return one of ``rank_prob``, ``cond_variance``, ``cond_covariance``, ``gini``.

    ``rank_prob`` is ``1{x1 <= x2}`` with tail ``Bounded(1)``. The others are
    unbounded; pass ``b_g`` (callable or constant) and ``b_tilde`` to attach
    a Bernstein envelope, otherwise the tail model is left unset.
    """
    if name == "rank_prob":
        return UStatFunctional(name, 2, 1, _rank_prob, BoundedTail(1.0), False)
    if name == "cond_variance":
        return UStatFunctional(name, 2, 1, _cond_variance, _bernstein(params), False)
    if name == "cond_covariance":
        return UStatFunctional(name, 2, 2, _cond_covariance, _bernstein(params), False)
    if name == "gini":
        return UStatFunctional(name, 2, 1, _gini, _bernstein(params), True)
    raise ValueError(
        f"unknown functional {name!r}; choose from "
        "rank_prob, cond_variance, cond_covariance, gini"
    )


# --------------------------------------------------------------------------
# Links


@dataclass(frozen=True)
class Link:
    """Strictly increasing map from the range of theta onto R.

    ``clamp_eps`` > 0 means arguments are pushed into
    ``[lo + eps, hi - eps]`` before ``apply``/``derivative``.
    """

    name: str
    apply_fn: Callable = field(repr=False)
    inverse_fn: Callable = field(repr=False)
    derivative_fn: Callable = field(repr=False)
    domain: tuple[float, float] = (-math.inf, math.inf)
    clamp_eps: float = 0.0
    derivative_bound: float | None = None

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.domain
        if self.clamp_eps > 0:
            clamped = np.clip(x, lo + self.clamp_eps, hi - self.clamp_eps)
            return clamped, bool(np.any(clamped != x))
        if np.any((x <= lo) | (x >= hi)) and math.isfinite(lo):
            raise ValueError(f"{self.name} link argument outside ({lo}, {hi})")
        return x, False

    def apply_flagged(self, x):
        """``(Lambda(x), clamped)`` where ``clamped`` reports any clipping."""
        x, clamped = self._check(x)
        return self.apply_fn(x), clamped

    def apply(self, x):
        return self.apply_flagged(x)[0]

    def inverse(self, y):
        return self.inverse_fn(np.asarray(y, dtype=float))

    def derivative(self, x):
        x, _ = self._check(x)
        return self.derivative_fn(x)


def identity_link() -> Link:
    return Link(
        "identity",
        lambda x: x,
        lambda y: y,
        lambda x: np.ones_like(x),
        derivative_bound=1.0,
    )


def logit_link(eps: float = 1e-6, derivative_bound: float | None = None) -> Link:
    return Link(
        "logit",
        logit,
        expit,
        lambda x: 1.0 / (x * (1.0 - x)),
        (0.0, 1.0),
        eps,
        derivative_bound,
    )


def probit_link(eps: float = 1e-6, derivative_bound: float | None = None) -> Link:
    return Link(
        "probit",
        ndtri,
        ndtr,
        lambda x: math.sqrt(2.0 * math.pi) * np.exp(0.5 * ndtri(x) ** 2),
        (0.0, 1.0),
        eps,
        derivative_bound,
    )


_LINKS = {"identity": identity_link, "logit": logit_link, "probit": probit_link}


def get_link(name: str, **params) -> Link:
    try:
        return _LINKS[name](**params)
    except KeyError:
        raise ValueError(f"unknown link {name!r}; choose from {sorted(_LINKS)}") from None


# --------------------------------------------------------------------------
# Bases


@dataclass(frozen=True)
class BasisModel:
    """``r`` functions of a k-tuple of points in R^p, plus a link.

    Each element of ``functions`` maps an array of shape ``(..., k, p)`` to
    shape ``(...)``.
    """

    k: int
    p: int
    functions: tuple = field(repr=False)
    names: tuple[str, ...]
    psi_bound: float
    link: Link = field(default_factory=identity_link)

    @property
    def r(self) -> int:
        return len(self.functions)

    def with_link(self, link: Link) -> "BasisModel":
        return BasisModel(self.k, self.p, self.functions, self.names, self.psi_bound, link)

    def evaluate(self, z_tuples) -> np.ndarray:
        """Rows of psi for an array of tuples of shape ``(m, k, p)``."""
        z = np.asarray(z_tuples, dtype=float)
        if z.ndim != 3 or z.shape[1:] != (self.k, self.p):
            raise ValueError(
                f"expected tuples of shape (m, {self.k}, {self.p}), got {z.shape}"
            )
        cols = [np.broadcast_to(f(z), z.shape[:1]) for f in self.functions]
        return np.column_stack(cols) if cols else np.empty((z.shape[0], 0))


def _coordinate_names(k, p):
    if p == 1:
        return [f"z{i + 1}" for i in range(k)]
    return [f"z{i + 1}_{j + 1}" for i in range(k) for j in range(p)]


def _flat(z):
    return z.reshape(z.shape[:-2] + (-1,))


def constant_basis(k: int, p: int = 1, link: Link | None = None) -> BasisModel:
    return BasisModel(
        k, p, (lambda z: np.ones(z.shape[:-2]),), ("1",), 1.0, link or identity_link()
    )


def polynomial_basis(
    k: int,
    p: int = 1,
    degree: int = 1,
    bound: float = 1.0,
    include_constant: bool = True,
    link: Link | None = None,
) -> BasisModel:
    """All monomials of total degree <= ``degree`` in the ``k*p`` coordinates.

    ``bound`` is the sup-norm radius of the covariate domain, used for
    ``psi_bound``.
    """
    coords = _coordinate_names(k, p)
    funcs, names = [], []
    start = 0 if include_constant else 1
    for deg in range(start, degree + 1):
        for combo in itertools.combinations_with_replacement(range(k * p), deg):
            def f(z, combo=combo):
                flat = _flat(z)
                out = np.ones(flat.shape[:-1])
                for c in combo:
                    out = out * flat[..., c]
                return out

            funcs.append(f)
            names.append("*".join(coords[c] for c in combo) or "1")
    return BasisModel(
        k, p, tuple(funcs), tuple(names), max(1.0, bound) ** degree, link or identity_link()
    )


def trigonometric_basis(
    k: int,
    p: int = 1,
    max_freq: int = 1,
    scale: float = math.pi,
    include_sin: bool = True,
    include_cos: bool = True,
    include_constant: bool = False,
    link: Link | None = None,
) -> BasisModel:
    """``sin(m*scale*z_c)`` and ``cos(m*scale*z_c)`` per coordinate, m = 1..max_freq."""
    coords = _coordinate_names(k, p)
    funcs, names = [], []
    if include_constant:
        funcs.append(lambda z: np.ones(z.shape[:-2]))
        names.append("1")
    for m in range(1, max_freq + 1):
        for c in range(k * p):
            if include_sin:
                funcs.append(lambda z, c=c, m=m: np.sin(m * scale * _flat(z)[..., c]))
                names.append(f"sin({m}*{coords[c]})")
            if include_cos:
                funcs.append(lambda z, c=c, m=m: np.cos(m * scale * _flat(z)[..., c]))
                names.append(f"cos({m}*{coords[c]})")
    return BasisModel(k, p, tuple(funcs), tuple(names), 1.0, link or identity_link())


def indicator_basis(
    k: int, p: int, edges: Sequence[Sequence[float]], link: Link | None = None
) -> BasisModel:
    """Indicators of the boxes of a product grid over the ``k*p`` coordinates.

    ``edges[c]`` lists the increasing cut points of coordinate ``c``; cells
    are half-open ``[a, b)`` except the last, which is closed.
    """
    if len(edges) != k * p:
        raise ValueError(f"need {k * p} edge lists, got {len(edges)}")
    edges = [np.asarray(e, dtype=float) for e in edges]
    cells = itertools.product(*[range(len(e) - 1) for e in edges])
    funcs, names = [], []
    for cell in cells:
        def f(z, cell=cell):
            flat = _flat(z)
            out = np.ones(flat.shape[:-1], dtype=bool)
            for c, i in enumerate(cell):
                lo, hi = edges[c][i], edges[c][i + 1]
                upper = flat[..., c] <= hi if i == len(edges[c]) - 2 else flat[..., c] < hi
                out &= (flat[..., c] >= lo) & upper
            return out.astype(float)

        funcs.append(f)
        names.append("box" + str(cell))
    return BasisModel(k, p, tuple(funcs), tuple(names), 1.0, link or identity_link())


def custom_basis(
    k: int,
    p: int,
    functions: Sequence[Callable],
    psi_bound: float,
    names: Sequence[str] | None = None,
    link: Link | None = None,
) -> BasisModel:
    names = tuple(names) if names is not None else tuple(f"psi{j + 1}" for j in range(len(functions)))
    return BasisModel(k, p, tuple(functions), names, float(psi_bound), link or identity_link())


def concat_basis(*bases: BasisModel, link: Link | None = None) -> BasisModel:
    """Concatenate families; the link is taken from ``link`` or the first basis."""
    if not bases:
        raise ValueError("need at least one basis")
    k, p = bases[0].k, bases[0].p
    if any((b.k, b.p) != (k, p) for b in bases):
        raise ValueError("all bases must share k and p")
    return BasisModel(
        k,
        p,
        tuple(f for b in bases for f in b.functions),
        tuple(n for b in bases for n in b.names),
        max(b.psi_bound for b in bases),
        link or bases[0].link,
    )


def eval_basis(basis: BasisModel, z_tuple) -> np.ndarray:
    z = np.asarray(z_tuple, dtype=float)
    if z.ndim == 1 and basis.p == 1:
        z = z[:, None]
    if z.shape != (basis.k, basis.p):
        raise ValueError(f"expected a tuple of shape ({basis.k}, {basis.p}), got {z.shape}")
    return basis.evaluate(z[None])[0]


def link_apply(basis: BasisModel, x):
    return basis.link.apply(x)


def link_inverse(basis: BasisModel, y):
    return basis.link.inverse(y)


def link_derivative(basis: BasisModel, x):
    return basis.link.derivative(x)


# --------------------------------------------------------------------------
# Identifiability


@dataclass
class IdentifiabilityReport:
    rank: int
    r: int
    singular_values: np.ndarray
    smallest_singular_value: float
    identifiable: bool


def check_identifiability(
    basis: BasisModel, z_points, tuples, rtol: float = 1e-10
) -> IdentifiabilityReport:
    """Numerical rank of the matrix whose rows are psi evaluated on each tuple.

    ``tuples`` is a tuple set or an integer array ``(m, k)`` of indices into
    ``z_points``. Singular values below ``rtol`` times the largest count as zero.
    """
    tuples = np.asarray(getattr(tuples, "tuples", tuples), dtype=int)
    if tuples.size == 0:
        raise ValueError("tuple set must be nonempty")
    z_points = np.asarray(z_points, dtype=float).reshape(-1, basis.p)
    rows = basis.evaluate(z_points[tuples])
    sv = np.linalg.svd(rows, compute_uv=False)
    top = sv[0] if sv.size else 0.0
    rank = int(np.sum(sv > rtol * top)) if top > 0 else 0
    smallest = float(sv[-1]) if sv.size == basis.r else 0.0
    return IdentifiabilityReport(rank, basis.r, sv, smallest, rank == basis.r)
