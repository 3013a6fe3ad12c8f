"""Kernel-weighted conditional U-statistics.

The estimator of ``theta(z_1, ..., z_k) = E[g(X_1..X_k) | Z_i = z_i]`` is the
ratio

    sum_sigma prod_i K_h(Z_sigma(i) - z_i) g(X_sigma(1), ..., X_sigma(k))
    ---------------------------------------------------------------------
    sum_sigma prod_i K_h(Z_sigma(i) - z_i)

with sigma running over all injective maps {1..k} -> {1..n}. Indices are
0-based throughout.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .functionals import BasisModel, UStatFunctional
from .kernels import SmoothingKernel

__all__ = [
    "ObservationSample",
    "TupleSet",
    "CondEstimate",
    "EstimatorUndefined",
    "enumerate_tuples",
    "unrank_injective",
    "compute_nk",
    "estimate_theta",
    "estimate_theta_batch",
    "estimate_theta_on_design",
    "predict_theta",
    "read_sample_csv",
    "write_sample_csv",
]

# Maximum number of tuple terms materialised at once.
CHUNK_SIZE = 1 << 20


class EstimatorUndefined(ArithmeticError):
    """Raised when a value is requested from an estimate whose denominator is zero."""


@dataclass(frozen=True)
class ObservationSample:
    xs: np.ndarray
    zs: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        zs = np.asarray(self.zs, dtype=float)
        if xs.ndim == 1:
            xs = xs[:, None]
        if zs.ndim == 1:
            zs = zs[:, None]
        if xs.shape[0] != zs.shape[0]:
            raise ValueError("xs and zs must have the same number of rows")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(zs))):
            raise ValueError("sample contains non-finite entries")
        xs.setflags(write=False)
        zs.setflags(write=False)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "zs", zs)

    @property
    def n(self) -> int:
        return self.xs.shape[0]

    @property
    def x_dim(self) -> int:
        return self.xs.shape[1]

    @property
    def z_dim(self) -> int:
        return self.zs.shape[1]


def read_sample_csv(path) -> ObservationSample:
    """Read a CSV with header ``x1..x{p_X}, z1..z{p}``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        rows = [[float(v) for v in row] for row in reader if row]
    x_cols = [i for i, h in enumerate(header) if h.startswith("x")]
    z_cols = [i for i, h in enumerate(header) if h.startswith("z")]
    if not x_cols or not z_cols:
        raise ValueError("CSV header must contain x1.. and z1.. columns")
    data = np.asarray(rows, dtype=float).reshape(-1, len(header))
    return ObservationSample(data[:, x_cols], data[:, z_cols])


def write_sample_csv(sample: ObservationSample, path) -> None:
    header = [f"x{j + 1}" for j in range(sample.x_dim)]
    header += [f"z{j + 1}" for j in range(sample.z_dim)]
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for x, z in zip(sample.xs, sample.zs):
            writer.writerow([repr(float(v)) for v in (*x, *z)])


# --------------------------------------------------------------------------
# Tuple sets


@dataclass(frozen=True)
class TupleSet:
    k: int
    base_size: int
    tuples: np.ndarray = field(repr=False)
    mode: str = "full"
    seed: int | None = None

    def __len__(self) -> int:
        return self.tuples.shape[0]

    def __iter__(self):
        return iter(map(tuple, self.tuples.tolist()))


def unrank_injective(rank: int, base_size: int, k: int) -> tuple[int, ...]:
    """The ``rank``-th injective k-tuple of ``range(base_size)`` in lexicographic order."""
    digits = []
    for i in range(k):
        block = math.perm(base_size - i - 1, k - i - 1)
        digits.append(rank // block)
        rank %= block
    remaining = list(range(base_size))
    return tuple(remaining.pop(d) for d in digits)


def enumerate_tuples(
    base_size: int,
    k: int,
    mode: str = "full",
    m: int | None = None,
    seed: int | None = None,
) -> TupleSet:
    """Injective k-tuples of ``range(base_size)``.

    ``mode`` is ``"full"`` (all ``n!/(n-k)!`` tuples), ``"increasing"`` (the
    ``C(n, k)`` increasing ones) or ``"subsample"`` (``m`` distinct tuples
    drawn without replacement from the full set, returned in lexicographic
    order; reproducible given ``seed``).
    """
    if k < 1:
        raise ValueError("k must be positive")
    if k > base_size:
        raise ValueError(f"k={k} exceeds base size {base_size}")
    import itertools

    if mode == "full":
        tuples = np.array(list(itertools.permutations(range(base_size), k)), dtype=np.int64)
    elif mode == "increasing":
        tuples = np.array(list(itertools.combinations(range(base_size), k)), dtype=np.int64)
    elif mode == "subsample":
        total = math.perm(base_size, k)
        if m is None or not 1 <= m <= total:
            raise ValueError(f"subsample size must be in [1, {total}]")
        rng = np.random.default_rng(seed)
        if total < 2**62:
            ranks = np.sort(rng.choice(total, size=m, replace=False))
        else:
            drawn: set[int] = set()
            while len(drawn) < m:
                drawn.add(int(rng.integers(0, 2**62)) % total)
            ranks = np.array(sorted(drawn), dtype=object)
        tuples = np.array([unrank_injective(int(r), base_size, k) for r in ranks], dtype=np.int64)
    else:
        raise ValueError(f"unknown tuple mode {mode!r}")
    tuples = tuples.reshape(-1, k)
    tuples.setflags(write=False)
    return TupleSet(k, base_size, tuples, mode, seed)


# --------------------------------------------------------------------------
# Core sums


@dataclass
class CondEstimate:
    value: float
    nk: float
    valid: bool
    z_tuple: np.ndarray = field(repr=False)

    def require(self) -> float:
        if not self.valid:
            raise EstimatorUndefined(
                f"normalisation N_k is zero at {self.z_tuple.tolist()}"
            )
        return self.value


def _as_tuple(z_tuple, k: int, p: int) -> np.ndarray:
    z = np.asarray(z_tuple, dtype=float)
    if z.ndim == 1 and p == 1:
        z = z[:, None]
    if z.shape != (k, p):
        raise ValueError(f"query must have shape ({k}, {p}), got {z.shape}")
    return z


def _slot_weights(sample, kernel, h, z) -> np.ndarray:
    if not h > 0:
        raise ValueError("bandwidth h must be positive")
    if kernel.dim != sample.z_dim:
        raise ValueError("kernel dimension does not match covariate dimension")
    scale = h ** -kernel.dim
    return np.stack(
        [kernel((sample.zs - z[s]) / h) * scale for s in range(z.shape[0])], axis=1
    )


def _injective_sums(weights: np.ndarray, xs: np.ndarray, g, tuple_set=None):
    """``(sum_sigma prod w, sum_sigma prod w * g)`` over injective tuples.

    Only indices with nonzero weight in a slot are visited. The sum is
    accumulated block by block along the first slot, in a fixed order.
    """
    n, k = weights.shape
    if tuple_set is not None:
        idx = np.asarray(tuple_set.tuples)
        w = np.prod(weights[idx, np.arange(k)], axis=1)
        den = float(np.sum(w))
        if g is None:
            return den, 0.0
        gv = g(*[xs[idx[:, s]] for s in range(k)])
        return den, float(np.sum(w * gv))

    supports = [np.flatnonzero(weights[:, s]) for s in range(k)]
    if any(s.size == 0 for s in supports):
        return 0.0, 0.0
    rest = math.prod(s.size for s in supports[1:])
    block = max(1, CHUNK_SIZE // max(rest, 1))
    den = 0.0
    num = 0.0
    for start in range(0, supports[0].size, block):
        grids = np.ix_(supports[0][start : start + block], *supports[1:])
        w = weights[grids[0], 0]
        for s in range(1, k):
            w = w * weights[grids[s], s]
        mask = np.ones(w.shape, dtype=bool)
        for a in range(k):
            for b in range(a + 1, k):
                mask &= grids[a] != grids[b]
        w = np.where(mask, w, 0.0)
        den += float(np.sum(w))
        if g is not None:
            gv = g(*[xs[grids[s]] for s in range(k)])
            num += float(np.sum(w * gv))
    return den, num


def _check_arity(sample, k, tuple_set):
    if sample.n < k:
        raise ValueError(f"sample size {sample.n} is smaller than k={k}")
    if tuple_set is None and k > 3:
        raise ValueError("k > 3 requires an explicit (subsampled) tuple set")
    if tuple_set is not None and (tuple_set.k != k or tuple_set.base_size != sample.n):
        raise ValueError("tuple set does not match the sample size or arity")


def compute_nk(
    sample: ObservationSample,
    kernel: SmoothingKernel,
    h: float,
    z_tuple,
    tuple_set: TupleSet | None = None,
) -> float:
    """Normalised denominator ``N_k = |I|^{-1} sum_sigma prod_i K_h(Z_sigma(i) - z_i)``.

    ``|I|`` is ``n!/(n-k)!`` for the full set, or the size of ``tuple_set``.
    """
    z = np.asarray(z_tuple, dtype=float)
    k = z.shape[0]
    z = _as_tuple(z, k, sample.z_dim)
    _check_arity(sample, k, tuple_set)
    den, _ = _injective_sums(_slot_weights(sample, kernel, h, z), sample.xs, None, tuple_set)
    count = len(tuple_set) if tuple_set is not None else math.perm(sample.n, k)
    return den / count


def estimate_theta(
    sample: ObservationSample,
    functional: UStatFunctional,
    kernel: SmoothingKernel,
    h: float,
    z_tuple,
    tuple_set: TupleSet | None = None,
) -> CondEstimate:
    """Conditional U-statistic at one query tuple; invalid when ``N_k = 0``."""
    k = functional.arity
    if functional.x_dim != sample.x_dim:
        raise ValueError("functional dimension does not match the sample")
    z = _as_tuple(z_tuple, k, sample.z_dim)
    _check_arity(sample, k, tuple_set)
    weights = _slot_weights(sample, kernel, h, z)
    den, num = _injective_sums(weights, sample.xs, functional.evaluate, tuple_set)
    count = len(tuple_set) if tuple_set is not None else math.perm(sample.n, k)
    if den > 0:
        return CondEstimate(num / den, den / count, True, z)
    return CondEstimate(math.nan, den / count, False, z)


def estimate_theta_batch(
    sample: ObservationSample,
    functional: UStatFunctional,
    kernel: SmoothingKernel,
    h: float,
    queries: Sequence,
    workers: int = 1,
    tuple_set: TupleSet | None = None,
) -> list[CondEstimate]:
    """Elementwise :func:`estimate_theta`; results do not depend on ``workers``."""

    def one(q):
        return estimate_theta(sample, functional, kernel, h, q, tuple_set)

    queries = list(queries)
    if workers <= 1 or len(queries) <= 1:
        return [one(q) for q in queries]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, queries))


def estimate_theta_on_design(
    sample: ObservationSample,
    functional: UStatFunctional,
    kernel: SmoothingKernel,
    h: float,
    z_points,
    tuple_set: TupleSet,
    block_rows: int = 512,
) -> list[CondEstimate]:
    """Estimates at every tuple of design points ``z_points[sigma]``.

    For pairs (k = 2) the weights at the ``n'`` design points are computed
    once and the numerators for all ordered pairs come from one pass over
    the ``n x n`` kernel matrix ``G[i, j] = g(X_i, X_j)``, with the diagonal
    ``i = j`` removed. Other arities fall back to per-tuple evaluation.
    """
    z_points = np.asarray(z_points, dtype=float).reshape(-1, sample.z_dim)
    k = functional.arity
    queries = z_points[np.asarray(tuple_set.tuples)]
    if k != 2:
        return estimate_theta_batch(sample, functional, kernel, h, queries)
    if sample.n < 2:
        raise ValueError("sample size is smaller than k=2")
    used = np.unique(np.asarray(tuple_set.tuples))
    weights = _slot_weights(sample, kernel, h, z_points[used])
    rows = np.flatnonzero(np.any(weights != 0, axis=1))
    w = weights[rows]
    x = sample.xs[rows]
    num = np.zeros((used.size, used.size))
    for start in range(0, rows.size, block_rows):
        sl = slice(start, start + block_rows)
        gblock = functional.evaluate(x[sl, None, :], x[None, :, :])
        num += w[sl].T @ (gblock @ w)
    gdiag = functional.evaluate(x, x)
    num -= (w * gdiag[:, None]).T @ w
    colsum = w.sum(axis=0)
    den = np.outer(colsum, colsum) - w.T @ w
    count = math.perm(sample.n, 2)
    where = {int(u): i for i, u in enumerate(used)}
    out = []
    for q, (a, b) in zip(queries, np.asarray(tuple_set.tuples)):
        d = den[where[int(a)], where[int(b)]]
        nu = num[where[int(a)], where[int(b)]]
        if d > 0:
            out.append(CondEstimate(nu / d, d / count, True, q))
        else:
            out.append(CondEstimate(math.nan, max(d, 0.0) / count, False, q))
    return out


def predict_theta(basis: BasisModel, beta, z_tuple) -> float:
    """``Lambda^{-1}(psi(z)^T beta)``."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (basis.r,):
        raise ValueError(f"beta must have length {basis.r}")
    z = _as_tuple(z_tuple, basis.k, basis.p)
    return float(basis.link.inverse(basis.evaluate(z[None])[0] @ beta))
