"""Smoothing kernels on R^p built as tensor products of univariate kernels."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "SmoothingKernel",
    "KernelMomentReport",
    "epanechnikov",
    "uniform",
    "gaussian",
    "get_kernel",
    "kernel_eval",
    "scaled_kernel_eval",
    "kernel_weights",
    "verify_kernel_order",
]

GAUSSIAN_TRUNCATION = 6.0


def _epanechnikov_1d(u):
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)


def _gaussian_1d(u):
    u = np.asarray(u, dtype=float)
    return np.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi)


def _make_uniform_1d(half_width: float):
    height = 1.0 / (2.0 * half_width)

    def _uniform_1d(u):
        u = np.asarray(u, dtype=float)
        return np.where(np.abs(u) <= half_width, height, 0.0)

    return _uniform_1d


@dataclass(frozen=True)
class SmoothingKernel:
    """Product kernel ``K(u) = prod_i k(u_i)`` on R^p.

    ``sup_bound`` and ``l2_norm_sq`` are the p-th powers of the univariate
    constants. ``support_radius`` is measured in the sup-norm and is
    ``math.inf`` for kernels without compact support; such kernels carry a
    ``truncation`` radius used by the moment checks.
    """

    name: str
    univariate: Callable = field(repr=False)
    dim: int = 1
    order: int = 2
    sup_bound_1d: float = 1.0
    l2_norm_sq_1d: float = 1.0
    support_radius: float = 1.0
    truncation: float | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("kernel dimension must be a positive integer")

    @property
    def sup_bound(self) -> float:
        return self.sup_bound_1d**self.dim

    @property
    def l2_norm_sq(self) -> float:
        return self.l2_norm_sq_1d**self.dim

    @property
    def compact(self) -> bool:
        return math.isfinite(self.support_radius)

    def __call__(self, u) -> np.ndarray:
        """Evaluate on an array whose last axis has length ``dim``."""
        u = np.asarray(u, dtype=float)
        if u.ndim == 0 or u.shape[-1] != self.dim:
            raise ValueError(
                f"expected last axis of length {self.dim}, got shape {u.shape}"
            )
        return np.prod(self.univariate(u), axis=-1)


def epanechnikov(dim: int = 1) -> SmoothingKernel:
    return SmoothingKernel(
        "epanechnikov", _epanechnikov_1d, dim, 2, 0.75, 0.6, 1.0
    )


def uniform(dim: int = 1, half_width: float = 1.0) -> SmoothingKernel:
    """Box kernel on ``[-half_width, half_width]^dim``."""
    if half_width <= 0:
        raise ValueError("half_width must be positive")
    height = 1.0 / (2.0 * half_width)
    return SmoothingKernel(
        "uniform", _make_uniform_1d(half_width), dim, 2, height, height, half_width
    )


def gaussian(dim: int = 1, truncation: float = GAUSSIAN_TRUNCATION) -> SmoothingKernel:
    return SmoothingKernel(
        "gaussian",
        _gaussian_1d,
        dim,
        2,
        1.0 / math.sqrt(2.0 * math.pi),
        1.0 / (2.0 * math.sqrt(math.pi)),
        math.inf,
        truncation,
    )


_KERNELS = {"epanechnikov": epanechnikov, "uniform": uniform, "gaussian": gaussian}


def get_kernel(name: str, dim: int = 1, **params) -> SmoothingKernel:
    """Look up a kernel by name (``epanechnikov``, ``uniform``, ``gaussian``)."""
    try:
        factory = _KERNELS[name.lower()]
    except KeyError:
        raise ValueError(
            f"unknown kernel {name!r}; choose from {sorted(_KERNELS)}"
        ) from None
    return factory(dim=dim, **params)


def kernel_eval(kernel: SmoothingKernel, u) -> float:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape != (kernel.dim,):
        raise ValueError(f"expected a point of dimension {kernel.dim}, got {u.shape}")
    return float(kernel(u))


def scaled_kernel_eval(kernel: SmoothingKernel, h: float, u) -> float:
    """``K_h(u) = h^{-p} K(u / h)``."""
    if not h > 0:
        raise ValueError("bandwidth h must be positive")
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return kernel_eval(kernel, u / h) / h**kernel.dim


def kernel_weights(kernel: SmoothingKernel, h: float, zs, z) -> np.ndarray:
    """Vector of ``K_h(Z_i - z)`` over the rows of ``zs`` (shape ``(n, p)``)."""
    if not h > 0:
        raise ValueError("bandwidth h must be positive")
    zs = np.asarray(zs, dtype=float)
    z = np.asarray(z, dtype=float).reshape(1, -1)
    return kernel((zs - z) / h) / h**kernel.dim


@dataclass
class KernelMomentReport:
    integral: float
    moments: dict[tuple[int, ...], float]
    l2_norm_sq: float
    order: int
    tol: float
    passed: bool
    low_confidence: bool
    resolution: int
    max_error: float


def _midpoint_moments(kernel: SmoothingKernel, radius: float, resolution: int):
    p = kernel.dim
    step = 2.0 * radius / resolution
    nodes = -radius + step * (np.arange(resolution) + 0.5)
    k1 = kernel.univariate(nodes)
    # Product structure: every mixed moment factorises into 1-d moments.
    one_d = {
        j: float(np.sum(k1 * nodes**j) * step) for j in range(kernel.order)
    }
    l2_1d = float(np.sum(k1 * k1) * step)
    integral = one_d[0] ** p
    moments = {}
    for j in range(1, kernel.order):
        for combo in itertools.combinations_with_replacement(range(p), j):
            powers = [combo.count(axis) for axis in range(p)]
            moments[combo] = math.prod(one_d[e] for e in powers)
    return integral, moments, l2_1d**p


def verify_kernel_order(
    kernel: SmoothingKernel,
    resolution: int | None = None,
    tol: float = 1e-6,
    truncation: float | None = None,
) -> KernelMomentReport:
    """Check ``int K = 1`` and vanishing mixed moments up to ``order - 1``.

    Composite midpoint rule on ``[-R, R]`` per axis. The computation is
    repeated at half resolution; if the two disagree by more than ``tol``
    the report is marked low-confidence rather than silently trusted.
    """
    if resolution is None:
        resolution = 10_000 if kernel.dim == 1 else 1_000
    radius = truncation or (kernel.support_radius if kernel.compact else kernel.truncation)
    if radius is None or not math.isfinite(radius):
        raise ValueError("kernel without compact support needs a truncation radius")

    integral, moments, l2 = _midpoint_moments(kernel, radius, resolution)
    coarse_int, coarse_mom, coarse_l2 = _midpoint_moments(
        kernel, radius, max(resolution // 2, 2)
    )
    drift = max(
        [abs(integral - coarse_int), abs(l2 - coarse_l2)]
        + [abs(moments[key] - coarse_mom[key]) for key in moments]
    )
    max_error = max([abs(integral - 1.0)] + [abs(v) for v in moments.values()])
    return KernelMomentReport(
        integral=integral,
        moments=moments,
        l2_norm_sq=l2,
        order=kernel.order,
        tol=tol,
        passed=max_error <= tol,
        low_confidence=drift > tol,
        resolution=resolution,
        max_error=max_error,
    )
