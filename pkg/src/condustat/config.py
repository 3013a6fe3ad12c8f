"""JSON configuration: build functionals, kernels, bases and penalties from plain dicts.

Schema (all keys optional unless noted)::

    {
      "functional": {"name": "rank_prob", "params": {}},          # required for estimate/fit
      "kernel": {"name": "epanechnikov", "params": {}},
      "h": 0.2,                                                   # required for estimate/fit
      "basis": {"family": "polynomial", "degree": 2, "k": 2, "p": 1}
             | {"family": "concat", "parts": [<basis>, ...]}
             | {"preset": "poly2-sin"},
      "link": "probit",
      "design_points": [[-0.5], [0.0], [0.5]],
      "tuples": {"mode": "full" | "increasing" | "subsample", "m": 50, "seed": 1},
      "penalty": {"lambda": 0.01}
               | {"adaptive": true, "tilde_lambda": 0.01, "delta": 1.0, "pilot_lambda": 0.0},
      "kappa": {"s": 2, "c0": 3.0, "strategy": "exhaustive"},
      "workers": 1
    }
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .estimator import TupleSet, enumerate_tuples
from .functionals import (
    BasisModel,
    UStatFunctional,
    builtin_functional,
    concat_basis,
    constant_basis,
    get_link,
    indicator_basis,
    polynomial_basis,
    trigonometric_basis,
)
from .kernels import SmoothingKernel, get_kernel
from .regression import PenaltySpec

__all__ = [
    "load_json",
    "build_functional",
    "build_kernel",
    "build_basis",
    "build_tuple_set",
    "build_penalty",
    "design_points",
]


def load_json(path) -> dict:
    return json.loads(Path(path).read_text())


def build_functional(spec) -> UStatFunctional:
    if isinstance(spec, str):
        return builtin_functional(spec)
    return builtin_functional(spec["name"], **spec.get("params", {}))


def build_kernel(spec, dim: int) -> SmoothingKernel:
    if spec is None:
        return get_kernel("epanechnikov", dim)
    if isinstance(spec, str):
        return get_kernel(spec, dim)
    return get_kernel(spec["name"], dim, **spec.get("params", {}))


def _link(spec):
    if spec is None:
        return None
    if isinstance(spec, str):
        return get_link(spec)
    return get_link(spec["name"], **spec.get("params", {}))


def build_basis(spec: dict, link=None) -> BasisModel:
    """Basis from a dict; ``link`` (name or dict) overrides any link inside ``spec``."""
    link = _link(link if link is not None else spec.get("link"))
    if "preset" in spec:
        from .harness import make_basis

        basis = make_basis(spec["preset"], "identity")
        return basis.with_link(link) if link else basis
    family = spec.get("family")
    k, p = int(spec.get("k", 2)), int(spec.get("p", 1))
    if family == "constant":
        basis = constant_basis(k, p)
    elif family == "polynomial":
        basis = polynomial_basis(
            k, p, int(spec.get("degree", 1)), float(spec.get("bound", 1.0)),
            bool(spec.get("include_constant", True)),
        )
    elif family == "trigonometric":
        basis = trigonometric_basis(
            k, p, int(spec.get("max_freq", 1)), float(spec.get("scale", np.pi)),
            bool(spec.get("include_sin", True)), bool(spec.get("include_cos", True)),
            bool(spec.get("include_constant", False)),
        )
    elif family == "indicator":
        basis = indicator_basis(k, p, spec["edges"])
    elif family == "concat":
        basis = concat_basis(*[build_basis(part) for part in spec["parts"]])
    else:
        raise ValueError(f"unknown basis family {family!r}")
    return basis.with_link(link) if link else basis


def design_points(spec, p: int) -> np.ndarray:
    pts = np.asarray(spec, dtype=float)
    return pts.reshape(-1, p)


def build_tuple_set(spec: dict | None, base_size: int, k: int) -> TupleSet:
    spec = spec or {}
    return enumerate_tuples(base_size, k, spec.get("mode", "full"), spec.get("m"), spec.get("seed"))


def build_penalty(spec: dict | None) -> PenaltySpec:
    spec = spec or {}
    if spec.get("adaptive"):
        return PenaltySpec(
            adaptive=True,
            tilde_lambda=float(spec["tilde_lambda"]),
            delta=float(spec.get("delta", 1.0)),
            pilot_lambda=float(spec.get("pilot_lambda", 0.0)),
        )
    return PenaltySpec(lam=float(spec.get("lambda", 0.0)))
