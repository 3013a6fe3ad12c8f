"""Command line entry point: ``condustat <command> ...``.

Commands: ``estimate``, ``fit``, ``predict``, ``bounds``, ``asymvar`` and
``simulate <experiment>``. Query files are CSV with a header and one query
tuple per row, coordinates flattened as ``z1_1..z1_p, z2_1..``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import bounds as bnd
from .asymptotics import get_model, h_matrix, tilde_h_matrix
from .config import (
    build_basis,
    build_functional,
    build_kernel,
    build_penalty,
    build_tuple_set,
    design_points,
    load_json,
)
from .estimator import estimate_theta_batch, read_sample_csv
from .harness import EXPERIMENTS, default_config, run_experiment
from .regression import restricted_eigenvalue, two_step_fit

__all__ = ["main", "build_parser"]


def _read_queries(path, k: int, p: int) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(v) for v in row] for row in rows[1:] if row], dtype=float)
    if data.ndim != 2 or data.shape[1] != k * p:
        raise ValueError(f"query file needs {k * p} columns per row")
    return data.reshape(-1, k, p)


def _query_header(k, p):
    return [f"z{i + 1}" if p == 1 else f"z{i + 1}_{j + 1}" for i in range(k) for j in range(p)]


def _write_json(obj, out):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_default)
    if out is None:
        print(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")


def _default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj))


# --------------------------------------------------------------------------
# Commands


def cmd_estimate(args) -> int:
    cfg = load_json(args.config)
    sample = read_sample_csv(args.data)
    functional = build_functional(cfg["functional"])
    kernel = build_kernel(cfg.get("kernel"), sample.z_dim)
    queries = _read_queries(args.queries, functional.arity, sample.z_dim)
    ests = estimate_theta_batch(
        sample, functional, kernel, float(cfg["h"]), queries, workers=args.workers
    )
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(_query_header(functional.arity, sample.z_dim) + ["theta_hat", "nk", "valid"])
        for q, e in zip(queries, ests):
            writer.writerow([repr(float(v)) for v in q.ravel()] + [repr(e.value), repr(e.nk), int(e.valid)])
    finally:
        if args.out:
            out.close()
    return 0


def cmd_fit(args) -> int:
    cfg = load_json(args.config)
    sample = read_sample_csv(args.data)
    functional = build_functional(cfg["functional"])
    kernel = build_kernel(cfg.get("kernel"), sample.z_dim)
    basis = build_basis(cfg["basis"], cfg.get("link"))
    points = design_points(cfg["design_points"], sample.z_dim)
    tuples = build_tuple_set(cfg.get("tuples"), points.shape[0], functional.arity)
    penalty = build_penalty(cfg.get("penalty"))
    result = two_step_fit(
        sample, functional, kernel, float(cfg["h"]), basis, points, tuples, penalty,
        workers=int(cfg.get("workers", args.workers)),
    )
    sol = result.solution
    report = {
        "beta": sol.beta,
        "basis_names": list(basis.names),
        "lambda": sol.lam,
        "active_set": sol.active_set,
        "kkt_residual": sol.kkt_residual,
        "converged": sol.converged,
        "iterations": sol.iterations,
        "objective": sol.objective,
        "forced_zero": sol.forced_zero,
        "dropped_rows": result.response.dropped,
        "clamped_rows": result.response.clamped,
        "degraded": result.degraded,
        "basis": cfg["basis"],
        "link": cfg.get("link"),
    }
    if "kappa" in cfg:
        kc = cfg["kappa"]
        kr = restricted_eigenvalue(
            result.design.matrix[result.response.mask], int(kc["s"]), float(kc["c0"]),
            kc.get("strategy", "exhaustive"), seed=kc.get("seed", 0),
        )
        report["kappa_report"] = {
            "kappa": kr.kappa, "lower_bound": kr.lower_bound, "certificate": kr.certificate,
            "support": list(kr.support), "s": kr.s, "c0": kr.c0, "strategy": kr.strategy,
        }
    out = Path(args.out or "fit_out")
    out.mkdir(parents=True, exist_ok=True)
    _write_json(report, out / "fit.json")
    k, p = basis.k, basis.p
    y_full = np.full(len(result.estimates), math.nan)
    y_full[result.response.mask] = result.response.y
    with open(out / "tuples.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_query_header(k, p) + ["theta_hat", "Y", "valid"])
        for e, y in zip(result.estimates, y_full):
            writer.writerow([repr(float(v)) for v in e.z_tuple.ravel()] + [repr(e.value), repr(float(y)), int(e.valid)])
    print(f"wrote {out / 'fit.json'} and {out / 'tuples.csv'}")
    return 0 if sol.converged else 1


def cmd_predict(args) -> int:
    fit = load_json(args.fit)
    basis = build_basis(fit["basis"], fit.get("link"))
    beta = np.asarray(fit["beta"], dtype=float)
    queries = _read_queries(args.queries, basis.k, basis.p)
    preds = basis.link.inverse(basis.evaluate(queries) @ beta)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(_query_header(basis.k, basis.p) + ["theta_pred"])
        for q, v in zip(queries, np.atleast_1d(preds)):
            writer.writerow([repr(float(c)) for c in q.ravel()] + [repr(float(v))])
    finally:
        if args.out:
            out.close()
    return 0


def _constants(spec: dict):
    if "preset" in spec:
        try:
            factory = bnd.PRESETS[spec["preset"]]
        except KeyError:
            raise ValueError(f"unknown preset {spec['preset']!r}; choose from {sorted(bnd.PRESETS)}") from None
        return factory(**spec.get("overrides", {}))
    return bnd.BoundConstants(**spec["constants"])


def bounds_report(spec: dict) -> dict:
    """All requested bounds for a constants spec; used by the ``bounds`` command."""
    consts = _constants(spec)
    derived = bnd.derive_constants(consts)
    report = {"inputs": derived.raw.__dict__, "derived": derived.as_dict(), "results": {}}
    res = report["results"]
    for name, req in spec.get("requests", {}).items():
        kind = req.get("kind", name)
        try:
            if kind == "existence":
                res[name] = bnd.existence_probability(derived, int(req["n"]), float(req["h"])).as_dict()
            elif kind == "min_sample_size":
                t0 = time.perf_counter()
                n = bnd.min_sample_size_for_existence(derived, float(req["h"]), float(req["target"]))
                res[name] = {
                    "n": n,
                    "closed_form": bnd.closed_form_existence_threshold(float(req["h"])),
                    "bound_at_n": bnd.existence_probability(derived, n, float(req["h"])).as_dict(),
                    "seconds": time.perf_counter() - t0,
                }
            elif kind == "nk_deviation":
                res[name] = bnd.nk_deviation_bound(derived, int(req["n"]), float(req["h"]), float(req["t"])).as_dict()
            elif kind == "theta_deviation":
                res[name] = bnd.theta_deviation_bound(
                    derived, int(req["n"]), float(req["h"]), float(req["t"]), float(req["t_prime"])
                ).as_dict()
            elif kind == "beta_error":
                res[name] = bnd.beta_error_bound(
                    derived, float(req["kappa"]), int(req["s"]), float(req["gamma"]), float(req["t"]),
                    float(req["h"]), int(req["n"]), n_tuples=req.get("n_tuples"),
                    b_g_per_tuple=req.get("b_g_per_tuple"),
                ).as_dict()
            elif kind == "berk":
                res[name] = {"bound": bnd.berk_bound(
                    int(req["n"]), int(req["k"]), float(req["sigma_sq"]),
                    float(req["b_minus_theta"]), float(req["t"]),
                )}
            else:
                res[name] = {"error": f"unknown bound kind {kind!r}"}
        except (ValueError, bnd.BoundPreconditionError) as exc:
            res[name] = {"error": str(exc)}
    return report


def cmd_bounds(args) -> int:
    spec = load_json(args.config) if args.config else {}
    if args.preset:
        spec["preset"] = args.preset
    if "preset" not in spec and "constants" not in spec:
        spec["preset"] = "paper-sec4"
    if args.h is not None:
        req = spec.setdefault("requests", {})
        req["min_sample_size"] = {"h": args.h, "target": args.target}
        if args.n is not None:
            req["existence"] = {"n": args.n, "h": args.h}
    report = bounds_report(spec)
    _write_json(report, args.out)
    return 1 if any("error" in r for r in report["results"].values()) else 0


def cmd_asymvar(args) -> int:
    cfg = load_json(args.config) if args.config else {}
    model = get_model(args.model)
    functional = build_functional(cfg.get("functional", "rank_prob"))
    kernel = build_kernel(cfg.get("kernel"), model.p)
    mode = cfg.get("mode", args.mode)
    reps = int(cfg.get("reps", args.reps or 100_000))
    if "design_points" in cfg:
        basis_link = build_basis({"family": "constant", "k": functional.arity, "p": model.p}, cfg.get("link", "identity")).link
        points = design_points(cfg["design_points"], model.p)
        tuples = build_tuple_set(cfg.get("tuples"), points.shape[0], functional.arity)
        cov = tilde_h_matrix(model, functional, kernel, basis_link, points, tuples, mode, reps, args.seed)
        kind = "tilde_H"
    else:
        queries = _read_queries(args.queries, functional.arity, model.p)
        cov = h_matrix(model, functional, kernel, queries, mode, reps, args.seed)
        kind = "rho_sq" if queries.shape[0] == 1 else "H"
    out = cov.as_dict()
    out["kind"] = kind
    out["model"] = args.model
    out["functional"] = functional.name
    if kind == "rho_sq":
        out["rho_sq"] = cov.rho_sq
    _write_json(out, args.out)
    return 0


def cmd_simulate(args) -> int:
    overrides = load_json(args.config) if args.config else {}
    overrides.pop("experiment", None)
    for key in ("seed", "reps", "workers"):
        val = getattr(args, key)
        if val is not None:
            overrides[key] = val
    config = default_config(args.experiment, **overrides)
    report = run_experiment(config)
    out = Path(args.out or f"sim_{args.experiment}")
    json_path, csv_path = report.write(out)
    for check in report.checks:
        print(check.line() + ("" if check.gating else " [diagnostic]"))
    print(f"wrote {json_path} and {csv_path}")
    return 0 if report.passed else 1


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="condustat", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="conditional U-statistic at query tuples")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("fit", help="two-step penalized fit")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predictions from a fitted beta")
    p.add_argument("--fit", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("bounds", help="finite-sample constants and probability bounds")
    p.add_argument("--config")
    p.add_argument("--preset", choices=sorted(bnd.PRESETS))
    p.add_argument("--h", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--target", type=float, default=0.99)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("asymvar", help="asymptotic variance rho^2, H or tilde H")
    p.add_argument("--model", default="paper-sec4")
    p.add_argument("--queries")
    p.add_argument("--config")
    p.add_argument("--mode", choices=["analytic", "mc"], default="analytic")
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_asymvar)

    p = sub.add_parser("simulate", help="run a Monte Carlo experiment")
    p.add_argument("experiment", choices=sorted(EXPERIMENTS))
    p.add_argument("--config", help="JSON overrides for the experiment settings")
    p.add_argument("--seed", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "asymvar" and args.queries is None and not args.config:
        parser.error("asymvar needs --queries or a config with design_points")
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
