"""Seeded Monte Carlo experiments on the truncated-Gaussian model.

Every replication draws its randomness from
``SeedSequence(master_seed, spawn_key=(rep,))`` and uses one uniform per
coordinate, so a replication is independent of worker scheduling and
samples at different ``n`` are nested prefixes of one stream (paired
designs come for free).

Each experiment produces per-rep records and aggregates computed by a pure
function of those records, so aggregates can always be recomputed from the
shipped CSV.
"""

from __future__ import annotations

import csv
import io
import json
import math
import multiprocessing as mp
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable

import numpy as np
import scipy
from scipy import stats

from . import bounds as bnd
from .asymptotics import get_model, quadratic_limit_covariance, rho_squared, tilde_h_matrix
from .estimator import ObservationSample, compute_nk, enumerate_tuples, estimate_theta, estimate_theta_on_design
from .functionals import (
    builtin_functional,
    concat_basis,
    get_link,
    polynomial_basis,
    trigonometric_basis,
)
from .kernels import get_kernel
from .regression import build_design, build_response, fit_adaptive_lasso, fit_lasso

__all__ = [
    "generate_sample",
    "rep_seed",
    "ExperimentConfig",
    "Check",
    "ExperimentReport",
    "default_config",
    "run_experiment",
    "run_existence_experiment",
    "run_concentration_experiment",
    "run_normality_experiment",
    "run_two_step_experiment",
    "recompute_aggregates",
    "EXPERIMENTS",
]


# --------------------------------------------------------------------------
# Sampling


def rep_seed(master_seed: int, rep: int) -> np.random.SeedSequence:
    """Counter-based seed for replication ``rep``."""
    return np.random.SeedSequence(master_seed, spawn_key=(rep,))


def generate_sample(model, n: int, seed) -> ObservationSample:
    """``n`` draws of ``(X, Z)``; ``seed`` is an int or a ``SeedSequence``.

    Z and X come from two child streams, so the first ``m`` rows of a sample
    of size ``n >= m`` equal the sample of size ``m`` from the same seed.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if isinstance(model, str):
        model = get_model(model)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    z_ss, x_ss = _children(ss)
    z = model.sample_z(np.random.default_rng(z_ss), n)
    x = model.sample_x_given_z(np.random.default_rng(x_ss), z)
    return ObservationSample(x, z)


def _children(ss):
    # spawn() is stateful; build the two children directly so repeated calls agree.
    return [
        np.random.SeedSequence(ss.entropy, spawn_key=ss.spawn_key + (i,), pool_size=ss.pool_size)
        for i in range(2)
    ]


# --------------------------------------------------------------------------
# Configuration and reports


@dataclass
class ExperimentConfig:
    """Settings for one campaign; every field has a JSON-friendly type.

    ``h`` fixes the bandwidth; when it is ``None`` the schedule
    ``h_scale * n ** h_exponent`` is used.
    """

    experiment: str
    model: str = "paper-sec4"
    functional: str = "rank_prob"
    functional_params: dict = field(default_factory=dict)
    kernel: str = "epanechnikov"
    kernel_params: dict = field(default_factory=dict)
    h: float | None = None
    h_scale: float = 1.0
    h_exponent: float = -0.2
    n_values: list = field(default_factory=lambda: [651])
    queries: list = field(default_factory=lambda: [[0.0, 0.0]])
    t_grid: list = field(default_factory=list)
    t_prime_grid: list | None = None
    design_points: list | None = None
    n_prime_values: list | None = None
    design_range: float = 0.7
    tuple_mode: str = "full"
    basis: str = "poly2-sin"
    link: str = "probit"
    beta_star: list | None = None
    lambda_scale: float = 1.0
    adaptive_scale: float = 1.0
    adaptive_delta: float = 1.0
    reps: int = 200
    seed: int = 20240601
    workers: int = 1
    target_frequency: float | None = None
    mc_sigmas: float = 3.0
    trend_z: float = 1.645
    sd_tolerance: float = 0.15
    cov_tolerance: float = 0.20
    asym_reps: int = 100_000
    asym_mode: str = "mc"
    gating: list | None = None

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; choose from {sorted(EXPERIMENTS)}")
        get_model(self.model)

    def bandwidth(self, n: int) -> float:
        return float(self.h) if self.h is not None else self.h_scale * n**self.h_exponent

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    gating: bool = True

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


@dataclass
class ExperimentReport:
    name: str
    config: ExperimentConfig
    records: list[dict]
    aggregates: dict
    checks: list[Check]
    metadata: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.gating)

    def records_csv(self) -> str:
        return records_to_csv(self.records)

    def write(self, out_dir) -> tuple[Path, Path]:
        """Write the JSON report and the records CSV; returns their paths in that order."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{self.name}_records.csv"
        json_path = out / f"{self.name}_report.json"
        csv_path.write_text(self.records_csv())
        json_path.write_text(json.dumps(self.as_dict(), indent=2, sort_keys=True, default=_json_default))
        return json_path, csv_path

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "config": self.config.to_dict(),
            "aggregates": self.aggregates,
            "checks": [asdict(c) for c in self.checks],
            "passed": self.passed,
            "metadata": self.metadata,
        }


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj)}")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def records_to_csv(records: list[dict]) -> str:
    """Deterministic CSV: columns in first-record order, floats via ``repr``."""
    buf = io.StringIO()
    if not records:
        return ""
    cols = list(records[0])
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for rec in records:
        writer.writerow([_fmt(rec[c]) for c in cols])
    return buf.getvalue()


def read_records_csv(path) -> list[dict]:
    """Inverse of :func:`records_to_csv` (all values parsed as float or int)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: _parse(v) for k, v in row.items()} for row in rows]


def _parse(v: str):
    try:
        return int(v)
    except ValueError:
        return float(v)


def _metadata(config: ExperimentConfig) -> dict:
    return {
        "master_seed": config.seed,
        "seed_scheme": "SeedSequence(master_seed, spawn_key=(rep,)), children 0: Z, 1: X",
        "reps": config.reps,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


# --------------------------------------------------------------------------
# Shared helpers


def _run_reps(worker: Callable, config: ExperimentConfig) -> list[dict]:
    """Run ``worker(config_dict, rep)`` for every rep; output order is rep order."""
    payload = config.to_dict()
    args = [(payload, rep) for rep in range(config.reps)]
    if config.workers <= 1:
        chunks = [worker(a) for a in args]
    else:
        ctx = mp.get_context("spawn")
        with ProcessPoolExecutor(max_workers=config.workers, mp_context=ctx) as pool:
            chunks = list(pool.map(worker, args, chunksize=max(1, config.reps // (4 * config.workers))))
    return [rec for chunk in chunks for rec in chunk]


def _setup(payload: dict):
    cfg = ExperimentConfig.from_dict(payload)
    model = get_model(cfg.model)
    functional = builtin_functional(cfg.functional, **cfg.functional_params)
    kernel = get_kernel(cfg.kernel, model.p, **cfg.kernel_params)
    return cfg, model, functional, kernel


def _query(q, p=1):
    return np.asarray(q, dtype=float).reshape(-1, p)


def _binom_se(p, reps):
    return math.sqrt(max(p * (1.0 - p), 0.0) / reps)


def _paired_one_sided(diff: np.ndarray, z: float) -> tuple[bool, float]:
    """One-sided test that ``mean(diff) > 0``; returns (passed, statistic)."""
    mean = float(np.mean(diff))
    if diff.size < 2:
        return mean > 0, math.inf if mean > 0 else -math.inf
    se = float(np.std(diff, ddof=1) / math.sqrt(diff.size))
    if se == 0.0:
        return mean > 0, math.inf if mean > 0 else (0.0 if mean == 0 else -math.inf)
    stat = mean / se
    return stat > z, stat


def _by(records, **match):
    return [r for r in records if all(r[k] == v for k, v in match.items())]


def _gated(cfg, name):
    return cfg.gating is None or name in cfg.gating


# --------------------------------------------------------------------------
# Existence of the estimator


def _existence_rep(args):
    payload, rep = args
    cfg, model, _, kernel = _setup(payload)
    sample = generate_sample(model, max(cfg.n_values), rep_seed(cfg.seed, rep))
    out = []
    for n in cfg.n_values:
        sub = ObservationSample(sample.xs[:n], sample.zs[:n])
        h = cfg.bandwidth(n)
        for qi, q in enumerate(cfg.queries):
            nk = compute_nk(sub, kernel, h, _query(q, model.p))
            out.append({"rep": rep, "n": n, "h": h, "query": qi, "nk": nk, "exists": nk > 0})
    return out


def _existence_aggregates(records, cfg: ExperimentConfig) -> dict:
    consts = bnd.worked_example_constants()
    agg = {}
    for n in cfg.n_values:
        for qi in range(len(cfg.queries)):
            rows = _by(records, n=n, query=qi)
            freq = float(np.mean([r["exists"] for r in rows]))
            h = cfg.bandwidth(n)
            try:
                bound = bnd.existence_probability(consts, n, h).as_dict()
            except bnd.BoundPreconditionError as exc:
                bound = {"error": str(exc)}
            agg[f"n={n},query={qi}"] = {
                "n": n,
                "h": h,
                "query": cfg.queries[qi],
                "frequency": freq,
                "stderr": _binom_se(freq, len(rows)),
                "bound": bound,
            }
    return agg


def _existence_checks(agg, cfg) -> list[Check]:
    checks = []
    for key, a in agg.items():
        b = a["bound"]
        if "clamped" in b:
            ok = a["frequency"] >= b["clamped"] - cfg.mc_sigmas * a["stderr"]
            checks.append(Check(
                f"existence_bound_conservative[{key}]", ok,
                f"frequency {a['frequency']:.4f} vs lower bound {b['clamped']:.4f}"
                + (" (vacuous)" if b["vacuous"] else ""),
                _gated(cfg, "bound"),
            ))
        if cfg.target_frequency is not None:
            ok = a["frequency"] >= cfg.target_frequency
            checks.append(Check(
                f"existence_frequency[{key}]", ok,
                f"frequency {a['frequency']:.4f} >= {cfg.target_frequency}", _gated(cfg, "target"),
            ))
    ns = sorted(cfg.n_values)
    for qi in range(len(cfg.queries)):
        for lo, hi in zip(ns, ns[1:]):
            a, b = agg[f"n={lo},query={qi}"], agg[f"n={hi},query={qi}"]
            se = math.hypot(a["stderr"], b["stderr"])
            ok = b["frequency"] >= a["frequency"] - cfg.trend_z * se
            checks.append(Check(
                f"existence_trend[query={qi},{lo}->{hi}]", ok,
                f"{a['frequency']:.4f} -> {b['frequency']:.4f}", _gated(cfg, "trend"),
            ))
    return checks


# --------------------------------------------------------------------------
# Concentration of N_k and theta_hat


def _concentration_rep(args):
    payload, rep = args
    cfg, model, functional, kernel = _setup(payload)
    sample = generate_sample(model, max(cfg.n_values), rep_seed(cfg.seed, rep))
    out = []
    for n in cfg.n_values:
        sub = ObservationSample(sample.xs[:n], sample.zs[:n])
        h = cfg.bandwidth(n)
        for qi, q in enumerate(cfg.queries):
            est = estimate_theta(sub, functional, kernel, h, _query(q, model.p))
            out.append({
                "rep": rep, "n": n, "h": h, "query": qi,
                "nk": est.nk, "theta_hat": est.value, "valid": est.valid,
            })
    return out


def _concentration_aggregates(records, cfg: ExperimentConfig) -> dict:
    model = get_model(cfg.model)
    functional = builtin_functional(cfg.functional, **cfg.functional_params)
    consts = bnd.worked_example_constants()
    t_primes = cfg.t_prime_grid or cfg.t_grid
    agg = {}
    for n in cfg.n_values:
        h = cfg.bandwidth(n)
        for qi, q in enumerate(cfg.queries):
            zq = _query(q, model.p)
            f_prod = float(np.prod(model.f_z(zq)))
            theta = model.theta(functional, zq)
            rows = _by(records, n=n, query=qi)
            nk = np.array([r["nk"] for r in rows])
            th = np.array([r["theta_hat"] for r in rows])
            valid = np.array([bool(r["valid"]) for r in rows])
            nk_dev = np.abs(nk - f_prod)
            th_dev = np.where(valid, np.abs(th - theta), np.inf)
            grid = []
            for t, tp in zip(cfg.t_grid, t_primes):
                lemma = bnd.nk_deviation_bound(consts, n, h, t)
                lemma_emp = float(np.mean(nk_dev > lemma.epsilon))
                entry = {
                    "t": t,
                    "t_prime": tp,
                    "nk_radius": lemma.epsilon,
                    "nk_empirical_tail": lemma_emp,
                    "nk_stderr": _binom_se(lemma_emp, len(rows)),
                    "nk_bound_tail": 1.0 - lemma.prob_lower.clamped,
                }
                try:
                    prop = bnd.theta_deviation_bound(consts, n, h, t, tp)
                except bnd.BoundPreconditionError as exc:
                    entry["theta_error"] = str(exc)
                else:
                    emp = float(np.mean(th_dev > prop.epsilon))
                    entry.update({
                        "theta_radius": prop.epsilon,
                        "theta_empirical_tail": emp,
                        "theta_stderr": _binom_se(emp, len(rows)),
                        "theta_bound_tail": 1.0 - prop.prob_lower.clamped,
                    })
                grid.append(entry)
            agg[f"n={n},query={qi}"] = {
                "n": n, "h": h, "query": q,
                "f_product": f_prod, "theta": theta,
                "truth_source": "analytic density and closed-form theta",
                "max_nk_deviation": float(nk_dev.max()),
                "invalid": int((~valid).sum()),
                "grid": grid,
            }
    return agg


def _concentration_checks(agg, cfg) -> list[Check]:
    checks = []
    for key, a in agg.items():
        for g in a["grid"]:
            slack = cfg.mc_sigmas * g["nk_stderr"]
            checks.append(Check(
                f"nk_tail_dominated[{key},t={g['t']}]",
                g["nk_empirical_tail"] <= g["nk_bound_tail"] + slack,
                f"empirical {g['nk_empirical_tail']:.4f} vs bound {g['nk_bound_tail']:.4f}",
                _gated(cfg, "nk"),
            ))
            if "theta_empirical_tail" in g:
                slack = cfg.mc_sigmas * g["theta_stderr"]
                checks.append(Check(
                    f"theta_tail_dominated[{key},t={g['t']},t'={g['t_prime']}]",
                    g["theta_empirical_tail"] <= g["theta_bound_tail"] + slack,
                    f"empirical {g['theta_empirical_tail']:.4f} vs bound {g['theta_bound_tail']:.4f}",
                    _gated(cfg, "theta"),
                ))
            else:
                checks.append(Check(
                    f"theta_bound_defined[{key},t={g['t']}]", False, g["theta_error"],
                    _gated(cfg, "theta"),
                ))
    return checks


# --------------------------------------------------------------------------
# Asymptotic normality


def _design_points(cfg: ExperimentConfig, n_prime: int | None = None) -> np.ndarray:
    if cfg.design_points is not None and n_prime is None:
        return np.asarray(cfg.design_points, dtype=float).reshape(-1, 1)
    m = n_prime or 10
    return np.linspace(-cfg.design_range, cfg.design_range, m)[:, None]


def make_basis(name: str, link_name: str):
    """Bases used by the experiments, keyed by name."""
    link = get_link(link_name)
    if name == "poly2-sin":
        # 1, z1, z2, z1^2, z1 z2, z2^2, sin(pi z1), sin(pi z2)
        return concat_basis(
            polynomial_basis(2, 1, 2),
            trigonometric_basis(2, 1, 1, include_cos=False),
            link=link,
        )
    if name == "linear":
        return polynomial_basis(2, 1, 1, include_constant=False, link=link)
    raise ValueError(f"unknown experiment basis {name!r}")


def _beta_star(cfg: ExperimentConfig, basis) -> np.ndarray:
    if cfg.beta_star is not None:
        beta = np.asarray(cfg.beta_star, dtype=float)
    else:
        beta = np.zeros(basis.r)
        beta[basis.names.index("z1")] = -1.0 / math.sqrt(2.0)
        beta[basis.names.index("z2")] = 1.0 / math.sqrt(2.0)
    if beta.shape != (basis.r,):
        raise ValueError(f"beta_star must have length {basis.r}")
    return beta


def _normality_rep(args):
    payload, rep = args
    cfg, model, functional, kernel = _setup(payload)
    sample = generate_sample(model, max(cfg.n_values), rep_seed(cfg.seed, rep))
    basis = make_basis(cfg.basis, cfg.link)
    points = _design_points(cfg)
    tuples = enumerate_tuples(points.shape[0], functional.arity, cfg.tuple_mode)
    design = build_design(basis, points, tuples)
    out = []
    for n in cfg.n_values:
        sub = ObservationSample(sample.xs[:n], sample.zs[:n])
        h = cfg.bandwidth(n)
        rec = {"rep": rep, "n": n, "h": h}
        for qi, q in enumerate(cfg.queries):
            est = estimate_theta(sub, functional, kernel, h, _query(q, model.p))
            rec[f"theta_hat_{qi}"] = est.value
            rec[f"valid_{qi}"] = est.valid
        ests = estimate_theta_on_design(sub, functional, kernel, h, points, tuples)
        resp = build_response(ests, basis)
        sol = fit_lasso(design.matrix[resp.mask], resp.y, 0.0)
        for j, b in enumerate(sol.beta):
            rec[f"beta_{j}"] = float(b)
        rec["dropped"] = len(resp.dropped)
        out.append(rec)
    return out


def _normality_aggregates(records, cfg: ExperimentConfig) -> dict:
    model = get_model(cfg.model)
    functional = builtin_functional(cfg.functional, **cfg.functional_params)
    kernel = get_kernel(cfg.kernel, model.p, **cfg.kernel_params)
    basis = make_basis(cfg.basis, cfg.link)
    points = _design_points(cfg)
    tuples = enumerate_tuples(points.shape[0], functional.arity, cfg.tuple_mode)
    design = build_design(basis, points, tuples).matrix
    beta_star = _beta_star(cfg, basis)
    th_cov = tilde_h_matrix(
        model, functional, kernel, basis.link, points, tuples,
        mode=cfg.asym_mode, reps=cfg.asym_reps, seed=cfg.seed,
    )
    beta_limit = quadratic_limit_covariance(design, th_cov.value)
    agg = {}
    for n in cfg.n_values:
        h = cfg.bandwidth(n)
        scale = math.sqrt(n * h**model.p)
        rows = _by(records, n=n)
        entry = {"n": n, "h": h, "queries": {}}
        for qi, q in enumerate(cfg.queries):
            zq = _query(q, model.p)
            theta = model.theta(functional, zq)
            rho = rho_squared(
                model, functional, kernel, zq, mode=cfg.asym_mode, reps=cfg.asym_reps,
                seed=cfg.seed + qi,
            )
            stat = np.array([
                scale * (r[f"theta_hat_{qi}"] - theta) for r in rows if r[f"valid_{qi}"]
            ])
            sd = float(np.std(stat, ddof=1))
            rho_val = math.sqrt(max(rho.rho_sq, 0.0))
            entry["queries"][str(qi)] = {
                "query": q,
                "theta": theta,
                "truth_source": "closed form Phi((z2 - z1)/sqrt 2)" if functional.name == "rank_prob" else "quadrature",
                "rho_sq": rho.rho_sq,
                "rho_sq_stderr": float(rho.stderr[0, 0]),
                "rho": rho_val,
                "valid_reps": int(stat.size),
                "mean": float(np.mean(stat)),
                "mean_stderr": sd / math.sqrt(stat.size),
                "sd": sd,
                "sd_ratio": sd / rho_val if rho_val > 0 else math.inf,
                "skewness": float(stats.skew(stat)),
                "excess_kurtosis": float(stats.kurtosis(stat)),
            }
        betas = np.array([[r[f"beta_{j}"] for j in range(basis.r)] for r in rows])
        emp = np.cov(scale * (betas - beta_star), rowvar=False).reshape(basis.r, basis.r)
        entry["beta"] = {
            "empirical_cov": emp.tolist(),
            "limit_cov": beta_limit.tolist(),
            "relative_error": (np.abs(emp - beta_limit) / np.abs(beta_limit)).tolist(),
            "mean_scaled_error": (scale * (betas.mean(axis=0) - beta_star)).tolist(),
        }
        agg[f"n={n}"] = entry
    agg["tilde_h"] = {"value": th_cov.value.tolist(), "mode": th_cov.mode, "reps": th_cov.reps}
    return agg


def _normality_checks(agg, cfg) -> list[Check]:
    checks = []
    for key, entry in agg.items():
        if not key.startswith("n="):
            continue
        for qi, qd in entry["queries"].items():
            ok = abs(qd["sd_ratio"] - 1.0) <= cfg.sd_tolerance
            checks.append(Check(
                f"sd_matches_rho[{key},query={qi}]", ok,
                f"sd {qd['sd']:.4f} vs rho {qd['rho']:.4f} (ratio {qd['sd_ratio']:.3f}, tol {cfg.sd_tolerance})",
                _gated(cfg, "sd"),
            ))
            ok = abs(qd["mean"]) <= cfg.mc_sigmas * qd["mean_stderr"]
            checks.append(Check(
                f"centered[{key},query={qi}]", ok,
                f"mean {qd['mean']:.4f} vs {cfg.mc_sigmas} x se {qd['mean_stderr']:.4f}",
                _gated(cfg, "mean"),
            ))
        rel = np.asarray(entry["beta"]["relative_error"])
        diag = np.diag(rel)
        checks.append(Check(
            f"beta_variance_matches_limit[{key}]", bool(np.all(diag <= cfg.cov_tolerance)),
            f"diagonal relative errors {np.round(diag, 3).tolist()} (tol {cfg.cov_tolerance})",
            _gated(cfg, "beta"),
        ))
    return checks


# --------------------------------------------------------------------------
# Two-step consistency and support recovery


def _ladder(cfg: ExperimentConfig) -> list[tuple[int, int]]:
    if cfg.n_prime_values is None:
        m = len(cfg.design_points) if cfg.design_points is not None else 10
        return [(n, m) for n in cfg.n_values]
    if len(cfg.n_prime_values) != len(cfg.n_values):
        raise ValueError("n_prime_values must match n_values in length")
    return list(zip(cfg.n_values, cfg.n_prime_values))


def _two_step_rep(args):
    payload, rep = args
    cfg, model, functional, kernel = _setup(payload)
    basis = make_basis(cfg.basis, cfg.link)
    beta_star = _beta_star(cfg, basis)
    support = beta_star != 0
    sample = generate_sample(model, max(cfg.n_values), rep_seed(cfg.seed, rep))
    out = []
    for n, n_prime in _ladder(cfg):
        sub = ObservationSample(sample.xs[:n], sample.zs[:n])
        h = cfg.bandwidth(n)
        points = _design_points(cfg, n_prime if cfg.n_prime_values is not None else None)
        tuples = enumerate_tuples(points.shape[0], functional.arity, cfg.tuple_mode)
        design = build_design(basis, points, tuples)
        ests = estimate_theta_on_design(sub, functional, kernel, h, points, tuples)
        resp = build_response(ests, basis)
        X = design.matrix[resp.mask]
        nh = n * h**model.p
        lam = cfg.lambda_scale / math.sqrt(nh)
        tilde = cfg.adaptive_scale * nh**-0.75
        ols = fit_lasso(X, resp.y, 0.0)
        plain = fit_lasso(X, resp.y, lam)
        adaptive = fit_adaptive_lasso(X, resp.y, tilde, cfg.adaptive_delta, ols.beta)
        rec = {"rep": rep, "n": n, "n_prime": points.shape[0], "h": h, "lambda": lam, "tilde_lambda": tilde}
        for label, sol in (("ols", ols), ("lasso", plain), ("adaptive", adaptive)):
            rec[f"{label}_sq_error"] = float(np.sum((sol.beta - beta_star) ** 2))
            rec[f"{label}_support_ok"] = bool(np.array_equal(sol.beta != 0, support))
            rec[f"{label}_converged"] = bool(sol.converged)
        for j, b in enumerate(plain.beta):
            rec[f"lasso_beta_{j}"] = float(b)
        for j, b in enumerate(adaptive.beta):
            rec[f"adaptive_beta_{j}"] = float(b)
        rec["dropped"] = len(resp.dropped)
        out.append(rec)
    return out


def _two_step_aggregates(records, cfg: ExperimentConfig) -> dict:
    agg = {}
    for n, n_prime in _ladder(cfg):
        rows = _by(records, n=n)
        entry = {"n": n, "n_prime": n_prime, "h": cfg.bandwidth(n)}
        for label in ("ols", "lasso", "adaptive"):
            sq = np.array([r[f"{label}_sq_error"] for r in rows])
            ok = np.array([r[f"{label}_support_ok"] for r in rows], dtype=float)
            entry[label] = {
                "rmse": float(math.sqrt(sq.mean())),
                "support_recovery": float(ok.mean()),
                "support_stderr": _binom_se(float(ok.mean()), len(rows)),
                "converged": int(sum(r[f"{label}_converged"] for r in rows)),
            }
        entry["dropped_rows"] = int(sum(r["dropped"] for r in rows))
        agg[f"n={n}"] = entry
    return agg


def _two_step_checks(records, agg, cfg) -> list[Check]:
    checks = []
    ladder = _ladder(cfg)
    for label in ("lasso", "ols"):
        for (lo, _), (hi, _) in zip(ladder, ladder[1:]):
            a = {r["rep"]: r[f"{label}_sq_error"] for r in _by(records, n=lo)}
            b = {r["rep"]: r[f"{label}_sq_error"] for r in _by(records, n=hi)}
            diff = np.array([a[k] - b[k] for k in sorted(a)])
            ok, stat = _paired_one_sided(diff, cfg.trend_z)
            checks.append(Check(
                f"rmse_decreasing[{label},{lo}->{hi}]", ok,
                f"RMSE {agg[f'n={lo}'][label]['rmse']:.4f} -> {agg[f'n={hi}'][label]['rmse']:.4f}, "
                f"paired z = {stat:.2f} (need > {cfg.trend_z})",
                _gated(cfg, f"rmse_{label}"),
            ))
    n_max = ladder[-1][0]
    rows = _by(records, n=n_max)
    diff = np.array([float(r["adaptive_support_ok"]) - float(r["lasso_support_ok"]) for r in rows])
    ok, stat = _paired_one_sided(diff, cfg.trend_z)
    checks.append(Check(
        f"adaptive_beats_lasso_support[n={n_max}]", ok,
        f"adaptive {agg[f'n={n_max}']['adaptive']['support_recovery']:.3f} vs "
        f"lasso {agg[f'n={n_max}']['lasso']['support_recovery']:.3f}, paired z = {stat:.2f}",
        _gated(cfg, "support"),
    ))
    return checks


# --------------------------------------------------------------------------
# Registry and entry points


@dataclass(frozen=True)
class _Experiment:
    worker: Callable
    aggregate: Callable
    check: Callable


def _checks_from(agg_check):
    return lambda records, agg, cfg: agg_check(agg, cfg)


EXPERIMENTS: dict[str, _Experiment] = {
    "existence": _Experiment(_existence_rep, _existence_aggregates, _checks_from(_existence_checks)),
    "concentration": _Experiment(_concentration_rep, _concentration_aggregates, _checks_from(_concentration_checks)),
    "normality": _Experiment(_normality_rep, _normality_aggregates, _checks_from(_normality_checks)),
    "two_step": _Experiment(_two_step_rep, _two_step_aggregates, _two_step_checks),
}


def recompute_aggregates(records: list[dict], config: ExperimentConfig) -> dict:
    """Aggregates from per-rep records alone (used to audit shipped reports)."""
    return EXPERIMENTS[config.experiment].aggregate(records, config)


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    exp = EXPERIMENTS[config.experiment]
    records = _run_reps(exp.worker, config)
    agg = exp.aggregate(records, config)
    checks = exp.check(records, agg, config)
    return ExperimentReport(config.experiment, config, records, agg, checks, _metadata(config))


def default_config(name: str, **overrides: Any) -> ExperimentConfig:
    """Acceptance-scale settings for each experiment."""
    base: dict[str, Any] = {
        "existence": dict(
            experiment="existence", h=0.2, n_values=[651], queries=[[0.0, 0.0]],
            reps=2000, target_frequency=0.99,
        ),
        "concentration": dict(
            experiment="concentration", h=0.2, n_values=[651, 2000], queries=[[0.0, 0.0]],
            t_grid=[0.02, 0.05, 0.08, 0.11, 0.14], reps=2000,
        ),
        "normality": dict(
            experiment="normality", n_values=[5000], queries=[[0.3, -0.3]],
            design_points=[-0.6, 0.0, 0.6], basis="linear", link="probit", reps=500,
            gating=["sd"],
        ),
        "two_step": dict(
            experiment="two_step", n_values=[500, 2000, 8000], basis="poly2-sin", link="probit",
            reps=200, lambda_scale=0.1, adaptive_scale=0.5,
            gating=["rmse_lasso", "support"],
        ),
    }
    if name not in base:
        raise ValueError(f"unknown experiment {name!r}; choose from {sorted(base)}")
    data = base[name]
    data.update(overrides)
    return ExperimentConfig(**data)


def run_existence_experiment(config: ExperimentConfig | None = None, **overrides) -> ExperimentReport:
    return run_experiment(config or default_config("existence", **overrides))


def run_concentration_experiment(config: ExperimentConfig | None = None, **overrides) -> ExperimentReport:
    return run_experiment(config or default_config("concentration", **overrides))


def run_normality_experiment(config: ExperimentConfig | None = None, **overrides) -> ExperimentReport:
    return run_experiment(config or default_config("normality", **overrides))


def run_two_step_experiment(config: ExperimentConfig | None = None, **overrides) -> ExperimentReport:
    return run_experiment(config or default_config("two_step", **overrides))
