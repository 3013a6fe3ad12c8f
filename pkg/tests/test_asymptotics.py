
import numpy as np
import pytest
from scipy import stats

from condustat.asymptotics import (
    analytic_conditional_moment,
    h_matrix,
    mc_conditional_moment,
    quadratic_limit_covariance,
    rho_squared,
    tilde_h_matrix,
    truncated_gaussian_model,
    truncated_normal_rejection,
)
from condustat.estimator import enumerate_tuples
from condustat.functionals import UStatFunctional, builtin_functional, get_link
from condustat.kernels import epanechnikov

from oracles import rank_prob_moments_quad, truncated_density

MODEL = truncated_gaussian_model()
RANK = builtin_functional("rank_prob")
K = epanechnikov(1)
CONST = UStatFunctional("const", 2, 1, lambda a, b: np.full(np.broadcast(a[..., 0], b[..., 0]).shape, 0.7))


def test_constant_g_moments_exact():
    th = mc_conditional_moment(MODEL, CONST, "theta", [0.1, 0.2], reps=100)
    assert th.value == pytest.approx(0.7, abs=1e-15) and th.stderr == pytest.approx(0, abs=1e-15)
    jl = mc_conditional_moment(MODEL, CONST, "theta_jl", [0.1, 0.2], 0, 1, reps=100)
    assert jl.value == pytest.approx(0.49, abs=1e-15)
    rho = rho_squared(MODEL, CONST, K, [0.1, 0.2], mode="mc", reps=100)
    assert rho.rho_sq == pytest.approx(0.0, abs=1e-14)


def test_mc_theta_rank_prob_at_origin():
    est = mc_conditional_moment(MODEL, RANK, "theta", [0.0, 0.0], reps=100_000, seed=5)
    assert abs(est.value - 0.5) <= 3 * est.stderr


def test_decoupled_factorises():
    z = [0.3, -0.2, -0.5, 0.4]
    est = mc_conditional_moment(MODEL, RANK, "tilde_theta_jl", z, 0, 1, reps=100_000, seed=2, coupled=False)
    a = MODEL.theta(RANK, [0.3, -0.2])
    # the slot-l draw of the second block sits at z_j, not at its own point
    b = MODEL.theta(RANK, [-0.5, 0.3])
    assert abs(est.value - a * b) <= 3 * est.stderr


def test_arity_and_reps_errors():
    with pytest.raises(ValueError):
        mc_conditional_moment(MODEL, RANK, "theta", [0.0, 0.0], reps=1)
    with pytest.raises(ValueError):
        mc_conditional_moment(MODEL, RANK, "tilde_theta_jl", [0.0, 0.0], reps=10)
    with pytest.raises(ValueError):
        mc_conditional_moment(MODEL, RANK, "theta_xyz", [0.0, 0.0], reps=10)


def test_theta_jlm_coupled_three_way():
    z = [0.1, -0.1, 0.2, 0.0, -0.3, 0.3]
    mc = mc_conditional_moment(MODEL, RANK, "theta_jlm", z, 0, 1, 0, reps=100_000, seed=9)
    exact = analytic_conditional_moment(MODEL, RANK, "theta_jlm", z, 0, 1, 0)
    assert abs(mc.value - exact) <= 3 * mc.stderr


def test_rho_sq_against_quad_oracle():
    th, t11, t22 = rank_prob_moments_quad(0.3, -0.3)
    ref = (t11 - th**2) * 0.6 / truncated_density(0.3) + (t22 - th**2) * 0.6 / truncated_density(-0.3)
    assert ref == pytest.approx(0.1548170464912135, rel=1e-12)
    got = rho_squared(MODEL, RANK, K, [0.3, -0.3]).rho_sq
    assert got == pytest.approx(ref, rel=1e-10)


def test_rho_sq_analytic_vs_mc():
    a = rho_squared(MODEL, RANK, K, [0.3, -0.3])
    m = rho_squared(MODEL, RANK, K, [0.3, -0.3], mode="mc", reps=100_000, seed=1)
    assert abs(a.rho_sq - m.rho_sq) <= 3 * m.stderr[0, 0]


def test_rho_sq_coincident_points_use_cross_terms():
    r = rho_squared(MODEL, RANK, K, [0.2, 0.2])
    f = truncated_density(0.2)
    th = 0.5
    total = 0.0
    for j in range(2):
        for l in range(2):
            total += (analytic_conditional_moment(MODEL, RANK, "theta_jl", [0.2, 0.2], j, l) - th**2) * 0.6 / f
    assert r.rho_sq == pytest.approx(total, rel=1e-12)


@pytest.mark.parametrize("name", ["gini", "cond_variance"])
def test_analytic_projections_match_mc(name):
    g = builtin_functional(name)
    z = [0.4, -0.1]
    for which, args, j, l in (("theta", z, 0, 0), ("theta_jl", z, 0, 0), ("theta_jl", z, 1, 1), ("theta_jl", z, 0, 1)):
        mc = mc_conditional_moment(MODEL, g, which, args, j, l, reps=200_000, seed=3)
        exact = analytic_conditional_moment(MODEL, g, which, args, j, l)
        assert abs(mc.value - exact) <= 4 * mc.stderr, (which, j, l)


def test_theta_jj_dominates_square():
    for z in ([0.3, -0.3], [0.0, 0.5], [-0.9, 0.9]):
        th = MODEL.theta(RANK, z)
        for j in range(2):
            est = mc_conditional_moment(MODEL, RANK, "theta_jl", z, j, j, reps=50_000, seed=j)
            assert est.value >= th**2 - 3 * est.stderr


def test_density_zero_raises():
    with pytest.raises(ValueError):
        rho_squared(MODEL, RANK, K, [1.5, 0.0])


def test_h_matrix_properties():
    q = np.array([[0.3, -0.3], [0.3, 0.5], [-0.8, 0.8]])
    H = h_matrix(MODEL, RANK, K, q)
    assert np.array_equal(H.value, H.value.T)
    single = rho_squared(MODEL, RANK, K, q[0]).rho_sq
    assert H.value[0, 0] == pytest.approx(single, rel=1e-14)
    assert H.value[0, 2] == 0.0 and H.value[1, 2] == 0.0
    assert H.value[0, 1] != 0.0


def test_h_matrix_psd_mc():
    q = np.array([[0.3, -0.3], [0.3, 0.5]])
    H = h_matrix(MODEL, RANK, K, q, mode="mc", reps=50_000, seed=4)
    assert np.array_equal(H.value, H.value.T)
    ev = np.linalg.eigvalsh(H.value)
    assert ev.min() >= -3 * H.stderr.max()


def test_tolerance_equality_flag():
    q = np.array([[0.3, -0.3], [0.3 + 1e-12, 0.5]])
    exact = h_matrix(MODEL, RANK, K, q)
    loose = h_matrix(MODEL, RANK, K, q, atol=1e-9)
    assert exact.value[0, 1] == 0.0 and loose.value[0, 1] != 0.0


def test_tilde_h_identity_and_logit_scaling():
    pts = np.array([[-0.5], [0.0], [0.5]])
    ts = enumerate_tuples(3, 2)
    ident = tilde_h_matrix(MODEL, RANK, K, get_link("identity"), pts, ts)
    H = h_matrix(MODEL, RANK, K, pts[ts.tuples])
    assert np.array_equal(ident.value, H.value)
    logit = tilde_h_matrix(MODEL, RANK, K, get_link("logit"), pts, ts)
    th = ident.thetas
    scale = np.outer(1 / (th * (1 - th)), 1 / (th * (1 - th)))
    assert logit.value == pytest.approx(ident.value * scale, rel=1e-10)
    assert np.array_equal(logit.value, logit.value.T)


def test_quadratic_limit_covariance():
    Z = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    H = np.diag([1.0, 2.0, 3.0])
    A = np.linalg.inv(Z.T @ Z) @ Z.T
    assert quadratic_limit_covariance(Z, H) == pytest.approx(A @ H @ A.T)


def test_sampler_matches_rejection():
    rng = np.random.default_rng(0)
    inv = MODEL.sample_z(rng, 20_000)[:, 0]
    rej = truncated_normal_rejection(np.random.default_rng(1), 20_000)
    assert np.all(np.abs(inv) <= 1) and np.all(np.abs(rej) <= 1)
    assert stats.ks_2samp(inv, rej).pvalue > 1e-3
    assert stats.kstest(inv, stats.truncnorm(-1, 1).cdf).pvalue > 1e-3
