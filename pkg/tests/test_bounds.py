import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from condustat import bounds as bnd
from condustat.kernels import epanechnikov

from oracles import beta_bound_second_route


@pytest.fixture(scope="module")
def preset():
    return bnd.worked_example_constants()


def test_worked_example_c1_c2(preset):
    d = bnd.derive_constants(preset)
    assert 0.25 <= d.c1 <= 0.26
    assert d.c2 == 0.75


def test_constants_independent_arithmetic(preset):
    d = bnd.derive_constants(preset)
    fmin, fmax, ck, l2, cka = 0.35, 0.59, 0.75, 0.6, 0.2
    c4 = 4 * fmax**2 / fmin**4
    assert d.c1 == pytest.approx(2 * fmax**2 * l2**2, rel=1e-14)
    assert d.c3 == pytest.approx(c4 * cka / 2, rel=1e-14)
    assert d.c4 == pytest.approx(c4, rel=1e-14)
    assert d.c5 == pytest.approx(preset.c_g_f_alpha * preset.c_k_alpha_prime / fmin**2 / 2, rel=1e-14)
    assert d.c6 == pytest.approx(2 * fmax**2 / fmin**4 * l2**2, rel=1e-14)
    assert d.c7 == pytest.approx(8 / 3 * ck**2 / fmin**2, rel=1e-14)
    assert d.c8 == pytest.approx(1 + c4 * fmin / 2, rel=1e-14)


def test_bernstein_constants():
    c = bnd.worked_example_constants(c_g=None, b_gz=2.0, b_tilde=0.5)
    d = bnd.derive_constants(c)
    assert c.regime == "bernstein"
    assert d.c6_tilde == pytest.approx(128 * 2.5**2 * 0.75**3 / 0.35**4, rel=1e-14)
    assert d.c7_tilde == pytest.approx(2 * 2.5 * 0.75**2 / 0.35**2, rel=1e-14)


def test_k1_collapse_and_errors():
    c = bnd.BoundConstants(k=1, p=1, alpha=2, f_min=0.5, f_max=1.0, c_k=1.0, l2_k=1.0, c_k_alpha=0.1)
    assert bnd.derive_constants(c).c1 == 2.0
    with pytest.raises(ValueError):
        bnd.derive_constants(bnd.BoundConstants(1, 1, 2, 2.0, 1.0, 1.0, 1.0, 0.1))


def test_derive_idempotent(preset):
    assert bnd.derive_constants(preset) == bnd.derive_constants(preset)


def test_kernel_holder_constant_closed_form():
    # sum over (2,0),(1,1),(0,2): 2 * (int K u^2|u|) * (int K |u|) = 2 * (1/8) * (3/8)
    assert bnd.kernel_holder_constant(epanechnikov(), 2, 2) == pytest.approx(3 / 32, rel=1e-9)


def test_density_holder_constant_quadrature():
    from scipy.integrate import quad
    from scipy.stats import norm

    norm_c = norm.cdf(1) - norm.cdf(-1)

    def sup_second(x):
        z = np.linspace(-1, 1, 4001)
        d = np.exp(-0.5 * z**2 - 0.5 * (x - z) ** 2) / (2 * math.pi * norm_c)
        return np.max(np.abs(d * ((x - 2 * z) ** 2 - 2)))

    m = quad(sup_second, -12, 12, limit=400)[0]
    assert bnd.truncated_gaussian_holder_constant(2) == pytest.approx(m**2, rel=1e-3)


def test_berk_reduces_to_bernstein():
    n, s2, b, t = 100, 0.3, 1.0, 0.2
    assert bnd.berk_bound(n, 1, s2, b, t) == math.exp(-n * t * t / (2 * s2 + 2 / 3 * b * t))
    assert bnd.berk_bound(n, 2, s2, b, 1e-9) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        bnd.berk_bound(n, 1, s2, b, 0.0)


def test_berk_monte_carlo():
    rng = np.random.default_rng(11)
    n, reps = 40, 100_000
    means = rng.random((reps, n)).mean(axis=1)
    for t in (0.02, 0.05, 0.08, 0.12):
        emp = np.mean(means - 0.5 >= t)
        se = math.sqrt(emp * (1 - emp) / reps)
        assert emp <= bnd.berk_bound(n, 1, 1 / 12, 0.5, t) + 3 * se


def test_berk_monte_carlo_pairs():
    # U-statistic of 1{x1 <= x2} on uniforms: theta = 1/2, kernel variance 1/4
    rng = np.random.default_rng(12)
    n, reps = 30, 4000
    iu = np.triu_indices(n, 1)
    for t in (0.05, 0.1):
        hits = 0
        for _ in range(reps):
            x = rng.random(n)
            u = np.mean((x[:, None] <= x[None, :])[iu])
            hits += u - 0.5 >= t
        emp = hits / reps
        assert emp <= bnd.berk_bound(n, 2, 0.25, 0.5, t) + 3 * math.sqrt(emp * (1 - emp) / reps)


def test_lemma_display_coefficients(preset):
    n, h, t = 1000, 0.2, 0.1
    dev = bnd.nk_deviation_bound(preset, n, h, t)
    d = bnd.derive_constants(preset)
    assert dev.epsilon == pytest.approx(0.2 * h**2 / 2 + t)
    expect = 1 - 2 * math.exp(-(n // 2) * t**2 / (d.c1 * h**-2 + 0.75 * h**-2 * t))
    assert dev.prob_lower.raw == pytest.approx(expect, rel=1e-14)
    assert bnd.nk_deviation_bound(preset, n, h, 1e6).prob_lower.clamped == pytest.approx(1.0)


@settings(max_examples=50)
@given(n=st.integers(2, 10**6), h=st.floats(0.01, 1.0), t=st.floats(1e-3, 1.0))
def test_monotone_in_n(n, h, t):
    c = bnd.worked_example_constants()
    a = bnd.nk_deviation_bound(c, n, h, t).prob_lower
    b = bnd.nk_deviation_bound(c, 2 * n, h, t).prob_lower
    assert b.raw >= a.raw
    assert 0 <= a.clamped <= 1


def test_existence_value_and_errors(preset):
    v = bnd.existence_probability(preset, 651, 0.2)
    d = bnd.derive_constants(preset)
    gap = 0.35 - 0.2 * 0.04 / 2
    expect = 1 - 2 * math.exp(-325 * 0.04 * gap**2 / (d.c1 + d.c2 * gap))
    assert v.raw == pytest.approx(expect, rel=1e-14)
    # the displayed formula gives about 0.905 here, short of 0.99
    assert v.raw == pytest.approx(0.9053573932, abs=1e-9)
    assert "kth_power_stricter" in v.flags
    with pytest.raises(bnd.BoundPreconditionError):
        bnd.existence_probability(preset, 651, 2.0)
    small = bnd.existence_probability(preset, 50, 0.01)
    assert small.vacuous and small.clamped == 0 and small.raw < 0


def test_existence_monotone_in_n(preset):
    vals = [bnd.existence_probability(preset, n, 0.2).raw for n in range(2, 3000, 7)]
    assert np.all(np.diff(vals) >= 0)


def test_min_sample_size(preset):
    n99 = bnd.min_sample_size_for_existence(preset, 0.2, 0.99)
    n50 = bnd.min_sample_size_for_existence(preset, 0.2, 0.5)
    assert n50 < n99
    assert bnd.existence_probability(preset, n99, 0.2).raw >= 0.99
    assert bnd.existence_probability(preset, n99 - 1, 0.2).raw < 0.99
    assert bnd.closed_form_existence_threshold(0.2) == pytest.approx(650.9, abs=0.5)
    with pytest.raises(ValueError):
        bnd.min_sample_size_for_existence(preset, 0.2, 1.0)
    with pytest.raises(bnd.BoundPreconditionError):
        bnd.min_sample_size_for_existence(preset, 2.0, 0.9)


def test_closed_form_matches_ninety_percent_level():
    # the closed form uses C1 rounded to 0.26 and the level 2 exp(-3) ~ 0.0996
    c = bnd.worked_example_constants(f_max=math.sqrt(0.26 / (2 * 0.36)))
    assert bnd.derive_constants(c).c1 == pytest.approx(0.26)
    n90 = bnd.min_sample_size_for_existence(c, 0.2, 1 - 2 * math.exp(-3))
    assert abs(n90 - bnd.closed_form_existence_threshold(0.2)) <= 2


def test_theta_bound_regimes(preset):
    bern = bnd.worked_example_constants(c_g=None, b_gz=1.0, b_tilde=0.2)
    a = bnd.theta_deviation_bound(preset, 10**6, 0.2, 0.05, 0.05).prob_lower
    b = bnd.theta_deviation_bound(bern, 10**6, 0.2, 0.05, 0.05).prob_lower
    assert a.raw != b.raw and a.raw <= 1 and b.raw <= 1
    big = bnd.theta_deviation_bound(preset, 10**6, 0.2, 0.05, 1e9)
    lemma = bnd.nk_deviation_bound(preset, 10**6, 0.2, 0.05)
    assert 1 - big.prob_lower.raw == pytest.approx(1 - lemma.prob_lower.raw, rel=1e-12)
    with pytest.raises(bnd.BoundPreconditionError):
        bnd.theta_deviation_bound(preset, 1000, 0.2, 0.2, 0.1)


def test_theta_bound_monotone_in_t_prime(preset):
    vals = [bnd.theta_deviation_bound(preset, 10**5, 0.2, 0.05, tp).prob_lower.raw for tp in (0.01, 0.1, 1, 10)]
    assert np.all(np.diff(vals) >= 0)


def test_beta_bound_dual_route(preset):
    d = bnd.derive_constants(preset)
    res = bnd.beta_error_bound(preset, 1.0, 1, 4.0, 0.5, 0.05, 10**7, n_tuples=90)
    prob, hmax, pred = beta_bound_second_route(
        d.c1, d.c2, d.c5, d.c6, d.c7, d.c8, 0.35, 0.2, 2, 2, 1, 1.0, 1, 4.0, 0.5, 0.05, 10**7, 90
    )
    assert res.prob_lower.raw == pytest.approx(prob, rel=1e-13)
    assert res.h_max == pytest.approx(hmax, rel=1e-14)
    assert res.pred_bound == pytest.approx(pred, rel=1e-14)
    assert res.h_ok == (0.05 <= hmax)


def test_beta_bound_examples(preset):
    res = bnd.beta_error_bound(preset, 0.5, 2, 4.0, 0.3, 0.05, 10**6, n_tuples=10)
    assert res.est_bound[2.0] == pytest.approx(4 * 5 * 0.3 * math.sqrt(2) / 0.25)
    more = bnd.beta_error_bound(preset, 0.5, 2, 4.0, 0.3, 0.05, 10**6, n_tuples=100)
    assert more.prob_lower.raw <= res.prob_lower.raw
    with pytest.raises(ValueError):
        bnd.beta_error_bound(preset, 0.5, 2, 3.0, 0.3, 0.05, 10**6, n_tuples=10)
    with pytest.raises(ValueError):
        bnd.beta_error_bound(preset, 0.0, 2, 4.0, 0.3, 0.05, 10**6, n_tuples=10)


def test_beta_bound_per_tuple_bernstein():
    c = bnd.worked_example_constants(c_g=None, b_gz=1.0, b_tilde=0.2)
    res = bnd.beta_error_bound(c, 1.0, 1, 4.0, 0.5, 0.05, 10**9, b_g_per_tuple=[1.0, 2.0])
    d = bnd.derive_constants(c)
    m = 10**9 // 2
    h2 = 0.05**2
    total = 0.0
    for b in (1.0, 2.0):
        c6 = 128 * (b + 0.2) ** 2 * 0.75**4 / 0.35**4
        c7 = 2 * (b + 0.2) * 0.75**2 / 0.35**2
        total += math.exp(-m * 0.35**2 * h2 / (16 * d.c1 + 4 * d.c2 * 0.35))
        total += math.exp(-m * 0.25 * h2 / (4 * d.c8**2 * c6 + 2 * d.c8 * c7 * 0.5))
    assert res.prob_lower.raw == pytest.approx(1 - 2 * total, rel=1e-12)
