import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from condustat.functionals import (
    BernsteinTail,
    BoundedTail,
    builtin_functional,
    check_identifiability,
    concat_basis,
    constant_basis,
    custom_basis,
    eval_basis,
    get_link,
    indicator_basis,
    link_apply,
    link_derivative,
    link_inverse,
    polynomial_basis,
    trigonometric_basis,
)

reals = st.floats(-1e3, 1e3, allow_nan=False)


def sum_basis():
    return custom_basis(2, 1, [lambda z: np.ones(z.shape[:-2]), lambda z: z[..., 0, 0] + z[..., 1, 0]], 2.0)


def test_builtin_values():
    assert builtin_functional("rank_prob")(np.array([1.0]), np.array([2.0])) == 1
    assert builtin_functional("gini")(np.array([3.0]), np.array([7.0])) == 4
    assert builtin_functional("cond_variance")(np.array([2.0]), np.array([5.0])) == -6


def test_rank_prob_tie_is_counted():
    assert builtin_functional("rank_prob")(np.array([1.5]), np.array([1.5])) == 1


def test_covariance_functional_verbatim():
    g = builtin_functional("cond_covariance")
    assert g.x_dim == 2
    x1, x2 = np.array([2.0, 3.0]), np.array([5.0, 7.0])
    assert g(x1, x2) == 2 * 5 - 2 * 7


def test_tail_models():
    assert builtin_functional("rank_prob").tail == BoundedTail(1.0)
    g = builtin_functional("gini", b_g=2.0, b_tilde=0.5)
    assert isinstance(g.tail, BernsteinTail)
    assert builtin_functional("gini").tail is None
    with pytest.raises(ValueError):
        builtin_functional("kendall")


def test_arity_checked():
    with pytest.raises(ValueError):
        builtin_functional("gini")(np.array([1.0]))


@settings(max_examples=200)
@given(a=reals, b=reals)
def test_rank_prob_binary_and_gini_symmetric(a, b):
    r = builtin_functional("rank_prob")(np.array([a]), np.array([b]))
    assert r in (0.0, 1.0)
    g = builtin_functional("gini")
    assert g(np.array([a]), np.array([b])) == g(np.array([b]), np.array([a]))


def test_eval_basis_examples():
    assert eval_basis(constant_basis(2), [0.3, 0.7]).tolist() == [1.0]
    assert eval_basis(sum_basis(), [0.5, -0.25]).tolist() == [1.0, 0.25]
    poly = polynomial_basis(2, 1, 2)
    row = dict(zip(poly.names, eval_basis(poly, [1.0, 1.0])))
    assert [row[k] for k in ("1", "z1", "z2", "z1*z2")] == [1, 1, 1, 1]
    with pytest.raises(ValueError):
        eval_basis(poly, [1.0, 1.0, 1.0])


def test_polynomial_names_and_count():
    poly = polynomial_basis(2, 1, 2)
    assert poly.names == ("1", "z1", "z2", "z1*z1", "z1*z2", "z2*z2")


def test_trig_and_indicator():
    trig = trigonometric_basis(2, 1, 1)
    v = eval_basis(trig, [0.5, 0.0])
    assert v == pytest.approx([1.0, 0.0, 0.0, 1.0], abs=1e-15)
    ind = indicator_basis(1, 1, [[-1, 0, 1]])
    assert eval_basis(ind, [-0.5]).tolist() == [1, 0]
    assert eval_basis(ind, [1.0]).tolist() == [0, 1]
    cat = concat_basis(constant_basis(2), trig)
    assert cat.r == 5


def test_links():
    assert link_apply(sum_basis(), 0.37) == 0.37
    logit = constant_basis(1).with_link(get_link("logit"))
    assert link_apply(logit, 0.5) == 0
    assert link_derivative(logit, 0.5) == pytest.approx(4.0)
    assert link_inverse(logit, 0.0) == 0.5


def test_logit_clamps_and_flags():
    link = get_link("logit")
    y, clamped = link.apply_flagged(1.0)
    assert clamped and np.isfinite(y)
    y, clamped = link.apply_flagged(0.3)
    assert not clamped
    strict = get_link("logit", eps=0.0)
    with pytest.raises(ValueError):
        strict.apply(0.0)


@pytest.mark.parametrize("name", ["identity", "logit", "probit"])
def test_link_monotone_and_invertible(name):
    link = get_link(name)
    x = np.linspace(-5, 5, 1000) if name == "identity" else np.linspace(1e-4, 1 - 1e-4, 1000)
    y = link.apply(x)
    assert np.all(np.diff(y) > 0)
    assert np.max(np.abs(link.inverse(y) - x)) <= 1e-10
    assert np.all(link.derivative(x) > 0)


def test_probit_derivative_matches_finite_difference():
    link = get_link("probit")
    x = np.linspace(0.05, 0.95, 19)
    eps = 1e-6
    fd = (link.apply(x + eps) - link.apply(x - eps)) / (2 * eps)
    assert link.derivative(x) == pytest.approx(fd, rel=1e-6)


def test_identifiability_examples():
    pts = np.array([[0.0], [0.5], [1.0]])
    pairs = np.array(list(itertools.permutations(range(3), 2)))
    lin = custom_basis(2, 1, [lambda z: np.ones(z.shape[:-2]), lambda z: z[..., 0, 0]], 1.0)
    rep = check_identifiability(lin, pts, pairs)
    assert rep.rank == 2 and rep.identifiable
    dup = custom_basis(2, 1, [lambda z: z[..., 0, 0], lambda z: z[..., 0, 0]], 1.0)
    rep = check_identifiability(dup, pts, pairs)
    assert rep.rank == 1 and not rep.identifiable
    assert check_identifiability(constant_basis(2), pts, pairs).identifiable
    with pytest.raises(ValueError):
        check_identifiability(lin, pts, np.empty((0, 2), dtype=int))


@settings(max_examples=30, deadline=None)
@given(st.randoms(use_true_random=False))
def test_identifiability_row_permutation_invariant(rnd):
    pts = np.linspace(-1, 1, 4)[:, None]
    pairs = list(itertools.permutations(range(4), 2))
    basis = polynomial_basis(2, 1, 2)
    a = check_identifiability(basis, pts, np.array(pairs))
    rnd.shuffle(pairs)
    b = check_identifiability(basis, pts, np.array(pairs))
    assert a.rank == b.rank
    assert a.singular_values == pytest.approx(b.singular_values, rel=1e-10)


@settings(max_examples=50)
@given(st.lists(st.floats(-1, 1), min_size=2, max_size=2))
def test_psi_bound_holds(z):
    for basis in (polynomial_basis(2, 1, 2), trigonometric_basis(2, 1, 2)):
        assert np.all(np.abs(eval_basis(basis, z)) <= basis.psi_bound + 1e-12)
