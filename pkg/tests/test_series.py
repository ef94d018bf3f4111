import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from treepark.dist_solver import iterate_law
from treepark.errors import NotSubcritical
from treepark.model import ArrivalFamily, Model, binary_offspring, deterministic_law, geometric_poisson, poisson_law
from treepark.series import (
    BivariateSeries,
    MAX_BIVARIATE_ORDER,
    TruncatedSeries,
    branch_residual,
    f_exact,
    f_series,
    newton_continue,
    pgf_shifted,
    puiseux_branch,
    puiseux_c,
    radius_estimate,
    w_series,
)

coef = st.lists(st.floats(-2, 2), min_size=6, max_size=6)


@pytest.fixture
def sub60():
    return geometric_poisson(0.325, k_max=60)


# --------------------------------------------------------------------------
# arithmetic


@settings(max_examples=100, deadline=None)
@given(coef, coef)
def test_product_matches_numpy(a, b):
    p = TruncatedSeries(np.array(a)) * TruncatedSeries(np.array(b))
    assert np.allclose(p.coeffs, np.convolve(a, b)[:6])


@settings(max_examples=100, deadline=None)
@given(coef)
def test_reciprocal(a):
    if abs(a[0]) < 0.1:
        a[0] = 1.0
    s = TruncatedSeries(np.array(a))
    one = s * s.reciprocal()
    assert np.allclose(one.coeffs, [1, 0, 0, 0, 0, 0], atol=1e-6 * max(1, np.abs(one.coeffs).max()))


def test_compose_and_pow():
    x = TruncatedSeries(np.array([0.0, 1, 0, 0, 0]))
    one_plus = TruncatedSeries(np.array([1.0, 1, 0, 0, 0]))
    assert np.allclose((one_plus**3).coeffs, [1, 3, 3, 1, 0])
    sq = TruncatedSeries(np.array([0.0, 0, 1, 0, 0]))
    assert np.allclose(one_plus.compose(x * 2).coeffs, [1, 2, 0, 0, 0])
    assert np.allclose((one_plus**2).compose(sq).coeffs, [1, 0, 2, 0, 1])


def test_bivariate_eval_and_substitute():
    a = np.zeros((4, 4))
    a[1, 1], a[0, 2], a[2, 0] = 2.0, 1.0, -1.0
    F = BivariateSeries(a)
    assert abs(F(0.3, 0.2) - (2 * 0.06 + 0.04 - 0.09)) < 1e-15
    y = TruncatedSeries(np.array([0.0, 0.5, 0, 0]))
    assert np.allclose(F.substitute_y(y).coeffs, [0, 0, 2 * 0.5 + 0.25 - 1, 0])


def test_bivariate_order_cap(sub60):
    with pytest.raises(ValueError):
        f_series(sub60, MAX_BIVARIATE_ORDER + 1)


# --------------------------------------------------------------------------
# generating functions


def test_pgf_shifted():
    assert np.allclose(pgf_shifted(deterministic_law(0), 4).coeffs, [1, 0, 0, 0, 0])
    assert np.allclose(pgf_shifted(deterministic_law(2), 4).coeffs, [1, 2, 1, 0, 0])
    # e^{alpha x}
    c = pgf_shifted(poisson_law(0.325), 8).coeffs
    exact = [0.325**k / math.factorial(k) for k in range(9)]
    assert np.allclose(c, exact, atol=1e-12, rtol=0)


def test_f_low_order_coefficients(sub60):
    F = f_series(sub60, 6)
    mo = sub60.moments
    assert abs(F[0, 0]) < 1e-14 and abs(F[1, 0]) < 1e-14 and abs(F[0, 1]) < 1e-14
    assert abs(F[0, 2] - mo.sigma2 / 2) < 1e-10 and abs(F[0, 2] - 1.0) < 1e-10
    assert abs(F[1, 1] - (mo.e_sb_m * (1 - mo.sigma2) - 1)) < 1e-10
    assert abs(F[1, 1] + 1.325) < 1e-10
    assert abs(F[2, 0] - (mo.e_q + 2 * mo.e_m) / 2) < 1e-10


def test_f_series_matches_exact(sub60):
    F = f_series(sub60, 10)
    p0 = 0.675
    for x, y in [(0.01, 0.02), (-0.02, 0.01), (0.005, -0.01)]:
        assert abs(F(x, y) - f_exact(sub60, x, y, p0)[0]) < 1e-12


# --------------------------------------------------------------------------
# branches


def test_puiseux_c(sub60):
    cm, cp = puiseux_c(sub60)
    assert abs(cm - 0.4153286) < 1e-6 and abs(cp - 0.9096714) < 1e-6
    d = iterate_law(sub60, N=400)
    assert abs(cm - d.mean()) < 1e-6


def test_puiseux_c_no_cars(empty_model):
    cm, cp = puiseux_c(empty_model)
    s2 = empty_model.moments.sigma2
    assert cm == 0.0 and abs(cp - 2 / s2) < 1e-15


def test_critical_not_subcritical():
    with pytest.raises(NotSubcritical):
        puiseux_c(geometric_poisson(math.sqrt(2) - 1, k_max=60))
    with pytest.raises(NotSubcritical):
        puiseux_c(geometric_poisson(0.5))


def test_no_cars_branch(empty_model):
    br = puiseux_branch(empty_model, -1, 6)
    assert np.all(br.c == 0)
    assert np.allclose(w_series(empty_model, 10).coeffs, [1] + [0] * 10)


def test_branch_residual(sub60):
    br = puiseux_branch(sub60, -1, 6)
    assert abs(br.c[0] - 0.4153286) < 1e-6
    assert np.abs(branch_residual(sub60, br)[:7]).max() < 1e-9
    assert abs(newton_continue(sub60, -0.05, br.c[0] * -0.05) - br(-0.05)) < 1e-8


def test_plus_branch_residual(sub60):
    br = puiseux_branch(sub60, 1, 6)
    assert np.abs(branch_residual(sub60, br)[:7]).max() < 1e-9


def test_newton(sub60):
    assert newton_continue(sub60, 0.0, 0.0) == 0.0
    br = puiseux_branch(sub60, -1, 8)
    d = iterate_law(sub60, N=400)
    y = newton_continue(sub60, -0.1, br(-0.1))
    assert abs(y - (d.pgf(0.9) - 1)) < 1e-6
    y_plus = newton_continue(sub60, 0.05, br(0.05))
    assert 0 < y_plus < 1 and math.isfinite(y_plus)


def test_w_series(sub60):
    w = w_series(sub60, 20)
    assert abs(w[0] - 0.675) < 1e-10
    d = iterate_law(sub60, N=400)
    assert np.abs(w.coeffs - d.pmf[:21]).max() < 1e-10
    r = radius_estimate(w.coeffs)
    assert r > 1


def test_binary_model_branch():
    m = Model(binary_offspring(), ArrivalFamily.uniform(poisson_law(0.1)))
    br = puiseux_branch(m, -1, 6)
    assert np.abs(branch_residual(m, br)[:7]).max() < 1e-9
    assert abs(br.c[0] - iterate_law(m, N=300).mean()) < 1e-8
