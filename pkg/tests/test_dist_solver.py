import math

import numpy as np
import pytest

from treepark.dist_solver import (
    DistVector,
    de_map,
    eq_residual,
    fixed_point_change,
    flux_law,
    iterate_law,
    reliable_length,
    tail_rate,
)
from treepark.errors import InsufficientSupport, NoConvergence
from treepark.model import geometric_poisson, theoretical_flux_mean
from treepark.treegen import sample_gw, sample_arrivals
from treepark.parking import park
from treepark.errors import SizeCapExceeded


def test_no_cars_is_delta_zero(empty_model):
    d = iterate_law(empty_model, N=50)
    assert d.pmf[0] == 1.0 and d.pmf[1:].sum() == 0.0
    assert d.iterations <= 2


def test_p0_and_mean(sub):
    d = iterate_law(sub, N=200)
    assert abs(d.p0 - 0.675) < 1e-10
    d4 = iterate_law(sub, N=400)
    assert abs(d4.mean() - 0.4153286) < 1e-6
    assert d4.mass_defect < 1e-12


def test_flux_law():
    d = DistVector(np.array([1.0]), 0.0)
    assert flux_law(d).pmf.tolist() == [1.0]
    f = flux_law(DistVector(np.array([0.5, 0.3, 0.2]), 0.0))
    assert np.allclose(f.pmf, [0.8, 0.2])


def test_flux_law_mean(sub):
    d = iterate_law(sub, N=400)
    assert abs(flux_law(d).mean() - theoretical_flux_mean(sub)) < 1e-6
    assert abs(flux_law(d).mean() - 0.0903286) < 1e-6


def test_fixed_point_and_eq(sub):
    d = iterate_law(sub, N=400)
    assert fixed_point_change(sub, d) < 1e-12
    for z in (0.2, 0.5, 0.9, 1.0):
        assert eq_residual(sub, d, z) < 1e-10


def test_iterates_increase(sub):
    # cut-height laws increase stochastically: survival functions grow
    p = np.zeros(101)
    p[0] = 1.0
    prev = np.cumsum(p[::-1])[::-1]
    for _ in range(30):
        p = de_map(sub, p)
        s = np.cumsum(p[::-1])[::-1]
        assert (s[1:] >= prev[1:] - 1e-15).all()
        prev = s


def test_trace_decreases(sub):
    _, trace = iterate_law(sub, N=100, return_trace=True)
    assert trace[-1] < 1e-13 and trace[-1] < trace[0]


def test_no_convergence(sub):
    with pytest.raises(NoConvergence) as e:
        iterate_law(sub, N=100, max_iters=3)
    assert e.value.iterations == 3


def test_monte_carlo_pmf(sub, rng):
    """Empirical visit counts of unconditioned trees against the solved law."""
    d = iterate_law(sub, N=200)
    reps = 40_000
    xs = []
    for _ in range(reps):
        try:
            t = sample_gw(sub, rng, 10**5)
        except SizeCapExceeded:
            continue
        xs.append(park(t, sample_arrivals(t, sub, rng)).visits[0])
    xs = np.array(xs)
    for k in range(4):
        f = np.mean(xs == k)
        assert abs(f - d.pmf[k]) < 4 * math.sqrt(d.pmf[k] * (1 - d.pmf[k]) / xs.size) + 1e-3


def test_tail_rate_subcritical(sub):
    d = iterate_law(sub, N=400, rel_tol=1e-9, max_iters=20_000)
    rho = tail_rate(d)
    assert 0.4 < rho < 1 - 1e-3
    assert reliable_length(d) <= d.N + 1 - d.N // 10


@pytest.mark.slow
def test_tail_rate_critical():
    m = geometric_poisson(math.sqrt(2) - 1, k_max=60)
    d = iterate_law(m, N=800, tol=1e-8, max_iters=200_000)
    assert abs(tail_rate(d) - 1) < 0.02


def test_tail_rate_degenerate(empty_model):
    with pytest.raises(InsufficientSupport):
        tail_rate(iterate_law(empty_model, N=50))
    with pytest.raises(ValueError):
        tail_rate(iterate_law(empty_model, N=50), window=0)
