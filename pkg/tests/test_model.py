import math

import numpy as np
import pytest

from treepark.errors import ConfigError, DegenerateModel, InvalidDistribution, InvalidT, NegativeProbability, NonCriticalOffspring
from treepark.model import (
    ArrivalFamily,
    Model,
    OffspringDist,
    Regime,
    bernoulli_law,
    binary_offspring,
    build_model,
    classify,
    deterministic_law,
    dilute,
    geometric_offspring,
    geometric_poisson,
    mean_flux_curve,
    poisson_law,
    root_parked_probability,
    t_max,
    theoretical_flux_mean,
    theta,
)


def brute_moments(model):
    """Moments by explicit double sums, independent of the vectorised code."""
    nu = model.offspring.probs
    e_sb = e_m = e_q = 0.0
    for k, w in enumerate(nu):
        law = model.arrivals.law(k)
        m = sum(j * p for j, p in enumerate(law))
        s2 = sum(j * j * p for j, p in enumerate(law)) - m * m
        e_sb += k * w * m
        e_m += w * m
        e_q += w * (s2 + m * m - m)
    s2nu = sum(k * k * w for k, w in enumerate(nu)) - 1.0
    return e_sb, e_m, e_q, s2nu


def test_geometric_poisson_moments(sub):
    mo = sub.moments
    assert abs(mo.sigma2 - 2) < 1e-8
    assert abs(mo.e_sb_m - 0.325) < 1e-9  # truncated at 40
    assert np.allclose((mo.e_sb_m, mo.e_m, mo.e_q, mo.sigma2), brute_moments(sub), atol=1e-13)


def test_no_cars_gives_theta_one(empty_model):
    assert theta(empty_model) == 1.0


def test_per_degree_example():
    m = Model(binary_offspring(), ArrivalFamily.per_degree({0: deterministic_law(2), 2: deterministic_law(0)}))
    mo = m.moments
    assert (mo.e_sb_m, mo.e_m, mo.e_q, mo.sigma2) == (0.0, 1.0, 1.0, 1.0)
    assert theta(m) == 0.0
    assert np.allclose(brute_moments(m), (0, 1, 1, 1))


@pytest.mark.parametrize("alpha", [0.1, 0.325, 0.41, 0.5, 0.9])
def test_theta_closed_form(alpha):
    m = geometric_poisson(alpha, k_max=60)
    assert abs(theta(m) - ((1 - alpha) ** 2 - 2 * alpha**2)) < 1e-12


def test_theta_value_and_regimes(sub, sup):
    assert abs(theta(sub) - 0.244375) < 1e-8
    assert classify(sub).regime is Regime.SUBCRITICAL
    assert classify(geometric_poisson(math.sqrt(2) - 1, k_max=60)).regime is Regime.CRITICAL
    c = classify(sup)
    assert c.regime is Regime.SUPERCRITICAL and abs(c.theta + 0.25) < 1e-8


def test_size_biased_mean_above_one_is_supercritical():
    m = Model(binary_offspring(), ArrivalFamily.per_degree({2: deterministic_law(2)}))
    c = classify(m)
    assert c.regime is Regime.SUPERCRITICAL and not c.hypothesis_holds


def test_mean_flux_curve(sub, sup):
    assert mean_flux_curve(sub, 0.0) == 0.0
    assert abs(mean_flux_curve(sup, 0.5) - (0.75 - math.sqrt(0.3125)) / 2) < 1e-8
    assert abs(mean_flux_curve(sup, 0.5) - 0.0954915) < 1e-6
    assert mean_flux_curve(sup, 0.9) == math.inf
    with pytest.raises(InvalidT):
        mean_flux_curve(sub, 1.5)


def test_t_max(sub, sup, empty_model):
    assert abs(t_max(sup) - (3 - math.sqrt(5))) < 1e-8
    assert t_max(sub) == math.inf
    assert t_max(empty_model) == math.inf


def test_t_max_solves_boundary(sup):
    t = t_max(sup)
    mo = sup.moments
    assert abs((1 - mo.e_sb_m * t) ** 2 - mo.sigma2 * mo.e_q * t) < 1e-12


def test_dilute(sup):
    assert dilute(sup, 1.0) is sup
    zero = dilute(sup, 0.0)
    assert all(zero.arrivals.law(k)[0] == 1.0 for k in range(5))
    d = dilute(sup, 0.65)
    assert abs(d.moments.e_sb_m - 0.325) < 1e-9
    assert classify(d).regime is Regime.SUBCRITICAL
    assert np.allclose(brute_moments(d), (d.moments.e_sb_m, d.moments.e_m, d.moments.e_q, d.moments.sigma2))
    # mixture second moment differs from the pure Poisson(0.325) case
    assert abs(d.moments.e_q - 0.325**2) > 1e-3


def test_theoretical_flux_mean(sub, sup, empty_model):
    assert abs(theoretical_flux_mean(sub) - (0.675 - math.sqrt(0.244375)) / 2) < 1e-8
    assert abs(theoretical_flux_mean(sub) - 0.0903286) < 1e-6
    assert theoretical_flux_mean(empty_model) == 0.0
    assert theoretical_flux_mean(sup) == math.inf


def test_root_parked_probability(sub, sup):
    assert abs(root_parked_probability(sub) - 0.325) < 1e-12
    assert root_parked_probability(sup) is None


def test_invalid_offspring():
    with pytest.raises(NonCriticalOffspring):
        OffspringDist([0.5, 0.5])
    with pytest.raises(NegativeProbability):
        OffspringDist([0.6, -0.2, 0.6])
    with pytest.raises(InvalidDistribution):
        OffspringDist([0.3, 0.3])


def test_degenerate_models():
    with pytest.raises(DegenerateModel):
        Model(OffspringDist([0, 1]), ArrivalFamily.uniform(poisson_law(0.3)))
    with pytest.raises(DegenerateModel):
        Model(binary_offspring(), ArrivalFamily.uniform(deterministic_law(1)))


def test_geometric_truncation_renormalised():
    off = geometric_offspring(40)
    assert abs(off.probs.sum() - 1) < 1e-15
    assert abs(off.probs[3] - 2.0**-4) < 1e-11


def test_laws():
    assert np.allclose(bernoulli_law(0.3), [0.7, 0.3])
    assert np.array_equal(deterministic_law(2), [0, 0, 1])
    p = poisson_law(0.325)
    assert p.size == 31 and abs(p.sum() - 1) < 1e-15


def test_build_model_from_spec():
    m = build_model({"family": "geometric", "k_max": 40},
                    {"mode": "uniform", "family": "poisson", "params": {"alpha": 0.325}})
    assert abs(theta(m) - 0.244375) < 1e-8
    leaf = build_model({"family": "binary"}, {"mode": "leaf-only", "family": "deterministic", "params": {"value": 2}})
    assert leaf.moments.e_m == 1.0 and leaf.moments.e_sb_m == 0.0


@pytest.mark.parametrize("spec", [
    {"family": "geometric", "bogus": 1},
    {"family": "nope"},
])
def test_bad_offspring_spec(spec):
    with pytest.raises(ConfigError):
        build_model(spec, {"family": "poisson", "params": {"alpha": 0.1}})


def test_bad_arrival_spec():
    with pytest.raises(ConfigError):
        build_model({"family": "binary"}, {"mode": "sideways"})
    with pytest.raises(ConfigError):
        build_model({"family": "binary"}, {"mode": "uniform", "family": "poisson", "params": {}})
