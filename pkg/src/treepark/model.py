"""Parking models on critical Galton-Watson trees.

A model is an offspring law ``nu`` (critical, finite support) together with a
family of car-arrival laws ``mu_(k)`` indexed by the outdegree ``k`` of the
vertex.  Infinite-support families are truncated and renormalised, and every
moment is recomputed from the truncated vectors so that the closed-form
identities below hold exactly for the model as represented.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping

import numpy as np
from scipy import optimize, stats

from .errors import (
    ConfigError,
    DegenerateModel,
    InvalidDistribution,
    InvalidT,
    NegativeProbability,
    NonCriticalOffspring,
)

PROB_TOL = 1e-12
MEAN_TOL = 1e-9
THETA_TOL = 1e-10


def as_law(probs, name: str = "law") -> np.ndarray:
    """Validate a finite probability vector and return a read-only copy.

    Trailing zeros are stripped (at least one entry is kept).
    """
    p = np.array(probs, dtype=float).ravel()
    if p.size == 0:
        raise InvalidDistribution(f"{name} is empty")
    if not np.all(np.isfinite(p)):
        raise InvalidDistribution(f"{name} has non-finite entries")
    if np.any(p < 0):
        raise NegativeProbability(f"{name} has negative entries")
    total = p.sum()
    if abs(total - 1.0) > PROB_TOL:
        raise InvalidDistribution(f"{name} sums to {total!r}, not 1")
    nz = np.flatnonzero(p)
    p = p[: nz[-1] + 1].copy()
    p.setflags(write=False)
    return p


def law_mean_var(p: np.ndarray) -> tuple[float, float]:
    k = np.arange(p.size, dtype=float)
    mean = float(np.dot(k, p))
    var = float(np.dot((k - mean) ** 2, p))
    return mean, var


def _renormalize(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p / p.sum()


def is_dirac(p: np.ndarray, at: int) -> bool:
    return p.size == at + 1 and p[at] == 1.0


# --------------------------------------------------------------------------
# offspring laws


@dataclass(frozen=True, eq=False)
class OffspringDist:
    """Critical offspring law ``nu`` on ``{0, ..., k_max}``."""

    probs: np.ndarray
    mean: float = field(init=False)
    variance: float = field(init=False)

    def __post_init__(self):
        p = as_law(self.probs, "offspring law")
        mean, var = law_mean_var(p)
        if abs(mean - 1.0) > MEAN_TOL:
            raise NonCriticalOffspring(f"offspring mean is {mean!r}, expected 1")
        if is_dirac(p, 1):
            raise DegenerateModel("offspring law is delta_1")
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)

    @property
    def k_max(self) -> int:
        return self.probs.size - 1

    @property
    def size_biased(self) -> np.ndarray:
        """``k * nu_k``; a probability vector because the mean is 1."""
        return np.arange(self.probs.size) * self.probs

    def __repr__(self) -> str:
        return f"OffspringDist(k_max={self.k_max}, variance={self.variance:.6g})"


def _truncated_mean(family, param, k_max):
    p = family(param, k_max)
    return float(np.dot(np.arange(p.size), p))


def _geometric_probs(p, k_max):
    return _renormalize((1.0 - p) * p ** np.arange(k_max + 1))


def _poisson_probs(lam, k_max):
    return _renormalize(stats.poisson.pmf(np.arange(k_max + 1), lam))


def _recenter(family, guess, k_max, lo, hi):
    return optimize.brentq(lambda a: _truncated_mean(family, a, k_max) - 1.0, lo, hi, xtol=1e-15)


def geometric_offspring(k_max: int = 40, p: float = 0.5, recenter: bool = False) -> OffspringDist:
    """``nu_k = (1-p) p^k`` truncated at ``k_max`` and renormalised.

    With ``recenter=True`` the parameter is moved so that the truncated law
    has mean exactly 1 (useful for small ``k_max``).
    """
    if recenter:
        p = _recenter(_geometric_probs, p, k_max, 1e-3, 1 - 1e-9)
    return OffspringDist(_geometric_probs(p, k_max))


def poisson_offspring(k_max: int = 30, lam: float = 1.0, recenter: bool = False) -> OffspringDist:
    if recenter:
        lam = _recenter(_poisson_probs, lam, k_max, 1e-3, float(k_max))
    return OffspringDist(_poisson_probs(lam, k_max))


def binary_offspring(q: float = 0.5) -> OffspringDist:
    """``nu_0 = nu_2 = q`` and ``nu_1 = 1 - 2q``."""
    if not 0.0 < q <= 0.5:
        raise InvalidDistribution(f"binary offspring needs 0 < q <= 1/2, got {q}")
    return OffspringDist([q, 1.0 - 2.0 * q, q])


# --------------------------------------------------------------------------
# arrival laws


def poisson_law(alpha: float, truncation: int = 30) -> np.ndarray:
    if alpha < 0:
        raise InvalidDistribution(f"Poisson parameter must be >= 0, got {alpha}")
    if alpha == 0:
        return as_law([1.0])
    return as_law(_renormalize(stats.poisson.pmf(np.arange(truncation + 1), alpha)), "Poisson law")


def bernoulli_law(p: float) -> np.ndarray:
    if not 0.0 <= p <= 1.0:
        raise InvalidDistribution(f"Bernoulli parameter must be in [0,1], got {p}")
    return as_law([1.0 - p, p])


def deterministic_law(value: int) -> np.ndarray:
    if value < 0 or int(value) != value:
        raise InvalidDistribution(f"deterministic arrivals must be a nonnegative integer, got {value}")
    p = np.zeros(int(value) + 1)
    p[-1] = 1.0
    return as_law(p)


DELTA0 = deterministic_law(0)


@dataclass(frozen=True, eq=False)
class ArrivalFamily:
    """Car-arrival laws indexed by outdegree.

    ``laws[k]`` is used for vertices with ``k`` children; any degree missing
    from ``laws`` uses ``default``.
    """

    laws: Mapping[int, np.ndarray]
    default: np.ndarray = DELTA0

    def __post_init__(self):
        laws = {int(k): as_law(v, f"arrival law for degree {k}") for k, v in dict(self.laws).items()}
        if any(k < 0 for k in laws):
            raise InvalidDistribution("arrival laws need nonnegative degrees")
        object.__setattr__(self, "laws", laws)
        object.__setattr__(self, "default", as_law(self.default, "default arrival law"))

    @classmethod
    def uniform(cls, law) -> "ArrivalFamily":
        return cls({}, law)

    @classmethod
    def leaf_only(cls, law) -> "ArrivalFamily":
        return cls({0: law}, DELTA0)

    @classmethod
    def per_degree(cls, laws: Mapping[int, Any], default=DELTA0) -> "ArrivalFamily":
        return cls(laws, default)

    def law(self, k: int) -> np.ndarray:
        return self.laws.get(int(k), self.default)

    def m(self, k: int) -> float:
        return law_mean_var(self.law(k))[0]

    def sigma2(self, k: int) -> float:
        return law_mean_var(self.law(k))[1]

    def table(self, k_max: int) -> np.ndarray:
        """Dense ``(k_max+1, J)`` array whose row ``k`` is ``mu_(k)``."""
        rows = [self.law(k) for k in range(k_max + 1)]
        width = max(r.size for r in rows)
        out = np.zeros((k_max + 1, width))
        for k, r in enumerate(rows):
            out[k, : r.size] = r
        return out

    def map(self, fn) -> "ArrivalFamily":
        return ArrivalFamily({k: fn(v) for k, v in self.laws.items()}, fn(self.default))


# --------------------------------------------------------------------------
# model and moments


@dataclass(frozen=True)
class ModelMoments:
    e_sb_m: float  # sum_k k nu_k m_(k)
    e_m: float  # sum_k nu_k m_(k)
    e_q: float  # sum_k nu_k (sigma2_(k) + m_(k)^2 - m_(k))
    sigma2: float
    theta: float


def compute_moments(offspring: OffspringDist, arrivals: ArrivalFamily) -> ModelMoments:
    nu = offspring.probs
    k = np.arange(nu.size)
    mv = np.array([law_mean_var(arrivals.law(j)) for j in k])
    m, s2 = mv[:, 0], mv[:, 1]
    e_sb_m = float(np.dot(k * nu, m))
    e_m = float(np.dot(nu, m))
    e_q = float(np.dot(nu, s2 + m * m - m))
    sigma2 = offspring.variance
    theta = (1.0 - e_sb_m) ** 2 - sigma2 * e_q
    return ModelMoments(e_sb_m=e_sb_m, e_m=e_m, e_q=e_q, sigma2=sigma2, theta=theta)


@dataclass(frozen=True, eq=False)
class Model:
    offspring: OffspringDist
    arrivals: ArrivalFamily
    moments: ModelMoments = field(init=False)

    def __post_init__(self):
        nu = self.offspring.probs
        support = np.flatnonzero(nu)
        if all(is_dirac(self.arrivals.law(k), 1) for k in support):
            raise DegenerateModel("every arrival law on the offspring support is delta_1")
        object.__setattr__(self, "moments", compute_moments(self.offspring, self.arrivals))

    @property
    def k_max(self) -> int:
        return self.offspring.k_max

    @property
    def theta(self) -> float:
        return self.moments.theta

    def arrival_table(self) -> np.ndarray:
        return self.arrivals.table(self.k_max)

    def __repr__(self) -> str:
        mo = self.moments
        return (
            f"Model(k_max={self.k_max}, Sigma2={mo.sigma2:.6g}, E_sb[m]={mo.e_sb_m:.6g}, "
            f"E[m]={mo.e_m:.6g}, theta={mo.theta:.6g})"
        )


# --------------------------------------------------------------------------
# spec parsing

_OFFSPRING_KEYS = {"family", "params", "k_max", "recenter"}
_LAW_KEYS = {"family", "params", "truncation"}
_ARRIVAL_KEYS = {"mode", "family", "params", "truncation", "laws", "default"}


def _check_keys(spec: Mapping, allowed: set, where: str):
    if not isinstance(spec, Mapping):
        raise ConfigError(f"{where} must be a mapping, got {type(spec).__name__}")
    extra = set(spec) - allowed
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")


def offspring_from_spec(spec: Mapping) -> OffspringDist:
    _check_keys(spec, _OFFSPRING_KEYS, "offspring spec")
    family = spec.get("family", "geometric")
    params = dict(spec.get("params") or {})
    k_max = spec.get("k_max")
    recenter = bool(spec.get("recenter", False))
    try:
        if family == "geometric":
            return geometric_offspring(k_max or 40, recenter=recenter, **params)
        if family == "poisson":
            return poisson_offspring(k_max or 30, recenter=recenter, **params)
        if family == "binary":
            return binary_offspring(**params)
        if family == "custom":
            return OffspringDist(params["probs"])
    except TypeError as exc:
        raise ConfigError(f"bad params for offspring family {family!r}: {exc}") from None
    except KeyError:
        raise ConfigError("custom offspring needs params.probs") from None
    raise ConfigError(f"unknown offspring family {family!r}")


def law_from_spec(spec: Mapping, truncation: int | None = None) -> np.ndarray:
    _check_keys(spec, _LAW_KEYS, "arrival law spec")
    family = spec.get("family")
    params = dict(spec.get("params") or {})
    trunc = spec.get("truncation", truncation) or 30
    try:
        if family == "poisson":
            return poisson_law(params.pop("alpha"), trunc, **params)
        if family == "bernoulli":
            return bernoulli_law(**params)
        if family == "deterministic":
            return deterministic_law(**params)
        if family == "custom":
            return as_law(params["probs"], "custom arrival law")
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"bad params for arrival family {family!r}: {exc}") from None
    raise ConfigError(f"unknown arrival family {family!r}")


def arrivals_from_spec(spec: Mapping) -> ArrivalFamily:
    _check_keys(spec, _ARRIVAL_KEYS, "arrival spec")
    mode = spec.get("mode", "uniform")
    if mode in ("uniform", "leaf-only"):
        if "laws" in spec or "default" in spec:
            raise ConfigError(f"'laws'/'default' are only valid with mode per-degree, not {mode!r}")
        law = law_from_spec({k: spec[k] for k in _LAW_KEYS if k in spec})
        return ArrivalFamily.uniform(law) if mode == "uniform" else ArrivalFamily.leaf_only(law)
    if mode == "per-degree":
        if "family" in spec or "params" in spec:
            raise ConfigError("per-degree arrivals take 'laws' and 'default', not 'family'/'params'")
        trunc = spec.get("truncation")
        laws = {int(k): law_from_spec(v, trunc) for k, v in (spec.get("laws") or {}).items()}
        default = law_from_spec(spec["default"], trunc) if "default" in spec else DELTA0
        return ArrivalFamily.per_degree(laws, default)
    raise ConfigError(f"unknown arrival mode {mode!r}")


def build_model(offspring_spec, arrival_spec) -> Model:
    """Build a validated :class:`Model`.

    Each argument may be an already-built object (``OffspringDist`` /
    ``ArrivalFamily``) or a config mapping, e.g.::

        build_model({"family": "geometric", "k_max": 40},
                    {"mode": "uniform", "family": "poisson", "params": {"alpha": 0.325}})
    """
    offspring = offspring_spec if isinstance(offspring_spec, OffspringDist) else offspring_from_spec(offspring_spec)
    arrivals = arrival_spec if isinstance(arrival_spec, ArrivalFamily) else arrivals_from_spec(arrival_spec)
    return Model(offspring, arrivals)


def geometric_poisson(alpha: float, k_max: int = 40, truncation: int = 30) -> Model:
    """Geometric(1/2) offspring with uniform Poisson(alpha) arrivals."""
    return Model(geometric_offspring(k_max), ArrivalFamily.uniform(poisson_law(alpha, truncation)))


# --------------------------------------------------------------------------
# closed-form theory


class Regime(str, Enum):
    SUBCRITICAL = "subcritical"
    CRITICAL = "critical"
    SUPERCRITICAL = "supercritical"


@dataclass(frozen=True)
class Classification:
    regime: Regime
    theta: float
    hypothesis_holds: bool  # E_sb[m] <= 1, required for the theta criterion


def theta(model: Model) -> float:
    """Phase criterion ``(1 - E_sb[m])^2 - Sigma^2 E[sigma^2 + m^2 - m]``."""
    mo = model.moments
    return (1.0 - mo.e_sb_m) ** 2 - mo.sigma2 * mo.e_q


def classify(model: Model, tol: float = THETA_TOL) -> Classification:
    th = theta(model)
    holds = model.moments.e_sb_m <= 1.0
    if not holds:
        return Classification(Regime.SUPERCRITICAL, th, False)
    if th > tol:
        regime = Regime.SUBCRITICAL
    elif th < -tol:
        regime = Regime.SUPERCRITICAL
    else:
        regime = Regime.CRITICAL
    return Classification(regime, th, True)


def t_max(model: Model) -> float:
    """Smallest root in [0, 1] of ``(1 - a t)^2 = b t``, or ``inf``.

    Here ``a = E_sb[m]`` and ``b = Sigma^2 E[sigma^2 + m^2 - m]``.  The small
    root of ``a^2 t^2 - (2a + b) t + 1`` is written as ``2 / (2a + b + sqrt(b^2 + 4ab))``,
    which stays finite and accurate when ``a`` or ``b`` vanish.
    """
    mo = model.moments
    a, b = mo.e_sb_m, mo.sigma2 * mo.e_q
    denom = 2.0 * a + b + math.sqrt(b * b + 4.0 * a * b)
    if denom == 0.0:
        return math.inf
    t = 2.0 / denom
    if t <= 1.0 + 1e-12:
        return min(t, 1.0)
    return math.inf


def mean_flux_curve(model: Model, t: float) -> float:
    """Mean root flux of the unconditioned tree with arrivals diluted by ``t``."""
    if not 0.0 <= t <= 1.0:
        raise InvalidT(f"t must be in [0, 1], got {t}")
    if t > t_max(model):
        return math.inf
    mo = model.moments
    lin = 1.0 - mo.e_sb_m * t
    disc = max(lin * lin - mo.sigma2 * mo.e_q * t, 0.0)
    return (lin - math.sqrt(disc)) / mo.sigma2


def theoretical_flux_mean(model: Model, tol: float = THETA_TOL) -> float:
    """``E[phi(T)]``: ``(1 - E_sb[m] - sqrt(theta)) / Sigma^2``, or ``inf`` when theta < 0."""
    mo = model.moments
    th = theta(model)
    if th < -tol or mo.e_sb_m > 1.0:
        return math.inf
    return (1.0 - mo.e_sb_m - math.sqrt(max(th, 0.0))) / mo.sigma2


def root_parked_probability(model: Model, tol: float = THETA_TOL) -> float | None:
    """``E[m]`` when theta >= 0; ``None`` otherwise (only an upper bound is known)."""
    if classify(model, tol).regime is Regime.SUPERCRITICAL:
        return None
    return model.moments.e_m


def dilute(model: Model, t: float) -> Model:
    """Replace every arrival law by ``(1-t) delta_0 + t mu``."""
    if not 0.0 <= t <= 1.0:
        raise InvalidT(f"t must be in [0, 1], got {t}")
    if t == 1.0:
        return model

    def mix(p):
        q = t * np.asarray(p, dtype=float)
        q[0] += 1.0 - t
        return q / q.sum()

    return Model(model.offspring, model.arrivals.map(mix))
