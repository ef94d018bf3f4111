"""Truncated power series and the analytic side of the flux law.

``W(z) = sum_k P(X = k) z^k`` satisfies a functional equation which, after the
change of variables ``z = 1 + x``, ``W = 1 + y``, reads ``F(x, y) = 0`` with

    F(x, y) = sum_k nu_k A_k(1 + x) ((y + 1 - p0) / (1 + x) + p0)^k - y - 1,

``A_k`` being the pgf of the arrival law at degree ``k``.  ``F`` vanishes at
the origin together with both first derivatives, so the implicit function
theorem does not apply; in the subcritical regime two analytic branches
``y = c_1 x + c_2 x^2 + ...`` pass through the origin.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import comb

from .dist_solver import iterate_law
from .errors import DegenerateStep, NewtonDiverged, NoConvergence, NotSubcritical
from .model import Model, Regime, classify

MAX_BIVARIATE_ORDER = 12


# --------------------------------------------------------------------------
# univariate


@dataclass(frozen=True, eq=False)
class TruncatedSeries:
    """``a_0 + a_1 t + ... + a_D t^D``, arithmetic exact through order ``D``."""

    coeffs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float).copy())

    @property
    def D(self) -> int:
        return int(self.coeffs.size) - 1

    @classmethod
    def constant(cls, c: float, D: int) -> "TruncatedSeries":
        a = np.zeros(D + 1)
        a[0] = c
        return cls(a)

    @classmethod
    def variable(cls, D: int) -> "TruncatedSeries":
        a = np.zeros(D + 1)
        if D >= 1:
            a[1] = 1.0
        return cls(a)

    def _coerce(self, other) -> np.ndarray:
        if isinstance(other, TruncatedSeries):
            if other.D != self.D:
                raise ValueError("series orders differ")
            return other.coeffs
        a = np.zeros(self.D + 1)
        a[0] = float(other)
        return a

    def __add__(self, other):
        return TruncatedSeries(self.coeffs + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return TruncatedSeries(self.coeffs - self._coerce(other))

    def __rsub__(self, other):
        return TruncatedSeries(self._coerce(other) - self.coeffs)

    def __neg__(self):
        return TruncatedSeries(-self.coeffs)

    def __mul__(self, other):
        if isinstance(other, TruncatedSeries):
            return TruncatedSeries(np.convolve(self.coeffs, self._coerce(other))[: self.D + 1])
        return TruncatedSeries(self.coeffs * float(other))

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if k < 0:
            return self.reciprocal() ** (-k)
        out = TruncatedSeries.constant(1.0, self.D)
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    def reciprocal(self) -> "TruncatedSeries":
        a = self.coeffs
        if a[0] == 0:
            raise ZeroDivisionError("series with zero constant term has no reciprocal")
        b = np.zeros_like(a)
        b[0] = 1.0 / a[0]
        for n in range(1, a.size):
            b[n] = -np.dot(a[1 : n + 1], b[n - 1 :: -1][:n]) / a[0]
        return TruncatedSeries(b)

    def __truediv__(self, other):
        if isinstance(other, TruncatedSeries):
            return self * other.reciprocal()
        return TruncatedSeries(self.coeffs / float(other))

    def compose(self, inner: "TruncatedSeries") -> "TruncatedSeries":
        """``self(inner(t))`` for ``inner`` with zero constant term."""
        if inner.coeffs[0] != 0:
            raise ValueError("inner series must have zero constant term")
        out = TruncatedSeries.constant(self.coeffs[-1], self.D)
        for c in self.coeffs[-2::-1]:
            out = out * inner + c
        return out

    def __call__(self, t):
        return np.polynomial.polynomial.polyval(t, self.coeffs)

    def __getitem__(self, i):
        return self.coeffs[i]

    def __repr__(self) -> str:
        return f"TruncatedSeries(D={self.D}, coeffs={np.array2string(self.coeffs, precision=6)})"


# --------------------------------------------------------------------------
# bivariate


@dataclass(frozen=True, eq=False)
class BivariateSeries:
    """``sum a_{i,j} x^i y^j`` over ``i + j <= D``; entries above the anti-diagonal are 0."""

    coeffs: np.ndarray

    def __post_init__(self):
        a = np.array(self.coeffs, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("coefficients must be a square matrix")
        object.__setattr__(self, "coeffs", _clip_total(a))

    @property
    def D(self) -> int:
        return self.coeffs.shape[0] - 1

    @classmethod
    def from_x(cls, s: TruncatedSeries) -> "BivariateSeries":
        a = np.zeros((s.D + 1, s.D + 1))
        a[:, 0] = s.coeffs
        return cls(a)

    @classmethod
    def from_y(cls, s: TruncatedSeries) -> "BivariateSeries":
        a = np.zeros((s.D + 1, s.D + 1))
        a[0, :] = s.coeffs
        return cls(a)

    def __add__(self, other):
        if isinstance(other, BivariateSeries):
            return BivariateSeries(self.coeffs + other.coeffs)
        a = self.coeffs.copy()
        a[0, 0] += float(other)
        return BivariateSeries(a)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-1.0) * other

    def __mul__(self, other):
        if not isinstance(other, BivariateSeries):
            return BivariateSeries(self.coeffs * float(other))
        a, b = self.coeffs, other.coeffs
        D = self.D
        out = np.zeros_like(a)
        for i, j in zip(*np.nonzero(a)):
            r = D - i - j
            out[i : i + r + 1, j : j + r + 1] += a[i, j] * b[: r + 1, : r + 1]
        return BivariateSeries(out)

    __rmul__ = __mul__

    def __getitem__(self, ij):
        return self.coeffs[ij]

    def substitute_y(self, y: TruncatedSeries) -> TruncatedSeries:
        """Univariate ``sum a_ij x^i y(x)^j`` (``y`` must have zero constant term)."""
        D = self.D
        out = np.zeros(D + 1)
        ypow = TruncatedSeries.constant(1.0, D)
        for j in range(D + 1):
            col = self.coeffs[:, j]
            out += np.convolve(col, ypow.coeffs)[: D + 1]
            ypow = ypow * y
        return TruncatedSeries(out)

    def __call__(self, x: float, y: float) -> float:
        i = np.arange(self.D + 1, dtype=float)
        return float((x**i) @ self.coeffs @ (y**i))


def _clip_total(a: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    i, j = np.indices((n, n))
    a[i + j > n - 1] = 0.0
    return a


# --------------------------------------------------------------------------
# generating functions


def pgf_shifted(law, D: int) -> TruncatedSeries:
    """Coefficients of ``A(1 + x)`` where ``A`` is the pgf of ``law``.

    The ``i``-th coefficient is ``E[C(L, i)]`` (a binomial moment).
    """
    p = np.asarray(law, dtype=float)
    j = np.arange(p.size)
    return TruncatedSeries(np.array([np.dot(p, comb(j, i)) for i in range(D + 1)]))


def default_p0(model: Model) -> float:
    """``P(X = 0)``: ``1 - E_nu[m]`` unless supercritical, then from the solved law."""
    if classify(model).regime is not Regime.SUPERCRITICAL:
        return 1.0 - model.moments.e_m
    return iterate_law(model, N=400, tol=1e-12).p0


def f_series(model: Model, D: int, p0: float | None = None) -> BivariateSeries:
    """Coefficients ``a_{i,j}`` of ``F`` through total order ``D``."""
    if not 1 <= D <= MAX_BIVARIATE_ORDER:
        raise ValueError(f"order must be in 1..{MAX_BIVARIATE_ORDER}")
    if p0 is None:
        p0 = default_p0(model)
    nu = model.offspring.probs
    arr = model.arrival_table()
    inv = TruncatedSeries(np.array([(-1.0) ** i for i in range(D + 1)]))  # 1/(1+x)
    y = BivariateSeries.from_y(TruncatedSeries.variable(D))
    base = (y + (1.0 - p0)) * BivariateSeries.from_x(inv) + p0
    out = BivariateSeries(np.zeros((D + 1, D + 1)))
    for k in range(nu.size - 1, -1, -1):
        out = out * base
        if nu[k] > 0:
            out = out + BivariateSeries.from_x(pgf_shifted(arr[k], D) * nu[k])
    return out - y - 1.0


def f_exact(model: Model, x: float, y: float, p0: float) -> tuple[float, float]:
    """``F(x, y)`` and ``dF/dy`` evaluated in closed form."""
    nu = model.offspring.probs
    arr = model.arrival_table()
    z = 1.0 + x
    b = (y + 1.0 - p0) / z + p0
    f = -y - 1.0
    df = -1.0
    for k in range(nu.size):
        if nu[k] > 0:
            a = float(np.polynomial.polynomial.polyval(z, arr[k]))
            f += nu[k] * a * b**k
            if k:
                df += nu[k] * a * k * b ** (k - 1) / z
    return f, df


def f_along(model: Model, y: TruncatedSeries, p0: float) -> TruncatedSeries:
    """``F(x, y(x))`` as a univariate series, without going through ``a_{i,j}``."""
    D = y.D
    nu = model.offspring.probs
    arr = model.arrival_table()
    inv = TruncatedSeries(np.array([(-1.0) ** i for i in range(D + 1)]))
    base = (y + (1.0 - p0)) * inv + p0
    out = TruncatedSeries.constant(0.0, D)
    for k in range(nu.size - 1, -1, -1):
        out = out * base
        if nu[k] > 0:
            out = out + pgf_shifted(arr[k], D) * nu[k]
    return out - y - 1.0


# --------------------------------------------------------------------------
# Puiseux branches


@dataclass(frozen=True, eq=False)
class PuiseuxBranch:
    c: np.ndarray  # c_1 .. c_D
    sign: int  # -1 or +1: which root seeded c_1
    p0: float

    @property
    def D(self) -> int:
        return int(self.c.size)

    def series(self) -> TruncatedSeries:
        return TruncatedSeries(np.concatenate([[0.0], self.c]))

    def __call__(self, x: float) -> float:
        return float(self.series()(x))


def puiseux_c(model: Model) -> tuple[float, float]:
    """Slopes ``(c_minus, c_plus)`` of the two branches at the origin."""
    mo = model.moments
    if mo.theta <= 0 or classify(model).regime is not Regime.SUBCRITICAL:
        raise NotSubcritical(f"two distinct branches need theta > 0 (theta = {mo.theta:.3e})")
    a11 = mo.e_sb_m - 1.0 - mo.sigma2 * mo.e_m
    r = math.sqrt(mo.theta)
    return (-a11 - r) / mo.sigma2, (-a11 + r) / mo.sigma2


def puiseux_branch(model: Model, sign: int = -1, D: int = 8, p0: float | None = None) -> PuiseuxBranch:
    """Branch coefficients ``c_1 .. c_D`` by successive substitution.

    ``c_1`` solves ``a_02 c^2 + a_11 c + a_20 = 0``.  For ``k >= 2`` the
    ``x^{k+1}`` coefficient of ``F(x, c_1 x + ... + c_k x^k)`` is affine in
    ``c_k`` with slope ``a_11 + 2 a_02 c_1``; setting it to zero fixes ``c_k``.
    """
    if sign not in (-1, 1):
        raise ValueError("sign must be -1 or +1")
    c_minus, c_plus = puiseux_c(model)
    if p0 is None:
        p0 = default_p0(model)
    F = f_series(model, D + 1, p0)
    a02, a11 = F[0, 2], F[1, 1]
    c = np.zeros(D)
    c[0] = c_minus if sign < 0 else c_plus
    slope = a11 + 2.0 * a02 * c[0]
    for k in range(2, D + 1):
        if abs(slope) < 1e-12:
            raise DegenerateStep(f"vanishing linear coefficient at order {k}")
        y = TruncatedSeries(np.concatenate([[0.0], c, [0.0]])[: D + 2])
        r = F.substitute_y(y)[k + 1]
        c[k - 1] = -r / slope
    return PuiseuxBranch(c, sign, p0)


def branch_residual(model: Model, branch: PuiseuxBranch) -> np.ndarray:
    """Coefficients of ``F(x, branch(x))`` through ``x^{D+1}``; all should vanish."""
    y = TruncatedSeries(np.concatenate([[0.0], branch.c, [0.0]]))
    return f_along(model, y, branch.p0).coeffs


def newton_continue(model: Model, x: float, y_seed: float, p0: float | None = None,
                    tol: float = 1e-12, max_iters: int = 100) -> float:
    """Solve ``F(x, y) = 0`` for ``y`` near ``y_seed`` by damped Newton steps."""
    if p0 is None:
        p0 = default_p0(model)
    y = float(y_seed)
    f, df = f_exact(model, x, y, p0)
    for it in range(max_iters):
        # always take one step so a good seed is still refined, never just echoed,
        # unless the seed is a root where the derivative vanishes too
        if abs(f) < tol and (it or abs(df) < tol):
            return y
        if df == 0 or not math.isfinite(df):
            raise NewtonDiverged(f"zero derivative at y = {y}")
        step = f / df
        lam = 1.0
        while True:
            cand = y - lam * step
            fc, dfc = f_exact(model, x, cand, p0)
            if math.isfinite(fc) and abs(fc) <= abs(f):
                break
            lam /= 2
            if lam < 1e-10:
                if abs(f) < tol:
                    return y
                raise NewtonDiverged(f"line search failed at y = {y}, |F| = {abs(f):.3e}")
        y, f, df = cand, fc, dfc
    if abs(f) < tol:
        return y
    raise NewtonDiverged(f"no root within {max_iters} steps, |F| = {abs(f):.3e}")


# --------------------------------------------------------------------------
# W(z) around 0


def w_series(model: Model, D: int, p0: float | None = None, tol: float = 1e-14,
             max_iters: int = 100_000) -> TruncatedSeries:
    """Coefficients of ``W`` through ``z^D`` by fixed-point iteration with ``W(0) = p0`` pinned.

    ``(W - p0) / z`` is a shift of the coefficient vector.  The iteration runs
    at a padded order because each shift loses the top coefficient.
    """
    if p0 is None:
        p0 = default_p0(model)
    L = D + max(40, D)
    nu = model.offspring.probs
    arr = model.arrival_table()
    width = min(arr.shape[1], L + 1)
    w = np.zeros(L + 1)
    w[0] = p0
    for _ in range(max_iters):
        s = np.zeros(L + 1)
        s[:L] = w[1:]
        s[0] += p0
        new = np.zeros(L + 1)
        for k in range(nu.size - 1, -1, -1):
            if k < nu.size - 1:
                new = np.convolve(new, s)[: L + 1]
            if nu[k] > 0:
                new[:width] += nu[k] * arr[k, :width]
        new[0] = p0
        change = float(np.abs(new[: D + 1] - w[: D + 1]).max())
        w = new
        if change < tol:
            return TruncatedSeries(w[: D + 1])
    raise NoConvergence(max_iters, change)


def radius_estimate(coeffs, window: int = 10) -> float:
    """``1 / rho`` with ``rho`` the geometric-mean coefficient ratio over the last ``window`` terms."""
    a = np.asarray(coeffs.coeffs if isinstance(coeffs, TruncatedSeries) else coeffs, dtype=float)
    pos = a > 0
    run = int(np.argmin(pos)) if not pos.all() else a.size
    if run < window + 1:
        return math.inf
    seg = a[run - window - 1 : run]
    rho = float(np.exp(np.mean(np.diff(np.log(seg)))))
    return 1.0 / rho
