"""Law of the number of cars visiting the root of the unconditioned GW tree.

The law solves a fixed-point equation: the root sees its own arrivals plus the
overflow ``(X_i - 1)_+`` of each child subtree.  Iterating the map from
``X = 0`` gives the laws on trees cut at growing heights, which increase to
the target.  Laws are truncated at ``N``; mass that would land above ``N`` is
kept as an explicit ``mass_defect`` instead of being renormalised away.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientSupport, NoConvergence
from .model import Model


@dataclass(frozen=True, eq=False)
class DistVector:
    pmf: np.ndarray
    mass_defect: float
    iterations: int = 0
    last_tv: float = 0.0

    @property
    def N(self) -> int:
        return int(self.pmf.size) - 1

    @property
    def p0(self) -> float:
        return float(self.pmf[0])

    def mean(self) -> float:
        return float(np.dot(np.arange(self.pmf.size), self.pmf))

    def pgf(self, z) -> np.ndarray | float:
        """``sum_k p_k z^k`` (the truncated generating function)."""
        return np.polynomial.polynomial.polyval(z, self.pmf)

    def survival(self) -> np.ndarray:
        """``P(X >= k)`` for ``k = 0 .. N``, counting the defect as mass above ``N``."""
        return np.cumsum(self.pmf[::-1])[::-1] + self.mass_defect


def _make(pmf: np.ndarray, iterations: int = 0, last_tv: float = 0.0) -> DistVector:
    pmf = np.clip(pmf, 0.0, None)
    defect = max(0.0, 1.0 - float(pmf.sum()))
    return DistVector(pmf, defect, iterations, last_tv)


def _overflow(p: np.ndarray) -> np.ndarray:
    """pmf of ``(X - 1)_+`` on the same support length (top entry unknown, left 0)."""
    q = np.zeros_like(p)
    q[0] = p[0] + (p[1] if p.size > 1 else 0.0)
    q[1:-1] = p[2:]
    return q


def de_map(model: Model, p: np.ndarray) -> np.ndarray:
    """One application of the recursion on a truncated pmf.

    Entries ``0 .. N-1`` of the output are exact functions of the input's
    entries; mass above ``N`` is dropped.
    """
    n1 = p.size
    nu = model.offspring.probs
    arr = model.arrival_table()
    width = min(arr.shape[1], n1)
    q = _overflow(p)
    # Horner in the overflow law: sum_k nu_k mu_k * q^{*k}
    out = np.zeros(n1)
    for k in range(nu.size - 1, -1, -1):
        if k < nu.size - 1:
            out = np.convolve(out, q)[:n1]
        if nu[k] > 0:
            out[:width] += nu[k] * arr[k, :width]
    return out


def _tv(a: np.ndarray, b: np.ndarray) -> float:
    # mass outside the window counts too, so compare defects as well
    return 0.5 * (float(np.abs(a - b).sum()) + abs(float(a.sum()) - float(b.sum())))


def iterate_law(model: Model, N: int = 200, max_iters: int = 100_000, tol: float = 1e-13,
                rel_tol: float | None = None, floor: float = 1e-280, return_trace: bool = False):
    """Iterate from ``delta_0`` until successive pmfs are within ``tol`` in total variation.

    Deep tail entries are tiny and converge much later than the bulk; pass
    ``rel_tol`` to also require every entry above ``floor`` to have settled to
    that relative precision (needed before reading off tail ratios).
    With ``return_trace`` the list of successive TV distances is returned too.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    p = np.zeros(N + 1)
    p[0] = 1.0
    trace = []
    for it in range(1, max_iters + 1):
        new = de_map(model, p)
        d = _tv(new, p)
        trace.append(d)
        done = d < tol
        if done and rel_tol is not None:
            live = new > floor
            rel = np.abs(new[live] - p[live]) / new[live]
            done = rel.size == 0 or float(rel.max()) < rel_tol
        p = new
        if done:
            dist = _make(p, it, d)
            return (dist, trace) if return_trace else dist
    raise NoConvergence(max_iters, trace[-1])


def flux_law(dist: DistVector) -> DistVector:
    """Law of ``(X - 1)_+``."""
    p = dist.pmf
    if p.size == 1:
        return DistVector(p.copy(), dist.mass_defect, dist.iterations, dist.last_tv)
    q = np.empty(p.size - 1)
    q[0] = p[0] + p[1]
    q[1:] = p[2:]
    return DistVector(q, dist.mass_defect, dist.iterations, dist.last_tv)


def reliable_length(dist: DistVector, floor: float = 1e-280) -> int:
    """Length of the leading run of entries that are trustworthy and above ``floor``.

    Truncation starves the top entry, and the shortfall leaks a little further
    down on every iteration, so a guard band of ``max(2, N // 10)`` entries at
    the top is never used.
    """
    keep = max(0, dist.pmf.size - max(2, dist.N // 10))
    p = dist.pmf[:keep]
    bad = np.flatnonzero(~(p > floor))
    return int(bad[0]) if bad.size else int(p.size)


def tail_rate(dist: DistVector, window: int = 20, floor: float = 1e-280) -> float:
    """Geometric-mean ratio ``p_{k+1}/p_k`` over the last ``window`` reliable indices."""
    if window < 1:
        raise ValueError("window must be >= 1")
    r = reliable_length(dist, floor)
    if r < window + 1:
        raise InsufficientSupport(f"only {r} reliable entries for a window of {window}")
    seg = dist.pmf[r - window - 1 : r]
    return float(np.exp(np.mean(np.diff(np.log(seg)))))


def fixed_point_change(model: Model, dist: DistVector) -> float:
    """TV distance between the law and its image under one more step."""
    return _tv(de_map(model, dist.pmf), dist.pmf)


def eq_residual(model: Model, dist: DistVector, z: float) -> float:
    """Residual of the generating-function equation at ``z`` in (0, 1].

    ``W(z) = sum_k nu_k A_k(z) ((W(z) - p_0)/z + p_0)^k`` where ``A_k`` is the
    pgf of the arrival law for degree ``k`` and ``p_0`` is taken from ``dist``.
    """
    w = float(dist.pgf(z))
    p0 = dist.p0
    s = (w - p0) / z + p0
    nu = model.offspring.probs
    arr = model.arrival_table()
    rhs = 0.0
    for k in range(nu.size):
        if nu[k] > 0:
            rhs += nu[k] * float(np.polynomial.polynomial.polyval(z, arr[k])) * s**k
    return abs(w - rhs)
