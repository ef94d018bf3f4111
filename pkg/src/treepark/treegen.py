"""Plane trees in depth-first encoding, and the random samplers built on them.

A tree is stored as its children counts in depth-first (prefix) order plus a
parent array.  The Lukasiewicz walk ``S_i = sum_{j<i} (deg_j - 1)`` is the
bridge between the two views and the basis of the conditioned sampler.
"""
from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field
from functools import reduce
from typing import Iterable, Iterator

import numpy as np

from . import _kernels as K
from .errors import InvalidExcursion, LengthMismatch, SizeCapExceeded, UnreachableSize
from .model import Model

DEFAULT_SIZE_CAP = 10**7


# --------------------------------------------------------------------------
# types


@dataclass(frozen=True, eq=False)
class PlaneTree:
    """Rooted plane tree; vertex 0 is the root and ``parent[0] == -1``."""

    degrees: np.ndarray
    parent: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return int(self.degrees.size)

    @classmethod
    def from_degrees(cls, degrees: Iterable[int]) -> "PlaneTree":
        deg = np.ascontiguousarray(np.asarray(degrees, dtype=np.int64))
        _check_excursion(deg)
        return cls._trusted(deg)

    @classmethod
    def _trusted(cls, deg: np.ndarray) -> "PlaneTree":
        deg = np.ascontiguousarray(deg, dtype=np.int64)
        return cls(deg, K.parents_from_degrees(deg))

    def children(self, v: int) -> np.ndarray:
        return np.flatnonzero(self.parent == v)

    def depths(self) -> np.ndarray:
        return K.depths(self.parent)

    def subtree_sizes(self) -> np.ndarray:
        return K.subtree_sizes(self.parent)

    def __eq__(self, other) -> bool:
        return isinstance(other, PlaneTree) and np.array_equal(self.degrees, other.degrees)

    def __hash__(self) -> int:
        return hash(self.degrees.tobytes())

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True, eq=False)
class SpineTree:
    """``T(h)``: a spine ``S_0 .. S_h`` with GW trees hanging off it."""

    tree: PlaneTree
    spine: np.ndarray

    @property
    def height(self) -> int:
        return int(self.spine.size) - 1


@dataclass(frozen=True, eq=False)
class CarAssignment:
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __len__(self) -> int:
        return int(self.counts.size)


# --------------------------------------------------------------------------
# Lukasiewicz encoding


def _check_excursion(deg: np.ndarray) -> None:
    if deg.ndim != 1 or deg.size == 0:
        raise InvalidExcursion("need a non-empty one-dimensional degree sequence")
    if (deg < 0).any():
        raise InvalidExcursion("degrees must be nonnegative")
    s = np.cumsum(deg - 1)
    if s[-1] != -1 or (s[:-1] < 0).any():
        raise InvalidExcursion("degree sequence is not a depth-first encoding of a tree")


def lukasiewicz(tree: PlaneTree) -> np.ndarray:
    """Walk ``S_0 .. S_n``: starts at 0, stays >= 0 until it ends at -1."""
    walk = np.zeros(tree.n + 1, dtype=np.int64)
    np.cumsum(tree.degrees - 1, out=walk[1:])
    return walk


def from_lukasiewicz(walk: Iterable[int]) -> PlaneTree:
    w = np.asarray(walk, dtype=np.int64)
    if w.ndim != 1 or w.size < 2 or w[0] != 0:
        raise InvalidExcursion("walk must start at 0 and take at least one step")
    steps = np.diff(w)
    if (steps < -1).any():
        raise InvalidExcursion("walk steps must be >= -1")
    return PlaneTree.from_degrees(steps + 1)


def cycle_rotation(degrees: np.ndarray) -> np.ndarray:
    """The unique cyclic shift of a degree sequence summing to ``n - 1`` that encodes a tree."""
    deg = np.asarray(degrees, dtype=np.int64)
    if deg.sum() != deg.size - 1:
        raise InvalidExcursion("degrees must sum to n - 1 for the cycle lemma")
    start = (int(np.argmin(np.cumsum(deg - 1))) + 1) % deg.size
    return np.roll(deg, -start)


# --------------------------------------------------------------------------
# sampler tables (alias tables cached per model)


@dataclass(frozen=True)
class _Tables:
    deg: tuple  # (prob, alias) over degrees 0..k_max
    joint: tuple  # (prob, alias, jdeg, jcar) for (degree, cars) ~ nu x mu
    spine: tuple  # same with the size-biased degree law
    cdf: np.ndarray  # cumulative arrival laws, one row per degree


_TABLES: "weakref.WeakKeyDictionary[Model, _Tables]" = weakref.WeakKeyDictionary()


def _joint(weights: np.ndarray, table: np.ndarray) -> tuple:
    w = weights[:, None] * table
    d, c = np.nonzero(w > 0)
    prob, alias = K.alias_table(w[d, c])
    return prob, alias, d.astype(np.int64), c.astype(np.int64)


def tables_for(model: Model) -> _Tables:
    tab = _TABLES.get(model)
    if tab is None:
        nu = model.offspring.probs
        arr = model.arrival_table()
        ks = np.arange(nu.size)
        cdf = np.cumsum(arr, axis=1)
        cdf[:, -1] = 1.0
        tab = _Tables(
            deg=K.alias_table(nu),
            joint=_joint(nu, arr),
            spine=_joint(ks * nu, arr),
            cdf=cdf,
        )
        _TABLES[model] = tab
    return tab


# --------------------------------------------------------------------------
# unconditioned and spine samplers


def _gw_degrees(model: Model, rng: np.random.Generator, cap: int) -> np.ndarray:
    prob, alias = tables_for(model).deg
    deg, ok = K.gw_degrees(rng, prob, alias, int(cap))
    if not ok:
        raise SizeCapExceeded(cap)
    return deg


def sample_gw(model: Model, rng: np.random.Generator, size_cap: int = DEFAULT_SIZE_CAP) -> PlaneTree:
    """Unconditioned GW tree, or ``SizeCapExceeded`` if it reaches ``size_cap`` vertices."""
    if size_cap < 1:
        raise ValueError("size_cap must be >= 1")
    return PlaneTree._trusted(_gw_degrees(model, rng, size_cap))


def sample_spine_tree(
    model: Model, h: int, rng: np.random.Generator, size_cap: int = DEFAULT_SIZE_CAP
) -> SpineTree:
    """Sample ``T(h)``.

    Spine vertices ``S_0 .. S_{h-1}`` get a size-biased number ``Y`` of
    children; the next spine vertex sits at a uniform position among them and
    the other ``Y - 1`` slots carry independent GW trees.  ``S_h`` is the root
    of an ordinary GW tree.
    """
    if h < 0:
        raise ValueError("h must be >= 0")
    nu = model.offspring.probs
    sb = np.arange(nu.size) * nu
    sb = sb / sb.sum()
    ys = rng.choice(nu.size, size=h, p=sb) if h else np.zeros(0, dtype=np.int64)
    front: list[np.ndarray] = []
    back: list[np.ndarray] = []
    spine = np.empty(h + 1, dtype=np.int64)
    pos = 0
    budget = int(size_cap)

    def graft(count):
        nonlocal budget
        parts = []
        for _ in range(count):
            if budget <= 0:
                raise SizeCapExceeded(size_cap)
            d = _gw_degrees(model, rng, budget)
            budget -= d.size
            parts.append(d)
        return parts

    for i in range(h):
        y = int(ys[i])
        j = int(rng.integers(y))
        budget -= 1
        spine[i] = pos
        before = graft(j)
        after = graft(y - 1 - j)
        front.append(np.array([y], dtype=np.int64))
        front.extend(before)
        back.append(after)
        pos += 1 + sum(b.size for b in before)
    if budget <= 0:
        raise SizeCapExceeded(size_cap)
    spine[h] = pos
    front.append(_gw_degrees(model, rng, budget))
    for after in reversed(back):
        front.extend(after)
    deg = np.concatenate(front)
    return SpineTree(PlaneTree._trusted(deg), spine)


# --------------------------------------------------------------------------
# conditioned sampler


def _frobenius_reachable(target: int, parts: list[int]) -> bool:
    """Can ``target`` be written as a nonnegative combination of ``parts``?"""
    if target == 0:
        return True
    if not parts:
        return False
    g = reduce(math.gcd, parts)
    if target % g:
        return False
    big = max(parts)
    # beyond max(parts)^2 every multiple of the gcd is representable
    if target >= big * big:
        return True
    ok = np.zeros(target + 1, dtype=bool)
    ok[0] = True
    for v in range(1, target + 1):
        ok[v] = any(p <= v and ok[v - p] for p in parts)
    return bool(ok[target])


def size_reachable(model: Model, n: int) -> bool:
    """Whether ``P(|T| = n) > 0``."""
    if n < 1:
        return False
    nu = model.offspring.probs
    if nu[0] == 0:
        return False
    parts = [int(k) for k in np.flatnonzero(nu) if k > 0]
    # the parts sum to n - 1; with parts >= 2 at most (n-1)/2 of them are used,
    # and with part 1 available n - 1 ones fit, so the vertex count never binds
    return _frobenius_reachable(n - 1, parts)


def _conditioned_counts(model: Model, n: int, rng: np.random.Generator, batch: int) -> np.ndarray:
    """Degree multiplicities ``N_k`` with ``sum N_k = n`` and ``sum k N_k = n - 1``."""
    nu = model.offspring.probs
    ks = np.arange(nu.size)
    while True:
        counts = rng.multinomial(n, nu, size=batch)
        hit = np.flatnonzero(counts @ ks == n - 1)
        if hit.size:
            return counts[hit[0]]


def sample_gw_conditioned(model: Model, n: int, rng: np.random.Generator) -> PlaneTree:
    """Exact sample of the GW tree conditioned to have ``n`` vertices."""
    if not size_reachable(model, n):
        raise UnreachableSize(f"no tree with {n} vertices has positive probability")
    if n == 1:
        return PlaneTree._trusted(np.zeros(1, dtype=np.int64))
    # accept rate is of order n^{-1/2}; draw a few multinomials per round
    batch = max(1, min(64, int(math.isqrt(n))))
    counts = _conditioned_counts(model, n, rng, batch)
    deg = np.repeat(np.arange(counts.size), counts)
    rng.shuffle(deg)
    return PlaneTree._trusted(cycle_rotation(deg))


def sample_gw_conditioned_batch(model: Model, n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` conditioned trees at once, as rows of a ``(size, n)`` degree array.

    Meant for small ``n`` where per-tree Python overhead would dominate.
    """
    if not size_reachable(model, n):
        raise UnreachableSize(f"no tree with {n} vertices has positive probability")
    nu = model.offspring.probs
    ks = np.arange(nu.size)
    rows: list[np.ndarray] = []
    have = 0
    while have < size:
        c = rng.multinomial(n, nu, size=max(2 * (size - have), 16))
        c = c[c @ ks == n - 1][: size - have]
        rows.append(c)
        have += c.shape[0]
    counts = np.concatenate(rows)
    bounds = np.cumsum(counts, axis=1)
    deg = (np.arange(n)[None, :, None] >= bounds[:, None, :]).sum(axis=2)
    perm = np.argsort(rng.random((size, n)), axis=1)
    deg = np.take_along_axis(deg, perm, axis=1)
    start = (np.argmin(np.cumsum(deg - 1, axis=1), axis=1) + 1) % n
    idx = (start[:, None] + np.arange(n)[None, :]) % n
    return np.take_along_axis(deg, idx, axis=1)


# --------------------------------------------------------------------------
# arrivals


def sample_arrivals(tree: PlaneTree, model: Model, rng: np.random.Generator) -> CarAssignment:
    """Independent car counts, vertex ``x`` drawing from the law for its degree."""
    deg = tree.degrees
    u = rng.random(deg.size)
    counts = np.zeros(deg.size, dtype=np.int64)
    cdf = tables_for(model).cdf
    for d in np.unique(deg):
        sel = deg == d
        if d < cdf.shape[0]:
            row = cdf[d]
        else:
            row = np.cumsum(model.arrivals.law(int(d)))
            row[-1] = 1.0
        counts[sel] = np.searchsorted(row, u[sel], side="right")
    return CarAssignment(counts)


# --------------------------------------------------------------------------
# line format: one line of degrees, then one line of car counts


def format_counts(values: Iterable[int]) -> str:
    return " ".join(str(int(v)) for v in values)


def format_tree(tree: PlaneTree) -> str:
    return format_counts(tree.degrees)


def parse_counts(line: str) -> np.ndarray:
    try:
        vals = np.array([int(tok) for tok in line.split()], dtype=np.int64)
    except ValueError as exc:
        raise InvalidExcursion(f"bad integer in line {line!r}") from exc
    return vals


def parse_tree(line: str) -> PlaneTree:
    return PlaneTree.from_degrees(parse_counts(line))


def parse_instance(tree_line: str, cars_line: str) -> tuple[PlaneTree, CarAssignment]:
    tree = parse_tree(tree_line)
    cars = parse_counts(cars_line)
    if cars.size != tree.n:
        raise LengthMismatch(f"{cars.size} car counts for {tree.n} vertices")
    if (cars < 0).any():
        raise ValueError("car counts must be nonnegative")
    return tree, CarAssignment(cars)


def read_instances(lines: Iterable[str]) -> Iterator[tuple[PlaneTree, CarAssignment]]:
    """Pairs of (degrees line, cars line); blank lines and ``#`` comments are skipped."""
    body = [ln for ln in (raw.strip() for raw in lines) if ln and not ln.startswith("#")]
    if len(body) % 2:
        raise LengthMismatch("instance file needs a car line after every tree line")
    for a, b in zip(body[::2], body[1::2]):
        yield parse_instance(a, b)


def write_instance(fh, tree: PlaneTree, cars: CarAssignment) -> None:
    fh.write(format_tree(tree) + "\n")
    fh.write(format_counts(cars.counts) + "\n")
