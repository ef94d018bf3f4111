"""Seeded Monte Carlo experiments.

Replicates are grouped in fixed-size chunks; chunk ``i`` draws from its own
generator spawned from the master seed, so results depend only on
``(config, seed)`` and never on how many worker threads ran the chunks.
The compiled kernels release the GIL, so a thread pool gives real parallelism.
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product
from typing import Any, Callable, Sequence

import numpy as np

from . import _kernels as K
from .dist_solver import DistVector, iterate_law, tail_rate
from .errors import NotSupercritical
from .model import (
    Model,
    Regime,
    classify,
    dilute,
    mean_flux_curve,
    root_parked_probability,
)
from .parking import cluster_sizes
from .treegen import sample_arrivals, sample_gw_conditioned, tables_for

CHUNK = 20_000  # unconditioned trees per seeded chunk
COND_CHUNK = 10  # conditioned trees per seeded chunk
DEFAULT_CAP = 10**7


# --------------------------------------------------------------------------
# seeding and execution


def seed_sequence(seed: int, *tags: int) -> np.random.SeedSequence:
    """Independent stream for one experiment (``tags`` separate sub-experiments)."""
    return np.random.SeedSequence(int(seed), spawn_key=tuple(int(t) for t in tags))


def default_threads() -> int:
    return os.cpu_count() or 1


def run_chunks(fn: Callable[[np.random.Generator, int], Any], reps: int, chunk: int,
               seq: np.random.SeedSequence, threads: int | None = None) -> list:
    """Call ``fn(rng, count)`` on consecutive chunks; results come back in chunk order."""
    if reps < 1:
        raise ValueError("replicates must be >= 1")
    n_chunks = -(-reps // chunk)
    children = seq.spawn(n_chunks)
    sizes = [min(chunk, reps - i * chunk) for i in range(n_chunks)]
    jobs = [(np.random.Generator(np.random.PCG64(c)), s) for c, s in zip(children, sizes)]
    threads = threads or default_threads()
    if threads <= 1 or n_chunks == 1:
        return [fn(rng, s) for rng, s in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


# --------------------------------------------------------------------------
# reports


@dataclass
class EstimateReport:
    name: str
    estimate: float
    stderr: float
    replicates: int
    reference: float | None = None
    z: float | None = None
    extras: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.reference is not None and self.z is None and math.isfinite(self.reference):
            self.z = _z(self.estimate, self.reference, self.stderr)

    def in_band(self, sigmas: float = 4.0) -> bool:
        return self.z is None or abs(self.z) <= sigmas

    def summary(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "raw"}
        return _jsonable(d)


def _z(est: float, ref: float, se: float) -> float:
    if se > 0:
        return (est - ref) / se
    return 0.0 if est == ref else math.copysign(math.inf, est - ref)


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(x.mean()), 0.0
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def write_csv(path: str, columns: dict[str, Sequence]) -> None:
    names = list(columns)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        w.writerows(zip(*(np.asarray(columns[c]).tolist() for c in names)))


def write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=False)
        fh.write("\n")


# --------------------------------------------------------------------------
# unconditioned trees


def root_visits(model: Model, reps: int, seed: int = 0, size_cap: int = DEFAULT_CAP,
                threads: int | None = None, tag: int = 0):
    """Visit counts at the root of ``reps`` unconditioned trees.

    Returns ``(x, size, censored)``.  For censored trees ``x`` is a lower bound.
    """
    prob, alias, jdeg, jcar = tables_for(model).joint
    cap = int(size_cap)

    def work(rng, count):
        return K.root_visits_batch(rng, prob, alias, jdeg, jcar, cap, count)

    parts = run_chunks(work, reps, CHUNK, seed_sequence(seed, 1, tag), threads)
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(3))


def estimate_root_parked(model: Model, reps: int, size_cap: int = DEFAULT_CAP, seed: int = 0,
                         threads: int | None = None) -> EstimateReport:
    """Frequency of ``X_root >= 1`` on unconditioned trees.

    A censored tree whose lower bound already parks the root is counted
    exactly; otherwise it is counted as free and reported as undecided.
    """
    x, size, cens = root_visits(model, reps, seed, size_cap, threads)
    parked = x >= 1
    est, se = _mean_se(parked)
    ref = root_parked_probability(model)
    extras = {
        "censored_fraction": float(cens.mean()),
        "undecided": int((cens & ~parked).sum()),
        "size_cap": int(size_cap),
        "regime": classify(model).regime.value,
    }
    if ref is None:
        bound = model.moments.e_m
        extras["upper_bound"] = bound
        extras["sigmas_below_bound"] = (bound - est) / se if se > 0 else math.inf
    return EstimateReport("root_parked", est, se, reps, ref, extras=extras,
                          raw={"x": x, "size": size, "censored": cens.astype(np.int8)})


def estimate_mean_flux(model: Model, t: float, reps: int, size_cap: int = DEFAULT_CAP, seed: int = 0,
                       threads: int | None = None) -> EstimateReport:
    """Mean root flux with arrivals thinned by ``t``, against the closed-form curve."""
    ref = mean_flux_curve(model, t)
    if t == 0.0:
        return EstimateReport("mean_flux", 0.0, 0.0, reps, ref, extras={"t": 0.0, "censored_fraction": 0.0})
    diluted = dilute(model, t)
    x, size, cens = root_visits(diluted, reps, seed, size_cap, threads, tag=2)
    phi = np.maximum(x - 1, 0)
    est, se = _mean_se(phi)
    extras = {
        "t": t,
        "censored_fraction": float(cens.mean()),
        "size_cap": int(size_cap),
        "diverges": not math.isfinite(ref),
    }
    return EstimateReport("mean_flux", est, se, reps, ref if math.isfinite(ref) else None, extras=extras,
                          raw={"phi": phi, "size": size, "censored": cens.astype(np.int8)})


@dataclass
class TailReport:
    table: list[dict]
    slope: float | None
    intercept: float | None
    fit_thresholds: list[int]
    tail_rate: float | None
    log_tail_rate: float | None
    relative_gap: float | None
    censored_fraction: float
    warning: str | None
    corrected_slope: float | None = None

    def summary(self) -> dict:
        return _jsonable(asdict(self))


def tail_experiment(model: Model, reps: int, thresholds: Sequence[int] | None = None,
                    size_cap: int = 10**5, seed: int = 0, threads: int | None = None,
                    min_hits: int = 100, dist: DistVector | None = None) -> TailReport:
    """Empirical ``P(phi >= k)`` and the slope of its logarithm.

    The slope is a least-squares fit over thresholds ``k >= 1`` with at least
    ``min_hits`` exceedances and compared with ``log rho`` from the solved law.
    ``corrected_slope`` refits after removing a ``k^{-3/2}`` prefactor
    (a diagnostic, not part of the comparison).
    """
    regime = classify(model).regime
    warning = None
    if regime is not Regime.SUBCRITICAL:
        warning = f"model is {regime.value}; tail decay is only expected in the subcritical regime"
        warnings.warn(warning, stacklevel=2)
    x, _, cens = root_visits(model, reps, seed, size_cap, threads, tag=3)
    phi = np.maximum(x - 1, 0)
    hits = np.bincount(phi)[::-1].cumsum()[::-1]
    ks = np.arange(hits.size) if thresholds is None else np.asarray(sorted(thresholds), dtype=np.int64)
    table = []
    for k in ks:
        h = int(hits[k]) if k < hits.size else 0
        table.append({"k": int(k), "hits": h, "survival": h / reps})
    fit = [r["k"] for r in table if r["k"] >= 1 and r["hits"] >= min_hits]
    slope = intercept = corrected = None
    if len(fit) >= 2:
        kk = np.array(fit, dtype=float)
        ls = np.log(np.array([hits[k] / reps for k in fit]))
        slope, intercept = (float(v) for v in np.polyfit(kk, ls, 1))
        corrected = float(np.polyfit(kk, ls + 1.5 * np.log(kk), 1)[0])
    rho = log_rho = gap = None
    if x.max() > 0:
        try:
            if dist is None:
                dist = iterate_law(model, N=400, tol=1e-13, rel_tol=1e-9, max_iters=20_000)
            rho = tail_rate(dist)
            log_rho = math.log(rho)
            if slope is not None:
                gap = abs(slope - log_rho) / abs(log_rho)
        except Exception as exc:  # tail rate unavailable (degenerate or non-convergent)
            warning = (warning + "; " if warning else "") + f"tail rate unavailable: {exc}"
    return TailReport(table, slope, intercept, fit, rho, log_rho, gap, float(cens.mean()), warning, corrected)


# --------------------------------------------------------------------------
# conditioned trees


def _conditioned_runs(model: Model, n: int, reps: int, seed: int, threads, tag: int,
                      observe: Callable) -> list:
    def work(rng, count):
        out = []
        for _ in range(count):
            tree = sample_gw_conditioned(model, n, rng)
            cars = sample_arrivals(tree, model, rng)
            out.append(observe(tree, cars.counts))
        return out

    parts = run_chunks(work, reps, COND_CHUNK, seed_sequence(seed, 4, tag, n), threads)
    return [r for p in parts for r in p]


def estimate_flux_lln(model: Model, n: int, reps: int, seed: int = 0, threads: int | None = None,
                      root_reps: int = 10**6, size_cap: int = DEFAULT_CAP) -> EstimateReport:
    """Mean of ``phi(T_n) / n`` over conditioned trees.

    Supercritical models are compared with ``E_nu[m] - P(root parked)``,
    the latter estimated on unconditioned trees.  Otherwise the limit is 0,
    reported in ``extras`` without a z-score (finite-n values are positive).
    """

    def observe(tree, cars):
        v = K.park_visits(tree.parent, cars)
        return max(int(v[0]) - 1, 0)

    phi = np.array(_conditioned_runs(model, n, reps, seed, threads, 0, observe), dtype=np.int64)
    ratio = phi / n
    est, se = _mean_se(ratio)
    extras = {"n": n, "regime": classify(model).regime.value}
    ref = z = None
    if classify(model).regime is Regime.SUPERCRITICAL:
        rp = estimate_root_parked(model, root_reps, size_cap, seed + 1, threads)
        ref = model.moments.e_m - rp.estimate
        comb = math.hypot(se, rp.stderr)
        z = _z(est, ref, comb)
        extras.update(root_parked=rp.estimate, root_parked_se=rp.stderr, combined_se=comb,
                      root_censored_fraction=rp.extras["censored_fraction"])
    else:
        extras["limit"] = 0.0
    return EstimateReport("flux_lln", est, se, reps, ref, z, extras, raw={"phi": phi})


@dataclass
class ClusterRow:
    n: int
    reps: int
    cmax_over_n_mean: float
    cmax_over_n_se: float
    cmax_over_n_q: list[float]
    c2_mean: float
    c2_q: list[float]
    cmax_over_logn_median: float
    cmax_over_logn_mean: float
    frac_c2_below: float  # fraction of replicates with C_2 <= 30 ln n
    frac_cmax_below: float  # same for C_max


def cluster_experiment(model: Model, n_list: Sequence[int], reps: int, seed: int = 0,
                       threads: int | None = None, log_factor: float = 30.0):
    """Largest and second parked clusters on conditioned trees of each size."""
    rows, raw = [], {"n": [], "c_max": [], "c_2": [], "parked": []}
    for n in n_list:
        def observe(tree, cars):
            v = K.park_visits(tree.parent, cars)
            parked = v >= 1
            s = cluster_sizes(tree.parent, parked)
            c1 = int(s[0]) if s.size else 0
            c2 = int(s[1]) if s.size > 1 else 0
            return c1, c2, int(parked.sum())

        obs = np.array(_conditioned_runs(model, n, reps, seed, threads, 1, observe), dtype=np.int64)
        c1, c2 = obs[:, 0], obs[:, 1]
        ln = math.log(n)
        m, se = _mean_se(c1 / n)
        qs = [0.05, 0.5, 0.95]
        rows.append(ClusterRow(
            n=n, reps=reps,
            cmax_over_n_mean=m, cmax_over_n_se=se,
            cmax_over_n_q=np.quantile(c1 / n, qs).tolist(),
            c2_mean=float(c2.mean()), c2_q=np.quantile(c2, qs).tolist(),
            cmax_over_logn_median=float(np.median(c1 / ln)),
            cmax_over_logn_mean=float(np.mean(c1 / ln)),
            frac_c2_below=float(np.mean(c2 <= log_factor * ln)),
            frac_cmax_below=float(np.mean(c1 <= log_factor * ln)),
        ))
        raw["n"].extend([n] * reps)
        raw["c_max"].extend(c1.tolist())
        raw["c_2"].extend(c2.tolist())
        raw["parked"].extend(obs[:, 2].tolist())
    return rows, raw


# --------------------------------------------------------------------------
# fringe patterns


def plane_trees(max_size: int) -> list[tuple[int, ...]]:
    """All plane trees with at most ``max_size`` vertices, as depth-first degree tuples."""
    out = []
    for n in range(1, max_size + 1):
        for seq in product(range(n), repeat=n):
            s = 0
            ok = True
            for i, d in enumerate(seq):
                s += d - 1
                if (s < 0 and i < n - 1) or (i == n - 1 and s != -1):
                    ok = False
                    break
            if ok:
                out.append(seq)
    return out


def depth_counts(degrees: Sequence[int]) -> np.ndarray:
    """Number of vertices at each depth of the plane tree."""
    parent = K.parents_from_degrees(np.asarray(degrees, dtype=np.int64))
    depth = np.zeros(len(degrees), dtype=np.int64)
    for i in range(1, len(degrees)):
        depth[i] = depth[parent[i]] + 1
    return np.bincount(depth)


def fringe_exact(model: Model, pattern: Sequence[int], k: int) -> float:
    """``n_k(t) * prod_v nu(deg v)`` with ``n_k(t)`` the number of vertices at depth ``k``."""
    nu = model.offspring.probs
    dc = depth_counts(pattern)
    nk = int(dc[k]) if k < dc.size else 0
    w = 1.0
    for d in pattern:
        w *= nu[d] if d < nu.size else 0.0
    return nk * w


_BASE = 16  # pattern codes: degrees in base 16 with a leading size digit


def _code(pattern: Sequence[int]) -> int:
    c = len(pattern)
    for d in pattern:
        c = c * _BASE + d
    return c


@dataclass
class FringeRow:
    pattern: str
    size: int
    exact: float
    empirical: float
    stderr: float
    z: float | None


def fringe_census(model: Model, n: int, k: int, max_pattern_size: int, reps: int, seed: int = 0,
                  threads: int | None = None):
    """Per-pattern frequency of ``H_k(T_n, x) = t`` against the sin-tree probability.

    For a vertex ``a`` with small fringe subtree ``t``, exactly ``n_k(t)``
    vertices ``x`` have ``a`` as their ``k``-th ancestor, so each tree is
    scanned once over candidate ancestors.  Buckets ``no_ancestor`` (depth
    below ``k``) and ``larger`` (fringe bigger than ``max_pattern_size``)
    complete the partition.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    if max_pattern_size > 8:
        raise ValueError("max_pattern_size must be <= 8")
    patterns = [p for p in plane_trees(max_pattern_size) if len(depth_counts(p)) > k]
    if any(max(p) >= _BASE for p in patterns):
        raise ValueError("pattern degrees exceed encoding base")
    index = {_code(p): i for i, p in enumerate(patterns)}
    weight = np.array([depth_counts(p)[k] for p in patterns], dtype=np.int64)
    exact = np.array([fringe_exact(model, p, k) for p in patterns])
    M = max_pattern_size
    P = len(patterns)

    def observe(tree, cars):
        deg = tree.degrees
        sizes = K.subtree_sizes(tree.parent)
        cand = np.flatnonzero(sizes <= M)
        codes = sizes[cand].copy()
        for j in range(M):
            live = sizes[cand] > j
            nxt = np.where(live, deg[np.minimum(cand + j, deg.size - 1)], 0)
            codes = np.where(live, codes * _BASE + nxt, codes)
        uniq, cnt = np.unique(codes, return_counts=True)
        hits = np.zeros(P + 2)
        for c, m in zip(uniq.tolist(), cnt.tolist()):
            i = index.get(c)
            if i is not None:
                hits[i] += m * weight[i]
        none = _count_shallow(tree.parent, k) if k else 0
        hits[P] = none
        hits[P + 1] = deg.size - none - hits[:P].sum()
        return hits / deg.size

    freq = np.array(_conditioned_runs(model, n, reps, seed, threads, 2, observe))
    mean = freq.mean(axis=0)
    se = freq.std(axis=0, ddof=1) / math.sqrt(reps) if reps > 1 else np.zeros(P + 2)
    rows = []
    for i, p in enumerate(patterns):
        z = _z(mean[i], exact[i], se[i]) if se[i] > 0 or mean[i] != exact[i] else 0.0
        rows.append(FringeRow(" ".join(map(str, p)), len(p), float(exact[i]), float(mean[i]), float(se[i]), z))
    buckets = {
        "no_ancestor": float(mean[P]),
        "larger": float(mean[P + 1]),
        "exact_total": float(exact.sum()),
        "partition_sum": float(mean.sum()),
    }
    return rows, buckets, freq


def _count_shallow(parent: np.ndarray, k: int) -> int:
    """Vertices at depth < k (those without a k-th ancestor)."""
    return int((K.depths(parent) < k).sum())


# --------------------------------------------------------------------------
# giant cluster constant via the spine


def estimate_giant_constant(model: Model, K_height: int, margin: int | None = None, reps: int = 10**4,
                            seed: int = 0, size_cap: int = 10**6, threads: int | None = None,
                            require_supercritical: bool = True) -> EstimateReport:
    """Frequency of ``{u_0, ..., u_{K - margin} all parked}`` in ``T(K)``.

    ``u_j`` is the spine vertex at distance ``j`` from the far end.  Cars
    only move rootward, so the parking status of ``u_0 .. u_K`` in ``T(K)`` is
    the same as in the infinite sin-tree; the margin only trims the event.
    ``size_cap`` bounds each grafted GW tree; replicates decided only up to
    such a censoring are reported in ``undecided`` and counted as failures.
    """
    if margin is None:
        margin = max(1, K_height // 4)
    if not 1 <= margin <= K_height:
        raise ValueError("need 1 <= margin <= K")
    regime = classify(model).regime
    if require_supercritical and regime is not Regime.SUPERCRITICAL:
        raise NotSupercritical(f"model is {regime.value}")
    tab = tables_for(model)
    cap = int(size_cap)

    def work(rng, count):
        return K.spine_event_batch(rng, tab.joint, tab.spine, K_height, margin, cap, count)

    parts = run_chunks(work, reps, 2_000, seed_sequence(seed, 5, K_height, margin), threads)
    status = np.concatenate([p[0] for p in parts])
    sizes = np.concatenate([p[1] for p in parts])
    ok = status == 1
    est, se = _mean_se(ok)
    extras = {"K": K_height, "margin": margin, "undecided": int((status < 0).sum()),
              "mean_vertices": float(sizes.mean()), "size_cap": cap}
    return EstimateReport("giant_constant", est, se, reps, None, extras=extras,
                          raw={"status": status, "vertices": sizes})


def giant_stabilization(model: Model, heights: Sequence[int], margin: int, reps: int, seed: int = 0,
                        size_cap: int = 10**6, threads: int | None = None):
    """Estimates at increasing ``K``; consecutive gaps in units of the combined standard error."""
    reports = [estimate_giant_constant(model, h, margin, reps, seed, size_cap, threads) for h in heights]
    gaps = []
    for a, b in zip(reports, reports[1:]):
        s = math.hypot(a.stderr, b.stderr)
        gaps.append(abs(a.estimate - b.estimate) / s if s > 0 else 0.0)
    return reports, gaps


# --------------------------------------------------------------------------
# timing helper


class Stopwatch:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0
        return False
