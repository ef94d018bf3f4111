"""``treepark`` command line.

Every subcommand reads an optional config file (JSON or YAML) with the keys
``model``, ``seed``, ``replicates``, ``n``, ``out``, ``threads`` and
``experiment``; flags override the file.  Exit status is 2 for a bad config or
model, 1 when an estimate with a reference falls outside 4 standard errors
(or an acceptance criterion fails), 0 otherwise.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import yaml

from . import acceptance
from . import harness as H
from .dist_solver import flux_law, iterate_law, tail_rate
from .errors import ConfigError, TreeparkError
from .model import (
    Model,
    build_model,
    classify,
    t_max,
    theoretical_flux_mean,
)
from .parking import clusters, park
from .series import f_series, puiseux_branch, puiseux_c, radius_estimate, w_series
from .treegen import read_instances, sample_arrivals, sample_gw, sample_gw_conditioned, write_instance

DEFAULT_MODEL = {
    "offspring": {"family": "geometric", "k_max": 40},
    "arrivals": {"mode": "uniform", "family": "poisson", "params": {"alpha": 0.325}},
}

TOP_KEYS = {"model", "seed", "replicates", "n", "out", "threads", "experiment"}
EXPERIMENT_KEYS = {
    "classify": set(),
    "park": {"input"},
    "simulate": {"kind", "t", "size_cap", "root_reps"},
    "law": {"N", "tol", "rel_tol", "max_iters"},
    "series": {"D", "w_order", "p0", "a_matrix"},
    "fringe": {"k", "max_pattern_size"},
    "clusters": {"n_list", "log_factor"},
    "giant": {"heights", "margin", "size_cap"},
    "tails": {"thresholds", "size_cap", "min_hits"},
    "repro": {"criteria"},
}


@dataclass
class CliConfig:
    subcommand: str
    config_path: str | None = None
    model: dict = field(default_factory=lambda: json.loads(json.dumps(DEFAULT_MODEL)))
    seed: int = 0
    replicates: int | None = None
    n: int | None = None
    out: str | None = None
    threads: int | None = None
    experiment: dict = field(default_factory=dict)
    as_json: bool = False
    dump_trees: int = 0
    verbosity: int = 0

    def build_model(self) -> Model:
        spec = self.model
        if not isinstance(spec, dict) or set(spec) - {"offspring", "arrivals"}:
            raise ConfigError("model must be a mapping with keys 'offspring' and 'arrivals'")
        return build_model(spec.get("offspring", {}), spec.get("arrivals", {}))


def load_file(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    return data


def _int(value, name: str, lo: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < lo:
        raise ConfigError(f"{name} must be an integer >= {lo}, got {value!r}")
    return int(value)


def resolve(args: argparse.Namespace) -> CliConfig:
    data = load_file(args.config) if args.config else {}
    extra = set(data) - TOP_KEYS
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    exp = data.get("experiment") or {}
    if not isinstance(exp, dict):
        raise ConfigError("experiment must be a mapping")
    bad = set(exp) - EXPERIMENT_KEYS[args.command]
    if bad:
        raise ConfigError(f"unknown experiment keys for {args.command}: {sorted(bad)}")
    cfg = CliConfig(args.command, args.config, experiment=dict(exp))
    if "model" in data:
        cfg.model = data["model"]
    seed = args.seed
    if seed is None:
        seed = data.get("seed")
    if seed is None and os.environ.get("TREEPARK_SEED"):
        try:
            seed = int(os.environ["TREEPARK_SEED"])
        except ValueError:
            raise ConfigError("TREEPARK_SEED must be an integer") from None
    cfg.seed = _int(seed if seed is not None else 0, "seed")
    reps = args.reps if args.reps is not None else data.get("replicates")
    cfg.replicates = None if reps is None else _int(reps, "replicates", 1)
    n = args.n if args.n is not None else data.get("n")
    cfg.n = None if n is None else _int(n, "n", 1)
    cfg.out = args.out if args.out is not None else data.get("out")
    threads = args.threads if args.threads is not None else data.get("threads")
    cfg.threads = None if threads is None else _int(threads, "threads", 1)
    cfg.as_json = args.json
    cfg.dump_trees = args.dump_trees
    cfg.verbosity = args.verbose
    for key in ("input", "kind", "criteria"):
        v = getattr(args, key, None)
        if v is not None:
            cfg.experiment[key] = v
    return cfg


# --------------------------------------------------------------------------
# output helpers


def _emit(cfg: CliConfig, payload: dict, text: str) -> None:
    if cfg.as_json:
        print(json.dumps(H._jsonable(payload), indent=2))
    else:
        print(text)
    if cfg.out:
        os.makedirs(cfg.out, exist_ok=True)
        H.write_json(os.path.join(cfg.out, f"{cfg.subcommand}.json"), payload)


def _csv(cfg: CliConfig, name: str, columns: dict) -> None:
    if cfg.out:
        os.makedirs(cfg.out, exist_ok=True)
        H.write_csv(os.path.join(cfg.out, name), columns)


def _report_text(r: H.EstimateReport) -> str:
    s = f"{r.name}: {r.estimate:.6g} +- {r.stderr:.3g} ({r.replicates} replicates)"
    if r.reference is not None:
        s += f"\nreference {r.reference:.7g}, z = {r.z:+.2f}"
    for k, v in r.extras.items():
        s += f"\n  {k}: {v}"
    return s


def _dump_trees(cfg: CliConfig, model: Model) -> None:
    if not cfg.dump_trees:
        return
    if not cfg.out:
        raise ConfigError("--dump-trees needs an output directory (--out)")
    os.makedirs(cfg.out, exist_ok=True)
    rng = np.random.Generator(np.random.PCG64(H.seed_sequence(cfg.seed, 99)))
    with open(os.path.join(cfg.out, "trees.txt"), "w", encoding="utf-8") as fh:
        for _ in range(cfg.dump_trees):
            tree = sample_gw_conditioned(model, cfg.n, rng) if cfg.n else sample_gw(model, rng, 10**6)
            write_instance(fh, tree, sample_arrivals(tree, model, rng))


# --------------------------------------------------------------------------
# subcommands


def cmd_classify(cfg: CliConfig) -> int:
    model = cfg.build_model()
    mo = model.moments
    c = classify(model)
    payload = {
        "e_sb_m": mo.e_sb_m, "e_m": mo.e_m, "e_q": mo.e_q, "sigma2": mo.sigma2,
        "theta": c.theta, "regime": c.regime.value, "hypothesis_holds": c.hypothesis_holds,
        "t_max": t_max(model), "flux_mean": theoretical_flux_mean(model),
    }
    rows = [
        ("size-biased arrival mean", mo.e_sb_m),
        ("arrival mean", mo.e_m),
        ("arrival excess moment", mo.e_q),
        ("offspring variance", mo.sigma2),
        ("theta", c.theta),
        ("regime", c.regime.value.capitalize()),
        ("t_max", payload["t_max"]),
        ("mean flux", payload["flux_mean"]),
    ]
    text = "\n".join(f"{k:26s}{v:.10g}" if isinstance(v, float) else f"{k:26s}{v}" for k, v in rows)
    _emit(cfg, payload, text)
    return 0


def cmd_park(cfg: CliConfig) -> int:
    path = cfg.experiment.get("input")
    if not path:
        raise ConfigError("park needs an instance file (--input)")
    try:
        fh = sys.stdin if path == "-" else open(path, encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    with fh:
        instances = list(read_instances(fh))
    results = []
    cols = {"instance": [], "vertex": [], "degree": [], "cars": [], "visits": [], "parked": [], "edge_flux": []}
    lines = []
    for i, (tree, cars) in enumerate(instances):
        r = park(tree, cars)
        sizes = clusters(tree, r.parked).sizes
        parked = np.flatnonzero(r.parked).tolist()
        results.append({"n": tree.n, "root_flux": r.root_flux, "parked": parked,
                        "edge_flux": r.edge_flux.tolist(), "clusters": sizes})
        lines.append(f"instance {i}: n={tree.n} root_flux={r.root_flux} parked={len(parked)} "
                     f"clusters={','.join(map(str, sizes))}")
        for col, vals in (("instance", [i] * tree.n), ("vertex", range(tree.n)), ("degree", tree.degrees),
                          ("cars", cars.counts), ("visits", r.visits), ("parked", r.parked.astype(int)),
                          ("edge_flux", r.edge_flux)):
            cols[col].extend(np.asarray(list(vals)).tolist())
    _csv(cfg, "park.csv", cols)
    _emit(cfg, {"instances": results}, "\n".join(lines))
    return 0


def cmd_simulate(cfg: CliConfig) -> int:
    model = cfg.build_model()
    exp = cfg.experiment
    kind = exp.get("kind", "root")
    reps = cfg.replicates or 10_000
    cap = _int(exp.get("size_cap", H.DEFAULT_CAP), "size_cap", 1)
    if kind == "root":
        r = H.estimate_root_parked(model, reps, cap, cfg.seed, cfg.threads)
    elif kind == "flux":
        t = float(exp.get("t", 1.0))
        r = H.estimate_mean_flux(model, t, reps, cap, cfg.seed, cfg.threads)
    elif kind == "lln":
        if not cfg.n:
            raise ConfigError("simulate lln needs n")
        root_reps = _int(exp.get("root_reps", 10**6), "root_reps", 1)
        r = H.estimate_flux_lln(model, cfg.n, reps, cfg.seed, cfg.threads, root_reps, cap)
    else:
        raise ConfigError(f"unknown simulate kind {kind!r} (root, flux, lln)")
    raw = {k: v for k, v in r.raw.items() if np.ndim(v) == 1}
    if raw:
        _csv(cfg, f"simulate_{kind}.csv", {"replicate": np.arange(r.replicates), **raw})
    _dump_trees(cfg, model)
    _emit(cfg, r.summary(), _report_text(r))
    return 0 if r.in_band() else 1


def cmd_law(cfg: CliConfig) -> int:
    model = cfg.build_model()
    exp = cfg.experiment
    d = iterate_law(model, N=_int(exp.get("N", 200), "N", 1), tol=float(exp.get("tol", 1e-13)),
                    rel_tol=exp.get("rel_tol"), max_iters=_int(exp.get("max_iters", 100_000), "max_iters", 1))
    try:
        rho = tail_rate(d)
    except TreeparkError:
        rho = None
    payload = {"p0": d.p0, "mean": d.mean(), "flux_mean": flux_law(d).mean(), "tail_rate": rho,
               "mass_defect": d.mass_defect, "iterations": d.iterations}
    _csv(cfg, "law.csv", {"k": np.arange(d.pmf.size), "p_k": d.pmf})
    text = "\n".join(f"{k:12s}{v}" for k, v in payload.items())
    _emit(cfg, payload, text)
    return 0


def cmd_series(cfg: CliConfig) -> int:
    model = cfg.build_model()
    exp = cfg.experiment
    D = _int(exp.get("D", 8), "D", 1)
    p0 = exp.get("p0")
    c_minus, c_plus = puiseux_c(model)
    br = puiseux_branch(model, -1, D, p0)
    w = w_series(model, _int(exp.get("w_order", 20), "w_order", 1), p0)
    payload = {"c_minus": c_minus, "c_plus": c_plus, "branch": br.c.tolist(),
               "w": w.coeffs.tolist(), "radius_estimate": radius_estimate(w.coeffs)}
    if exp.get("a_matrix"):
        payload["a_matrix"] = f_series(model, min(D, 12), br.p0).coeffs.tolist()
    text = "\n".join([
        f"c_minus {c_minus:.12g}",
        f"c_plus  {c_plus:.12g}",
        "branch  " + " ".join(f"{c:.6g}" for c in br.c),
        "W       " + " ".join(f"{c:.6g}" for c in w.coeffs[:10]) + " ...",
        f"radius  {payload['radius_estimate']:.6g}",
    ])
    _emit(cfg, payload, text)
    return 0


def cmd_fringe(cfg: CliConfig) -> int:
    model = cfg.build_model()
    exp = cfg.experiment
    n = cfg.n or 10_000
    rows, buckets, _ = H.fringe_census(model, n, _int(exp.get("k", 0), "k"),
                                       _int(exp.get("max_pattern_size", 6), "max_pattern_size", 1),
                                       cfg.replicates or 200, cfg.seed, cfg.threads)
    _csv(cfg, "fringe.csv", {f: [getattr(r, f) for r in rows] for f in ("pattern", "size", "exact", "empirical", "stderr", "z")})
    worst = max((abs(r.z) for r in rows if r.z is not None), default=0.0)
    payload = {"n": n, "patterns": len(rows), "worst_abs_z": worst, **buckets, "rows": [asdict(r) for r in rows]}
    text = "\n".join([f"{r.pattern:>16s}  exact {r.exact:.5f}  emp {r.empirical:.5f} +- {r.stderr:.1e}  z {r.z:+.2f}"
                      for r in rows] + [f"worst |z| = {worst:.2f}"])
    _dump_trees(cfg, model)
    _emit(cfg, payload, text)
    return 0 if worst <= 4 else 1


def cmd_clusters(cfg: CliConfig) -> int:
    model = cfg.build_model()
    exp = cfg.experiment
    n_list = exp.get("n_list") or [cfg.n or 1000]
    rows, raw = H.cluster_experiment(model, [_int(n, "n_list entry", 1) for n in n_list], cfg.replicates or 100,
                                     cfg.seed, cfg.threads, float(exp.get("log_factor", 30.0)))
    _csv(cfg, "clusters.csv", raw)
    text = "\n".join(f"n={r.n:<8d} Cmax/n {r.cmax_over_n_mean:.4f} +- {r.cmax_over_n_se:.4f}  "
                     f"median Cmax/ln n {r.cmax_over_logn_median:.3f}  mean C2 {r.c2_mean:.1f}  "
                     f"C2<=A ln n {r.frac_c2_below:.3f}  Cmax<=A ln n {r.frac_cmax_below:.3f}" for r in rows)
    _dump_trees(cfg, model)
    _emit(cfg, {"rows": [asdict(r) for r in rows]}, text)
    return 0


def cmd_giant(cfg: CliConfig) -> int:
    model = cfg.build_model()
    exp = cfg.experiment
    heights = [_int(h, "heights entry", 1) for h in exp.get("heights", [20, 40, 80])]
    margin = _int(exp.get("margin", max(1, heights[0] // 4)), "margin", 1)
    reports, gaps = H.giant_stabilization(model, heights, margin, cfg.replicates or 10_000, cfg.seed,
                                          _int(exp.get("size_cap", 10**6), "size_cap", 1), cfg.threads)
    _csv(cfg, "giant.csv", {"K": heights, "margin": [margin] * len(heights),
                            "estimate": [r.estimate for r in reports], "stderr": [r.stderr for r in reports],
                            "undecided": [r.extras["undecided"] for r in reports]})
    stable = bool(gaps) and gaps[-1] <= 4
    payload = {"estimates": [r.summary() for r in reports], "gaps_sigma": gaps, "stabilized": stable}
    text = "\n".join(f"K={r.extras['K']:<4d} {r.estimate:.4f} +- {r.stderr:.4f}" for r in reports)
    text += "\ngaps (sigma): " + ", ".join(f"{g:.2f}" for g in gaps)
    if not stable:
        text += "\nwarning: last two heights differ by more than 4 sigma; not stabilized"
    _emit(cfg, payload, text)
    return 0


def cmd_tails(cfg: CliConfig) -> int:
    model = cfg.build_model()
    exp = cfg.experiment
    rep = H.tail_experiment(model, cfg.replicates or 10**6, exp.get("thresholds"),
                            _int(exp.get("size_cap", 10**5), "size_cap", 1), cfg.seed, cfg.threads,
                            _int(exp.get("min_hits", 100), "min_hits", 1))
    _csv(cfg, "tails.csv", {c: [row[c] for row in rep.table] for c in ("k", "hits", "survival")})
    s = rep.summary()
    text = "\n".join(f"{k:16s}{v}" for k, v in s.items() if k != "table")
    _emit(cfg, s, text)
    return 0


def cmd_repro(cfg: CliConfig) -> int:
    chosen = cfg.experiment.get("criteria") or sorted(acceptance.CRITERIA)
    results = []
    for i in chosen:
        if i not in acceptance.CRITERIA:
            raise ConfigError(f"no acceptance criterion {i}")
        kw = {"threads": cfg.threads} if "threads" in acceptance.CRITERIA[i][1].__code__.co_varnames else {}
        r = acceptance.run_criterion(i, **kw)
        results.append(r)
        if not cfg.as_json:
            print(r.line(), flush=True)
            if cfg.verbosity:
                print("   ", json.dumps(H._jsonable(r.details)))
    payload = {"criteria": [{"number": r.number, "title": r.title, "passed": r.passed,
                             "seconds": r.seconds, "details": r.details} for r in results]}
    if cfg.as_json:
        print(json.dumps(H._jsonable(payload), indent=2))
    if cfg.out:
        os.makedirs(cfg.out, exist_ok=True)
        H.write_json(os.path.join(cfg.out, "repro.json"), payload)
    return 0 if all(r.passed for r in results) else 1


COMMANDS = {
    "classify": (cmd_classify, "moments, phase criterion, regime, t_max and mean flux"),
    "park": (cmd_park, "park cars on trees read from an instance file"),
    "simulate": (cmd_simulate, "root-parked, mean-flux or conditioned-flux Monte Carlo"),
    "law": (cmd_law, "solve for the law of root visits"),
    "series": (cmd_series, "local expansion, branch slopes and the visits pgf"),
    "fringe": (cmd_fringe, "fringe subtree frequencies on conditioned trees"),
    "clusters": (cmd_clusters, "largest parked clusters on conditioned trees"),
    "giant": (cmd_giant, "giant-cluster constant from truncated spine trees"),
    "tails": (cmd_tails, "tail of the root flux against the solved tail rate"),
    "repro": (cmd_repro, "run the pinned acceptance suite"),
}


def parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or YAML config file")
    common.add_argument("--seed", type=int, help="master seed (falls back to TREEPARK_SEED)")
    common.add_argument("--reps", type=int, help="number of replicates")
    common.add_argument("--n", type=int, help="conditioned tree size")
    common.add_argument("--out", help="directory for CSV and JSON outputs")
    common.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    common.add_argument("--json", action="store_true", help="print JSON instead of text")
    common.add_argument("--dump-trees", type=int, default=0, metavar="COUNT",
                        help="also write COUNT sampled instances to OUT/trees.txt")
    common.add_argument("-v", "--verbose", action="count", default=0)
    p = argparse.ArgumentParser(prog="treepark", description="Parking on random trees.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        sp = sub.add_parser(name, parents=[common], help=help_)
        if name == "park":
            sp.add_argument("--input", help="instance file: degree line then cars line per tree ('-' for stdin)")
        elif name == "simulate":
            sp.add_argument("--kind", choices=["root", "flux", "lln"])
        elif name == "repro":
            sp.add_argument("--criteria", type=int, nargs="+", help="subset of criteria to run")
    return p


def run(argv: Sequence[str] | None = None) -> int:
    args = parser().parse_args(argv)
    try:
        cfg = resolve(args)
        return COMMANDS[cfg.subcommand][0](cfg)
    except (ConfigError, TreeparkError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
