"""Command-line runner: ``reflectch <subcommand> [--config FILE] [flags]``.

Parameter precedence is built-in defaults, then the JSON config file, then
command-line flags.  A config file holds the common keys ``seed``,
``workers`` and ``out`` plus one block named after the subcommand, e.g.::

    {"seed": 3, "ibp": {"identity": "cone", "phi": "sin-e1", "h": "e1", "n": 1000000}}

Unknown keys anywhere are a usage error.  Exit codes: 0 all checks passed,
1 a check failed, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .acceptance import CHECKS, KNOWN_LIMITATIONS, SCALES, check_determinism, run_check
from .ibp import (
    HalfFunctional,
    boundary_72,
    get_functional,
    verify_b4_identity,
    verify_cor_72,
    verify_ibp_72,
    verify_lemma_b1,
    verify_prop_a1,
)
from .io import report_document, write_json, write_manifest, write_paths_csv, write_table_csv, write_trajectory_csv
from .mc import batched_map, ks_two_sample, make_rng
from .meander import conditioned_walk_samples, denisov_check, meander_at_times
from .measures import brownian_paths, mu_c_paths, mu_covariance, mu_paths, nu_c_eps_paths, nu_c_paths
from .reflection import StationaryRun, contact_support_check, eps_sweep, stationary_law_compare, weak_form_residual
from .solver import SolverConfig, solve_path
from .spectral import Field, GridSpec

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
COMMON = {"seed": 0, "workers": 1, "out": "reflectch-out"}

IDENTITIES = ("absolute-continuity", "cone", "fixed-average", "half-density", "half-ibp", "half-penalized")

DEFAULTS = {
    "simulate": {
        "n_modes": 32,
        "T": 0.1,
        "eps": 0.1,
        "c": 1.0,
        "dt": None,
        "m_points": None,
        "kind": "negative_part",
        "x0": None,
        "weak_form_mode": 1,
    },
    "measure": {"measure": "mu", "n": 10_000, "m_points": 257, "c": 1.0, "eps": 0.1, "kind": "negative_part", "save_paths": 100, "threshold": 4.0},
    "meander": {"n": 100_000, "m_points": 257, "walk_steps": 400, "walk_samples": 20_000, "alpha": 0.01},
    "ibp": {
        "identity": "cone",
        "phi": "sin-e1",
        "h": "e1",
        "psi": "one",
        "c": 1.0,
        "eps": 1.0,
        "n": 200_000,
        "m_points": 257,
        "threshold": None,
        "indicator": "bridge",
        "boundary_design": "arcsine",
        "bandwidth": None,
    },
    "sweep": {
        "c": 1.0,
        "eps": [0.3, 0.1, 0.03, 0.01],
        "n_modes": 64,
        "n_replicas": 2000,
        "n_reference": 20_000,
        "reference": "nu_c",
        "alpha": 0.01,
        "trajectory_T": 0.2,
    },
    "selftest": {"fast": False, "checks": None, "strict": False, "determinism": True},
}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- config handling


def _parse_count(text) -> int:
    """Integer sample counts, allowing scientific notation such as 1e6."""
    x = float(text)
    if not x.is_integer() or x < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return int(x)


def _float_list(text) -> list[float]:
    return [float(t) for t in str(text).split(",") if t.strip()]


def _str_list(text) -> list[str]:
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _check_keys(block: dict, allowed, where: str):
    bad = sorted(set(block) - set(allowed))
    if bad:
        raise UsageError(f"unknown key(s) in {where}: {', '.join(bad)}")


def load_config(path, command: str) -> tuple[dict, dict]:
    """Read a JSON config; returns (common, block) with unknown keys rejected."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read config {path}: {e}") from e
    if not isinstance(data, dict):
        raise UsageError("config must be a JSON object")
    _check_keys(data, list(COMMON) + list(DEFAULTS), "config")
    block = data.get(command, {})
    if not isinstance(block, dict):
        raise UsageError(f"config block {command!r} must be an object")
    _check_keys(block, DEFAULTS[command], f"config block {command!r}")
    return {k: data[k] for k in COMMON if k in data}, block


def resolve(command: str, args: argparse.Namespace) -> tuple[dict, dict]:
    common = dict(COMMON)
    params = dict(DEFAULTS[command])
    if args.config:
        fc, fb = load_config(args.config, command)
        common.update(fc)
        params.update(fb)
    for k in COMMON:
        v = getattr(args, k, None)
        if v is not None:
            common[k] = v
    for k in DEFAULTS[command]:
        v = getattr(args, f"p_{k}", None)
        if v is not None:
            params[k] = v
    return common, params


# ---------------------------------------------------------------- subcommands


def _basis_field(name: str, n_modes: int = 4) -> Field:
    if not (name.startswith("e") and name[1:].isdigit()):
        raise UsageError(f"direction must look like e0, e1, ...; got {name!r}")
    k = int(name[1:])
    return Field.basis(k, max(n_modes, k))


def cmd_simulate(p: dict, seed: int, workers: int) -> tuple[dict, dict, dict]:
    cfg = SolverConfig(p["n_modes"], p["T"], p["eps"], p["c"], dt=p["dt"], seed=seed, kind=p["kind"], m_points=p["m_points"])
    if p["x0"] is None:
        x0 = Field.constant(cfg.c, cfg.n_modes)
    else:
        x0 = Field(np.asarray(p["x0"], dtype=float)).padded(cfg.n_modes)
    traj = solve_path(x0, cfg)
    K = traj.times.size - 1
    delta = traj.times[min(1, K)]
    h = Field.basis(min(p["weak_form_mode"], cfg.n_modes), cfg.n_modes)
    weak = weak_form_residual(traj, h, delta, traj.times[K]) if K > 1 else 0.0
    drift0 = float(np.max(np.abs(traj.drift[:, 0])))
    avg_dev = float(np.max(np.abs(traj.coeffs[:, 0] - cfg.c)))
    final_vals = traj.values()[-1]
    contact = contact_support_check(traj)
    checks = {"average_conserved": avg_dev <= 1e-12 * max(1.0, abs(cfg.c)), "contact_mass_on_negative_set": contact["all_negative"]}
    payload = {
        "steps": K,
        "dt": cfg.dt,
        "eta_mass": traj.eta_mass,
        "max_average_drift": drift0,
        "max_average_deviation": avg_dev,
        "contact_integral": float(np.sum(traj.contact_per_step)),
        "eta_weighted_abs_u_quantiles": contact["quantiles_abs_u"],
        "weak_form_residual": weak,
        "final_min": float(final_vals.min()),
        "final_coeffs": traj.coeffs[-1],
    }
    files = {
        "trajectory.csv": lambda path, conf: write_trajectory_csv(path, traj, seed, conf),
        "final_values.csv": lambda path, conf: write_paths_csv(path, final_vals[None, :], cfg.grid, seed, conf),
    }
    return payload, checks, files


def cmd_measure(p: dict, seed: int, workers: int):
    grid = GridSpec(p["m_points"])
    name = p["measure"]
    rep = None
    if name in ("brownian", "mu", "mu_c"):
        fn = {
            "brownian": lambda g, n: brownian_paths(n, grid, g),
            "mu": lambda g, n: mu_paths(n, grid, g),
            "mu_c": lambda g, n: mu_c_paths(n, p["c"], grid, g),
        }[name]
        X = np.concatenate(batched_map(fn, p["n"], seed, f"measure-{name}", workers=workers))
    elif name == "nu_c":
        X, rep = nu_c_paths(p["n"], p["c"], grid, make_rng(seed, "measure-nu_c"))
    elif name == "nu_c_eps":
        X, rep = nu_c_eps_paths(p["n"], p["c"], p["eps"], grid, make_rng(seed, "measure-nu_c_eps"), kind=p["kind"])
    else:
        raise UsageError(f"unknown measure {name!r}; choose brownian, mu, mu_c, nu_c, nu_c_eps")
    points = (0.0, 0.25, 0.5, 0.75, 1.0)
    idx = [grid.index_of(t) for t in points]
    Y = X[:, idx] - X[:, idx].mean(axis=0)
    cov = (Y.T @ Y) / (Y.shape[0] - 1)
    rows, checks = [], {}
    for i, s in enumerate(points):
        for j, t in enumerate(points[i:], start=i):
            prod = Y[:, i] * Y[:, j]
            se = float(prod.std(ddof=1) / math.sqrt(prod.size))
            row = {"theta": s, "sigma": t, "covariance": float(cov[i, j]), "stderr": se}
            if name in ("mu", "brownian"):
                exact = float(mu_covariance(s, t)) if name == "mu" else min(s, t)
                row |= {"exact": exact, "z": _zscore(cov[i, j] - exact, se)}
            rows.append(row)
    if name in ("mu", "brownian"):
        checks["covariance_within_threshold"] = all(abs(r["z"]) <= p["threshold"] for r in rows)
    avg = grid.integrate(X)
    payload = {
        "measure": name,
        "n": int(X.shape[0]),
        "m_points": grid.m_points,
        "mean_at": {str(t): float(X[:, k].mean()) for t, k in zip(points, idx)},
        "average": {"mean": float(avg.mean()), "sd": float(avg.std(ddof=1))},
        "minimum": {"mean": float(X.min(axis=1).mean()), "fraction_negative": float(np.mean(X.min(axis=1) < 0))},
        "covariance": rows,
        "rejection": rep.as_dict() if rep is not None else None,
    }
    if name in ("mu_c", "nu_c", "nu_c_eps"):
        checks["fixed_average"] = bool(np.max(np.abs(avg - p["c"])) < 1e-10)
    if name == "nu_c":
        checks["nonnegative"] = bool(X.min() >= 0.0)
    n_save = min(p["save_paths"], X.shape[0])
    files = {"paths.csv": lambda path, conf: write_paths_csv(path, X[:n_save], grid, seed, conf)} if n_save > 0 else {}
    return payload, checks, files


def _zscore(diff: float, se: float) -> float:
    # degenerate entries (a pinned value) have zero spread and must match exactly
    if se > 0:
        return float(diff / se)
    return 0.0 if abs(diff) < 1e-12 else math.inf


def cmd_meander(p: dict, seed: int, workers: int):
    grid = GridSpec(p["m_points"])
    n_walk = p["walk_samples"]
    M = meander_at_times(np.tile([0.5, 1.0], (n_walk, 1)), make_rng(seed, "meander-samples"))
    W = conditioned_walk_samples(p["walk_steps"], (0.5, 1.0), n_walk, make_rng(seed, "meander-walk"))
    walk_tests = [ks_two_sample(M[:, 0], W[:, 0], "meander@0.5 vs walk"), ks_two_sample(M[:, 1], W[:, 1], "meander@1 vs walk")]
    ray = stats.kstest(M[:, 1], stats.rayleigh.cdf)
    den = denisov_check(p["n"], grid, seed, alpha=p["alpha"])
    checks = {
        "endpoint_rayleigh": ray.pvalue > p["alpha"],
        "walk_oracle": all(t.passed(p["alpha"] / 2) for t in walk_tests),
        "denisov": den["passed"],
    }
    payload = {
        "endpoint_rayleigh": {"statistic": float(ray.statistic), "p_value": float(ray.pvalue)},
        "walk_oracle": [t.as_dict() for t in walk_tests],
        "denisov": {k: v for k, v in den.items() if not k.startswith("_")},
    }
    return payload, checks, {}


def cmd_ibp(p: dict, seed: int, workers: int):
    ident = p["identity"]
    if ident not in IDENTITIES:
        raise UsageError(f"unknown identity {ident!r}; choose from {', '.join(IDENTITIES)}")
    grid = GridSpec(p["m_points"])
    kw = {"grid": grid, "workers": workers}
    thr = p["threshold"]
    try:
        if ident == "absolute-continuity":
            rep = verify_prop_a1(get_functional(p["phi"]), p["n"], seed, threshold=thr or 3.0, **kw)
        elif ident == "cone":
            phi, h = get_functional(p["phi"]), _basis_field(p["h"])
            rep = verify_ibp_72(phi, h, p["n"], seed, threshold=thr or 3.0, indicator=p["indicator"], boundary_design=p["boundary_design"], **kw)
        elif ident == "fixed-average":
            phi, h = get_functional(p["phi"]), _basis_field(p["h"])
            rep = verify_cor_72(phi, h, p["c"], p["n"], seed, bandwidth=p["bandwidth"], threshold=thr or 4.0, indicator=p["indicator"], **kw)
        elif ident in ("half-density", "half-ibp"):
            b2, b3 = verify_lemma_b1(HalfFunctional(p["psi"]), p["c"], p["n"], seed, threshold=thr or 3.0, indicator=p["indicator"], **kw)
            rep = b2 if ident == "half-density" else b3
        else:
            rep = verify_b4_identity(HalfFunctional(p["psi"]), p["c"], p["eps"], p["n"], seed, threshold=thr or 3.0, **kw)
    except (KeyError, ValueError) as e:
        raise UsageError(str(e)) from e
    payload = rep.as_dict()
    checks = {rep.name: rep.passed}
    if ident == "cone" and p["boundary_design"] == "arcsine":
        other = boundary_72(get_functional(p["phi"]), _basis_field(p["h"]), p["n"], seed, grid, workers=workers, design="chebyshev")
        d = rep.boundary - other
        payload["boundary_chebyshev"] = other.as_dict()
        payload["boundary_designs_difference_se_units"] = d.z
        checks["boundary_designs_agree"] = abs(d.z) <= 3.0
    return payload, checks, {}


def cmd_sweep(p: dict, seed: int, workers: int):
    eps = p["eps"] if isinstance(p["eps"], list) else [float(p["eps"])]
    run = StationaryRun(n_modes=p["n_modes"], n_replicas=p["n_replicas"])
    res, data = eps_sweep(p["c"], eps, run, seed, workers=workers, compare_limit=True, n_reference=p["n_reference"], keep_data=True)
    smallest = res.eps[-1]
    cmp = stationary_law_compare(p["c"], smallest, run, seed, reference=p["reference"], n_reference=p["n_reference"], alpha=p["alpha"], data=data[-1])
    cfg = run.config(p["c"], smallest, seed).with_(T=p["trajectory_T"])
    x0 = Field.constant(p["c"], cfg.n_modes)
    traj = solve_path(x0, cfg)
    contact = contact_support_check(traj)
    checks = res.checks()
    status = {
        "contact_rate_nonpositive": checks["contact_rate_nonpositive"],
        "contact_rate_magnitude_decreasing": checks["contact_rate_magnitude_decreasing"],
        "eta_mass_bounded": checks["eta_mass_bounded"],
        "limit_marginals_ks": cmp["passed"],
        "contact_mass_on_negative_set": contact["all_negative"],
    }
    payload = {
        "sweep": res.as_dict(),
        "limit_compare": cmp,
        "trajectory_contact": {k: v for k, v in contact.items() if k not in ("hist", "edges")},
        "known_limitations": {k: KNOWN_LIMITATIONS[k] for k in status if k in KNOWN_LIMITATIONS},
    }
    files = {"sweep.csv": lambda path, conf: write_table_csv(path, res.table(), seed, conf)}
    return payload, checks_only(status), files


def checks_only(d: dict) -> dict:
    return {k: bool(v) for k, v in d.items()}


def cmd_selftest(p: dict, seed: int, workers: int):
    scale = SCALES["fast" if p["fast"] else "full"]
    names = p["checks"] or list(CHECKS)
    if isinstance(names, str):
        names = _str_list(names)
    unknown = [n for n in names if n not in CHECKS and n != "determinism"]
    if unknown:
        raise UsageError(f"unknown check(s): {', '.join(unknown)}; available: {', '.join(list(CHECKS) + ['determinism'])}")
    def timed_determinism():
        t0 = time.perf_counter()
        r = check_determinism(seed=seed)
        r.seconds = time.perf_counter() - t0
        return r

    results, lines = [], []
    for n in names:
        r = timed_determinism() if n == "determinism" else run_check(n, scale, seed, workers)
        results.append(r)
        lines.append(r.line())
        print(r.line(), file=sys.stderr, flush=True)
    if p["determinism"] and "determinism" not in names and p["checks"] is None:
        r = timed_determinism()
        results.append(r)
        print(r.line(), file=sys.stderr, flush=True)
    checks = {}
    for r in results:
        for k, v in r.subchecks.items():
            if p["strict"] or k not in r.known:
                checks[f"{r.key}:{k}"] = v
    payload = {"scale": scale.name, "results": [r.as_dict() for r in results]}
    meta = {"seconds": {r.key: round(r.seconds, 3) for r in results}}
    return payload, checks, {}, meta


COMMANDS = {
    "simulate": cmd_simulate,
    "measure": cmd_measure,
    "meander": cmd_meander,
    "ibp": cmd_ibp,
    "sweep": cmd_sweep,
    "selftest": cmd_selftest,
}


# ---------------------------------------------------------------- argument parsing


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="reflectch", description="Simulation and Monte Carlo verification runner.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, help="root seed")
        sp.add_argument("--workers", type=int, help="worker threads (results do not depend on it)")
        sp.add_argument("--out", help="output directory")

    def opt(sp, name, type_=str, **kw):
        kw.setdefault("metavar", None if "choices" in kw else name.upper())
        sp.add_argument(f"--{name.replace('_', '-')}", dest=f"p_{name}", type=type_, **kw)

    sp = sub.add_parser("simulate", help="integrate one path of the penalized equation")
    common(sp)
    opt(sp, "n_modes", int)
    opt(sp, "T", float)
    opt(sp, "eps", float)
    opt(sp, "c", float)
    opt(sp, "dt", float)
    opt(sp, "m_points", int)
    opt(sp, "kind")
    opt(sp, "x0", _float_list, help="initial coefficients a0,a1,...")

    sp = sub.add_parser("measure", help="sample a reference measure and report covariances")
    common(sp)
    opt(sp, "measure", choices=["brownian", "mu", "mu_c", "nu_c", "nu_c_eps"])
    opt(sp, "n", _parse_count)
    opt(sp, "m_points", int)
    opt(sp, "c", float)
    opt(sp, "eps", float)
    opt(sp, "save_paths", int)

    sp = sub.add_parser("meander", help="meander sampler checks and the minimum-time decomposition")
    common(sp)
    opt(sp, "n", _parse_count)
    opt(sp, "m_points", int)
    opt(sp, "walk_steps", int)
    opt(sp, "walk_samples", _parse_count)

    sp = sub.add_parser("ibp", help="Monte Carlo check of one integration-by-parts identity")
    common(sp)
    opt(sp, "identity", choices=IDENTITIES)
    opt(sp, "phi")
    opt(sp, "h")
    opt(sp, "psi")
    opt(sp, "c", float)
    opt(sp, "eps", float)
    opt(sp, "n", _parse_count)
    opt(sp, "m_points", int)
    opt(sp, "threshold", float)
    opt(sp, "indicator", choices=["bridge", "grid"])
    opt(sp, "boundary_design", choices=["arcsine", "chebyshev"])
    opt(sp, "bandwidth", float)

    sp = sub.add_parser("sweep", help="stationary statistics across a list of eps")
    common(sp)
    opt(sp, "c", float)
    opt(sp, "eps", _float_list, help="comma-separated list")
    opt(sp, "n_modes", int)
    opt(sp, "n_replicas", _parse_count)
    opt(sp, "n_reference", _parse_count)
    opt(sp, "reference", choices=["nu_c", "nu_c_eps"])

    sp = sub.add_parser("selftest", help="run the acceptance checks")
    common(sp)
    sp.add_argument("--fast", dest="p_fast", action="store_const", const=True, help="reduced sample sizes")
    opt(sp, "checks", _str_list, help=f"comma-separated subset of: {', '.join(list(CHECKS) + ['determinism'])}")
    sp.add_argument("--strict", dest="p_strict", action="store_const", const=True, help="count known limitations as failures")
    return ap


def run(argv=None) -> int:
    """Parse ``argv``, run one subcommand, write its reports and return the exit code."""
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    command = args.command
    try:
        common, params = resolve(command, args)
        seed, workers, out = int(common["seed"]), int(common["workers"]), Path(common["out"])
        if workers < 1:
            raise UsageError("--workers must be >= 1")
        t0 = time.perf_counter()
        result = COMMANDS[command](params, seed, workers)
    except (UsageError, ValueError) as e:
        # ValueError comes from invalid parameter combinations, e.g. an unstable dt
        print(f"reflectch {command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    payload, checks, files = result[:3]
    meta = result[3] if len(result) > 3 else {}
    meta = {"seconds": round(time.perf_counter() - t0, 3), "workers": workers} | meta
    config = {"command": command, "seed": seed, "params": params}
    passed = all(checks.values())
    payload = {"checks": checks, "passed": passed, "result": payload}
    doc = report_document(command, config, seed, payload, meta)
    written = [write_json(out / f"{command}.json", doc)]
    for fname, writer in files.items():
        written.append(writer(out / fname, config))
    write_manifest(out, command, config, seed, written, {"passed": passed, "checks": checks})
    summary = {"command": command, "passed": passed, "checks": checks, "report": str(written[0])}
    if command == "ibp":
        summary["result"] = doc["payload"]["result"]
    print(json.dumps(summary, indent=2, default=str))
    return EXIT_OK if passed else EXIT_FAIL


def main(argv=None) -> int:
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
