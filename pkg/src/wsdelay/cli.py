"""Configuration-driven experiment runner.

``wsdelay run config.json`` executes one experiment and writes CSV tables,
a JSON summary and a manifest into the output directory.  ``wsdelay list``
prints the available experiments.  Exit codes: 0 all checks passed,
1 a tolerance check failed, 2 the configuration could not be parsed,
3 a numerical abort.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__
from .ensemble import run_ensemble
from .linalg import MatrixError
from .microscopic import build_potential, delay_traces, krein_friedel_residual, max_cell_width
from .moments import mc_moments, second_moments
from .noise import NoiseSpec, RngStream, verify_correlator
from .params import ModelParams, SdeConfig
from .resolvent import (ResolventGrid, ResolventGridError, density_from_resolvent, empirical_density,
                        l1_between, solve_resolvent_pde)
from .rmt import (WishartSpec, dufresne_batch, ks_exponential, sample_wishart_eigs,
                  stationary_cdf)
from .sde import align_dx, lyapunov_spectrum, qtilde_batch

CSV_VERSION = 1
SECOND_STREAM = 1_000_000_000   # stream-id offset of an independent second ensemble
ORACLE_STREAM = 2_000_000_000


class ConfigError(ValueError):
    pass


# --- results --------------------------------------------------------------------

@dataclass
class Check:
    name: str
    value: float
    limit: float
    passed: bool

    def as_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "limit": self.limit, "passed": self.passed}


@dataclass
class Result:
    tables: dict = field(default_factory=dict)      # name -> (columns, rows)
    summary: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def check(self, name: str, value: float, limit: float, passed: bool | None = None):
        ok = bool(value <= limit) if passed is None else bool(passed)
        self.checks.append(Check(name, float(value), float(limit), ok))

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _mean_se(x: np.ndarray):
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def _z(a, sa, b, sb=0.0) -> float:
    se = math.hypot(sa, sb)
    return abs(a - b) / se if se > 0 else (0.0 if a == b else math.inf)


def _traces(q: np.ndarray):
    tr = np.trace(q, axis1=-2, axis2=-1).real
    tr2 = np.einsum("...ij,...ji->...", q, q).real
    return tr, tr2


def _compare_rows(res: Result, label_a, qa, label_b, qb, prefix=""):
    """Rows and 3-sigma checks for the first two moments of tr of two ensembles."""
    ta, _ = _traces(qa)
    tb, _ = _traces(qb)
    for name, fa, fb in (("mean_tr", ta, tb), ("sq_tr", ta ** 2, tb ** 2)):
        ma, sa = _mean_se(fa)
        mb, sb = _mean_se(fb)
        z = _z(ma, sa, mb, sb)
        res.tables.setdefault("comparison", (
            ["quantity", "method_a", "mean_a", "stderr_a", "method_b", "mean_b", "stderr_b", "z"], []))[1].append(
            [prefix + name, label_a, ma, sa, label_b, mb, sb, z])
        res.check(f"{prefix}{name} {label_a} vs {label_b} (z)", z, 3.0)


# --- experiments ----------------------------------------------------------------

def _noise_check(model: ModelParams, cfg: SdeConfig, sim: dict, prm: dict, workers: int) -> Result:
    res = Result()
    spec = NoiseSpec(model.N, model.b, cfg.dx)
    rep = verify_correlator(spec, prm["n_increments"], RngStream(sim["master_seed"], 0),
                            threshold=prm["threshold"])
    cols = ["a", "b", "c", "d", "expected", "empirical_re", "empirical_im", "stderr_re", "stderr_im"]
    res.tables["correlator"] = (cols, [[r[c] for c in cols] for r in rep.rows()])
    res.summary = {"n_increments": rep.n_samples, "max_z": rep.max_z, "flagged": rep.flagged}
    res.check("max |z| over all C_abcd", rep.max_z, prm["threshold"])
    return res


def _moments(model, cfg, sim, prm, workers) -> Result:
    res = Result()
    xs = [float(v) for v in prm["L_over_xi"]]
    if max(xs) > 2:
        msg = "L/xi > 2: second-moment estimators are dominated by rare trajectories"
        warnings.warn(msg)
        res.notes.append(msg)
    reps = mc_moments(model, [x * model.xi for x in xs], sim["n_traj"], cfg, sim["master_seed"],
                      prm["method"], workers)
    cols = ["N", "beta", "L_over_xi", "quantity", "closed", "ode", "mc", "stderr",
            "median_of_means", "mom_stderr"]
    rows = []
    for rep in reps:
        for r in rep.rows():
            q = r["quantity"]
            rows.append([r[c] for c in cols[:8]] + [rep.median_of_means[q], rep.mom_stderr[q]])
        z, zr = rep.z_scores(), rep.z_scores(robust=True)
        res.check(f"mean_tr at L/xi={rep.L_over_xi} (z)", z["mean_tr"], 3.0)
        for q in ("sq_tr", "tr_sq"):
            rel = abs(rep.ode[q] - rep.closed[q]) / abs(rep.closed[q]) if rep.closed[q] else 0.0
            res.check(f"{q} ODE vs closed form at L/xi={rep.L_over_xi} (rel)", rel, 1e-8)
            if rep.L_over_xi <= prm["second_moment_max_L"]:
                res.check(f"{q} at L/xi={rep.L_over_xi} (median-of-means z)", zr[q], 3.0)
        if model.N == 1:
            gap = abs(rep.closed["sq_tr"] - rep.closed["tr_sq"])
            res.check(f"N=1 degeneracy sq_tr = tr_sq at L/xi={rep.L_over_xi}", gap,
                      1e-12 * max(1.0, rep.closed["sq_tr"]))
    res.tables["moments"] = (cols, rows)
    res.summary = {"method": prm["method"], "n_traj": sim["n_traj"],
                   "reports": [json.loads(r.to_json()) for r in reps]}
    return res


def _dufresne_kernel(n, beta, length, cfg, rngs):
    g, bad = dufresne_batch(n, beta, length, cfg, rngs)
    return g


def _dufresne(model, cfg, sim, prm, workers) -> Result:
    res = Result()
    n, b = model.N, model.b
    g = run_ensemble(partial(_dufresne_kernel, n, b, prm["L_over_xi"], cfg), sim["n_traj"],
                     sim["master_seed"], 0, cfg.batch, workers)
    ok = np.all(np.isfinite(g.reshape(len(g), -1)), axis=1)
    g = g[ok]
    tr, tr2 = _traces(g)
    w = sample_wishart_eigs(WishartSpec.for_wire(model), RngStream(sim["master_seed"], ORACLE_STREAM),
                            prm["n_wishart"])
    wt, wt2 = w.traces(1), w.traces(2)
    exact = 2 * n * model.mu
    cols = ["quantity", "mc", "mc_stderr", "wishart", "wishart_stderr", "exact"]
    rows = []
    for name, a, c, ex in (("tr", tr, wt, exact), ("tr_sq", tr2, wt2, math.nan)):
        ma, sa = _mean_se(a)
        mc_, sc = _mean_se(c)
        rows.append([name, ma, sa, mc_, sc, ex])
        res.check(f"E[{name}] vs Wishart sampler (combined z)", _z(ma, sa, mc_, sc), 3.0)
        if name == "tr":
            res.check("E[tr Gamma] vs 2 N mu (z)", _z(ma, sa, exact), 3.0)
    summary = {"n_used": int(ok.sum()), "n_singular": int((~ok).sum()), "exact_mean_tr": exact}
    if n == 1:
        ks = ks_exponential(g[:, 0, 0].real, 2.0)
        summary["ks_statistic"], summary["ks_pvalue"] = float(ks.statistic), float(ks.pvalue)
        res.check("KS p-value vs Exponential(mean 2) (must exceed 0.01)", float(ks.pvalue), 0.01,
                  passed=ks.pvalue > 0.01)
    res.tables["dufresne"] = (cols, rows)
    res.summary = summary
    return res


def _two_routes(method_a, method_b):
    def run(model, cfg, sim, prm, workers) -> Result:
        res = Result()
        x = [float(prm["L_over_xi"])]
        ka = partial(qtilde_batch, model.N, model.b, x, align_dx(cfg, x), method=method_a)
        kb = partial(qtilde_batch, model.N, model.b, x, align_dx(cfg, x), method=method_b)
        qa = run_ensemble(ka, sim["n_traj"], sim["master_seed"], 0, cfg.batch, workers)[:, 0]
        qb = run_ensemble(kb, sim["n_traj"], sim["master_seed"], SECOND_STREAM, cfg.batch, workers)[:, 0]
        _compare_rows(res, method_a, qa, method_b, qb)
        res.summary = {"L_over_xi": x[0], "n_traj": sim["n_traj"], "units": "tau_xi"}
        return res
    return run


def _lyapunov(model, cfg, sim, prm, workers) -> Result:
    res = Result()
    cols = ["flow", "n", "exponent", "stderr", "expected", "z"]
    rows = []
    for flow, drift in (("noise-only", False), ("lambda", True)):
        est = lyapunov_spectrum(model, prm["length"], cfg, RngStream(sim["master_seed"], int(drift)),
                                prm["n_paths"], include_drift=drift, qr_every=prm["qr_every"])
        exp_ = est.expected(model.N, model.b, model.mu if drift else 0.0)
        for i, (e, s, x) in enumerate(zip(est.exponents, est.stderr, exp_)):
            z = _z(float(e), float(s), float(x))
            rows.append([flow, i + 1, float(e), float(s), float(x), z])
            res.check(f"{flow} exponent {i + 1} (z)", z, 3.0)
    res.tables["lyapunov"] = (cols, rows)
    res.summary = {"length_over_xi": prm["length"], "n_paths": prm["n_paths"]}
    return res


def _microscopic(model, cfg, sim, prm, workers) -> Result:
    res = Result()
    L = prm["L_over_xi"] * model.xi
    kern = partial(delay_traces, model, L, h=prm["h"], d_eps=None)
    tr = run_ensemble(kern, sim["n_traj"], sim["master_seed"], 0, prm["block"], workers)
    t, t2 = tr[:, 0], tr[:, 1]
    mean_exact = model.N * L / model.k
    sq_exact, trsq_exact = second_moments(model, L)
    cols = ["quantity", "microscopic", "stderr", "closed_form", "z", "rel"]
    rows = []
    m, s = _mean_se(t)
    rows.append(["mean_tr", m, s, mean_exact, _z(m, s, mean_exact), abs(m / mean_exact - 1)])
    res.check("<tr Q> vs N L / k (z)", _z(m, s, mean_exact), 3.0)
    for name, v, ex in (("sq_tr", t ** 2, sq_exact), ("tr_sq", t2, trsq_exact)):
        m, s = _mean_se(v)
        rel = abs(m / ex - 1)
        rows.append([name, m, s, ex, _z(m, s, ex), rel])
    res.check("<(tr Q)^2> vs closed form (relative)", rows[1][5], prm["second_moment_rel"])
    kf_rows = []
    for i in range(prm["krein_realizations"]):
        pot = build_potential(model, prm["krein_h"] or max_cell_width(model),
                              prm["krein_kL"] / model.k, RngStream(sim["master_seed"], ORACLE_STREAM + i))
        eps = model.energy
        r1 = krein_friedel_residual(pot, eps, prm["krein_d_eps_rel"] * eps)
        r2 = krein_friedel_residual(pot, eps, 0.5 * prm["krein_d_eps_rel"] * eps)
        kf_rows.append([i, r1, r2, r1 / r2 if r2 > 0 else math.inf])
        res.check(f"Krein-Friedel residual, realization {i}", r1, prm["krein_tol"])
    res.tables["microscopic"] = (cols, rows)
    res.tables["krein_friedel"] = (["realization", "residual", "residual_half_step", "ratio"], kf_rows)
    res.summary = {"L": L, "n_realizations": int(len(t)), "sigma_over_k3": model.sigma / model.k ** 3}
    return res


def _resolvent(model, cfg, sim, prm, workers) -> Result:
    res = Result()
    s_points = sorted(set(float(s) for s in prm["s_points"]) | set(float(s) for s in prm["compare_s"]))
    grid = ResolventGrid(tuple(s_points), du=prm["du"], d_lambda=prm["d_lambda"],
                         lam_max=prm["lam_max"], eps=tuple(prm["eps"]))
    fld = solve_resolvent_pde(grid, model.b, prm["N_for_subleading"])
    mass, out, m1 = fld.mass(), fld.outflow, fld.first_moment()
    s = fld.L_grid
    rows = [[float(a), float(b_), float(c), float(d)] for a, b_, c, d in zip(s, mass, out, m1)]
    res.tables["resolvent_moments"] = (["s", "mass", "outflow", "first_moment"], rows)
    budget = np.abs(mass + out - 1.0)
    drift = float(np.max(np.abs(mass - 1.0) / np.where(s > 0, s, 1.0)))
    res.check("mass drift per unit s", drift, 1e-3)
    res.check("mass budget (mass + outflow - 1)", float(budget.max()), 1e-10)
    fit = s > 0
    slope = float(np.polyfit(s[fit], m1[fit], 1)[0]) if fit.sum() >= 2 else math.nan
    res.check("first-moment slope |slope - 1|", abs(slope - 1.0), 5e-3)
    res.check("Herglotz: max Im g", float(fld.g.imag.max()), 1e-10)
    dens_rows = []
    for sv in s:
        d = density_from_resolvent(fld, sv)
        dens_rows += [[float(sv), float(l), float(r)] for l, r in zip(d.lambda_grid, d.rho)]
    res.tables["density"] = (["s", "lambda", "rho"], dens_rows)
    summary = {"slope": slope, "n_steps": fld.n_steps, "solver_cells": int(len(fld.faces) - 1)}
    top = float(s[-1])
    if top >= prm["stationary_min_s"]:
        d = density_from_resolvent(fld, top)
        e = d.edges
        win = float(np.abs(d.rho * np.diff(e) - np.diff(stationary_cdf(model.b, e))).sum())
        tail = abs(d.integral() - float(stationary_cdf(model.b, e[-1])))
        summary["stationary_l1"] = win + tail
        res.check(f"L1 to stationary density at s={top}", win + tail, prm["stationary_tol"])
    if prm["mc_draws"] > 0:
        mc_cfg = SdeConfig(dx=cfg.dx, scheme="stratonovich-exp", batch=cfg.batch)
        edges = np.concatenate([np.arange(0.0, 1.0, 0.05), np.arange(1.0, prm["mc_edge_max"] + 1e-9, 0.2)])
        mc_rows = []
        for j, sv in enumerate(prm["compare_s"]):
            h = empirical_density(model, float(sv), prm["mc_draws"], edges, mc_cfg, sim["master_seed"],
                                  j * SECOND_STREAM, workers)
            l1 = l1_between(h, density_from_resolvent(fld, float(sv)))
            mc_rows += [[float(sv), float(c), float(r), float(e)] for c, r, e in zip(h.lambda_grid, h.rho, h.stderr)]
            res.check(f"L1 PDE vs N={model.N} histogram at s={sv}", l1, prm["mc_tol"])
            summary[f"mc_l1_s{sv}"] = l1
        res.tables["histogram"] = (["s", "lambda", "rho", "stderr"], mc_rows)
    res.summary = summary
    return res


EXPERIMENTS = {
    "noise-check": ("noise", "empirical noise correlator against the isotropic tensor", _noise_check),
    "moments": ("moments", "Monte Carlo moments of tr Q vs closed forms and the moment ODE", _moments),
    "dufresne": ("rmt", "2 tau_xi / Q at saturation vs the beta-Laguerre (Wishart) law", _dufresne),
    "coupled-vs-decoupled": ("sde", "tr Q moments: coupled unitary flow vs the closed Q equation",
                             _two_routes("coupled", "direct")),
    "rider-valko": ("sde", "exponential functional with non-Hermitian vs Hermitian noise",
                    _two_routes("rider-valko", "functional")),
    "lyapunov": ("sde", "Lyapunov spectra of the noise-only flow and of the Lambda process", _lyapunov),
    "microscopic-check": ("microscopic", "Schrodinger-solver delay moments and the Krein-Friedel identity",
                          _microscopic),
    "resolvent": ("resolvent", "large-N density PDE: mass, first moment, stationary law, Monte Carlo",
                  _resolvent),
}

PARAM_DEFAULTS = {
    "noise-check": {"n_increments": 1_000_000, "threshold": 4.0},
    "moments": {"L_over_xi": [0.5, 1.0], "method": "direct", "second_moment_max_L": 1.5},
    "dufresne": {"L_over_xi": 8.0, "n_wishart": 100_000},
    "coupled-vs-decoupled": {"L_over_xi": 1.0},
    "rider-valko": {"L_over_xi": 1.0},
    "lyapunov": {"length": 1000.0, "n_paths": 16, "qr_every": 10},
    "microscopic-check": {"L_over_xi": 1.0, "h": None, "block": 8, "second_moment_rel": 0.1,
                          "krein_realizations": 10, "krein_kL": 1000.0, "krein_h": None,
                          "krein_d_eps_rel": 5e-7, "krein_tol": 1e-6},
    "resolvent": {"s_points": [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0], "compare_s": [1.0, 2.0],
                  "du": 0.01, "d_lambda": 0.01, "lam_max": None, "eps": [1e-2, 5e-3],
                  "N_for_subleading": None, "stationary_min_s": 16.0, "stationary_tol": 0.02,
                  "mc_draws": 0, "mc_tol": 0.05, "mc_edge_max": 40.0},
}

MODEL_KEYS = {"n_channels", "beta", "k", "sigma"}
SIM_KEYS = {"dx", "scheme", "renorm_every", "noise_scale", "batch", "n_traj", "master_seed"}
OUTPUT_KEYS = {"dir", "formats"}
TOP_KEYS = {"experiment", "model", "sim", "output", "params"}


# --- configuration ----------------------------------------------------------------

def _strict(block, allowed, where):
    if not isinstance(block, dict):
        raise ConfigError(f"{where} must be an object")
    extra = sorted(set(block) - allowed)
    if extra:
        raise ConfigError(f"unknown field(s) in {where}: {', '.join(extra)}")
    return block


def _reject_constant(tok):
    raise ConfigError(f"non-finite number {tok} in config")


def resolve_config(raw: dict, seed: int | None = None, out: str | None = None) -> dict:
    """Validate ``raw`` strictly and fill every default; returns a plain dict."""
    _strict(raw, TOP_KEYS, "config")
    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {sorted(EXPERIMENTS)}")
    model = dict(_strict(raw.get("model", {}), MODEL_KEYS, "model"))
    if "n_channels" not in model or "beta" not in model:
        raise ConfigError("model needs n_channels and beta")
    model.setdefault("k", 1.0)
    model.setdefault("sigma", 1e-3)
    sim = dict(_strict(raw.get("sim", {}), SIM_KEYS, "sim"))
    base = SdeConfig()
    for key in ("dx", "scheme", "renorm_every", "noise_scale", "batch"):
        sim.setdefault(key, getattr(base, key))
    sim.setdefault("n_traj", 10_000)
    sim.setdefault("master_seed", 0)
    if seed is not None:
        sim["master_seed"] = seed
    output = dict(_strict(raw.get("output", {}), OUTPUT_KEYS, "output"))
    output.setdefault("dir", "wsdelay-out")
    output.setdefault("formats", ["csv", "json"])
    if out is not None:
        output["dir"] = out
    if not set(output["formats"]) <= {"csv", "json"}:
        raise ConfigError("output.formats may only contain 'csv' and 'json'")
    defaults = PARAM_DEFAULTS[exp]
    params = dict(_strict(raw.get("params", {}), set(defaults), f"params for {exp}"))
    for key, val in defaults.items():
        params.setdefault(key, val)
    for key in ("n_traj", "master_seed", "batch", "renorm_every"):
        if not isinstance(sim[key], int) or isinstance(sim[key], bool) or sim[key] < 0:
            raise ConfigError(f"sim.{key} must be a non-negative integer")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ModelParams(**model)
        SdeConfig(**{k: sim[k] for k in ("dx", "scheme", "renorm_every", "noise_scale", "batch")})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return {"experiment": exp, "model": model, "sim": sim, "output": output, "params": params}


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc


# --- output ----------------------------------------------------------------------

def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_outputs(result: Result, cfg: dict, out_dir: Path) -> list[str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in cfg["output"]["formats"]:
        for name, (cols, rows) in sorted(result.tables.items()):
            path = out_dir / f"{name}.csv"
            with open(path, "w", newline="") as f:
                w = csv.writer(f, lineterminator="\n")
                w.writerow(cols)
                for r in rows:
                    w.writerow([_cell(v) for v in r])
            written.append(path.name)
    if "json" in cfg["output"]["formats"]:
        path = out_dir / "summary.json"
        body = {"experiment": cfg["experiment"], "csv_version": CSV_VERSION, "passed": result.passed,
                "checks": [c.as_dict() for c in result.checks], "summary": result.summary,
                "notes": result.notes}
        path.write_text(json.dumps(_plain(body), indent=2, sort_keys=True) + "\n")
        written.append(path.name)
    return written


def run(cfg: dict, workers: int = 1) -> tuple[int, Result | None]:
    """Execute a resolved config; returns (exit code, result)."""
    exp = cfg["experiment"]
    out_dir = Path(cfg["output"]["dir"])
    start = time.perf_counter()
    code, result, error = 0, None, None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=UserWarning)
        model = ModelParams(**cfg["model"])
    sim = cfg["sim"]
    sde = SdeConfig(**{k: sim[k] for k in ("dx", "scheme", "renorm_every", "noise_scale", "batch")})
    try:
        result = EXPERIMENTS[exp][2](model, sde, sim, cfg["params"], workers)
        files = write_outputs(result, cfg, out_dir)
        code = 0 if result.passed else 1
    except (FloatingPointError, MatrixError, ResolventGridError, np.linalg.LinAlgError) as exc:
        code, files, error = 3, [], f"{type(exc).__name__}: {exc}"
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"version": __version__, "experiment": exp, "seed": sim["master_seed"],
                "config": cfg, "files": files, "exit_code": code, "error": error,
                "wall_time_s": round(time.perf_counter() - start, 3),
                "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds")}
    (out_dir / "manifest.json").write_text(json.dumps(_plain(manifest), indent=2, sort_keys=True) + "\n")
    return code, result


def list_experiments() -> list[dict]:
    return [{"name": k, "module": m, "description": d, "params": dict(PARAM_DEFAULTS[k])}
            for k, (m, d, _) in EXPERIMENTS.items()]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="wsdelay", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one experiment from a JSON config")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, help="override sim.master_seed")
    p_run.add_argument("--out", help="override output.dir")
    p_run.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on it)")
    p_list = sub.add_parser("list", help="list experiments")
    p_list.add_argument("--json", action="store_true", help="machine-readable listing")
    args = parser.parse_args(argv)

    if args.command == "list":
        items = list_experiments()
        if args.json:
            print(json.dumps(items, indent=2))
        else:
            for it in items:
                print(f"{it['name']:<22} [{it['module']}] {it['description']}")
        return 0

    try:
        cfg = resolve_config(load_config(args.config), args.seed, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    code, result = run(cfg, max(1, args.workers))
    if result is not None:
        for c in result.checks:
            print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.value:.6g} (limit {c.limit:g})")
    if code == 3:
        print("numerical abort; see manifest.json", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
