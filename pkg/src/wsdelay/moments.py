"""Exact first and second moments of the time-delay matrix and their checks.

With ``x = L / xi`` and ``tau = tau_xi`` the closed forms are::

    <tr Q>     = 2 N x tau
    <(tr Q)^2> = (N tau^2 / 2) [c_+ F(4x) + (2/beta)^2 (N-1)/(1+beta/2) F(-2 beta x)]
    <tr Q^2>   = (N tau^2 / 2) [c_+ F(4x) - (2/beta) (N-1)/(1+beta/2) F(-2 beta x)]

where ``F(y) = e^y - 1 - y`` and ``c_+ = (1 + beta N/2)/(1 + beta/2)``.  The
pair obeys a linear ODE with matrix ``M = [[0, 1], [beta/2, 1 - beta/2]]``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy.integrate import solve_ivp

from .ensemble import EnsembleStats, run_ensemble
from .params import ModelParams, SdeConfig
from .sde import align_dx, qtilde_batch

QUANTITIES = ("mean_tr", "sq_tr", "tr_sq", "pair")


def expm1mx(y: float) -> float:
    """e^y - 1 - y without cancellation near 0."""
    if abs(y) < 1e-3:
        return y * y * (0.5 + y * (1 / 6 + y * (1 / 24 + y / 120)))
    return math.expm1(y) - y


def _x(params: ModelParams, L: float) -> float:
    if L < 0:
        raise ValueError("L must be non-negative")
    return L / params.xi


def mean_trace(params: ModelParams, L: float) -> float:
    """<tr Q> = N L / k (time units)."""
    _x(params, L)
    return params.N * L / params.k


def _second_reduced(n: int, beta: int, x: float):
    """(sq_tr, tr_sq) in units of tau_xi^2."""
    cp = (1 + 0.5 * beta * n) / (1 + 0.5 * beta)
    f4 = expm1mx(4 * x)
    fb = expm1mx(-2 * beta * x)
    base = 0.5 * n
    sq = base * (cp * f4 + (2 / beta) ** 2 * (n - 1) / (1 + 0.5 * beta) * fb)
    tr = base * (cp * f4 - (2 / beta) * (n - 1) / (1 + 0.5 * beta) * fb)
    return sq, tr


def second_moments(params: ModelParams, L: float):
    """(<(tr Q)^2>, <tr Q^2>) in time^2 units."""
    sq, tr = _second_reduced(params.N, params.b, _x(params, L))
    t2 = params.tau_xi ** 2
    return sq * t2, tr * t2


def pair_correlation_reduced(beta: int, x: float) -> float:
    """<tau_a tau_b> / tau_xi^2 for a != b."""
    return (2 / beta ** 2) * expm1mx(-2 * beta * x)


@dataclass(frozen=True)
class ProperTimeStats:
    mean: float
    second: float
    second_large_L: float
    second_large_L_leading: float
    pair: float | None
    cov: float | None
    cov_large_L: float | None


def proper_time_stats(params: ModelParams, L: float, include_pairs: bool = True) -> ProperTimeStats:
    """Single-eigenvalue statistics from channel equivalence (time units).

    ``second_large_L`` is the asymptote keeping only the large-N part of the
    prefactor, ``tau^2 N beta / (2 (beta + 2)) e^{4x}``; the complete leading
    term is ``second_large_L_leading = tau^2 (2 + beta N) / (2 (beta + 2)) e^{4x}``.
    """
    n, b = params.N, params.b
    if include_pairs and n < 2:
        raise ValueError("pair statistics need N >= 2")
    x = _x(params, L)
    t, t2 = params.tau_xi, params.tau_xi ** 2
    sq, tr = _second_reduced(n, b, x)
    mean = 2 * x * t
    big = math.exp(4 * x)
    pair = cov = cov_big = None
    if include_pairs:
        pair = pair_correlation_reduced(b, x) * t2
        cov = pair - mean ** 2
        cov_big = -mean ** 2
    return ProperTimeStats(mean, tr / n * t2, t2 * n * b / (2 * (b + 2)) * big,
                           t2 * (2 + b * n) / (2 * (b + 2)) * big, pair, cov, cov_big)


# --- ODE cross-check -------------------------------------------------------------

@dataclass(frozen=True)
class MomentOdeSpectrum:
    matrix: np.ndarray
    eigenvalues: np.ndarray     # (lambda_+, lambda_-)
    proj_plus: np.ndarray
    proj_minus: np.ndarray


def moment_matrix(beta: int) -> np.ndarray:
    return np.array([[0.0, 1.0], [0.5 * beta, 1 - 0.5 * beta]])


def moment_ode_spectrum(beta: int) -> MomentOdeSpectrum:
    """Eigen-decomposition of M computed numerically (projectors from eigenvectors)."""
    m = moment_matrix(beta)
    w, v = np.linalg.eig(m)
    order = np.argsort(-w.real)
    w, v = w.real[order], v.real[:, order]
    vinv = np.linalg.inv(v)
    p = [np.outer(v[:, i], vinv[i]) for i in range(2)]
    return MomentOdeSpectrum(m, w, p[0], p[1])


def integrate_moment_ode(params: ModelParams, L: float, rtol: float = 1e-13):
    """(sq_tr, tr_sq) by numerical integration of the linear moment ODE (time^2 units).

    In reduced units ``y' = 8 N x [N, 1] + 4 M y`` with ``y(0) = 0``.
    """
    x = _x(params, L)
    if x == 0:
        return 0.0, 0.0
    n = params.N
    m4 = 4 * moment_matrix(params.b)
    src = 8.0 * n * np.array([n, 1.0])
    sol = solve_ivp(lambda s, y: src * s + m4 @ y, (0.0, x), [0.0, 0.0], method="DOP853",
                    rtol=rtol, atol=1e-300)
    y = sol.y[:, -1] * params.tau_xi ** 2
    return float(y[0]), float(y[1])


# --- Monte Carlo -----------------------------------------------------------------

def _trace_observables(q: np.ndarray) -> np.ndarray:
    """Per-sample (tr q, (tr q)^2, tr q^2, pair) for ``q`` of shape (B, N, N)."""
    n = q.shape[-1]
    tr = np.trace(q, axis1=-2, axis2=-1).real
    tr2 = np.einsum("bij,bji->b", q, q).real
    pair = (tr * tr - tr2) / (n * (n - 1)) if n > 1 else np.full_like(tr, np.nan)
    return np.stack([tr, tr * tr, tr2, pair], axis=1)


@dataclass
class MomentReport:
    """Closed form, ODE and Monte Carlo values in powers of tau_xi."""

    N: int
    beta: int
    L_over_xi: float
    closed: dict
    ode: dict
    mc: dict = field(default_factory=dict)
    stderr: dict = field(default_factory=dict)
    median_of_means: dict = field(default_factory=dict)
    mom_stderr: dict = field(default_factory=dict)
    n_traj: int = 0
    method: str = ""

    def z_scores(self, robust: bool = False) -> dict:
        est = self.median_of_means if robust else self.mc
        err = self.mom_stderr if robust else self.stderr
        return {q: abs(est[q] - self.closed[q]) / err[q]
                for q in est if err.get(q) and math.isfinite(err[q]) and err[q] > 0}

    def rows(self):
        for q in QUANTITIES:
            if q not in self.closed:
                continue
            yield {"N": self.N, "beta": self.beta, "L_over_xi": self.L_over_xi, "quantity": q,
                   "closed": self.closed[q], "ode": self.ode.get(q, math.nan),
                   "mc": self.mc.get(q, math.nan), "stderr": self.stderr.get(q, math.nan)}

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True, default=float)

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, ["N", "beta", "L_over_xi", "quantity", "closed", "ode", "mc", "stderr"],
                           lineterminator="\n")
        if header:
            w.writeheader()
        for r in self.rows():
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()


def reference_moments(n: int, beta: int, x: float) -> tuple[dict, dict]:
    """Closed-form and ODE values in tau_xi units."""
    p = ModelParams(n, beta)
    L = x * p.xi
    sq, tr = _second_reduced(n, beta, x)
    closed = {"mean_tr": 2 * n * x, "sq_tr": sq, "tr_sq": tr}
    osq, otr = integrate_moment_ode(p, L)
    t2 = p.tau_xi ** 2
    ode = {"mean_tr": 2 * n * x, "sq_tr": osq / t2, "tr_sq": otr / t2}
    if n > 1:
        closed["pair"] = pair_correlation_reduced(beta, x)
        ode["pair"] = (ode["sq_tr"] - ode["tr_sq"]) / (n * (n - 1))
    return closed, ode


def reports_from_samples(n, beta, x_points, q, method="", ids=None) -> list[MomentReport]:
    """MomentReports from q samples of shape (B, P, N, N) in tau_xi units."""
    out = []
    for j, x in enumerate(np.atleast_1d(x_points)):
        obs = _trace_observables(q[:, j])
        st = EnsembleStats.from_samples(QUANTITIES, obs, ids)
        closed, ode = reference_moments(n, beta, float(x))
        keep = [i for i, name in enumerate(QUANTITIES) if name in closed]
        mu, se = st.means(), st.stderrs()
        mom, mse = st.median_of_means(), st.mom_stderrs()
        out.append(MomentReport(
            n, beta, float(x), closed, ode,
            {QUANTITIES[i]: float(mu[i]) for i in keep},
            {QUANTITIES[i]: float(se[i]) for i in keep},
            {QUANTITIES[i]: float(mom[i]) for i in keep},
            {QUANTITIES[i]: float(mse[i]) for i in keep},
            st.n, method))
    return out


def mc_moments(params: ModelParams, L, n_traj: int, cfg: SdeConfig | None = None,
               master_seed: int = 0, method: str = "direct", workers: int = 1,
               stream_offset: int = 0):
    """Monte Carlo moments of tr Q̃ at one length or a list of lengths.

    ``method`` is one of ``direct`` (its own SDE), ``functional`` (2∫Λ^dagger Λ),
    ``coupled`` or ``rider-valko``.  Returns a MomentReport per length.
    """
    if n_traj < 1000:
        raise ValueError("n_traj must be >= 1e3")
    cfg = SdeConfig() if cfg is None else cfg
    scalar = np.ndim(L) == 0
    xs = np.atleast_1d(np.asarray(L, dtype=float)) / params.xi
    kern = partial(qtilde_batch, params.N, params.b, xs, align_dx(cfg, xs), method=method)
    q = run_ensemble(kern, n_traj, master_seed, stream_offset, cfg.batch, workers)
    reps = reports_from_samples(params.N, params.b, xs, q, method)
    return reps[0] if scalar else reps


def log_slope(x_points, values) -> np.ndarray:
    """Finite-difference slope of log(values) against x (diagnostic only)."""
    x = np.asarray(x_points, dtype=float)
    v = np.log(np.asarray(values, dtype=float))
    return np.diff(v) / np.diff(x)
