"""Integrators for the averaged matrix SDEs of the disordered wire.

Everything runs in the dimensionless coordinate ``x = L / xi``.  Batch
kernels (``*_batch``) march ``B`` trajectories in lockstep, each fed by its
own :class:`~wsdelay.noise.RngStream`, and return raw arrays; the delay
matrix is returned in units of ``tau_xi`` there.  The single-trajectory
wrappers convert to physical units and wrap the result.

Stratonovich equations use Heun's predictor-corrector.  Unitary flows use
the same two-stage structure on the group: both stages produce Hermitian
generators and the update multiplies by a unitary Pade exponential of
their average,
so unitarity (and for beta=1 the transposition symmetry) survives every
step up to rounding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .linalg import (HermitianMatrix, UnitaryMatrix, dagger, expm_hermitian, hermitize,
                     polar_unitary, unitarity_residual, unitary_step)
from .noise import IncrementSource, RngStream
from .params import ModelParams, SdeConfig

SQRT2 = math.sqrt(2.0)
METHODS = ("direct", "functional", "coupled", "rider-valko")


class NonFiniteStateError(FloatingPointError):
    def __init__(self, process: str, step: int):
        super().__init__(f"{process}: non-finite state at step {step}")
        self.process = process
        self.step = step


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled matrix path on a uniform grid (positions in units of xi)."""

    grid: np.ndarray
    states: np.ndarray
    process_tag: str
    stream: RngStream | None = None

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        if len(g) != len(self.states):
            raise ValueError("grid and states differ in length")
        if len(g) > 1:
            d = np.diff(g)
            if np.any(d <= 0) or np.ptp(d) > 1e-9 * d[0]:
                raise ValueError("grid must be strictly increasing and uniform")

    @property
    def dx(self) -> float:
        return float(self.grid[1] - self.grid[0]) if len(self.grid) > 1 else 0.0

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


@dataclass
class FlowDiagnostics:
    """Largest defects seen before each re-unitarization."""

    max_unitarity: float = 0.0
    max_transpose: float = 0.0
    drift_warnings: int = 0

    def update(self, u_list, beta: int, u_pair=None):
        for u in u_list:
            r = float(np.max(np.linalg.norm(dagger(u) @ u - np.eye(u.shape[-1]), axis=(-2, -1))))
            self.max_unitarity = max(self.max_unitarity, r)
            if r > 1e-6:
                self.drift_warnings += 1
        if beta == 1 and u_pair is not None:
            ul, ur = u_pair
            t = float(np.max(np.linalg.norm(ur - np.swapaxes(ul, -1, -2), axis=(-2, -1))))
            self.max_transpose = max(self.max_transpose, t)


def _steps(length: float, cfg: SdeConfig):
    n = cfg.n_steps(length)
    return n, (length / n if n else cfg.dx)


def align_dx(cfg: SdeConfig, points) -> SdeConfig:
    """Largest step not above ``cfg.dx`` that puts every checkpoint on the grid."""
    pts = [float(p) for p in np.atleast_1d(points) if p > 0]
    if not pts:
        return cfg
    top = max(pts)
    den = 1
    for p in pts:
        den = math.lcm(den, Fraction(p / top).limit_denominator(10_000).denominator)
    k = math.ceil(top / (den * cfg.dx) - 1e-9)
    return replace(cfg, dx=top / (den * k))


def _checkpoint_index(points, h: float, n: int) -> dict:
    """Map step index -> list of output slots."""
    out: dict = {}
    for j, p in enumerate(points):
        i = int(round(p / h)) if h > 0 else 0
        if abs(i * h - p) > 1e-9 * max(1.0, abs(p)) or not 0 <= i <= n:
            raise ValueError(f"checkpoint {p} is not on the integration grid (step {h})")
        out.setdefault(i, []).append(j)
    return out


def _check(arrays, tag: str, step: int):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteStateError(tag, step)


def _eye(b: int, n: int) -> np.ndarray:
    return np.broadcast_to(np.eye(n, dtype=complex), (b, n, n)).copy()


def _source(rngs, n, beta, h, cfg, n_noises=1, kind="hermitian"):
    return IncrementSource(rngs, n, beta, h, n_noises=n_noises, scale=cfg.noise_scale, kind=kind)


# --- Lambda process and its exponential functional --------------------------------

def _lambda_step(lam, db, mu, h, scheme):
    if scheme == "stratonovich-exp":
        # Exact flow of the noise part for a Hermitian increment.
        return math.exp(-mu * h) * (expm_hermitian(db) @ lam)
    if scheme == "ito-euler":
        return lam - 0.5 * mu * h * lam + db @ lam
    pred = lam - mu * h * lam + db @ lam
    mid = lam + pred
    return lam - 0.5 * mu * h * mid + 0.5 * (db @ mid)


def _rv_step(m, chi, mu, h, scheme, beta):
    if scheme == "ito-euler":
        corr = 0.5 if beta == 1 else 0.0
        return m + (corr - mu) * h * m + chi @ m
    pred = m - mu * h * m + chi @ m
    mid = m + pred
    return m - 0.5 * mu * h * mid + 0.5 * (chi @ mid)


def _geometric_batch(n, beta, mu, x_points, cfg, rngs, kind, tag, path=False):
    """March a matrix geometric BM and its trapezoid functional ∫ M^dagger M dx.

    Returns ``(states, functionals)`` at the checkpoints, each ``(B, P, N, N)``;
    with ``path`` the full state history ``(B, n+1, N, N)`` replaces ``states``.
    """
    x_points = np.atleast_1d(np.asarray(x_points, dtype=float))
    n_steps, h = _steps(float(x_points.max()), cfg)
    slots = _checkpoint_index(x_points, h, n_steps)
    if kind == "ginibre" and cfg.scheme == "stratonovich-exp":
        raise ValueError("the exponential scheme needs Hermitian increments")
    b = len(rngs)
    src = _source(rngs, n, beta, h, cfg, kind=kind)
    m = _eye(b, n)
    gram = dagger(m) @ m
    acc = np.zeros_like(m)
    out_m = np.empty((b, len(x_points), n, n), dtype=complex)
    out_i = np.empty_like(out_m)
    hist = [m.copy()] if path else None

    def record(i):
        for j in slots.get(i, ()):
            out_m[:, j] = m
            out_i[:, j] = acc

    record(0)
    for i in range(1, n_steps + 1):
        d = src.next()[:, 0]
        if kind == "ginibre":
            m = _rv_step(m, d, mu, h, cfg.scheme, beta)
        else:
            m = _lambda_step(m, d, mu, h, cfg.scheme)
        new_gram = dagger(m) @ m
        acc = acc + 0.5 * h * (gram + new_gram)
        gram = new_gram
        _check((m,), tag, i)
        if path:
            hist.append(m.copy())
        record(i)
    acc_h = hermitize(out_i)
    if path:
        return np.stack(hist, axis=1), acc_h
    return out_m, acc_h


def lambda_batch(n, beta, mu, x_points, cfg: SdeConfig, rngs):
    """Λ and ∫Λ^dagger Λ at ``x_points`` for a batch of streams."""
    return _geometric_batch(n, beta, mu, x_points, cfg, rngs, "hermitian", "lambda")


def rider_valko_batch(n, beta, mu, x_points, cfg: SdeConfig, rngs):
    """M and ∫M^dagger M for the non-Hermitian-noise process."""
    return _geometric_batch(n, beta, mu, x_points, cfg, rngs, "ginibre", "rider-valko")


# --- Direct equation for the symmetrized delay matrix ------------------------------

def qtilde_direct_batch(n, beta, mu, x_points, cfg: SdeConfig, rngs) -> np.ndarray:
    """q = Q̃ / tau_xi integrated from its own SDE; shape ``(B, P, N, N)``."""
    x_points = np.atleast_1d(np.asarray(x_points, dtype=float))
    n_steps, h = _steps(float(x_points.max()), cfg)
    slots = _checkpoint_index(x_points, h, n_steps)
    b = len(rngs)
    src = _source(rngs, n, beta, h, cfg)
    eye = np.eye(n)
    q = np.zeros((b, n, n), dtype=complex)
    out = np.zeros((b, len(x_points), n, n), dtype=complex)
    ito = cfg.scheme == "ito-euler"
    decay = math.exp(-mu * h)
    for j in slots.get(0, ()):
        out[:, j] = q
    for i in range(1, n_steps + 1):
        db = src.next()[:, 0]
        if cfg.scheme == "stratonovich-exp":
            # q -> G (q + h) G^dagger + h with G = e^{-mu h} exp(dB): the
            # homogeneous part is solved exactly, the source split symmetrically.
            g = decay * expm_hermitian(db)
            q = g @ (q + h * eye) @ dagger(g) + h * eye
        elif ito:
            tr = np.trace(q, axis1=-2, axis2=-1)[:, None, None]
            drift = 2.0 * eye + 0.5 * beta * (tr * eye - n * q)
            q = q + drift * h + q @ db + db @ q
        else:
            f0 = 2.0 * eye - 2.0 * mu * q
            g0 = q @ db + db @ q
            pred = q + f0 * h + g0
            f1 = 2.0 * eye - 2.0 * mu * pred
            g1 = pred @ db + db @ pred
            q = q + 0.5 * (f0 + f1) * h + 0.5 * (g0 + g1)
        q = hermitize(q)
        _check((q,), "qtilde", i)
        for j in slots.get(i, ()):
            out[:, j] = q
    return out


# --- Unitary flows ------------------------------------------------------------------

def _generators(s, d0, d1, d2):
    """Hermitian generators H_L, H_R with left/right factors exp(-i H)."""
    sd = dagger(s)
    p = d1 - 1j * d2
    m = d1 + 1j * d2
    hl = 0.5 * (p @ sd + s @ m) + SQRT2 * d0
    hr = 0.5 * (sd @ p + m @ s) + SQRT2 * d0
    return hl, hr


def _w_noise(ul, ur, d1, d2):
    x = ur @ d1 @ ul
    y = ur @ d2 @ ul
    return (x - dagger(x)) / 2j + 0.5 * (y + dagger(y))


def _require_heun(cfg: SdeConfig, tag: str):
    if cfg.scheme != "stratonovich-heun":
        raise ValueError(f"{tag} is a Stratonovich flow; only 'stratonovich-heun' is supported")


def stilde_batch(n, beta, length, cfg: SdeConfig, rngs, s0=None):
    """Final S̃ for a batch, plus flow diagnostics."""
    _require_heun(cfg, "stilde")
    n_steps, h = _steps(length, cfg)
    b = len(rngs)
    src = _source(rngs, n, beta, h, cfg, n_noises=3)
    s = -_eye(b, n) if s0 is None else np.broadcast_to(np.asarray(s0, complex), (b, n, n)).copy()
    diag = FlowDiagnostics()
    for i in range(1, n_steps + 1):
        d = src.next()
        d0, d1, d2 = d[:, 0], d[:, 1], d[:, 2]
        hl0, hr0 = _generators(s, d0, d1, d2)
        sp = unitary_step(hl0) @ s @ unitary_step(hr0)
        hl1, hr1 = _generators(sp, d0, d1, d2)
        s = unitary_step(0.5 * (hl0 + hl1)) @ s @ unitary_step(0.5 * (hr0 + hr1))
        _check((s,), "stilde", i)
        if i % cfg.renorm_every == 0 or i == n_steps:
            diag.update([s], beta, (s, s))
            s = polar_unitary(s)
    return s, diag


def random_split(n: int, beta: int, gen: np.random.Generator) -> np.ndarray:
    """Haar-random V (orthogonal for beta=1) giving U_L = iV, U_R = iV^dagger."""
    if beta == 1:
        z = gen.standard_normal((n, n))
    else:
        z = gen.standard_normal((n, n)) + 1j * gen.standard_normal((n, n))
    qm, r = np.linalg.qr(z)
    return (qm * (np.diag(r) / np.abs(np.diag(r)))).astype(complex)


def coupled_batch(n, beta, x_points, cfg: SdeConfig, rngs, split=None):
    """(U_L, U_R, q) at ``x_points`` with ``q = Q̃ / tau_xi``; plus diagnostics.

    The initial factors are ``U_L = i V`` and ``U_R = i V^dagger`` with
    ``V = split`` (identity by default), so ``U_L U_R = -1``.
    """
    _require_heun(cfg, "coupled")
    x_points = np.atleast_1d(np.asarray(x_points, dtype=float))
    n_steps, h = _steps(float(x_points.max()), cfg)
    slots = _checkpoint_index(x_points, h, n_steps)
    b = len(rngs)
    src = _source(rngs, n, beta, h, cfg, n_noises=3)
    v = np.eye(n, dtype=complex) if split is None else np.asarray(split, dtype=complex)
    ul = np.broadcast_to(1j * v, (b, n, n)).copy()
    ur = np.broadcast_to(1j * dagger(v), (b, n, n)).copy()
    q = np.zeros((b, n, n), dtype=complex)
    two = 2.0 * h * np.eye(n)
    shape = (b, len(x_points), n, n)
    out_l, out_r, out_q = (np.empty(shape, dtype=complex) for _ in range(3))
    diag = FlowDiagnostics()

    def record(i):
        for j in slots.get(i, ()):
            out_l[:, j], out_r[:, j], out_q[:, j] = ul, ur, q

    record(0)
    for i in range(1, n_steps + 1):
        d = src.next()
        d0, d1, d2 = d[:, 0], d[:, 1], d[:, 2]
        hl0, hr0 = _generators(ul @ ur, d0, d1, d2)
        w0 = _w_noise(ul, ur, d1, d2)
        ulp = unitary_step(hl0) @ ul
        urp = ur @ unitary_step(hr0)
        g0 = q @ w0 + w0 @ q
        qp = q + two + g0
        hl1, hr1 = _generators(ulp @ urp, d0, d1, d2)
        w1 = _w_noise(ulp, urp, d1, d2)
        ul = unitary_step(0.5 * (hl0 + hl1)) @ ul
        ur = ur @ unitary_step(0.5 * (hr0 + hr1))
        q = hermitize(q + two + 0.5 * (g0 + qp @ w1 + w1 @ qp))
        _check((ul, ur, q), "coupled", i)
        if i % cfg.renorm_every == 0 or i == n_steps:
            diag.update([ul, ur], beta, (ul, ur))
            ul, ur = polar_unitary(ul), polar_unitary(ur)
        record(i)
    return out_l, out_r, out_q, diag


def qtilde_batch(n, beta, x_points, cfg: SdeConfig, rngs, method: str = "direct") -> np.ndarray:
    """Samples of q = Q̃ / tau_xi at ``x_points`` by any of the four routes."""
    mu = 1.0 + 0.5 * beta * (n - 1)
    if method == "direct":
        return qtilde_direct_batch(n, beta, mu, x_points, cfg, rngs)
    if method == "functional":
        return 2.0 * lambda_batch(n, beta, mu, x_points, cfg, rngs)[1]
    if method == "rider-valko":
        return 2.0 * rider_valko_batch(n, beta, mu, x_points, cfg, rngs)[1]
    if method == "coupled":
        return coupled_batch(n, beta, x_points, cfg, rngs)[2]
    raise ValueError(f"method must be one of {METHODS}")


# --- Single-trajectory public API ---------------------------------------------------

def _cfg(cfg):
    return SdeConfig() if cfg is None else cfg


def _stream(rng):
    return RngStream(0, 0) if rng is None else rng


def _x(params: ModelParams, length: float) -> float:
    if length < 0:
        raise ValueError("length must be non-negative")
    return length / params.xi


def integrate_lambda(params: ModelParams, length_over_xi: float, cfg: SdeConfig | None = None,
                     rng: RngStream | None = None) -> Trajectory:
    """Path of Λ from Λ(0) = 1 on a uniform grid up to ``length_over_xi``."""
    if length_over_xi < 0:
        raise ValueError("length_over_xi must be non-negative")
    cfg, rng = _cfg(cfg), _stream(rng)
    n_steps, h = _steps(length_over_xi, cfg)
    states, _ = _geometric_batch(params.N, params.b, params.mu, [length_over_xi], cfg, [rng],
                                 "hermitian", "lambda", path=True)
    return Trajectory(np.arange(n_steps + 1) * h, states[0], "lambda", rng)


def exp_functional(params: ModelParams, L: float, cfg: SdeConfig | None = None,
                   rng: RngStream | None = None) -> HermitianMatrix:
    """Q̃ = 2 tau_xi ∫ Λ^dagger Λ dx over [0, L/xi] (time units)."""
    x = _x(params, L)
    cfg, rng = _cfg(cfg), _stream(rng)
    if x == 0:
        return HermitianMatrix(np.zeros((params.N, params.N)))
    _, acc = lambda_batch(params.N, params.b, params.mu, [x], cfg, [rng])
    return HermitianMatrix(2.0 * params.tau_xi * acc[0, 0])


def integrate_qtilde(params: ModelParams, L: float, cfg: SdeConfig | None = None,
                     rng: RngStream | None = None) -> HermitianMatrix:
    """Q̃ at length L from its own SDE (time units)."""
    x = _x(params, L)
    cfg, rng = _cfg(cfg), _stream(rng)
    if x == 0:
        return HermitianMatrix(np.zeros((params.N, params.N)))
    q = qtilde_direct_batch(params.N, params.b, params.mu, [x], cfg, [rng])
    return HermitianMatrix(params.tau_xi * q[0, 0])


def integrate_stilde(params: ModelParams, L: float, cfg: SdeConfig | None = None,
                     rng: RngStream | None = None) -> UnitaryMatrix:
    """S̃ at length L starting from the hard-wall value -1."""
    x = _x(params, L)
    s, _ = stilde_batch(params.N, params.b, x, _cfg(cfg), [_stream(rng)])
    return UnitaryMatrix(s[0])


@dataclass(frozen=True, eq=False)
class CoupledState:
    u_left: UnitaryMatrix
    u_right: UnitaryMatrix
    q_tilde: HermitianMatrix
    diagnostics: FlowDiagnostics = field(default_factory=FlowDiagnostics)


def integrate_coupled(params: ModelParams, L: float, cfg: SdeConfig | None = None,
                      rng: RngStream | None = None, split=None) -> CoupledState:
    """(U_L, U_R, Q̃) at length L; Q̃ in time units."""
    x = _x(params, L)
    ul, ur, q, diag = coupled_batch(params.N, params.b, [x], _cfg(cfg), [_stream(rng)], split)
    return CoupledState(UnitaryMatrix(ul[0, 0]), UnitaryMatrix(ur[0, 0]),
                        HermitianMatrix(params.tau_xi * q[0, 0]), diag)


def integrate_rider_valko(mu: float, n: int, beta: int, length: float,
                          cfg: SdeConfig | None = None, rng: RngStream | None = None) -> Trajectory:
    """Path of dM = -mu M dx + chi∘M with independent (non-Hermitian) entries in chi."""
    if length < 0:
        raise ValueError("length must be non-negative")
    cfg, rng = _cfg(cfg), _stream(rng)
    n_steps, h = _steps(length, cfg)
    states, _ = _geometric_batch(n, beta, mu, [length], cfg, [rng], "ginibre",
                                 "rider-valko", path=True)
    return Trajectory(np.arange(n_steps + 1) * h, states[0], "rider-valko", rng)


def path_functional(traj: Trajectory) -> HermitianMatrix:
    """Trapezoid ∫ M^dagger M dx along a recorded path."""
    m = traj.states
    if len(m) < 2:
        return HermitianMatrix(np.zeros(m.shape[1:]))
    gram = dagger(m) @ m
    return HermitianMatrix(np.trapezoid(gram, dx=traj.dx, axis=0))


# --- Lyapunov spectrum --------------------------------------------------------------

@dataclass(frozen=True)
class LyapunovEstimate:
    exponents: np.ndarray
    stderr: np.ndarray
    n_paths: int
    length: float

    def expected(self, n: int, beta: int, drift: float) -> np.ndarray:
        return -drift + 0.5 * beta * (n - 2 * np.arange(1, n + 1) + 1)


def lyapunov_batch(n, beta, drift, length, cfg: SdeConfig, rngs, qr_every: int = 10) -> np.ndarray:
    """Per-path exponent estimates ``(B, N)``, descending, for X' = (-drift + η)X.

    Each step applies the exact propagator ``exp(dB - drift dx)`` of the
    frozen increment; the frame is re-orthogonalized by QR every
    ``qr_every`` steps and the log of |R_ii| accumulated.
    """
    if cfg.scheme == "ito-euler":
        raise ValueError("lyapunov uses the exponential Stratonovich step; Ito is not supported")
    n_steps, h = _steps(length, cfg)
    b = len(rngs)
    src = _source(rngs, n, beta, h, cfg)
    x = _eye(b, n)
    logs = np.zeros((b, n))
    damp = math.exp(-drift * h)
    for i in range(1, n_steps + 1):
        x = expm_hermitian(src.next()[:, 0]) @ x
        if i % qr_every == 0 or i == n_steps:
            qm, r = np.linalg.qr(x)
            d = np.abs(np.diagonal(r, axis1=-2, axis2=-1))
            if not np.all(np.isfinite(d)) or np.any(d == 0):
                raise NonFiniteStateError("lyapunov", i)
            logs += np.log(d)
            x = qm
    rates = logs / (n_steps * h) + math.log(damp) / h
    return -np.sort(-rates, axis=1)


def lyapunov_spectrum(params: ModelParams, length: float, cfg: SdeConfig | None = None,
                      rng: RngStream | None = None, n_paths: int = 16,
                      include_drift: bool = True, qr_every: int = 10) -> LyapunovEstimate:
    """Exponents (units 1/xi) of Λ, or of the noise-only flow with ``include_drift=False``."""
    cfg, rng = _cfg(cfg), _stream(rng)
    drift = params.mu if include_drift else 0.0
    rngs = [rng.child(i) for i in range(n_paths)]
    est = lyapunov_batch(params.N, params.b, drift, length, cfg, rngs, qr_every)
    se = est.std(axis=0, ddof=1) / math.sqrt(n_paths) if n_paths > 1 else np.full(params.N, np.nan)
    return LyapunovEstimate(est.mean(axis=0), se, n_paths, length)


__all__ = [
    "CoupledState", "FlowDiagnostics", "LyapunovEstimate", "METHODS", "NonFiniteStateError",
    "Trajectory", "coupled_batch", "exp_functional", "integrate_coupled", "integrate_lambda",
    "integrate_qtilde", "integrate_rider_valko", "integrate_stilde", "lambda_batch",
    "lyapunov_batch", "lyapunov_spectrum", "path_functional", "qtilde_batch",
    "qtilde_direct_batch", "random_split", "rider_valko_batch", "stilde_batch",
    "unitarity_residual",
]
