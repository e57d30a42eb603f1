"""Exact scattering off a piecewise-constant matrix potential.

The wire occupies ``[0, L]`` with a hard wall at 0.  Each cell is solved in
closed form: with ``D = V - eps`` diagonalized once per cell, the 2N x 2N
propagator of ``y = [psi; psi']`` and the Gram integral
``int_0^h [C S]^dagger [C S] dt`` are scalar functions of the eigenvalues.
Cells are combined pairwise (segment composition ``Phi = Phi_B Phi_A``,
``J = J_A + Phi_A^dagger J_B Phi_A``) with every product kept as a mantissa
and a log-scale, so no length overflows.

S and the physical normalization are written through ``(k psi + i psi')``,
which is invertible for every real energy, so no resonance regularization
is needed.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .linalg import HermitianMatrix, MatrixError, UnitaryMatrix, dagger, hermitize
from .noise import NoiseSpec, RngStream, as_generator, draw_increments
from .params import ModelParams

CSV_VERSION = 1


@dataclass(frozen=True, eq=False)
class PotentialRealization:
    """Cells ``V_j`` (shape ``(n_cells, N, N)``) of width ``h`` covering ``[0, L]``."""

    h: float
    cells: np.ndarray
    length: float
    beta: int
    seed: int = -1
    stream_id: int = -1

    @property
    def N(self) -> int:
        return self.cells.shape[-1]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]


def max_cell_width(params: ModelParams) -> float:
    return min(0.05 / params.k, params.xi / 1e4)


def build_potential(params: ModelParams, h: float, L: float, rng: RngStream,
                    sigma: float | None = None) -> PotentialRealization:
    """White-noise potential discretized into cells of width <= h.

    Entry covariances are ``sigma C / h``; ``sigma`` overrides the model value
    (0 gives a clean wire).
    """
    hmax = max_cell_width(params)
    if h > hmax * (1 + 1e-12):
        raise ValueError(f"cell width {h:g} too coarse; need h <= {hmax:g}")
    if L < 0:
        raise ValueError("L must be non-negative")
    sig = params.sigma if sigma is None else float(sigma)
    n = int(math.ceil(L / h - 1e-9))
    h_eff = L / n if n else h
    if sig == 0 or n == 0:
        cells = np.zeros((n, params.N, params.N), dtype=complex)
    else:
        spec = NoiseSpec(params.N, params.b, sig / h_eff)
        cells = draw_increments(spec, as_generator(rng), n)
    seed = getattr(rng, "master_seed", -1)
    sid = getattr(rng, "stream_id", -1)
    return PotentialRealization(h_eff, cells, float(L), params.b, seed, sid)


# --- cell algebra -----------------------------------------------------------------

@dataclass
class _CellBasis:
    w: np.ndarray   # (n, N) eigenvalues of V_j
    u: np.ndarray   # (n, N, N) eigenvectors


def _basis(pot: PotentialRealization) -> _CellBasis:
    cells = pot.cells
    if pot.beta == 1 and not np.any(cells.imag):
        cells = cells.real
    w, u = np.linalg.eigh(cells)
    return _CellBasis(w, u)


def _rot(u, diag):
    return (u * diag[..., None, :]) @ dagger(u)


def _cell_maps(basis: _CellBasis, eps: float, h: float, gram: bool):
    d = basis.w - eps
    kap = np.sqrt(d + 0j)
    small = np.abs(kap * h) < 1e-8
    safe = np.where(small, 1.0, kap)
    c = np.cosh(kap * h).real
    s = np.where(small, h + d * h ** 3 / 6, (np.sinh(kap * h) / safe)).real
    u = basis.u
    n = u.shape[-1]
    cm, sm, dsm = _rot(u, c), _rot(u, s), _rot(u, d * s)
    phi = np.empty(u.shape[:-2] + (2 * n, 2 * n), dtype=u.dtype)
    phi[..., :n, :n] = cm
    phi[..., :n, n:] = sm
    phi[..., n:, :n] = dsm
    phi[..., n:, n:] = cm
    if not gram:
        return phi, None
    gcc = 0.5 * h + 0.5 * c * s
    gcs = 0.5 * s * s
    tiny = np.abs(d) * h * h < 1e-4
    dd = np.where(tiny, 1.0, d)
    gss = np.where(tiny, h ** 3 / 3 + d * h ** 5 / 15 + 2 * d * d * h ** 7 / 315,
                   (c * s - h) / (2 * dd))
    g = np.empty_like(phi)
    g[..., :n, :n] = _rot(u, gcc)
    off = _rot(u, gcs)
    g[..., :n, n:] = off
    g[..., n:, :n] = off
    g[..., n:, n:] = _rot(u, gss)
    return phi, g


def _norm(a):
    return np.max(np.abs(a), axis=(-2, -1))


def _reduce(phi, g):
    """Compose cells left-to-right in a balanced tree with log-scaled mantissas."""
    lp = np.zeros(phi.shape[0])
    lj = np.zeros(phi.shape[0]) if g is not None else None
    while phi.shape[0] > 1:
        m = phi.shape[0] // 2 * 2
        a, b = phi[0:m:2], phi[1:m:2]
        new_phi = b @ a
        new_lp = lp[0:m:2] + lp[1:m:2]
        if g is not None:
            e1 = 2 * lj[0:m:2]
            e2 = 2 * lp[0:m:2] + 2 * lj[1:m:2]
            top = np.maximum(e1, e2)
            new_g = (np.exp(e1 - top)[:, None, None] * g[0:m:2]
                     + np.exp(e2 - top)[:, None, None] * (dagger(a) @ g[1:m:2] @ a))
            nj = _norm(new_g)
            new_g = new_g / nj[:, None, None]
            new_lj = 0.5 * top + 0.5 * np.log(nj)
        npn = _norm(new_phi)
        new_phi = new_phi / npn[:, None, None]
        new_lp = new_lp + np.log(npn)
        if m < phi.shape[0]:
            new_phi = np.concatenate([new_phi, phi[m:]])
            new_lp = np.concatenate([new_lp, lp[m:]])
            if g is not None:
                new_g = np.concatenate([new_g, g[m:]])
                new_lj = np.concatenate([new_lj, lj[m:]])
        phi, lp = new_phi, new_lp
        if g is not None:
            g, lj = new_g, new_lj
    if g is None:
        return phi[0], lp[0], None, None
    return phi[0], lp[0], g[0], lj[0]


@dataclass(frozen=True, eq=False)
class _Solution:
    psi: np.ndarray        # mantissa of psi(L)
    dpsi: np.ndarray       # mantissa of psi'(L)
    log_scale: float
    gram: np.ndarray | None   # mantissa of int psi_raw^dagger psi_raw
    gram_log: float | None     # true gram = exp(2 gram_log) * gram


def _solve(pot, basis, eps, gram=False) -> _Solution:
    n = pot.N
    if pot.n_cells == 0:
        eye = np.eye(n, dtype=complex)
        return _Solution(np.zeros((n, n), complex), eye, 0.0,
                         np.zeros((n, n), complex) if gram else None, 0.0 if gram else None)
    phi, g = _cell_maps(basis, eps, pot.h, gram)
    p, lp, j, lj = _reduce(phi, g)
    if not np.all(np.isfinite(p)):
        raise FloatingPointError("propagator overflow; reduce L or increase renormalization")
    return _Solution(p[:n, n:], p[n:, n:], float(lp),
                     None if j is None else j[n:, n:], None if lj is None else float(lj))


def _check_energy(eps):
    if not eps > 0:
        raise ValueError("energy must be positive")


def transfer_solve(pot: PotentialRealization, eps: float):
    """(psi(L), psi'(L)) for psi(0) = 0, psi'(0) = 1.

    Raises if the solution cannot be represented in double precision; the
    internal products are log-scaled, see :func:`log_transfer_solve`.
    """
    _check_energy(eps)
    sol = _solve(pot, _basis(pot), eps)
    scale = math.exp(sol.log_scale) if sol.log_scale < 700 else math.inf
    if not math.isfinite(scale):
        raise OverflowError("psi(L) overflows; use log_transfer_solve for the scaled pair")
    return sol.psi * scale, sol.dpsi * scale


def log_transfer_solve(pot: PotentialRealization, eps: float):
    """Mantissas of (psi(L), psi'(L)) and their common natural-log scale."""
    _check_energy(eps)
    sol = _solve(pot, _basis(pot), eps)
    return sol.psi, sol.dpsi, sol.log_scale


def transfer_path(pot: PotentialRealization, eps: float):
    """Cell-boundary values of (psi, psi') as ``(n_cells + 1, N, N)`` arrays.

    Each row is divided by the running scale, which leaves the Wronskian
    identities intact up to a positive factor.
    """
    _check_energy(eps)
    n = pot.N
    phi, _ = _cell_maps(_basis(pot), eps, pot.h, False)
    y = np.zeros((2 * n, n), dtype=complex)
    y[n:] = np.eye(n)
    out = np.empty((pot.n_cells + 1, 2 * n, n), dtype=complex)
    out[0] = y
    for i in range(pot.n_cells):
        y = phi[i] @ y
        y = y / np.max(np.abs(y))
        out[i + 1] = y
    return out[:, :n], out[:, n:]


def _outgoing(psi, dpsi, k):
    a = k * psi + 1j * dpsi
    if np.linalg.cond(a) > 1e13:
        raise MatrixError("k psi + i psi' is numerically singular")
    return a


def _smatrix_from(psi, dpsi, k):
    a = _outgoing(psi, dpsi, k)
    return np.linalg.solve(a.T, (k * psi - 1j * dpsi).T).T


def smatrix(pot: PotentialRealization, eps: float) -> UnitaryMatrix:
    """S = (k - iZ)(k + iZ)^-1 with Z = psi' psi^-1, evaluated without inverting psi."""
    _check_energy(eps)
    sol = _solve(pot, _basis(pot), eps)
    return UnitaryMatrix(_smatrix_from(sol.psi, sol.dpsi, math.sqrt(eps)))


@dataclass(frozen=True, eq=False)
class WignerSmith:
    matrix: HermitianMatrix
    d_eps: float
    fd_error: float          # Richardson estimate of the finite-difference error (Frobenius)
    hermiticity_defect: float


def _s_at(pot, basis, eps):
    sol = _solve(pot, basis, eps)
    return _smatrix_from(sol.psi, sol.dpsi, math.sqrt(eps))


def _q_central(pot, basis, s0, eps, de):
    sp, sm = _s_at(pot, basis, eps + de), _s_at(pot, basis, eps - de)
    diff = sp - sm
    if np.linalg.norm(diff) < 1e3 * np.finfo(float).eps * math.sqrt(max(pot.n_cells, 1)):
        raise ValueError("difference quotient dominated by roundoff; increase d_eps")
    return -1j * dagger(s0) @ diff / (2 * de)


def wigner_smith(pot: PotentialRealization, eps: float, d_eps: float | None = None,
                 richardson: bool = True) -> WignerSmith:
    """Q = -i S^dagger dS/d(eps) by central differences on the frozen potential."""
    _check_energy(eps)
    de = 1e-6 * eps if d_eps is None else float(d_eps)
    if not 1e-8 <= de / eps <= 1e-4 * (1 + 1e-12):
        raise ValueError("d_eps/eps must lie in [1e-8, 1e-4]")
    basis = _basis(pot)
    s0 = _s_at(pot, basis, eps)
    q = _q_central(pot, basis, s0, eps, de)
    err = math.nan
    if richardson:
        q2 = _q_central(pot, basis, s0, eps, 0.5 * de)
        err = float(4.0 / 3.0 * np.linalg.norm(q - q2))
    defect = float(np.linalg.norm(q - dagger(q)))
    return WignerSmith(HermitianMatrix(hermitize(q)), de, err, defect)


@dataclass(frozen=True, eq=False)
class KreinFriedel:
    """Both sides of int psi^dagger psi = (Q + (S - S^dagger)/(4 i eps)) / (2 pi)."""

    lhs: np.ndarray
    rhs: np.ndarray
    lhs_trace: float
    rhs_trace: float

    @property
    def residual(self) -> float:
        return float(np.linalg.norm(self.lhs - self.rhs) / np.linalg.norm(self.rhs))

    @property
    def trace_residual(self) -> float:
        return abs(self.lhs_trace - self.rhs_trace) / abs(self.rhs_trace)


def krein_friedel(pot: PotentialRealization, eps: float, d_eps: float | None = None) -> KreinFriedel:
    _check_energy(eps)
    de = 1e-6 * eps if d_eps is None else float(d_eps)
    k = math.sqrt(eps)
    basis = _basis(pot)
    sol = _solve(pot, basis, eps, gram=True)
    s = _smatrix_from(sol.psi, sol.dpsi, k)
    # Physical state psi_raw M with psi(L) = (1 + S)/sqrt(4 pi k); the scales cancel.
    m = 2 * k * np.linalg.inv(_outgoing(sol.psi, sol.dpsi, k)) / math.sqrt(4 * math.pi * k)
    lhs = math.exp(2 * (sol.gram_log - sol.log_scale)) * (dagger(m) @ sol.gram @ m)
    q = _q_central(pot, basis, s, eps, de)
    rhs = (q + (s - dagger(s)) / (4j * eps)) / (2 * math.pi)
    # Trace form: tr Q + Im tr S / (2 eps), from scalars only.
    rhs_tr = (np.trace(q).real + np.trace(s).imag / (2 * eps)) / (2 * math.pi)
    return KreinFriedel(lhs, rhs, float(np.trace(lhs).real), float(rhs_tr))


def krein_friedel_residual(pot: PotentialRealization, eps: float, d_eps: float | None = None,
                           trace: bool = False) -> float:
    kf = krein_friedel(pot, eps, d_eps)
    return kf.trace_residual if trace else kf.residual


# --- ensembles --------------------------------------------------------------------

def delay_traces(params: ModelParams, L: float, rngs, h: float | None = None,
                 d_eps: float | None = None) -> np.ndarray:
    """(tr Q, tr Q^2) per realization at energy k^2 (time units)."""
    h = max_cell_width(params) if h is None else h
    out = np.empty((len(rngs), 2))
    for i, r in enumerate(rngs):
        pot = build_potential(params, h, L, r)
        q = wigner_smith(pot, params.energy, d_eps, richardson=False).matrix.data
        out[i] = np.trace(q).real, np.trace(q @ q).real
    return out


# --- persistence ------------------------------------------------------------------

def _header(pot: PotentialRealization) -> dict:
    return {"version": CSV_VERSION, "N": pot.N, "beta": pot.beta, "h": pot.h, "L": pot.length,
            "seed": pot.seed, "stream_id": pot.stream_id, "n_cells": pot.n_cells}


def save_potential(pot: PotentialRealization, path) -> Path:
    """Write cells as CSV (``.csv``) or raw little-endian float64 (any other suffix).

    Both carry the same JSON header; a row/record is one cell, real and
    imaginary parts of the row-major entries interleaved.
    """
    path = Path(path)
    flat = pot.cells.reshape(pot.n_cells, -1)
    inter = np.empty((pot.n_cells, 2 * flat.shape[1]))
    inter[:, 0::2], inter[:, 1::2] = flat.real, flat.imag
    head = json.dumps(_header(pot), sort_keys=True)
    if path.suffix == ".csv":
        with open(path, "w", newline="") as f:
            f.write("# " + head + "\n")
            np.savetxt(f, inter, delimiter=",", fmt="%.17g")
    else:
        with open(path, "wb") as f:
            f.write(head.encode() + b"\n")
            f.write(inter.astype("<f8").tobytes())
    return path


def load_potential(path) -> PotentialRealization:
    path = Path(path)
    if path.suffix == ".csv":
        with open(path) as f:
            head = json.loads(f.readline()[2:])
            data = np.loadtxt(f, delimiter=",", ndmin=2)
    else:
        with open(path, "rb") as f:
            head = json.loads(f.readline())
            data = np.frombuffer(f.read(), dtype="<f8")
    n = head["N"]
    data = np.asarray(data, dtype=float).reshape(head["n_cells"], 2 * n * n)
    cells = (data[:, 0::2] + 1j * data[:, 1::2]).reshape(-1, n, n)
    return PotentialRealization(head["h"], cells, head["L"], head["beta"], head["seed"],
                                head["stream_id"])
