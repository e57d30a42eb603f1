"""Large-N evolution of the eigenvalue density of N Q̃ / (2 tau_xi).

In the rescaled length ``s = N L / xi`` the resolvent obeys
``d_s g = d_z[2(beta z - 1/2) g - beta z^2 g^2] + ((2 - beta)/N) d_z^2 (z^2 g)``.
On the real axis this is the continuity equation

    d_s rho = -d_lam(rho v) + ((2 - beta)/N) d_lam^2(lam^2 rho),
    v = 1 - 2 beta lam (1 - lam h),

with ``h`` the principal-value resolvent (Hilbert transform) of ``rho``.

The density is advanced as cell masses on a sinh-stretched grid
``lam = c sinh(u)``, uniform in ``u``: cells are fine near the origin and the
soft lower edge, where the restoring velocity carries a factor ``lam^2`` and
small errors in ``h`` accumulate, and coarse in the smooth ``lam^{-3/2}``
tail.  ``h`` is the exact transform of the piecewise-linear interpolant of the
cell values (a dense precomputed matrix), face fluxes are upwinded with a
minmod reconstruction, steps are SSP-RK2 under a CFL bound and the optional
second-order term is implicit.  The reported field ``g(lam + i eps)`` lives
on a uniform grid and is the exact Cauchy transform of the cell density, so
``Im g <= 0`` holds identically.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import partial
from pathlib import Path

import numpy as np
from scipy.linalg import solve_banded

from .ensemble import Histogram, run_ensemble
from .params import ModelParams, SdeConfig
from .sde import align_dx, qtilde_batch


class ResolventGridError(RuntimeError):
    pass


@dataclass(frozen=True)
class ResolventGrid:
    """Solver and output grids.

    ``s_points`` are the snapshot lengths in units of xi/N.  The solver cells
    are uniform in ``u`` with ``lam = scale * sinh(u)``; ``d_lambda`` is the
    spacing of the uniform output grid on which ``g`` is reported; it spans
    ``[lam_min, out_max]`` with ``out_max`` defaulting to ``max(20, 4 m1)``
    while the solver domain reaches ``lam_max`` (default 65536).
    """

    s_points: tuple
    du: float = 0.01
    scale: float = 0.05
    d_lambda: float = 0.01
    lam_min: float = -2.0
    lam_max: float | None = None
    out_max: float | None = None
    eps: tuple = (1e-2, 5e-3)
    cfl: float = 0.4

    def __post_init__(self):
        s = tuple(float(v) for v in np.atleast_1d(self.s_points))
        if any(v < 0 for v in s) or list(s) != sorted(s):
            raise ValueError("s_points must be non-negative and ascending")
        object.__setattr__(self, "s_points", s)
        object.__setattr__(self, "eps", tuple(sorted((float(e) for e in self.eps), reverse=True)))
        if min(self.eps) <= 0:
            raise ValueError("eps must be positive")
        if not 0 < self.cfl <= 0.5:
            raise ValueError("cfl must lie in (0, 0.5]")
        if self.du <= 0 or self.scale <= 0 or self.d_lambda <= 0:
            raise ValueError("grid spacings must be positive")
        if not self.lam_min < 0 < self.upper:
            raise ValueError("the domain must contain the origin")

    @property
    def window(self) -> float:
        # The first moment equals s, hence max(20, 4 m1).
        return max(20.0, 4.0 * max(self.s_points))

    @property
    def upper(self) -> float:
        # Stretched cells make a wide solver domain cheap; it keeps the heavy
        # tail from leaking through the boundary (at beta=2, s=32 a bound of
        # 4096 already loses 2e-4 of the mass and 3% of the first moment).
        return self.lam_max if self.lam_max is not None else max(65536.0, self.window)

    def faces(self) -> np.ndarray:
        """Solver cell faces; the origin is a cell centre."""
        lo = math.asinh(self.lam_min / self.scale)
        hi = math.asinh(self.upper / self.scale)
        k = np.arange(math.floor(lo / self.du - 0.5), math.ceil(hi / self.du - 0.5) + 1)
        return self.scale * np.sinh((k + 0.5) * self.du)

    def output_grid(self) -> np.ndarray:
        top = min(self.window if self.out_max is None else self.out_max, self.upper)
        n = int(math.floor((top - self.lam_min) / self.d_lambda + 1e-9))
        return self.lam_min + self.d_lambda * np.arange(n + 1)


@dataclass(frozen=True, eq=False)
class ResolventField:
    lambda_grid: np.ndarray      # uniform output grid
    eps: np.ndarray              # descending
    L_grid: np.ndarray           # s = N L / xi
    g: np.ndarray                # (n_eps, n_L, n_lambda)
    N_effective: int | None
    faces: np.ndarray            # solver cells
    masses: np.ndarray           # (n_L, n_cells)
    outflow: np.ndarray          # cumulative mass through the upper boundary
    n_steps: int = 0

    def index(self, s: float) -> int:
        j = int(np.argmin(np.abs(self.L_grid - s)))
        if abs(self.L_grid[j] - s) > 1e-9 * max(1.0, s):
            raise KeyError(f"length {s} not among the solved snapshots")
        return j

    @property
    def d_lambda(self) -> float:
        return float(self.lambda_grid[1] - self.lambda_grid[0])

    def centres(self) -> np.ndarray:
        return 0.5 * (self.faces[1:] + self.faces[:-1])

    def mass(self) -> np.ndarray:
        return self.masses.sum(axis=1)

    def first_moment(self) -> np.ndarray:
        # Exact for the piecewise-constant density.
        return self.masses @ self.centres()

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["s", "eps", "lambda", "re_g", "im_g", "rho"])
            for a, e in enumerate(self.eps):
                for j, s in enumerate(self.L_grid):
                    for lam, val in zip(self.lambda_grid, self.g[a, j]):
                        w.writerow([repr(float(s)), repr(float(e)), repr(float(lam)),
                                    repr(float(val.real)), repr(float(val.imag)),
                                    repr(float(-val.imag / math.pi))])
        return path


@dataclass(frozen=True, eq=False)
class DensityCurve:
    lambda_grid: np.ndarray
    rho: np.ndarray
    L: float
    stderr: np.ndarray | None = None
    edges: np.ndarray | None = None

    def widths(self) -> np.ndarray:
        return np.diff(self.edges if self.edges is not None else _midpoint_edges(self.lambda_grid))

    def integral(self) -> float:
        return float(np.sum(self.rho * self.widths()))

    def mean(self) -> float:
        return float(np.sum(self.lambda_grid * self.rho * self.widths()))

    def cell_masses(self, edges) -> np.ndarray:
        """Mass of this curve inside each interval of ``edges`` (linear CDF)."""
        own = self.edges if self.edges is not None else _midpoint_edges(self.lambda_grid)
        cum = np.concatenate([[0.0], np.cumsum(self.rho * np.diff(own))])
        return np.diff(np.interp(edges, own, cum))

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["s", "lambda", "rho", "stderr"])
            se = self.stderr if self.stderr is not None else np.full_like(self.rho, np.nan)
            for lam, r, e in zip(self.lambda_grid, self.rho, se):
                w.writerow([repr(float(self.L)), repr(float(lam)), repr(float(r)), repr(float(e))])
        return path


def _midpoint_edges(x: np.ndarray) -> np.ndarray:
    mid = 0.5 * (x[1:] + x[:-1])
    return np.concatenate([[x[0] - (mid[0] - x[0])], mid, [x[-1] + (x[-1] - mid[-1])]])


# --- transforms ------------------------------------------------------------------

def _safe_log_abs(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    return np.log(np.where(ax > 0, ax, 1.0))


def hat_hilbert_matrix(nodes: np.ndarray, targets: np.ndarray | None = None) -> np.ndarray:
    """K[i, j] = PV ∫ phi_j(t) / (x_i - t) dt for the hat functions on ``nodes``.

    ``phi_j`` is 1 at node j and linear down to 0 at its neighbours (the end
    hats fall to 0 one spacing beyond the grid).
    """
    x = nodes if targets is None else targets
    a = np.concatenate([[2 * nodes[0] - nodes[1]], nodes[:-1]])
    c = np.concatenate([nodes[1:], [2 * nodes[-1] - nodes[-2]]])
    b = nodes
    X = x[:, None]
    up = (X - a) / (b - a)
    down = (c - X) / (c - b)
    return up * _safe_log_abs(X - a) - (up - down) * _safe_log_abs(X - b) - down * _safe_log_abs(X - c)


def cauchy_transform(faces: np.ndarray, density: np.ndarray, lam, eps: float) -> np.ndarray:
    """g(lam + i eps) of the piecewise-constant ``density`` on ``faces``.

    Summation by parts: g = sum_k log(z - f_k) (rho_k - rho_{k-1}).
    """
    jumps = np.diff(np.concatenate([[0.0], density, [0.0]]))
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    out = np.empty(len(lam), dtype=complex)
    step = max(1, 2_000_000 // len(faces))
    for i in range(0, len(lam), step):
        z = lam[i:i + step, None] + 1j * eps
        out[i:i + step] = np.log(z - faces) @ jumps
    return out


def _minmod(a, b):
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


class _Solver:
    def __init__(self, faces, beta, n_sub, cfl):
        self.faces = faces
        self.width = np.diff(faces)
        self.lam = 0.5 * (faces[1:] + faces[:-1])
        self.n = len(self.lam)
        self.beta = beta
        self.kmat = hat_hilbert_matrix(self.lam)
        self.k_top = hat_hilbert_matrix(self.lam, faces[-1:])[0]
        self.inner = faces[1:-1]
        self.gap = np.diff(self.lam)
        # Linear interpolation weight of the right centre at each interior face.
        self.wr = (self.inner - self.lam[:-1]) / self.gap
        self.diff = 0.0 if n_sub is None else (2.0 - beta) / n_sub
        self.cfl = cfl

    def _v(self, lam, h):
        return 1.0 - 2.0 * self.beta * lam * (1.0 - lam * h)

    def rhs(self, rho):
        h = self.kmat @ rho
        vc = self._v(self.lam, h)
        v = (1 - self.wr) * vc[:-1] + self.wr * vc[1:]
        d = np.diff(rho) / self.gap
        slope = np.zeros_like(rho)
        slope[1:-1] = _minmod(d[:-1], d[1:])
        left = rho[:-1] + slope[:-1] * (self.inner - self.lam[:-1])
        right = rho[1:] - slope[1:] * (self.lam[1:] - self.inner)
        f = np.where(v > 0, v * left, v * right)
        # Upper boundary: outflow only, nothing enters.
        top = self._v(self.faces[-1], float(self.k_top @ rho))
        out = max(top, 0.0) * max(rho[-1] + slope[-1] * (self.faces[-1] - self.lam[-1]), 0.0)
        dm = np.zeros_like(rho)
        dm[:-1] -= f
        dm[1:] += f
        dm[-1] -= out
        return dm / self.width, out, v

    def dt(self, rho, v):
        live = rho * self.width > 1e-14
        mask = live[:-1] | live[1:]
        if not np.any(mask):
            return 1.0
        w = np.minimum(self.width[:-1], self.width[1:])
        return self.cfl * float(np.min(w[mask] / np.maximum(np.abs(v[mask]), 1e-12)))

    def implicit_diffusion(self, rho, dt):
        """Backward-Euler step of d_s rho = c d^2(lam^2 rho) with zero-flux ends."""
        w = self.lam ** 2
        cf = self.diff * dt / self.gap
        ab = np.zeros((3, self.n))
        ab[1] = self.width.copy()
        ab[1, :-1] += cf * w[:-1]
        ab[1, 1:] += cf * w[1:]
        ab[0, 1:] = -cf * w[1:]
        ab[2, :-1] = -cf * w[:-1]
        return solve_banded((1, 1), ab, self.width * rho)


def solve_resolvent_pde(grid: ResolventGrid, beta: int, N_for_subleading: int | None = None,
                        max_steps: int = 2_000_000) -> ResolventField:
    """Evolve the density from a point mass at 0 (g = 1/z) through ``grid.s_points``.

    With ``N_for_subleading`` set, the ``(2 - beta)/N`` term is retained.
    """
    if beta not in (1, 2):
        raise ValueError("beta must be 1 or 2")
    if N_for_subleading is not None and N_for_subleading < 1:
        raise ValueError("N_for_subleading must be a positive integer")
    faces = grid.faces()
    sol = _Solver(faces, beta, N_for_subleading, grid.cfl)
    rho = np.zeros(sol.n)
    i0 = int(np.argmin(np.abs(sol.lam)))
    rho[i0] = 1.0 / sol.width[i0]
    snaps, outs = [], []
    s, lost, steps = 0.0, 0.0, 0
    for target in grid.s_points:
        while s < target - 1e-12:
            k1, o1, v = sol.rhs(rho)
            dt = min(sol.dt(rho, v), target - s)
            r1 = rho + dt * k1
            k2, o2, _ = sol.rhs(r1)
            rho = 0.5 * (rho + r1 + dt * k2)
            lost += 0.5 * dt * (o1 + o2)
            if sol.diff:
                rho = sol.implicit_diffusion(rho, dt)
            s += dt
            steps += 1
            if steps > max_steps:
                raise ResolventGridError("step budget exhausted; coarsen the grid or shorten s")
            if not np.all(np.isfinite(rho)) or np.min(rho * sol.width) < -1e-3:
                raise ResolventGridError(
                    f"density lost positivity at s={s:.4g}; refine the grid (du={grid.du:g})")
        snaps.append(rho * sol.width)
        outs.append(lost)
    masses = np.array(snaps)
    lam_out = grid.output_grid()
    g = np.stack([np.stack([cauchy_transform(faces, m / sol.width, lam_out, e) for m in masses])
                  for e in grid.eps])
    return ResolventField(lam_out, np.array(grid.eps), np.array(grid.s_points), g,
                          N_for_subleading, faces, masses, np.array(outs), steps)


def density_from_resolvent(field: ResolventField, L: float, extrapolate: bool = True) -> DensityCurve:
    """rho = -Im g / pi at the smallest eps, Richardson-extrapolated over two eps values."""
    j = field.index(L)
    rho = -field.g[-1, j].imag / math.pi
    if extrapolate and len(field.eps) >= 2:
        e1, e2 = field.eps[-2], field.eps[-1]
        r1 = -field.g[-2, j].imag / math.pi
        rho = (e1 * rho - e2 * r1) / (e1 - e2)
    if np.min(rho) < -1e-3:
        raise ResolventGridError("negative density beyond -1e-3")
    return DensityCurve(field.lambda_grid, rho, float(L), None, _midpoint_edges(field.lambda_grid))


def cell_density(field: ResolventField, L: float) -> DensityCurve:
    """The solver's own piecewise-constant density (no eps broadening)."""
    j = field.index(L)
    return DensityCurve(field.centres(), field.masses[j] / np.diff(field.faces), float(L),
                        None, field.faces)


# --- Monte Carlo spectra ------------------------------------------------------------

def scaled_spectra(params: ModelParams, s_points, n_draws: int, cfg: SdeConfig,
                   master_seed: int, stream_offset: int = 0, workers: int = 1,
                   method: str = "direct") -> np.ndarray:
    """Eigenvalues of N Q̃/(2 tau_xi) at rescaled lengths ``s``; shape (draws, P, N)."""
    n = params.N
    xs = np.asarray(s_points, dtype=float) / n
    kern = partial(qtilde_batch, n, params.b, xs, align_dx(cfg, xs), method=method)
    q = run_ensemble(kern, n_draws, master_seed, stream_offset, cfg.batch, workers)
    return np.linalg.eigvalsh(0.5 * n * q)


def histogram_density(eigenvalues, edges, s: float) -> DensityCurve:
    hist = Histogram(np.asarray(edges, dtype=float)).add(np.ravel(eigenvalues))
    rho, se = hist.density()
    centres = 0.5 * (hist.edges[1:] + hist.edges[:-1])
    return DensityCurve(centres, rho, float(s), se, hist.edges)


def empirical_density(params: ModelParams, L: float, n_draws: int, edges,
                      cfg: SdeConfig | None = None, master_seed: int = 0,
                      stream_offset: int = 0, workers: int = 1) -> DensityCurve:
    """Histogram of the eigenvalues of N Q̃/(2 tau_xi) at rescaled length ``L`` (= s)."""
    if not 16 <= params.N <= 64:
        raise ValueError("empirical densities are meant for 16 <= N <= 64")
    if n_draws * params.N < 10_000:
        raise ValueError("need n_draws * N >= 1e4 eigenvalues")
    cfg = SdeConfig() if cfg is None else cfg
    ev = scaled_spectra(params, [L], n_draws, cfg, master_seed, stream_offset, workers)[:, 0]
    return histogram_density(ev, edges, L)


def l1_between(a: DensityCurve, b: DensityCurve, edges=None) -> float:
    """L1 distance of two densities compared as masses on common ``edges``."""
    edges = a.edges if edges is None else np.asarray(edges, dtype=float)
    return float(np.sum(np.abs(a.cell_masses(edges) - b.cell_masses(edges))))
