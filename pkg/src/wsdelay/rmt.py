"""beta-Laguerre (Wishart) spectra and the infinite-length law of the delay matrix.

Joint eigenvalue density sampled here::

    p(g_1..g_N) ∝ prod_{i<j} |g_i - g_j|^beta  prod_n g_n^a exp(-g_n / 2),
    a = mu - 1 - beta (N - 1) / 2.

The direct sampler is the bidiagonal beta-ensemble model; a Metropolis chain
on the same density and a two-dimensional quadrature serve as independent
oracles for small N.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate, stats

from .linalg import HermitianMatrix, MatrixError, SymmetryClass, as_symmetry
from .noise import RngStream, as_generator
from .params import ModelParams, SdeConfig
from .sde import lambda_batch


@dataclass(frozen=True)
class WishartSpec:
    dim: int
    beta: SymmetryClass | int
    mu: float

    def __post_init__(self):
        object.__setattr__(self, "beta", as_symmetry(self.beta))
        if int(self.dim) < 1:
            raise ValueError("dim must be >= 1")
        if not self.mu > 0.5 * self.b * (self.dim - 1):
            raise ValueError(f"mu={self.mu} must exceed beta(N-1)/2 = {0.5 * self.b * (self.dim - 1)}")

    @property
    def b(self) -> int:
        return self.beta.beta

    @property
    def exponent(self) -> float:
        """One-body power a of g^a exp(-g/2)."""
        return self.mu - 1.0 - 0.5 * self.b * (self.dim - 1)

    @classmethod
    def for_wire(cls, params: ModelParams) -> "WishartSpec":
        return cls(params.N, params.b, params.mu)


@dataclass(frozen=True, eq=False)
class SpectralSample:
    eigenvalues: np.ndarray   # (n_draws, N), ascending per row

    def __post_init__(self):
        if np.any(self.eigenvalues <= 0):
            raise ValueError("eigenvalues must be positive")

    @property
    def n_draws(self) -> int:
        return self.eigenvalues.shape[0]

    def traces(self, power: int = 1) -> np.ndarray:
        return np.sum(self.eigenvalues ** power, axis=1)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow([f"gamma_{i + 1}" for i in range(self.eigenvalues.shape[1])])
            for row in self.eigenvalues:
                w.writerow([repr(float(v)) for v in row])
        return path


def sample_wishart_eigs(spec: WishartSpec, rng, n_draws: int = 1) -> SpectralSample:
    """Eigenvalues of B B^T with B lower bidiagonal.

    Diagonal ``chi_{2 mu - beta (i-1)}``, subdiagonal ``chi_{beta (N-i)}``.
    """
    gen = as_generator(rng)
    n, b = spec.dim, spec.b
    df_d = 2.0 * spec.mu - b * np.arange(n)
    df_s = b * (n - np.arange(1, n))
    diag = np.sqrt(gen.chisquare(np.broadcast_to(df_d, (n_draws, n))))
    mat = np.zeros((n_draws, n, n))
    idx = np.arange(n)
    mat[:, idx, idx] = diag
    if n > 1:
        sub = np.sqrt(gen.chisquare(np.broadcast_to(df_s, (n_draws, n - 1))))
        mat[:, idx[1:], idx[:-1]] = sub
    ev = np.linalg.eigvalsh(mat @ np.swapaxes(mat, -1, -2))
    return SpectralSample(np.maximum(ev, np.finfo(float).tiny))


def log_density(spec: WishartSpec, g: np.ndarray) -> np.ndarray:
    """Unnormalized log joint density; -inf outside the positive orthant."""
    g = np.atleast_2d(g)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = spec.exponent * np.sum(np.log(g), axis=1) - 0.5 * np.sum(g, axis=1)
        n = g.shape[1]
        for i in range(n):
            for j in range(i + 1, n):
                out = out + spec.b * np.log(np.abs(g[:, i] - g[:, j]))
    out[np.any(g <= 0, axis=1)] = -np.inf
    return out


def mcmc_wishart_eigs(spec: WishartSpec, rng, n_samples: int, n_chains: int = 64,
                      burn: int = 2000, thin: int = 10, step: float = 0.5) -> np.ndarray:
    """Metropolis samples of the joint density (oracle for N <= 4).

    Chains move in log-coordinates (with the Jacobian) and run in parallel;
    returns ``(n_samples, N)`` sorted rows.
    """
    if spec.dim > 4:
        raise ValueError("MCMC oracle is meant for N <= 4")
    gen = as_generator(rng)
    n = spec.dim
    per_chain = -(-n_samples // n_chains)
    y = np.log(sample_wishart_eigs(WishartSpec(n, spec.beta, spec.mu), gen, n_chains).eigenvalues)
    y = y + 0.1 * gen.standard_normal(y.shape)

    def lp(y):
        return log_density(spec, np.exp(y)) + y.sum(axis=1)

    cur = lp(y)
    out = []
    total = burn + per_chain * thin
    for it in range(total):
        prop = y + step * gen.standard_normal(y.shape)
        new = lp(prop)
        acc = np.log(gen.random(n_chains)) < new - cur
        y[acc], cur[acc] = prop[acc], new[acc]
        if it >= burn and (it - burn) % thin == 0:
            out.append(np.sort(np.exp(y), axis=1))
    return np.concatenate(out)[:n_samples]


def quadrature_moments_n2(beta: int, a: float = 0.0) -> dict:
    """E[sum g] and E[sum g^2] for N=2 by direct 2D quadrature of the density."""
    def w(g2, g1, f):
        return f(g1, g2) * abs(g1 - g2) ** beta * (g1 * g2) ** a * math.exp(-(g1 + g2) / 2)

    # Integrate over the ordered triangle g2 < g1 where |g1 - g2| is smooth;
    # the symmetric factor cancels in the ratios.
    top = 200.0
    opts = dict(epsabs=1e-12, epsrel=1e-12)

    def tri(f):
        return integrate.dblquad(lambda g2, g1: w(g2, g1, f), 0, top, 0, lambda g1: g1, **opts)[0]

    z = tri(lambda x, y: 1.0)
    m1 = tri(lambda x, y: x + y)
    m2 = tri(lambda x, y: x * x + y * y)
    return {"sum": m1 / z, "sum_sq": m2 / z}


# --- infinite-length functional ---------------------------------------------------

def dufresne_batch(n: int, beta: int, length_over_xi: float, cfg: SdeConfig, rngs):
    """Γ = 2 tau_xi Q̃^-1 = (∫Λ^dagger Λ dx)^-1 over ``[0, length_over_xi]``.

    Returns ``(gammas (B, N, N), singular (B,))``; singular rows are NaN.
    """
    mu = 1.0 + 0.5 * beta * (n - 1)
    _, acc = lambda_batch(n, beta, mu, [length_over_xi], cfg, rngs)
    q = 2.0 * acc[:, 0]
    cond = np.linalg.cond(q)
    bad = ~(cond < 1e12)
    g = np.full_like(q, np.nan)
    if np.any(~bad):
        g[~bad] = 2.0 * np.linalg.inv(q[~bad])
    return 0.5 * (g + np.conj(np.swapaxes(g, -1, -2))), bad


def dufresne_limit_sample(params: ModelParams, L_over_xi: float, cfg: SdeConfig | None = None,
                          rng: RngStream | None = None) -> HermitianMatrix:
    """One draw of Γ̂ = 2 tau_xi Q̃^-1 at a length where the functional has saturated."""
    if L_over_xi < 8:
        raise ValueError("L_over_xi must be >= 8 for the saturated functional")
    cfg = SdeConfig() if cfg is None else cfg
    rng = RngStream(0, 0) if rng is None else rng
    g, bad = dufresne_batch(params.N, params.b, L_over_xi, cfg, [rng])
    if bad[0]:
        raise MatrixError("Q̃ numerically singular; resample with another stream")
    return HermitianMatrix(g[0])


def ks_exponential(samples, scale: float = 2.0):
    """KS test against the exponential law with mean ``scale`` (rate 1/scale)."""
    return stats.kstest(np.ravel(samples), "expon", args=(0.0, scale))


# --- stationary large-N density ---------------------------------------------------

def stationary_density(beta: int, lam) -> np.ndarray:
    """sqrt(beta lam - 1/4) / (pi beta lam^2) on lam >= 1/(4 beta), zero below."""
    b = as_symmetry(beta).beta
    lam = np.asarray(lam, dtype=float)
    arg = b * lam - 0.25
    safe = np.where(arg > 0, lam, 1.0)
    return np.where(arg > 0, np.sqrt(np.maximum(arg, 0.0)) / (np.pi * b * safe ** 2), 0.0)


def stationary_edge(beta: int) -> float:
    return 0.25 / as_symmetry(beta).beta


def stationary_cdf(beta: int, lam) -> np.ndarray:
    """Closed-form integral of the stationary density from its edge to ``lam``."""
    b = as_symmetry(beta).beta
    lam = np.asarray(lam, dtype=float)
    t = np.sqrt(np.maximum(4 * b * lam - 1, 0.0))
    # With lam = (1 + t^2)/(4 beta) the integral reduces to (2/pi)(atan t - t/(1+t^2)).
    return np.where(lam > 0.25 / b, (2 / np.pi) * (np.arctan(t) - t / (1 + t * t)), 0.0)


def inverse_spectrum_density(sample: SpectralSample, edges) -> np.ndarray:
    """Histogram density of lam = N / g over all eigenvalues of all draws."""
    n = sample.eigenvalues.shape[1]
    lam = n / sample.eigenvalues.ravel()
    counts = np.histogram(lam, bins=edges)[0]
    return counts / (lam.size * np.diff(edges))


def stationary_quantiles(beta: int, probs) -> np.ndarray:
    """Inverse of :func:`stationary_cdf` by bracketing root search."""
    from scipy.optimize import brentq

    lo = stationary_edge(beta)
    out = []
    for p in np.atleast_1d(probs):
        if p <= 0:
            out.append(lo)
            continue
        if p >= 1:
            out.append(np.inf)
            continue
        hi = 2 * lo
        while stationary_cdf(beta, hi) < p:
            hi *= 2
        out.append(brentq(lambda x: float(stationary_cdf(beta, x)) - p, lo, hi, xtol=1e-14, rtol=1e-14))
    return np.array(out)


def l1_to_stationary(beta: int, lam_samples, n_bins: int = 100) -> float:
    """L1 distance between a sample and the stationary law on equal-mass bins."""
    edges = stationary_quantiles(beta, np.linspace(0, 1, n_bins + 1))
    lam = np.ravel(lam_samples)
    emp = np.histogram(lam, np.concatenate([[-np.inf], edges[:-1], [np.inf]]))[0] / lam.size
    exact = np.concatenate([[0.0], np.full(n_bins, 1.0 / n_bins)])
    return float(np.abs(emp - exact).sum())
