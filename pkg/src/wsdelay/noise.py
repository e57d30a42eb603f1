"""Isotropic Hermitian white-noise increments and their statistical self-tests.

Increments satisfy ``E[dB_ab conj(dB_cd)] = C_{ab,cd} dx`` with
``C = (beta/2) d_ac d_bd + (1 - beta/2) d_ad d_bc``: real symmetric with
off-diagonal variance dx/2 for beta=1, complex Hermitian with circular
off-diagonal entries of variance dx for beta=2, unit-variance diagonal in
both cases.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import HermitianMatrix, SymmetryClass, as_symmetry

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by (master_seed, stream_id).

    The Philox key is built from both integers, so the sequence drawn by a
    trajectory depends only on its own id and never on scheduling.
    """

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("master_seed", "stream_id"):
            v = int(getattr(self, name))
            if not 0 <= v <= _MASK64:
                raise ValueError(f"{name} must fit in 64 unsigned bits")

    def generator(self) -> np.random.Generator:
        key = np.array([self.master_seed & _MASK64, self.stream_id & _MASK64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, offset: int) -> "RngStream":
        return RngStream(self.master_seed, (self.stream_id + int(offset)) & _MASK64)


def streams(master_seed: int, ids) -> list[RngStream]:
    return [RngStream(master_seed, int(i)) for i in ids]


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


def box_muller(u: np.ndarray) -> np.ndarray:
    """Standard normals from uniforms in [0, 1); last axis must be even.

    Exact in distribution with a fixed uniform budget (no rejection loop).
    """
    u1 = 1.0 - u[..., 0::2]
    u2 = u[..., 1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    out = np.empty_like(u)
    out[..., 0::2] = r * np.cos(2.0 * np.pi * u2)
    out[..., 1::2] = r * np.sin(2.0 * np.pi * u2)
    return out


def standard_normal(gen: np.random.Generator, shape) -> np.ndarray:
    shape = tuple(np.atleast_1d(shape))
    n = int(np.prod(shape))
    u = gen.random(n + (n & 1))
    return box_muller(u)[:n].reshape(shape)


def n_real(n: int, beta: int, kind: str = "hermitian") -> int:
    """Number of independent real Gaussians in one increment."""
    if kind == "ginibre":
        return n * n * beta
    return n * (n + 1) // 2 if beta == 1 else n * n


def _budget(n: int, beta: int, kind: str = "hermitian") -> int:
    m = n_real(n, beta, kind)
    return m + (m & 1)


def ginibre_from_normals(z: np.ndarray, n: int, beta: int, dx: float) -> np.ndarray:
    """Non-Hermitian increments with independent entries.

    Real N(0, dx) entries for beta=1; complex entries with real and
    imaginary parts N(0, dx) for beta=2, so that the Hermitian part carries
    the isotropic correlator.
    """
    lead = z.shape[:-1]
    sd = np.sqrt(dx)
    if beta == 1:
        return (z[..., : n * n] * sd).reshape(lead + (n, n)).astype(complex)
    return ((z[..., : n * n] + 1j * z[..., n * n : 2 * n * n]) * sd).reshape(lead + (n, n))


def increments_from_normals(z: np.ndarray, n: int, beta: int, dx: float) -> np.ndarray:
    """Assemble Hermitian increments from unit normals (last axis = n_real)."""
    lead = z.shape[:-1]
    out = np.zeros(lead + (n, n), dtype=complex)
    sd = np.sqrt(dx)
    idx = np.arange(n)
    out[..., idx, idx] = z[..., :n] * sd
    if n > 1:
        iu, ju = np.triu_indices(n, 1)
        k = iu.size
        if beta == 1:
            off = z[..., n : n + k] * np.sqrt(dx / 2.0)
        else:
            off = (z[..., n : n + k] + 1j * z[..., n + k : n + 2 * k]) * np.sqrt(dx / 2.0)
        out[..., iu, ju] = off
        out[..., ju, iu] = np.conj(off)
    return out


@dataclass(frozen=True)
class NoiseSpec:
    dim: int
    beta: SymmetryClass | int
    dx: float

    def __post_init__(self):
        object.__setattr__(self, "beta", as_symmetry(self.beta))
        if int(self.dim) < 1:
            raise ValueError("dim must be >= 1")
        if not self.dx > 0:
            raise ValueError("dx must be positive")

    @property
    def b(self) -> int:
        return self.beta.beta

    @property
    def mu(self) -> float:
        return 1.0 + 0.5 * self.b * (self.dim - 1)


def correlator(n: int, beta: int) -> np.ndarray:
    """The isotropic tensor C[a, b, c, d]."""
    eye = np.eye(n)
    return 0.5 * beta * np.einsum("ac,bd->abcd", eye, eye) + (1.0 - 0.5 * beta) * np.einsum(
        "ad,bc->abcd", eye, eye
    )


def draw_increments(spec: NoiseSpec, gen: np.random.Generator, count: int) -> np.ndarray:
    """``count`` consecutive increments from one generator, shape (count, N, N)."""
    m = _budget(spec.dim, spec.b)
    z = box_muller(gen.random((count, m)))
    return increments_from_normals(z, spec.dim, spec.b, spec.dx)


def sample_increment(spec: NoiseSpec, rng) -> HermitianMatrix:
    """One increment dB; a fresh RngStream always yields its first draw."""
    return HermitianMatrix(draw_increments(spec, as_generator(rng), 1)[0])


class IncrementSource:
    """Per-trajectory increment streams for a batch integrated in lockstep.

    Each step returns an array ``(B, n_noises, N, N)``; trajectory ``i``
    consumes only its own stream, in step order, so results do not depend on
    how trajectories are batched.
    """

    def __init__(self, rngs, n: int, beta: int, dx: float, n_noises: int = 1,
                 chunk: int = 128, scale: float = 1.0, kind: str = "hermitian"):
        if kind not in ("hermitian", "ginibre"):
            raise ValueError(f"unknown increment kind {kind!r}")
        self.kind = kind
        self.gens = [as_generator(r) for r in rngs]
        self.n, self.beta, self.dx = n, beta, dx
        self.n_noises = n_noises
        self.chunk = chunk
        self.scale = scale
        self._buf = None
        self._pos = 0

    def _refill(self):
        m = _budget(self.n, self.beta, self.kind)
        u = np.stack([g.random((self.chunk, self.n_noises, m)) for g in self.gens])
        z = box_muller(u)
        build = ginibre_from_normals if self.kind == "ginibre" else increments_from_normals
        self._buf = build(z, self.n, self.beta, self.dx)
        if self.scale != 1.0:
            self._buf *= self.scale
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._buf is None or self._pos >= self.chunk:
            self._refill()
        out = self._buf[:, self._pos]
        self._pos += 1
        return out


@dataclass
class CorrelatorReport:
    n: int
    beta: int
    n_samples: int
    expected: np.ndarray
    empirical: np.ndarray
    stderr_re: np.ndarray
    stderr_im: np.ndarray
    threshold: float = 4.0
    flagged: list = field(default_factory=list)

    @property
    def max_z(self) -> float:
        return float(max(np.max(self.z_re), np.max(self.z_im)))

    @property
    def z_re(self) -> np.ndarray:
        return np.abs(self.empirical.real - self.expected.real) / self.stderr_re

    @property
    def z_im(self) -> np.ndarray:
        se = np.where(self.stderr_im > 0, self.stderr_im, np.inf)
        return np.abs(self.empirical.imag - self.expected.imag) / se

    @property
    def ok(self) -> bool:
        return not self.flagged

    def rows(self):
        n = self.n
        for a in range(n):
            for b in range(n):
                for c in range(n):
                    for d in range(n):
                        yield {
                            "a": a + 1, "b": b + 1, "c": c + 1, "d": d + 1,
                            "expected": float(self.expected[a, b, c, d].real),
                            "empirical_re": float(self.empirical[a, b, c, d].real),
                            "empirical_im": float(self.empirical[a, b, c, d].imag),
                            "stderr_re": float(self.stderr_re[a, b, c, d]),
                            "stderr_im": float(self.stderr_im[a, b, c, d]),
                        }


def verify_correlator(spec: NoiseSpec, n_samples: int, rng, threshold: float = 4.0,
                      chunk: int = 20000) -> CorrelatorReport:
    """Empirical C_{ab,cd} = E[dB_ab conj(dB_cd)]/dx with Monte Carlo errors."""
    if n_samples < 10_000:
        raise ValueError("n_samples must be >= 1e4")
    gen = as_generator(rng)
    n = spec.dim
    s1 = np.zeros((n,) * 4, dtype=complex)
    s2r = np.zeros((n,) * 4)
    s2i = np.zeros((n,) * 4)
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        x = draw_increments(spec, gen, m) / np.sqrt(spec.dx)
        p = x[:, :, :, None, None] * np.conj(x)[:, None, None, :, :]
        s1 += p.sum(axis=0)
        s2r += (p.real ** 2).sum(axis=0)
        s2i += (p.imag ** 2).sum(axis=0)
        done += m
    mean = s1 / n_samples
    var_r = np.maximum(s2r / n_samples - mean.real ** 2, 0.0)
    var_i = np.maximum(s2i / n_samples - mean.imag ** 2, 0.0)
    rep = CorrelatorReport(
        n=n, beta=spec.b, n_samples=n_samples,
        expected=correlator(n, spec.b).astype(complex),
        empirical=mean,
        stderr_re=np.sqrt(var_r / n_samples),
        stderr_im=np.sqrt(var_i / n_samples),
        threshold=threshold,
    )
    bad = np.argwhere((rep.z_re > threshold) | (rep.z_im > threshold))
    rep.flagged = [tuple(int(i) + 1 for i in q) for q in bad]
    return rep


@dataclass
class SandwichReport:
    empirical: np.ndarray
    stderr: np.ndarray
    expected: np.ndarray

    @property
    def max_z(self) -> float:
        diff = np.abs(self.empirical - self.expected)
        se = np.where(self.stderr > 0, self.stderr, np.inf)
        z = np.where(diff == 0, 0.0, diff / se)
        return float(np.max(z))


def sandwich_expected(o: np.ndarray, beta: int) -> np.ndarray:
    n = o.shape[0]
    return 0.5 * beta * np.trace(o) * np.eye(n) + (1.0 - 0.5 * beta) * o.T


def sandwich_check(spec: NoiseSpec, o, n_samples: int, rng, chunk: int = 20000) -> SandwichReport:
    """Empirical E[dB O dB]/dx for a fixed matrix O."""
    o = np.asarray(o, dtype=complex)
    gen = as_generator(rng)
    s1 = np.zeros_like(o)
    s2 = np.zeros(o.shape)
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        x = draw_increments(spec, gen, m) / np.sqrt(spec.dx)
        p = x @ o @ x
        s1 += p.sum(axis=0)
        s2 += (np.abs(p) ** 2).sum(axis=0)
        done += m
    mean = s1 / n_samples
    var = np.maximum(s2 / n_samples - np.abs(mean) ** 2, 0.0)
    return SandwichReport(mean, np.sqrt(var / n_samples), sandwich_expected(o, spec.b))
