"""Monte Carlo bookkeeping: streaming moments, median-of-means and a block runner.

Trajectory ``i`` always draws from ``RngStream(master_seed, offset + i)`` and
blocks have a fixed size, so the assembled ensemble is the same for any
number of worker processes.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .noise import streams

N_BLOCKS = 16


@dataclass
class EnsembleStats:
    """Per-block count, mean and centred sum of squares for ``k`` observables.

    Sample ``id`` is assigned to block ``id % n_blocks``; the blocks feed the
    median-of-means estimator and merging is associative (Chan et al.).
    """

    names: tuple
    n_blocks: int = N_BLOCKS
    count: np.ndarray = field(default=None)
    mean: np.ndarray = field(default=None)
    m2: np.ndarray = field(default=None)

    def __post_init__(self):
        self.names = tuple(self.names)
        k = len(self.names)
        if self.count is None:
            self.count = np.zeros(self.n_blocks, dtype=np.int64)
            self.mean = np.zeros((self.n_blocks, k))
            self.m2 = np.zeros((self.n_blocks, k))

    @classmethod
    def from_samples(cls, names, values, ids=None, n_blocks: int = N_BLOCKS) -> "EnsembleStats":
        st = cls(names, n_blocks)
        st.add(values, ids)
        return st

    def add(self, values, ids=None):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[1] != len(self.names):
            raise ValueError("column count does not match names")
        ids = np.arange(len(values)) if ids is None else np.asarray(ids)
        blk = ids % self.n_blocks
        for b in range(self.n_blocks):
            v = values[blk == b]
            if len(v):
                n = len(v)
                m = v.mean(axis=0)
                self._combine(b, n, m, ((v - m) ** 2).sum(axis=0))
        return self

    def _combine(self, b, n, m, m2):
        na = self.count[b]
        tot = na + n
        d = m - self.mean[b]
        self.mean[b] = self.mean[b] + d * (n / tot)
        self.m2[b] = self.m2[b] + m2 + d ** 2 * (na * n / tot)
        self.count[b] = tot

    def merge(self, other: "EnsembleStats") -> "EnsembleStats":
        if other.names != self.names or other.n_blocks != self.n_blocks:
            raise ValueError("incompatible accumulators")
        out = EnsembleStats(self.names, self.n_blocks, self.count.copy(),
                            self.mean.copy(), self.m2.copy())
        for b in range(self.n_blocks):
            if other.count[b]:
                out._combine(b, other.count[b], other.mean[b], other.m2[b])
        return out

    @property
    def n(self) -> int:
        return int(self.count.sum())

    def _pooled(self):
        n = self.count.sum()
        w = self.count[:, None] / n
        mu = (w * self.mean).sum(axis=0)
        m2 = self.m2.sum(axis=0) + (self.count[:, None] * (self.mean - mu) ** 2).sum(axis=0)
        return mu, m2 / max(n - 1, 1)

    def means(self) -> np.ndarray:
        return self._pooled()[0]

    def variances(self) -> np.ndarray:
        return self._pooled()[1]

    def stderrs(self) -> np.ndarray:
        return np.sqrt(self.variances() / self.n)

    def median_of_means(self) -> np.ndarray:
        return np.median(self.mean[self.count > 0], axis=0)

    def mom_stderrs(self) -> np.ndarray:
        """Normal-theory error of the median of the block means."""
        bm = self.mean[self.count > 0]
        return math.sqrt(math.pi / 2) * bm.std(axis=0, ddof=1) / math.sqrt(len(bm))

    def summary(self) -> dict:
        mu, se = self.means(), self.stderrs()
        mom, mse = self.median_of_means(), self.mom_stderrs()
        return {
            name: {"mean": float(mu[i]), "stderr": float(se[i]),
                   "median_of_means": float(mom[i]), "mom_stderr": float(mse[i])}
            for i, name in enumerate(self.names)
        }


@dataclass
class Histogram:
    """Fixed-edge histogram; counts outside the edges are tallied separately."""

    edges: np.ndarray
    counts: np.ndarray = None
    under: int = 0
    over: int = 0

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=float)
        if self.counts is None:
            self.counts = np.zeros(len(self.edges) - 1, dtype=np.int64)

    def add(self, values):
        v = np.ravel(values)
        self.under += int(np.sum(v < self.edges[0]))
        self.over += int(np.sum(v >= self.edges[-1]))
        self.counts += np.histogram(v, bins=self.edges)[0]
        return self

    def merge(self, other: "Histogram") -> "Histogram":
        if not np.array_equal(self.edges, other.edges):
            raise ValueError("histograms have different edges")
        return Histogram(self.edges, self.counts + other.counts,
                         self.under + other.under, self.over + other.over)

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.under + self.over

    def density(self):
        """Normalized density and per-bin binomial standard error."""
        n = self.total
        w = np.diff(self.edges)
        p = self.counts / n
        return p / w, np.sqrt(p * (1 - p) / n) / w


def _call(kernel, master_seed, ids):
    return kernel(streams(master_seed, ids))


def run_ensemble(kernel, n_traj: int, master_seed: int, stream_offset: int = 0,
                 block: int = 512, workers: int = 1) -> np.ndarray:
    """Evaluate ``kernel(list_of_streams) -> (B, ...)`` over ``n_traj`` streams.

    Blocks of ``block`` consecutive stream ids are the unit of work; results
    are concatenated in id order.  ``kernel`` must be picklable for
    ``workers > 1`` (module-level functions or ``functools.partial``).
    """
    ids = np.arange(stream_offset, stream_offset + n_traj, dtype=np.int64)
    chunks = [ids[i : i + block] for i in range(0, n_traj, block)]
    if workers <= 1 or len(chunks) == 1:
        parts = [_call(kernel, master_seed, c) for c in chunks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_call, kernel, master_seed, c) for c in chunks]
            parts = [f.result() for f in futs]
    return np.concatenate(parts, axis=0)
