from __future__ import annotations

import math
import warnings
from functools import partial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wsdelay.ensemble import EnsembleStats, Histogram, run_ensemble
from wsdelay.params import ModelParams, SdeConfig, WeakDisorderWarning


def test_derived_scales():
    p = ModelParams(3, 1, k=2.0, sigma=1e-2)
    assert p.xi == pytest.approx(8 * 4 / 1e-2)
    assert p.v == 4.0
    assert p.tau_xi == pytest.approx(p.xi / 4.0)
    assert p.mu == pytest.approx(2.0)
    assert p.ell_e == pytest.approx(p.xi / 8.0)
    assert p.energy == 4.0
    assert p.as_dict() == {"n_channels": 3, "beta": 1, "k": 2.0, "sigma": 1e-2}


def test_weak_disorder_warning():
    with pytest.warns(WeakDisorderWarning):
        ModelParams(1, 1, k=1.0, sigma=0.1)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ModelParams(1, 1, k=1.0, sigma=1e-3)


@pytest.mark.parametrize("kwargs", [dict(n_channels=0, beta=1), dict(n_channels=1, beta=3),
                                    dict(n_channels=1, beta=1, k=-1.0), dict(n_channels=1, beta=1, sigma=0.0)])
def test_model_validation(kwargs):
    with pytest.raises(ValueError):
        ModelParams(**kwargs)


@pytest.mark.parametrize("kwargs", [dict(dx=0.0), dict(scheme="rk4"), dict(renorm_every=0), dict(batch=0)])
def test_sde_config_validation(kwargs):
    with pytest.raises(ValueError):
        SdeConfig(**kwargs)


def test_sde_defaults():
    cfg = SdeConfig()
    assert cfg.dx == 1e-3 and cfg.scheme == "stratonovich-heun" and cfg.renorm_every == 100
    assert cfg.n_steps(1.0) == 1000 and cfg.n_steps(0.0) == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 400), st.integers(1, 5), st.integers(0, 10_000))
def test_stats_merge_matches_pooled(n, split, seed):
    gen = np.random.default_rng(seed)
    x = gen.standard_normal((n, 2)) * [1.0, 10.0] + [3.0, -1.0]
    ids = np.arange(n)
    cut = n * split // 6
    a = EnsembleStats.from_samples(("u", "v"), x[:cut], ids[:cut]) if cut else EnsembleStats(("u", "v"))
    b = EnsembleStats.from_samples(("u", "v"), x[cut:], ids[cut:])
    m = a.merge(b)
    assert m.n == n
    assert np.allclose(m.means(), x.mean(axis=0))
    assert np.allclose(m.variances(), x.var(axis=0, ddof=1))


def test_median_of_means_robust_to_outlier():
    x = np.ones(1600)
    x[0] = 1e9
    st_ = EnsembleStats.from_samples(("x",), x)
    assert st_.median_of_means()[0] == 1.0
    assert st_.means()[0] > 1e5
    s = st_.summary()["x"]
    assert set(s) == {"mean", "stderr", "median_of_means", "mom_stderr"}


def test_histogram_density_normalized():
    gen = np.random.default_rng(0)
    h = Histogram(np.linspace(-5, 5, 51)).add(gen.standard_normal(10_000))
    rho, se = h.density()
    assert np.sum(rho * np.diff(h.edges)) == pytest.approx(1.0 - (h.under + h.over) / h.total)
    assert np.all(se >= 0)
    merged = h.merge(Histogram(h.edges).add([0.0]))
    assert merged.total == h.total + 1


def _uniform_kernel(rngs):
    return np.array([r.generator().random(3) for r in rngs])


def test_run_ensemble_independent_of_blocking_and_workers():
    a = run_ensemble(_uniform_kernel, 37, 5, 0, block=8, workers=1)
    b = run_ensemble(_uniform_kernel, 37, 5, 0, block=5, workers=1)
    c = run_ensemble(_uniform_kernel, 37, 5, 0, block=8, workers=2)
    assert np.array_equal(a, b) and np.array_equal(a, c)
    d = run_ensemble(_uniform_kernel, 10, 5, 27, block=4)
    assert np.array_equal(a[27:], d)
