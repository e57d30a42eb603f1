from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from wsdelay.noise import (NoiseSpec, RngStream, box_muller, correlator, draw_increments,
                           sample_increment, sandwich_check, verify_correlator)

N_DRAWS = 200_000


def _within(emp_samples, expected, k=4.0):
    m = emp_samples.mean()
    se = emp_samples.std(ddof=1) / np.sqrt(emp_samples.size)
    return abs(m - expected) <= k * se + 1e-15


def test_stream_reproducible_and_distinct():
    a = RngStream(7, 3).generator().random(5)
    b = RngStream(7, 3).generator().random(5)
    c = RngStream(7, 4).generator().random(5)
    d = RngStream(8, 3).generator().random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)
    assert RngStream(7, 3).child(2) == RngStream(7, 5)


def test_stream_rejects_negative_ids():
    with pytest.raises(ValueError):
        RngStream(-1, 0)


def test_box_muller_is_standard_normal():
    z = box_muller(np.random.default_rng(1).random((50_000, 2)))
    assert stats.kstest(z.ravel(), "norm").pvalue > 0.001


def test_increments_bitwise_reproducible():
    spec = NoiseSpec(3, 2, 1e-3)
    a = sample_increment(spec, RngStream(5, 11)).data
    b = sample_increment(spec, RngStream(5, 11)).data
    assert np.array_equal(a, b)


@pytest.mark.parametrize("beta", [1, 2])
def test_increments_exactly_hermitian(beta):
    db = draw_increments(NoiseSpec(4, beta, 1e-3), RngStream(0, 0).generator(), 1000)
    assert np.array_equal(db, np.conj(np.swapaxes(db, -1, -2)))
    if beta == 1:
        assert np.all(db.imag == 0)


def test_beta1_scalar_variance_is_dx():
    dx = 1e-3
    db = draw_increments(NoiseSpec(1, 1, dx), RngStream(1, 0).generator(), N_DRAWS)
    assert _within(db[:, 0, 0].real ** 2, dx)


def test_beta2_offdiagonal_complex():
    dx = 1e-3
    db = draw_increments(NoiseSpec(2, 2, dx), RngStream(2, 0).generator(), N_DRAWS)
    b12 = db[:, 0, 1]
    assert _within(np.abs(b12) ** 2, dx)
    assert _within((b12 ** 2).real, 0.0) and _within((b12 ** 2).imag, 0.0)


def test_beta1_variances():
    dx = 1e-3
    db = draw_increments(NoiseSpec(2, 1, dx), RngStream(3, 0).generator(), N_DRAWS).real
    assert _within(db[:, 0, 1] ** 2, dx / 2)
    assert _within(db[:, 0, 0] ** 2, dx)


def test_correlator_tensor_entries():
    c1, c2 = correlator(2, 1), correlator(2, 2)
    assert c1[0, 1, 0, 1] == 0.5 and c1[0, 1, 1, 0] == 0.5 and c1[0, 0, 0, 0] == 1.0
    assert c2[0, 1, 0, 1] == 1.0 and c2[0, 1, 1, 0] == 0.0
    assert c1[0, 0, 1, 1] == 0.0


@pytest.mark.parametrize("n,beta", [(2, 2), (2, 1), (3, 1)])
def test_verify_correlator(n, beta):
    rep = verify_correlator(NoiseSpec(n, beta, 1e-3), 100_000, RngStream(4, 0))
    assert rep.ok and rep.max_z <= 4.0
    for a in range(n):
        assert abs(rep.empirical[a, a, a, a].real - 1.0) <= 4 * rep.stderr_re[a, a, a, a]
    if n >= 2:
        assert abs(rep.empirical[0, 1, 0, 1].real - rep.expected[0, 1, 0, 1].real) <= 4 * rep.stderr_re[0, 1, 0, 1]
        assert abs(rep.empirical[0, 0, 1, 1].real) <= 4 * rep.stderr_re[0, 0, 1, 1]


def test_verify_correlator_minimum_sample():
    with pytest.raises(ValueError):
        verify_correlator(NoiseSpec(2, 1, 1e-3), 100, RngStream(0, 0))


def test_correlator_rows_cover_all_quadruples():
    rep = verify_correlator(NoiseSpec(2, 1, 1e-3), 10_000, RngStream(0, 0))
    assert len(list(rep.rows())) == 16


@pytest.mark.parametrize("n,beta", [(2, 1), (3, 2)])
def test_sandwich_identity_gives_mu(n, beta):
    spec = NoiseSpec(n, beta, 1e-3)
    rep = sandwich_check(spec, np.eye(n), 100_000, RngStream(6, 0))
    assert np.allclose(rep.expected, spec.mu * np.eye(n))
    assert rep.max_z <= 4.5


def test_sandwich_beta2_is_trace(gen):
    o = gen.standard_normal((3, 3)) + 1j * gen.standard_normal((3, 3))
    rep = sandwich_check(NoiseSpec(3, 2, 1e-3), o, 100_000, RngStream(7, 0))
    assert np.allclose(rep.expected, np.trace(o) * np.eye(3))
    assert rep.max_z <= 4.5


def test_sandwich_zero():
    rep = sandwich_check(NoiseSpec(2, 1, 1e-3), np.zeros((2, 2)), 10_000, RngStream(8, 0))
    assert np.all(rep.empirical == 0) and rep.max_z == 0.0


def test_gaussian_fourth_moment():
    dx = 1.0
    x = draw_increments(NoiseSpec(1, 1, dx), RngStream(9, 0).generator(), 1_000_000)[:, 0, 0].real
    m2 = np.mean(x ** 2)
    y = x ** 4 - 3 * m2 ** 2
    assert abs(y.mean()) <= 5 * y.std(ddof=1) / np.sqrt(y.size)


def test_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(0, 1, 1e-3)
    with pytest.raises(ValueError):
        NoiseSpec(2, 1, 0.0)
    with pytest.raises(ValueError):
        NoiseSpec(2, 3, 1e-3)
