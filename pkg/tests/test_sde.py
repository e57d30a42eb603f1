from __future__ import annotations

import math

import numpy as np
import pytest

from wsdelay.linalg import unitarity_residual
from wsdelay.noise import RngStream, streams
from wsdelay.params import ModelParams, SdeConfig
from wsdelay.sde import (NonFiniteStateError, Trajectory, align_dx, coupled_batch, exp_functional,
                         integrate_coupled, integrate_lambda, integrate_qtilde, integrate_rider_valko,
                         integrate_stilde, lambda_batch, lyapunov_spectrum, path_functional,
                         qtilde_batch, random_split, rider_valko_batch)

QUIET = SdeConfig(dx=1e-2, noise_scale=0.0)
QUIET_FINE = SdeConfig(dx=1e-3, noise_scale=0.0)


def mean_se(x):
    x = np.asarray(x, float)
    return x.mean(), x.std(ddof=1) / math.sqrt(x.size)


def traces(q):
    return np.trace(q, axis1=-2, axis2=-1).real


def test_lambda_length_zero_is_identity():
    tr = integrate_lambda(ModelParams(3, 2), 0.0)
    assert tr.states.shape == (1, 3, 3)
    assert np.allclose(tr.final, np.eye(3))


def test_lambda_pure_drift():
    p = ModelParams(3, 1)
    tr = integrate_lambda(p, 0.7, QUIET)
    assert np.allclose(tr.final, math.exp(-p.mu * 0.7) * np.eye(3), rtol=1e-4)


def test_lambda_scalar_second_moment():
    # N = 1 (mu = 1): d log Lambda = -dx + dB, so E[Lambda^2] = e^{2(1 - mu) x} = 1.
    cfg = SdeConfig(dx=1e-2)
    lam, _ = lambda_batch(1, 1, 1.0, [0.5], cfg, streams(11, range(20_000)))
    m, se = mean_se(np.abs(lam[:, 0, 0, 0]) ** 2)
    assert abs(m - 1.0) <= 3 * se


def test_exp_functional_zero_length():
    assert np.all(exp_functional(ModelParams(2, 1), 0.0).data == 0)


def test_exp_functional_pure_drift():
    p = ModelParams(2, 2)
    L = 0.8 * p.xi
    q = exp_functional(p, L, QUIET_FINE).data
    expect = 2 * p.tau_xi * (1 - math.exp(-2 * p.mu * 0.8)) / (2 * p.mu)
    assert np.allclose(q, expect * np.eye(2), rtol=1e-4)


def test_qtilde_pure_drift_matches_functional():
    p = ModelParams(2, 1)
    a = integrate_qtilde(p, 0.8 * p.xi, QUIET_FINE).data
    b = exp_functional(p, 0.8 * p.xi, QUIET_FINE).data
    assert np.allclose(a, b, rtol=1e-4)


def test_qtilde_zero_length():
    assert np.all(integrate_qtilde(ModelParams(3, 2), 0.0).data == 0)


def test_qtilde_clean_limit_is_flight_time():
    p = ModelParams(2, 1)
    L = 1e-7 * p.xi
    q = integrate_qtilde(p, L, SdeConfig(dx=1e-8), RngStream(0, 1)).data
    expect = 2 * L / p.v * np.eye(2)
    assert np.linalg.norm(q - expect) <= 2e-3 * np.linalg.norm(expect)


def test_qtilde_mean_trace():
    p = ModelParams(2, 1)
    q = qtilde_batch(2, 1, [1.0], SdeConfig(dx=2e-3), streams(3, range(3000)))[:, 0]
    m, se = mean_se(traces(q) * p.tau_xi)
    assert abs(m - p.N * p.xi / p.k) <= 3 * se


@pytest.mark.parametrize("method", ["direct", "functional", "coupled", "rider-valko"])
def test_qtilde_positive_semidefinite(method):
    q = qtilde_batch(3, 2, [0.5, 1.5], SdeConfig(dx=5e-3), streams(1, range(64)), method)
    w = np.linalg.eigvalsh(q)
    assert np.all(w[..., 0] >= -1e-9 * traces(q))


def test_schemes_agree_in_law():
    cfg_h = SdeConfig(dx=2e-3)
    ids = range(4000)
    a = traces(qtilde_batch(2, 1, [0.5], cfg_h, streams(4, ids))[:, 0])
    b = traces(qtilde_batch(2, 1, [0.5], SdeConfig(dx=2e-3, scheme="ito-euler"), streams(5, ids))[:, 0])
    c = traces(qtilde_batch(2, 1, [0.5], SdeConfig(dx=2e-3, scheme="stratonovich-exp"), streams(6, ids))[:, 0])
    for f in (lambda t: t, lambda t: t * t):
        ma, sa = mean_se(f(a))
        for other in (b, c):
            mb, sb = mean_se(f(other))
            assert abs(ma - mb) <= 3 * math.hypot(sa, sb)


def test_step_halving():
    ids = range(3000)
    a = traces(qtilde_batch(2, 2, [0.5], SdeConfig(dx=4e-3), streams(8, ids))[:, 0])
    b = traces(qtilde_batch(2, 2, [0.5], SdeConfig(dx=2e-3), streams(8, ids))[:, 0])
    # Same streams drive both resolutions only approximately, so compare with the full error.
    (ma, sa), (mb, sb) = mean_se(a), mean_se(b)
    assert abs(ma - mb) <= math.hypot(sa, sb) * 3


def test_stilde_constant_without_noise():
    s = integrate_stilde(ModelParams(2, 2), ModelParams(2, 2).xi, QUIET).data
    assert np.allclose(s, -np.eye(2))


@pytest.mark.parametrize("beta", [1, 2])
def test_stilde_unitary_and_symmetric(beta):
    p = ModelParams(3, beta)
    s = integrate_stilde(p, 2 * p.xi, SdeConfig(dx=1e-3), RngStream(2, 0)).data
    assert unitarity_residual(s) <= 1e-8
    if beta == 1:
        assert np.linalg.norm(s - s.T) <= 1e-8


def test_coupled_initial_state():
    st = integrate_coupled(ModelParams(2, 1), 0.0)
    assert np.allclose(st.u_left.data, 1j * np.eye(2)) and np.allclose(st.u_right.data, 1j * np.eye(2))
    assert np.allclose(st.u_left.data @ st.u_right.data, -np.eye(2))
    assert np.all(st.q_tilde.data == 0)


@pytest.mark.parametrize("beta", [1, 2])
def test_coupled_invariants(beta):
    p = ModelParams(3, beta)
    st = integrate_coupled(p, p.xi, SdeConfig(dx=1e-3), RngStream(9, 0))
    assert unitarity_residual(st.u_left.data) <= 1e-8
    assert unitarity_residual(st.u_right.data) <= 1e-8
    assert st.diagnostics.max_unitarity <= 1e-8
    if beta == 1:
        assert np.linalg.norm(st.u_right.data - st.u_left.data.T) <= 1e-8
        assert st.diagnostics.max_transpose <= 1e-8
    assert np.linalg.eigvalsh(st.q_tilde.data)[0] >= -1e-9 * np.trace(st.q_tilde.data).real


def test_coupled_law_insensitive_to_split():
    ids = range(1500)
    cfg = SdeConfig(dx=5e-3)
    a = traces(coupled_batch(2, 1, [0.5], cfg, streams(10, ids))[2][:, 0])
    split = random_split(2, 1, np.random.default_rng(3))
    b = traces(coupled_batch(2, 1, [0.5], cfg, streams(11, ids), split)[2][:, 0])
    for f in (lambda t: t, lambda t: t * t):
        (ma, sa), (mb, sb) = mean_se(f(a)), mean_se(f(b))
        assert abs(ma - mb) <= 3 * math.hypot(sa, sb)


def test_rider_valko_pure_drift():
    tr = integrate_rider_valko(2.0, 2, 2, 0.5, QUIET)
    assert np.allclose(tr.final, math.exp(-1.0) * np.eye(2), rtol=1e-4)


def test_rider_valko_scalar_second_moment():
    # N = 1, beta = 1: E[M^2] = e^{2(1 - mu) x}; with mu = 1.5 at x = 0.5 this is e^{-0.5}.
    cfg = SdeConfig(dx=1e-2)
    m, _ = rider_valko_batch(1, 1, 1.5, [0.5], cfg, streams(12, range(20_000)))
    mean, se = mean_se(np.abs(m[:, 0, 0, 0]) ** 2)
    assert abs(mean - math.exp(-0.5)) <= 3 * se


def test_path_functional_of_pure_drift():
    tr = integrate_rider_valko(1.0, 1, 1, 1.0, QUIET)
    assert path_functional(tr).data[0, 0].real == pytest.approx((1 - math.exp(-2)) / 2, rel=1e-4)


def test_trajectory_grid_must_be_uniform():
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0, 0.1, 0.3]), np.zeros((3, 1, 1)), "x")


def test_align_dx_puts_checkpoints_on_grid():
    cfg = align_dx(SdeConfig(dx=1e-3), [1 / 32, 0.3])
    assert cfg.dx <= 1e-3
    for x in (1 / 32, 0.3):
        assert abs(x / cfg.dx - round(x / cfg.dx)) < 1e-9


def test_lyapunov_drift_only_scalar():
    est = lyapunov_spectrum(ModelParams(1, 1), 50.0, QUIET, RngStream(0, 0), n_paths=2)
    assert est.exponents[0] == pytest.approx(-1.0, abs=1e-12)


def test_lyapunov_noise_only_beta1_n3():
    p = ModelParams(3, 1)
    est = lyapunov_spectrum(p, 200.0, SdeConfig(dx=5e-3), RngStream(1, 0), n_paths=8,
                            include_drift=False)
    expected = est.expected(3, 1, 0.0)
    assert np.allclose(expected, [1, 0, -1])
    assert np.all(np.diff(est.exponents) <= 0)
    assert np.all(np.abs(est.exponents - expected) <= 3 * est.stderr + 0.01)


def test_lyapunov_rejects_ito():
    with pytest.raises(ValueError):
        lyapunov_spectrum(ModelParams(2, 1), 50.0, SdeConfig(scheme="ito-euler"))


def test_negative_length_rejected():
    with pytest.raises(ValueError):
        integrate_qtilde(ModelParams(2, 1), -1.0)


def test_non_finite_state_error_is_floating_point_error():
    assert issubclass(NonFiniteStateError, FloatingPointError)
