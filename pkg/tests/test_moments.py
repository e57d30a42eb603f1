from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wsdelay.moments import (expm1mx, integrate_moment_ode, log_slope, mc_moments, mean_trace,
                             moment_matrix, moment_ode_spectrum, proper_time_stats,
                             reference_moments, second_moments)
from wsdelay.params import ModelParams, SdeConfig

LATTICE = [(n, b, x) for n in (1, 2, 4) for b in (1, 2) for x in (0.1, 0.5, 1.0, 2.0)]


def test_mean_trace_zero_length():
    assert mean_trace(ModelParams(3, 1), 0.0) == 0.0


def test_mean_trace_single_channel_at_xi():
    p = ModelParams(1, 2)
    assert mean_trace(p, p.xi) == pytest.approx(2 * p.tau_xi)


def test_mean_trace_linear_in_n_and_beta_free():
    base = mean_trace(ModelParams(1, 1), 100.0)
    for n in (2, 5):
        for b in (1, 2):
            assert mean_trace(ModelParams(n, b), 100.0) == pytest.approx(n * base)


def test_single_channel_second_moments():
    p = ModelParams(1, 1)
    for x in (0.2, 1.0, 2.5):
        sq, tr = second_moments(p, x * p.xi)
        exact = 0.5 * p.tau_xi ** 2 * (math.exp(4 * x) - 1 - 4 * x)
        assert sq == pytest.approx(exact, rel=1e-12)
        assert abs(sq - tr) <= 1e-12 * sq


def test_second_moments_zero_length():
    assert second_moments(ModelParams(3, 2), 0.0) == (0.0, 0.0)


def test_difference_is_pair_correlation():
    for n, b, x in LATTICE:
        p = ModelParams(n, b)
        sq, tr = second_moments(p, x * p.xi)
        diff = p.tau_xi ** 2 * n * (n - 1) * (4 / b) * (x + math.expm1(-2 * b * x) / (2 * b))
        assert sq - tr == pytest.approx(diff, rel=1e-10, abs=1e-12 * sq)


def test_difference_spot_value():
    # N=2, beta=2, L=xi: 2 * 2 * [1 + (e^{-4} - 1)/4] = 3 + e^{-4}.
    p = ModelParams(2, 2)
    sq, tr = second_moments(p, p.xi)
    assert (sq - tr) / p.tau_xi ** 2 == pytest.approx(3.018315638888734, rel=1e-12)


def test_series_branch_is_continuous():
    for y in (-1e-3, -9.99e-4, 9.99e-4, 1e-3, 1e-8):
        assert expm1mx(y) == pytest.approx(math.expm1(y) - y if abs(y) > 1e-6 else y * y / 2, rel=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.sampled_from([1, 2]), st.floats(0.0, 4.0))
def test_sq_tr_dominates_tr_sq(n, b, x):
    p = ModelParams(n, b)
    sq, tr = second_moments(p, x * p.xi)
    assert sq >= tr * (1 - 1e-12) - 1e-300
    if n == 1:
        assert abs(sq - tr) <= 1e-12 * max(sq, 1e-300)


def test_proper_time_stats():
    p = ModelParams(3, 2)
    s = proper_time_stats(p, p.xi)
    assert s.mean == pytest.approx(2 * p.tau_xi)
    assert proper_time_stats(p, 0.0).pair == 0.0
    far = proper_time_stats(p, 60 * p.xi)
    assert far.cov / far.cov_large_L == pytest.approx(1.0, rel=0.02)
    assert far.second / far.second_large_L_leading == pytest.approx(1.0, rel=1e-6)
    with pytest.raises(ValueError):
        proper_time_stats(ModelParams(1, 1), p.xi)


def test_moment_matrix_spectrum():
    for b in (1, 2):
        spec = moment_ode_spectrum(b)
        assert np.allclose(spec.eigenvalues, [1.0, -b / 2])
        assert np.allclose(spec.proj_plus + spec.proj_minus, np.eye(2))
        assert np.allclose(spec.proj_plus @ spec.proj_plus, spec.proj_plus)
    assert np.array_equal(moment_matrix(2), [[0, 1], [1, 0]])


def test_ode_matches_closed_form_spot():
    p = ModelParams(4, 1)
    ode = integrate_moment_ode(p, 2 * p.xi)
    closed = second_moments(p, 2 * p.xi)
    assert ode == pytest.approx(closed, rel=1e-8)


@pytest.mark.parametrize("n,b,x", LATTICE)
def test_ode_lattice(n, b, x):
    closed, ode = reference_moments(n, b, x)
    for q in ("sq_tr", "tr_sq"):
        assert abs(ode[q] - closed[q]) <= 1e-8 * abs(closed[q])


def test_mc_moments_report():
    p = ModelParams(2, 1)
    rep = mc_moments(p, 0.5 * p.xi, 2000, SdeConfig(dx=5e-3), master_seed=3)
    assert rep.z_scores()["mean_tr"] <= 3
    assert rep.n_traj == 2000 and set(rep.closed) == {"mean_tr", "sq_tr", "tr_sq", "pair"}
    head = rep.to_csv().splitlines()[0]
    assert head == "N,beta,L_over_xi,quantity,closed,ode,mc,stderr"
    assert json.loads(rep.to_json())["N"] == 2
    with pytest.raises(ValueError):
        mc_moments(p, p.xi, 10)


def test_log_slope_diagnostic():
    x = np.array([3.0, 4.0, 5.0])
    assert np.allclose(log_slope(x, np.exp(4 * x)), 4.0)
