from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from wsdelay.linalg import (HermitianMatrix, MatrixError, OverflowMatrixError, SymmetryClass,
                            UnitaryMatrix, dagger, eigvals_hermitian, expm_hermitian, mat_exp,
                            unitarity_residual, unitarize, unitary_step)


def random_hermitian(gen, n):
    a = gen.standard_normal((n, n)) + 1j * gen.standard_normal((n, n))
    return 0.5 * (a + a.conj().T)


def random_unitary(gen, n):
    q, r = np.linalg.qr(gen.standard_normal((n, n)) + 1j * gen.standard_normal((n, n)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


def test_identity_eigenvalues():
    assert np.allclose(eigvals_hermitian(HermitianMatrix(np.eye(3))), [1, 1, 1])


def test_diagonal_eigenvalues_ascending():
    assert np.allclose(eigvals_hermitian(HermitianMatrix(np.diag([2.0, -1.0]))), [-1, 2])


def test_eigenvalue_sum_equals_trace(gen):
    h = HermitianMatrix(random_hermitian(gen, 6))
    w = eigvals_hermitian(h)
    tr = np.trace(h.data).real
    assert abs(w.sum() - tr) <= 1e-12 * max(1.0, abs(tr)) * 10


def test_eigen_reconstruction(gen):
    h = HermitianMatrix(random_hermitian(gen, 5))
    w, v = eigvals_hermitian(h, return_vectors=True)
    res = np.linalg.norm(h.data - v @ np.diag(w) @ dagger(v))
    assert res <= 1e-10 * np.linalg.norm(h.data)


def test_non_finite_rejected():
    with pytest.raises(MatrixError):
        HermitianMatrix(np.array([[np.nan, 0], [0, 1.0]]))
    with pytest.raises(MatrixError):
        eigvals_hermitian(np.array([[np.inf, 0], [0, 1.0]]))


def test_hermitian_resymmetrized():
    h = HermitianMatrix(np.array([[1.0, 2.0], [0.0, 1.0]]))
    assert np.allclose(h.data, [[1, 1], [1, 1]])
    assert HermitianMatrix.real_symmetric([[1.0, 3.0], [1.0, 2.0]]).is_real


def test_mat_exp_zero_is_exact_identity():
    assert np.array_equal(mat_exp(np.zeros((3, 3))).data, np.eye(3))


def test_mat_exp_diagonal():
    assert np.allclose(mat_exp(np.diag([0.5, -2.0])).data, np.diag(np.exp([0.5, -2.0])))


def test_mat_exp_nilpotent():
    assert np.allclose(mat_exp(np.array([[0.0, 1.0], [0.0, 0.0]])).data, [[1, 1], [0, 1]], atol=1e-15)


def test_mat_exp_overflow_reports_norm():
    with pytest.raises(OverflowMatrixError) as err:
        mat_exp(np.diag([1000.0, 0.0]))
    assert err.value.norm == pytest.approx(1000.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**32 - 1), st.floats(0.0, 5.0))
def test_mat_exp_inverse_property(n, seed, norm):
    gen = np.random.default_rng(seed)
    m = gen.standard_normal((n, n)) + 1j * gen.standard_normal((n, n))
    m *= norm / max(np.linalg.norm(m, 2), 1e-300)
    prod = mat_exp(m).data @ mat_exp(-m).data
    assert np.linalg.norm(prod - np.eye(n)) <= 1e-10


def test_expm_hermitian_matches_scipy(gen):
    h = random_hermitian(gen, 4)
    assert np.allclose(expm_hermitian(h), expm(h), atol=1e-12)
    assert np.allclose(expm_hermitian(h, -1j), expm(-1j * h), atol=1e-12)


def test_unitary_step_is_unitary_and_close_to_exponential(gen):
    h = 1e-2 * random_hermitian(gen, 3)
    u = unitary_step(h)
    assert unitarity_residual(u) < 1e-14
    assert np.linalg.norm(u - expm(-1j * h)) < 1e-9


def test_unitarize_fixed_point(gen):
    u = random_unitary(gen, 4)
    assert np.linalg.norm(unitarize(u).data - u) <= 1e-12


def test_unitarize_positive_diagonal():
    assert np.allclose(unitarize(np.diag([2.0, 3.0])).data, np.eye(2), atol=1e-14)


def test_unitarize_scale_invariance(gen):
    u = random_unitary(gen, 3)
    assert np.linalg.norm(unitarize(7.5 * u).data - u) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_unitarize_idempotent(n, seed):
    gen = np.random.default_rng(seed)
    m = gen.standard_normal((n, n)) + 1j * gen.standard_normal((n, n)) + 3 * np.eye(n)
    u = unitarize(m)
    assert unitarity_residual(u.data) <= 1e-12
    assert np.linalg.norm(unitarize(u).data - u.data) <= 1e-12


def test_unitarize_singular_rejected():
    with pytest.raises(MatrixError):
        unitarize(np.array([[1.0, 1.0], [1.0, 1.0]]))


def test_unitary_wrapper_rejects_non_unitary():
    with pytest.raises(MatrixError):
        UnitaryMatrix(np.diag([1.0, 2.0]))


def test_symmetry_class_values():
    assert SymmetryClass(1).beta == 1
    with pytest.raises(ValueError):
        SymmetryClass(4)
