"""Small dense complex matrices and the linear algebra the simulators share.

The wrapper types are thin immutable views over a numpy array.  Integrators
work on raw ``(..., N, N)`` stacks for speed and only wrap at the public
surface.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

MAX_DIM = 256


class MatrixError(ValueError):
    pass


class OverflowMatrixError(MatrixError):
    def __init__(self, norm: float):
        super().__init__(f"matrix exponential overflow (input norm {norm:.3e})")
        self.norm = norm


def _checked(a, name="matrix") -> np.ndarray:
    arr = np.array(a, dtype=complex)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise MatrixError(f"{name} must be square, got shape {arr.shape}")
    if not 1 <= arr.shape[0] <= MAX_DIM:
        raise MatrixError(f"{name} dimension {arr.shape[0]} outside [1, {MAX_DIM}]")
    if not np.all(np.isfinite(arr)):
        raise MatrixError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ComplexMatrix:
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _checked(self.data, type(self).__name__))

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __matmul__(self, other):
        return ComplexMatrix(self.data @ np.asarray(other))

    @property
    def H(self) -> np.ndarray:
        return self.data.conj().T


class HermitianMatrix(ComplexMatrix):
    """Hermitian matrix; input is re-symmetrized as (M + M^dagger)/2."""

    def __post_init__(self):
        arr = np.array(self.data, dtype=complex)
        if arr.ndim == 2 and arr.shape[0] == arr.shape[1]:
            arr = 0.5 * (arr + arr.conj().T)
        object.__setattr__(self, "data", _checked(arr, "HermitianMatrix"))

    @classmethod
    def real_symmetric(cls, a) -> "HermitianMatrix":
        arr = np.asarray(a)
        return cls(np.real(0.5 * (arr + arr.T)).astype(complex))

    @property
    def is_real(self) -> bool:
        return bool(np.all(self.data.imag == 0.0))


class UnitaryMatrix(ComplexMatrix):
    TOL = 1e-10

    def __post_init__(self):
        super().__post_init__()
        if unitarity_residual(self.data) > self.TOL:
            raise MatrixError(
                f"not unitary: residual {unitarity_residual(self.data):.2e}"
            )


@dataclass(frozen=True)
class SymmetryClass:
    beta: int

    def __post_init__(self):
        if self.beta not in (1, 2):
            raise ValueError(f"beta must be 1 or 2, got {self.beta!r}")


def as_symmetry(beta) -> SymmetryClass:
    return beta if isinstance(beta, SymmetryClass) else SymmetryClass(int(beta))


def unitarity_residual(u) -> float:
    u = np.asarray(u)
    eye = np.eye(u.shape[-1])
    return float(np.max(np.linalg.norm(dagger(u) @ u - eye, axis=(-2, -1))))


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def hermitize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + dagger(a))


def eigvals_hermitian(h, return_vectors: bool = False):
    """Ascending eigenvalues of a Hermitian matrix.

    With ``return_vectors`` the unitary eigenvector matrix ``V`` is returned
    as well, so that ``H = V diag(w) V^dagger``.
    """
    arr = h.data if isinstance(h, ComplexMatrix) else np.asarray(h, complex)
    if not np.all(np.isfinite(arr)):
        raise MatrixError("non-finite input to eigvals_hermitian")
    arr = hermitize(arr)
    if return_vectors:
        w, v = np.linalg.eigh(arr)
        return w, v
    return np.linalg.eigvalsh(arr)


def mat_exp(m) -> ComplexMatrix:
    arr = m.data if isinstance(m, ComplexMatrix) else _checked(m)
    if not np.any(arr):
        return ComplexMatrix(np.eye(arr.shape[0], dtype=complex))
    norm = float(np.linalg.norm(arr, 1))
    # Pade scaling-and-squaring (Al-Mohy & Higham) inside scipy.
    with np.errstate(over="raise", invalid="raise"):
        try:
            out = sla.expm(arr)
        except FloatingPointError as exc:
            raise OverflowMatrixError(norm) from exc
    if not np.all(np.isfinite(out)):
        raise OverflowMatrixError(norm)
    return ComplexMatrix(out)


def expm_hermitian(h: np.ndarray, scale: complex = 1.0) -> np.ndarray:
    """exp(scale * H) for a stack of Hermitian matrices via eigendecomposition."""
    w, v = np.linalg.eigh(h)
    return (v * np.exp(scale * w)[..., None, :]) @ dagger(v)


def unitary_step(h: np.ndarray) -> np.ndarray:
    """exp(-iH) for a stack of small Hermitian H by the (2,2) Pade approximant.

    The approximant is exactly unitary for Hermitian input and differs from
    the exponential by O(|H|^5), far below the SDE step error.
    """
    eye = np.eye(h.shape[-1])
    h2 = h @ h / 12.0
    return np.linalg.solve(eye + 0.5j * h - h2, eye - 0.5j * h - h2)


def polar_unitary(m: np.ndarray) -> np.ndarray:
    """Unitary polar factor of a stack of nonsingular matrices."""
    u, s, vh = np.linalg.svd(m)
    return u @ vh


def unitarize(m) -> UnitaryMatrix:
    arr = m.data if isinstance(m, ComplexMatrix) else _checked(m)
    s = np.linalg.svd(arr, compute_uv=False)
    if s[-1] <= np.finfo(float).eps * max(s[0], 1.0) * arr.shape[0]:
        raise MatrixError("cannot unitarize a singular matrix")
    return UnitaryMatrix(polar_unitary(arr))
