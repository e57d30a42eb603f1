"""Physical configuration of the disordered wire and integrator settings."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

from .linalg import SymmetryClass, as_symmetry

SCHEMES = ("stratonovich-heun", "ito-euler", "stratonovich-exp")


class WeakDisorderWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ModelParams:
    """Channel count, symmetry class, wave number k and disorder strength sigma.

    Derived scales are properties, so they can never go stale:
    ``xi = 8 k^2 / sigma``, ``v = 2k``, ``tau_xi = xi / v`` and
    ``ell_e = xi / (4 mu)``.
    """

    n_channels: int
    beta: SymmetryClass | int
    k: float = 1.0
    sigma: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "beta", as_symmetry(self.beta))
        if int(self.n_channels) < 1:
            raise ValueError("n_channels must be >= 1")
        if not (self.k > 0 and self.sigma > 0):
            raise ValueError("k and sigma must be positive")
        if self.sigma / self.k ** 3 > 1e-2:
            warnings.warn(
                f"sigma/k^3 = {self.sigma / self.k ** 3:.3g} is outside the weak-disorder regime",
                WeakDisorderWarning,
                stacklevel=3,
            )

    @property
    def N(self) -> int:
        return int(self.n_channels)

    @property
    def b(self) -> int:
        return self.beta.beta

    @property
    def mu(self) -> float:
        return 1.0 + 0.5 * self.b * (self.N - 1)

    @property
    def xi(self) -> float:
        return 8.0 * self.k ** 2 / self.sigma

    @property
    def v(self) -> float:
        return 2.0 * self.k

    @property
    def tau_xi(self) -> float:
        return self.xi / self.v

    @property
    def ell_e(self) -> float:
        return self.xi / (4.0 * self.mu)

    @property
    def energy(self) -> float:
        return self.k ** 2

    def as_dict(self) -> dict:
        return {"n_channels": self.N, "beta": self.b, "k": self.k, "sigma": self.sigma}


@dataclass(frozen=True)
class SdeConfig:
    """Step (in units of xi), scheme and re-unitarization cadence.

    ``noise_scale`` multiplies every increment; 0 switches the noise off
    (deterministic test hook).
    """

    dx: float = 1e-3
    scheme: str = "stratonovich-heun"
    renorm_every: int = 100
    noise_scale: float = 1.0
    batch: int = 512

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if not self.dx > 0:
            raise ValueError("dx must be positive")
        if self.renorm_every < 1:
            raise ValueError("renorm_every must be >= 1")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")

    def n_steps(self, length: float) -> int:
        if length < 0:
            raise ValueError("length must be non-negative")
        return int(math.ceil(length / self.dx - 1e-9))
