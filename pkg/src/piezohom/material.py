"""Piezoelastic material data and the 9x9 microscale constitutive matrix.

Internal unit system
--------------------
length: um, force: uN, potential: V. Derived:

* stress: uN/um^2 = MPa = N/mm^2 (numerically preserved)
* charge: uN*um/V = pC
* permittivity: pC/(V*um) = 1e-6 F/m
* piezoelectric stress coefficient e: pC/um^2 = C/m^2 (numerically preserved)
* piezoelectric strain coefficient d: um/V = 1e6 m/V

Generalized vectors use the ordering

    stress side:  (S11, S22, S33, S12, S13, S23, D1, D2, D3)
    strain side:  (E11, E22, E33, 2E12, 2E13, 2E23, Ef1, Ef2, Ef3)

with the electric field Ef = -grad(phi).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VACUUM_PERMITTIVITY = 8.854e-12  # F/m

# SI -> internal conversion factors
PERMITTIVITY_SI_TO_INTERNAL = 1.0e6  # F/m -> pC/(V um)
STRAIN_COEFF_SI_TO_INTERNAL = 1.0e6  # m/V -> um/V
STRESS_SI_TO_INTERNAL = 1.0e-6  # Pa -> MPa
PIEZO_STRESS_SI_TO_INTERNAL = 1.0  # C/m^2 -> pC/um^2

MECH = slice(0, 6)
ELEC = slice(6, 9)

# sign flip turning the constitutive matrix into the Hessian of the
# electric enthalpy H(eps, Ef) = 1/2 eps.c.eps - Ef.e.eps - 1/2 Ef.perm.Ef
ENTHALPY_SIGNS = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0])


@dataclass(frozen=True)
class PiezoMaterial:
    """Isotropic elastic, transversely piezoelectric solid poled along x3.

    Parameters are stored in internal units. Use :meth:`from_si` to build
    from SI piezoelectric and permittivity data.
    """

    lam: float
    mu: float
    d: tuple[float, float, float] = (0.0, 0.0, 0.0)
    perm: tuple[float, float, float] = (1.0, 1.0, 1.0)
    eps0: float = VACUUM_PERMITTIVITY * PERMITTIVITY_SI_TO_INTERNAL

    def __post_init__(self):
        if self.mu <= 0.0:
            raise ValueError(f"shear modulus mu must be positive, got {self.mu}")
        if self.lam + 2.0 * self.mu / 3.0 <= 0.0:
            raise ValueError("bulk modulus lambda + 2 mu / 3 must be positive")
        if any(p <= 0.0 for p in self.perm):
            raise ValueError(f"permittivities must be positive, got {self.perm}")
        object.__setattr__(self, "d", tuple(float(v) for v in self.d))
        object.__setattr__(self, "perm", tuple(float(v) for v in self.perm))

    @classmethod
    def from_si(cls, lam, mu, d31, d32, d33, perm_rel=(12.0, 12.0, 12.0)):
        """Build from lambda, mu in N/mm^2, d in m/V and relative permittivities."""
        eps0 = VACUUM_PERMITTIVITY * PERMITTIVITY_SI_TO_INTERNAL
        if np.isscalar(perm_rel):
            perm_rel = (perm_rel,) * 3
        d = tuple(STRAIN_COEFF_SI_TO_INTERNAL * v for v in (d31, d32, d33))
        perm = tuple(eps0 * p for p in perm_rel)
        return cls(lam=float(lam), mu=float(mu), d=d, perm=perm, eps0=eps0)

    @property
    def young(self) -> float:
        return self.mu * (3.0 * self.lam + 2.0 * self.mu) / (self.lam + self.mu)

    @property
    def poisson(self) -> float:
        return self.lam / (2.0 * (self.lam + self.mu))

    def with_coupling(self, d) -> "PiezoMaterial":
        return PiezoMaterial(self.lam, self.mu, tuple(d), self.perm, self.eps0)


def pvdf() -> PiezoMaterial:
    """PVDF nanofiber constants used throughout the examples and tests."""
    return PiezoMaterial.from_si(
        lam=80.3, mu=58.1, d31=20e-12, d32=3e-12, d33=-35e-12, perm_rel=12.0
    )


def elasticity_matrix(lam: float, mu: float) -> np.ndarray:
    """6x6 isotropic stiffness in engineering-shear Voigt form."""
    c = np.zeros((6, 6))
    c[:3, :3] = lam
    c[np.arange(3), np.arange(3)] = lam + 2.0 * mu
    c[np.arange(3, 6), np.arange(3, 6)] = mu
    return c


def stress_piezo_from_strain_piezo(mat: PiezoMaterial) -> np.ndarray:
    """Piezoelectric stress coefficients (e31, e32, e33) = (d31, d32, d33, 0, 0, 0) . C."""
    drow = np.zeros(6)
    drow[:3] = mat.d
    return (drow @ elasticity_matrix(mat.lam, mat.mu))[:3]


@dataclass(frozen=True)
class MicroConstitutive:
    """Generalized 9x9 matrix mapping generalized strain to (stress, D)."""

    D: np.ndarray = field(repr=False)

    @property
    def c(self) -> np.ndarray:
        return self.D[MECH, MECH]

    @property
    def e(self) -> np.ndarray:
        return self.D[ELEC, MECH]

    @property
    def permittivity(self) -> np.ndarray:
        return self.D[ELEC, ELEC]

    def enthalpy_hessian(self) -> np.ndarray:
        return ENTHALPY_SIGNS[:, None] * self.D

    def __matmul__(self, strain):
        return self.D @ strain


def micro_constitutive_matrix(mat: PiezoMaterial) -> MicroConstitutive:
    D = np.zeros((9, 9))
    D[MECH, MECH] = elasticity_matrix(mat.lam, mat.mu)
    e31, e32, e33 = stress_piezo_from_strain_piezo(mat)
    D[8, :3] = (e31, e32, e33)
    D[:3, 8] = (-e31, -e32, -e33)
    D[ELEC, ELEC] = np.diag(mat.perm)
    return MicroConstitutive(D)


def generalized_symmetry_defect(D: np.ndarray) -> float:
    """max |D - J D^T J| with J = diag(+1 x6, -1 x3); zero for admissible matrices."""
    J = np.diag(ENTHALPY_SIGNS)
    return float(np.max(np.abs(D - J @ D.T @ J)))
