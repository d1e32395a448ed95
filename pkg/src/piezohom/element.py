"""Trilinear 8-node brick with three displacements and one potential per node.

Element DOFs are node-major: ``(u1, u2, u3, phi)`` for each of the 8 nodes,
32 in total. The element functional is the electric enthalpy

    Pi_e = int H(eps, Ef) dV,   H = 1/2 g . (J D) . g

with ``g`` the generalized strain and ``J = diag(1 x6, -1 x3)``. Its gradient
is the element residual and its Hessian the (symmetric, indefinite) tangent.
Everything here is vectorized over a leading element axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .material import ENTHALPY_SIGNS, PiezoMaterial, micro_constitutive_matrix

NODE_XI = np.array(
    [
        [-1, -1, -1],
        [1, -1, -1],
        [1, 1, -1],
        [-1, 1, -1],
        [-1, -1, 1],
        [1, -1, 1],
        [1, 1, 1],
        [-1, 1, 1],
    ],
    dtype=float,
)

_G = 1.0 / np.sqrt(3.0)
GAUSS_POINTS = np.array([[a, b, c] for c in (-_G, _G) for b in (-_G, _G) for a in (-_G, _G)])
GAUSS_WEIGHTS = np.ones(8)

U_DOFS = np.array([4 * a + i for a in range(8) for i in range(3)])
PHI_DOFS = np.array([4 * a + 3 for a in range(8)])


class SingularJacobianError(ValueError):
    def __init__(self, element, detj):
        self.element = element
        self.detj = detj
        super().__init__(f"non-positive Jacobian {detj:.3e} in element {element}")


def shape_eval(xi):
    """Values (8,) and parametric gradients (8, 3) of the trilinear functions."""
    xi = np.asarray(xi, dtype=float)
    f = 1.0 + NODE_XI * xi  # (8, 3)
    N = 0.125 * f[:, 0] * f[:, 1] * f[:, 2]
    dN = np.empty((8, 3))
    dN[:, 0] = 0.125 * NODE_XI[:, 0] * f[:, 1] * f[:, 2]
    dN[:, 1] = 0.125 * NODE_XI[:, 1] * f[:, 0] * f[:, 2]
    dN[:, 2] = 0.125 * NODE_XI[:, 2] * f[:, 0] * f[:, 1]
    return N, dN


_SHAPE_GP = [shape_eval(x) for x in GAUSS_POINTS]
N_GP = np.array([s[0] for s in _SHAPE_GP])  # (8 gp, 8 nodes)
DN_GP = np.array([s[1] for s in _SHAPE_GP])  # (8 gp, 8 nodes, 3)


def _physical_gradients(coords, dN, element_ids=None):
    """coords (ne, 8, 3), dN (ngp, 8, 3) -> grads (ne, ngp, 8, 3), detJ (ne, ngp)."""
    jac = np.einsum("gai,eaj->egij", dN, coords)  # dx_j/dxi_i
    detj = np.linalg.det(jac)
    bad = detj <= 0.0
    if np.any(bad):
        e, g = np.argwhere(bad)[0]
        eid = e if element_ids is None else element_ids[e]
        raise SingularJacobianError(int(eid), float(detj[e, g]))
    grads = np.einsum("egij,gaj->egai", np.linalg.inv(jac), dN)
    return grads, detj


def b_matrix(grads):
    """Generalized strain-displacement operator, (..., 8, 3) -> (..., 9, 32)."""
    shape = grads.shape[:-2]
    B = np.zeros(shape + (9, 32))
    gx, gy, gz = grads[..., 0], grads[..., 1], grads[..., 2]
    ux = np.arange(8) * 4
    uy, uz, ph = ux + 1, ux + 2, ux + 3
    B[..., 0, ux] = gx
    B[..., 1, uy] = gy
    B[..., 2, uz] = gz
    B[..., 3, ux] = gy
    B[..., 3, uy] = gx
    B[..., 4, ux] = gz
    B[..., 4, uz] = gx
    B[..., 5, uy] = gz
    B[..., 5, uz] = gy
    B[..., 6, ph] = -gx
    B[..., 7, ph] = -gy
    B[..., 8, ph] = -gz
    return B


def gauss_operators(coords, element_ids=None):
    """B matrices (ne, 8, 9, 32) and quadrature weights detJ*w (ne, 8)."""
    coords = np.asarray(coords, dtype=float)
    single = coords.ndim == 2
    if single:
        coords = coords[None]
    grads, detj = _physical_gradients(coords, DN_GP, element_ids)
    B = b_matrix(grads)
    dv = detj * GAUSS_WEIGHTS
    if single:
        return B[0], dv[0]
    return B, dv


@dataclass
class ElementState:
    coords: np.ndarray  # (8, 3)
    u_e: np.ndarray  # (8, 3)
    phi_e: np.ndarray  # (8,)

    @property
    def dofs(self) -> np.ndarray:
        return np.hstack([self.u_e, self.phi_e[:, None]]).ravel()

    @classmethod
    def zero(cls, coords):
        coords = np.asarray(coords, dtype=float)
        return cls(coords, np.zeros((8, 3)), np.zeros(8))


def element_strain(state: ElementState, xi) -> np.ndarray:
    """Generalized strain (eps11, eps22, eps33, 2eps12, 2eps13, 2eps23, Ef1, Ef2, Ef3) at xi."""
    _, dN = shape_eval(xi)
    grads, _ = _physical_gradients(np.asarray(state.coords)[None], dN[None])
    B = b_matrix(grads)[0, 0]
    return B @ state.dofs


@dataclass
class ElementResult:
    energy: float
    R: np.ndarray  # (32,)
    K: np.ndarray  # (32, 32)

    @property
    def R_u(self):
        return self.R[U_DOFS]

    @property
    def R_phi(self):
        return self.R[PHI_DOFS]

    @property
    def K_uu(self):
        return self.K[np.ix_(U_DOFS, U_DOFS)]

    @property
    def K_uphi(self):
        return self.K[np.ix_(U_DOFS, PHI_DOFS)]

    @property
    def K_phiu(self):
        return self.K[np.ix_(PHI_DOFS, U_DOFS)]

    @property
    def K_phiphi(self):
        return self.K[np.ix_(PHI_DOFS, PHI_DOFS)]


def element_stiffness(coords, D, element_ids=None):
    """Tangent matrices (ne, 32, 32) for constitutive matrix D (9x9)."""
    B, dv = gauss_operators(coords, element_ids)
    H = ENTHALPY_SIGNS[:, None] * D
    HB = np.matmul(H, B) * dv[..., None, None]
    return np.matmul(np.swapaxes(B, -1, -2), HB).sum(axis=-3)


def element_integrate(state: ElementState, mat: PiezoMaterial) -> ElementResult:
    """Energy, residual and tangent of one brick (2x2x2 Gauss)."""
    D = micro_constitutive_matrix(mat).D
    K = element_stiffness(state.coords, D)
    q = state.dofs
    R = K @ q
    return ElementResult(energy=0.5 * float(q @ R), R=R, K=K)


def gauss_fields(coords, q, D, element_ids=None):
    """Generalized strain and stress at Gauss points.

    Returns ``strain (ne, 8, 9)``, ``stress (ne, 8, 9)`` and weights ``dv (ne, 8)``.
    """
    B, dv = gauss_operators(coords, element_ids)
    strain = np.einsum("egip,ep->egi", B, q)
    stress = strain @ D.T
    return strain, stress, dv
