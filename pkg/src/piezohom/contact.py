"""Frictionless electromechanical node-to-surface contact with penalty regularization.

For a slave node at x_s and a smoothed master surface x(z) = sum_n w_n(z) x_n,
the closest point z* minimizes f = 1/2 |x_s - x(z)|^2. With r = x_s - x(z*)
and the outward master normal n, the normal gap is g_N = r . n and, at the
closest point, g_N^2 = |r|^2. The electric jump is g_phi = phi_s - phi(z*).

Penalty contributions to the global electric-enthalpy functional:

    Pi_C = 1/2 rho_mech g_N^2 - 1/2 rho_el g_phi^2        (active pairs only)

The electric term carries the enthalpy sign so that it enforces potential
continuity in the same (maximizing) sense as the bulk dielectric term. The
stored penalty energy reported to users is 1/2 rho_mech g_N^2 + 1/2 rho_el
g_phi^2. Residuals and tangents are exact derivatives including the motion
of the projection point (envelope theorem plus implicit differentiation of
the orthogonality conditions).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bezier import DEFAULT_BETA, PatchStencil, grid_stencils

MAX_PROJECTION_ITER = 30


@dataclass(frozen=True)
class PenaltyParams:
    rho_mech: float
    rho_el: float

    def __post_init__(self):
        if self.rho_mech <= 0 or self.rho_el < 0:
            raise ValueError("penalty parameters must be positive")

    @classmethod
    def default(cls, mat, length: float, factor: float = 100.0):
        """Scale-aware defaults: factor * E / L and factor * perm33 / L per unit area."""
        return cls(factor * mat.young / length, factor * mat.perm[2] / length)


@dataclass
class ContactPair:
    slave: int
    patch: tuple
    zeta: np.ndarray
    g_N: float
    g_phi: float
    normal: np.ndarray
    active: bool = False


@dataclass
class ContactResult:
    functional: float
    energy_mech: float
    energy_el: float
    dofs: np.ndarray  # global DOF ids (node-major, 4 per node)
    R: np.ndarray
    K: np.ndarray

    @property
    def energy(self) -> float:
        return self.energy_mech + self.energy_el


# ---------------------------------------------------------------------------
# projection


def _surface(xm, w, dw, ddw):
    x = w @ xm
    a = dw.T @ xm  # (2, 3)
    aa = np.einsum("nab,nc->abc", ddw, xm)
    return x, a, aa


def closest_point_projection(x_s, stencil: PatchStencil, positions, zeta0=(0.5, 0.5), beta=DEFAULT_BETA, tol=1e-13):
    """Newton solve of the orthogonality conditions (x_s - x(z)) . a_alpha = 0.

    Returns (zeta, r, normal, converged).
    """
    xm = np.asarray(positions)[stencil.nodes]
    zeta = np.array(zeta0, dtype=float)
    scale = np.linalg.norm(xm.max(axis=0) - xm.min(axis=0))
    for _ in range(MAX_PROJECTION_ITER):
        w, dw, ddw, _ = stencil.weights(zeta, beta)
        x, a, aa = _surface(xm, w, dw, ddw)
        r = x_s - x
        F = -a @ r
        H = a @ a.T - np.einsum("abc,c->ab", aa, r)
        try:
            step = np.linalg.solve(H, F)
        except np.linalg.LinAlgError:
            break
        # damp steps that leave the neighbourhood of the patch
        big = np.max(np.abs(step))
        if big > 0.5:
            step *= 0.5 / big
        zeta = zeta - step
        if np.max(np.abs(step)) < tol:
            w, dw, ddw, _ = stencil.weights(zeta, beta)
            x, a, _ = _surface(xm, w, dw, ddw)
            r = x_s - x
            ortho = np.abs(a @ r) / np.linalg.norm(a, axis=1)
            if np.all(ortho <= 1e-10 * max(scale, 1e-300)):
                return zeta, r, _unit_normal(a, stencil.sign), True
            break
    w, dw, ddw, _ = stencil.weights(zeta, beta)
    x, a, _ = _surface(xm, w, dw, ddw)
    return zeta, x_s - x, _unit_normal(a, stencil.sign), False


def _unit_normal(a, sign):
    cr = np.cross(a[0], a[1])
    return sign * cr / np.linalg.norm(cr)


# ---------------------------------------------------------------------------
# element-level contribution


def _lift(v):
    """kron(v^T, I3): (3, 3 len(v)) map from stacked positions to a vector."""
    return np.kron(v[None, :], np.eye(3))


def contact_contribution(
    x_s,
    phi_s,
    xm,
    phi_m,
    stencil: PatchStencil,
    zeta,
    rho_mech: float,
    rho_el: float,
    beta=DEFAULT_BETA,
    electric: bool = True,
):
    """Functional, residual and tangent of one active pair.

    ``zeta`` must be the converged closest point. DOFs are ordered node-major
    over (slave, master nodes of the stencil), 4 per node (u1, u2, u3, phi).
    Returns ``(functional, energy_mech, energy_el, R, K)``.
    """
    m = len(stencil.nodes)
    n = 3 * (m + 1)
    w, dw, ddw, dddw = stencil.weights(zeta, beta)
    q = np.concatenate([x_s, np.asarray(xm).ravel()])
    J = _lift(np.concatenate([[1.0], -w]))
    A = [_lift(np.concatenate([[0.0], dw[:, a]])) for a in range(2)]
    AA = [[_lift(np.concatenate([[0.0], ddw[:, a, b]])) for b in range(2)] for a in range(2)]
    r = J @ q
    a = np.array([Aa @ q for Aa in A])
    aa = np.array([[AA[i][j] @ q for j in range(2)] for i in range(2)])
    H = a @ a.T - np.einsum("abc,c->ab", aa, r)
    Hinv = np.linalg.inv(H)
    Fq = np.array([-(J.T @ a[al] + A[al].T @ r) for al in range(2)])  # (2, n)
    zq = -Hinv @ Fq

    g2 = float(r @ r)
    e_mech = 0.5 * rho_mech * g2
    R_q = rho_mech * (J.T @ r)
    K_qq = rho_mech * (J.T @ J + Fq.T @ zq)

    R = np.zeros(4 * (m + 1))
    K = np.zeros((4 * (m + 1), 4 * (m + 1)))
    qidx = np.array([4 * k + i for k in range(m + 1) for i in range(3)])
    pidx = 4 * np.arange(m + 1) + 3
    R[qidx] += R_q
    K[np.ix_(qidx, qidx)] += K_qq

    e_el = 0.0
    if electric and rho_el > 0.0:
        p = np.concatenate([[phi_s], phi_m])
        cvec = np.concatenate([[1.0], -w])
        g_phi = float(cvec @ p)
        pbar_a = dw.T @ phi_m  # (2,)
        pbar_ab = np.einsum("nab,n->ab", ddw, phi_m)
        dg_p = cvec
        dg_q = -pbar_a @ zq
        d2g_pq = sum(np.outer(np.concatenate([[0.0], -dw[:, al]]), zq[al]) for al in range(2))
        zqq = _zeta_second_derivatives(q, r, a, aa, J, A, AA, dddw, Hinv, zq, n)
        d2g_qq = -np.einsum("ab,ai,bj->ij", pbar_ab, zq, zq) - np.einsum("a,aij->ij", pbar_a, zqq)
        e_el = 0.5 * rho_el * g_phi**2
        # enthalpy sign: functional term is -e_el
        R[qidx] -= rho_el * g_phi * dg_q
        R[pidx] -= rho_el * g_phi * dg_p
        K[np.ix_(qidx, qidx)] -= rho_el * (np.outer(dg_q, dg_q) + g_phi * d2g_qq)
        K[np.ix_(pidx, pidx)] -= rho_el * np.outer(dg_p, dg_p)
        Kpq = -rho_el * (np.outer(dg_p, dg_q) + g_phi * d2g_pq)
        K[np.ix_(pidx, qidx)] += Kpq
        K[np.ix_(qidx, pidx)] += Kpq.T
    return e_mech - e_el, e_mech, e_el, R, K


def _zeta_second_derivatives(q, r, a, aa, J, A, AA, dddw, Hinv, zq, n):
    m3 = len(q)
    AAA = np.empty((2, 2, 2, 3, m3))
    for i in range(2):
        for j in range(2):
            for k in range(2):
                AAA[i, j, k] = _lift(np.concatenate([[0.0], dddw[:, i, j, k]]))
    aaa = np.einsum("ijkcn,n->ijkc", AAA, q)
    # T_bgd = d H_bg / d zeta_d
    T = (
        np.einsum("bdc,gc->bgd", aa, a)
        + np.einsum("bc,gdc->bgd", a, aa)
        + np.einsum("dc,bgc->bgd", a, aa)
        - np.einsum("bgdc,c->bgd", aaa, r)
    )
    # M_bg = d H_bg / d q
    M = np.empty((2, 2, n))
    for b in range(2):
        for g in range(2):
            M[b, g] = A[b].T @ a[g] + A[g].T @ a[b] - J.T @ aa[b, g] - AA[b][g].T @ r
    rhs = np.empty((2, n, n))
    for b in range(2):
        Fqq = -(J.T @ A[b] + A[b].T @ J)
        rhs[b] = (
            np.einsum("gd,gi,dj->ij", T[b], zq, zq)
            + np.einsum("gj,gi->ij", M[b], zq)
            + np.einsum("gi,gj->ij", M[b], zq)
            + Fqq
        )
    return -np.einsum("ab,bij->aij", Hinv, rhs)


# ---------------------------------------------------------------------------
# interface bookkeeping


@dataclass
class ContactInterface:
    """Patches and slaves of one master/slave surface pair."""

    master_grid: np.ndarray
    slave_nodes: np.ndarray
    slave_area: np.ndarray
    stencils: dict = field(default_factory=dict)

    @classmethod
    def from_grid(cls, master_grid, slave_nodes, slave_area, positions, outward):
        """Interface on a structured master grid.

        ``outward`` is a unit vector or a callable ``x -> vector`` pointing
        from the master body towards the slave side; it fixes the orientation
        of every patch normal.
        """
        master_grid = np.asarray(master_grid, dtype=int)
        stencils = grid_stencils(master_grid)
        for st in stencils.values():
            w, dw, _, _ = st.weights((0.5, 0.5))
            xm = positions[st.nodes]
            cr = np.cross(*(dw.T @ xm))
            out = outward(w @ xm) if callable(outward) else np.asarray(outward, dtype=float)
            st.sign = 1.0 if cr @ out > 0 else -1.0
        return cls(master_grid, np.asarray(slave_nodes, dtype=int), np.asarray(slave_area, dtype=float), stencils)

    @classmethod
    def from_surface(cls, surface, positions, master_center, axis: int):
        """Interface on a fiber surface; the normal points radially outward."""

        def radial(x):
            r = x - master_center
            r[axis] = 0.0
            return r

        return cls.from_grid(surface.master_grid, surface.slave_nodes, surface.slave_area, positions, radial)

    def nearest_patch(self, x_s, positions):
        xm = positions[self.master_grid]
        d = np.linalg.norm(xm - x_s, axis=-1)
        i, j = np.unravel_index(np.argmin(d), d.shape)
        return int(i), int(j)

    def project(self, x_s, positions, beta=DEFAULT_BETA, start=None, max_hops=8):
        """Closest point on the smoothed surface, walking across patches.

        Returns ``(patch_key, zeta, r, normal)`` or ``None`` when the slave
        projects outside the master grid or the projection fails.
        """
        n1, n2 = self.master_grid.shape
        key = self.nearest_patch(x_s, positions) if start is None else start
        eps = 1e-9
        seen = set()
        for _ in range(max_hops):
            seen.add(key)
            zeta, r, nrm, ok = closest_point_projection(x_s, self.stencils[key], positions, beta=beta)
            if not ok:
                return None
            shift = [0, 0]
            for d in range(2):
                if zeta[d] < -eps:
                    shift[d] = -1
                elif zeta[d] > 1 + eps:
                    shift[d] = 1
            if shift == [0, 0]:
                return key, zeta, r, nrm
            nxt = (key[0] + shift[0], key[1] + shift[1])
            if not (0 <= nxt[0] < n1 and 0 <= nxt[1] < n2) or nxt in seen:
                return None
            key = nxt
        return None


def build_interfaces(mesh) -> list:
    out = []
    for surf in mesh.contact_surfaces:
        center = mesh.fiber_centers[surf.master_fiber]
        out.append(ContactInterface.from_surface(surf, mesh.nodes, center, mesh.params.fiber_axis - 1))
    return out
