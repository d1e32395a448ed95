"""Sparse assembly and active-set Newton iteration of the constrained system.

Unknowns are the displacement/potential DOFs of the condensed nodes plus one
Lagrange multiplier per periodic link. Prescribed DOFs are eliminated. The
saddle-point system

    [ K_ff  C_f^T ] [dq_f]     [ R_f + C_f^T lam ]
    [ C_f   0     ] [dlam] = - [ C q - offsets   ]

is factorized directly (sparse LU).
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bezier import DEFAULT_BETA
from .constraints import ConstraintError, ConstraintSet
from .contact import ContactPair, PenaltyParams, contact_contribution
from .element import element_stiffness
from .mesh import RveMesh

MAX_FLIPS = 3
PIVOT_TOL = 1e-12


class SingularSystemError(RuntimeError):
    pass


@dataclass
class SolverOptions:
    tol: float = 1e-10
    max_iter: int = 30
    increment_tol: float = 1e-12  # times the characteristic length
    hysteresis: float = 1e-12  # times the characteristic length
    line_search_cuts: int = 10
    threads: int = 1
    deterministic: bool = True

    def __post_init__(self):
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("tol must be positive and max_iter >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass
class SolveReport:
    iterations: int = 0
    residual_norms: list = field(default_factory=list)
    active_counts: list = field(default_factory=list)
    converged: bool = False
    wall_time: float = 0.0
    message: str = ""


class DofMap:
    """Full node ids -> condensed node ids -> reduced DOFs (4 per node)."""

    def __init__(self, cset: ConstraintSet):
        rep = cset.node_representatives()
        self.rep = rep
        self.kept, self.node_index = np.unique(rep, return_inverse=True)
        self.n_nodes = len(rep)
        self.n_dofs = 4 * len(self.kept)

    def dofs_of_nodes(self, nodes) -> np.ndarray:
        idx = self.node_index[np.asarray(nodes, dtype=int)]
        return (4 * idx[:, None] + np.arange(4)).ravel()

    def dof(self, full_dof: int) -> int:
        node, comp = divmod(int(full_dof), 4)
        return 4 * int(self.node_index[node]) + comp

    def expand(self, q_red) -> np.ndarray:
        """Reduced vector -> (n_nodes, 4) nodal array."""
        return np.asarray(q_red).reshape(-1, 4)[self.node_index]


@dataclass
class ContactState:
    """Active-set bookkeeping of one slave node."""

    interface: int
    slave: int
    area: float
    active: bool = False
    flips: int = 0
    patch: tuple | None = None
    zeta: np.ndarray | None = None
    g_N: float = np.inf
    g_phi: float = 0.0
    normal: np.ndarray | None = None

    @property
    def frozen(self) -> bool:
        return self.flips >= MAX_FLIPS


@dataclass
class Solution:
    q: np.ndarray  # (n_nodes, 4) displacements and potential
    q_reduced: np.ndarray
    multipliers: np.ndarray
    internal_force: np.ndarray  # reduced, element + contact
    contact_force: np.ndarray  # reduced, contact only
    report: SolveReport
    pairs: list
    energy_contact_mech: float
    energy_contact_el: float
    functional: float

    @property
    def u(self) -> np.ndarray:
        return self.q[:, :3]

    @property
    def phi(self) -> np.ndarray:
        return self.q[:, 3]

    @property
    def contact_energy(self) -> float:
        return self.energy_contact_mech + self.energy_contact_el


class CoupledSystem:
    """Assembled operators of one boundary-value problem."""

    def __init__(
        self,
        mesh: RveMesh,
        D: np.ndarray,
        cset: ConstraintSet,
        interfaces=(),
        penalty: PenaltyParams | None = None,
        beta: float = DEFAULT_BETA,
        options: SolverOptions | None = None,
    ):
        self.mesh = mesh
        self.D = np.asarray(D, dtype=float)
        self.cset = cset
        self.interfaces = list(interfaces)
        self.penalty = penalty
        self.beta = beta
        self.options = options or SolverOptions()
        if self.interfaces and penalty is None:
            raise ValueError("contact interfaces need penalty parameters")
        self.dofmap = DofMap(cset)
        self.length = mesh.char_length
        self._build_dirichlet()
        self._build_links()
        self.K_el = self._assemble_elements()
        self.contacts = [
            ContactState(k, int(s), float(a))
            for k, itf in enumerate(self.interfaces)
            for s, a in zip(itf.slave_nodes, itf.slave_area)
        ]

    # -- setup ---------------------------------------------------------------

    def _build_dirichlet(self):
        dm = self.dofmap
        presc = {}
        for dof, val in self.cset.resolved_dirichlet().items():
            presc[dm.dof(dof)] = val
        self.fixed = np.array(sorted(presc), dtype=int)
        self.fixed_values = np.array([presc[d] for d in self.fixed], dtype=float)
        mask = np.ones(dm.n_dofs, dtype=bool)
        mask[self.fixed] = False
        self.free = np.flatnonzero(mask)

    def _build_links(self):
        dm = self.dofmap
        rows, cols, vals, rhs = [], [], [], []
        q0 = np.zeros(dm.n_dofs)
        q0[self.fixed] = self.fixed_values
        fixed = np.zeros(dm.n_dofs, dtype=bool)
        fixed[self.fixed] = True
        tol = 1e-10 * max(self.length, 1.0)
        for (a, b), off in zip(self.cset.links, self.cset.offsets):
            ra, rb = dm.dof(a), dm.dof(b)
            if ra == rb:
                if abs(off) > tol:
                    raise ConstraintError(f"link between merged DOFs {a} and {b} with non-zero offset {off}")
                continue
            if fixed[ra] and fixed[rb]:
                if abs(q0[rb] - q0[ra] - off) > tol:
                    raise ConstraintError(f"link {a}-{b} conflicts with prescribed values")
                continue
            r = len(rhs)
            rows += [r, r]
            cols += [rb, ra]
            vals += [1.0, -1.0]
            rhs.append(off)
        self.C = sp.csr_matrix((vals, (rows, cols)), shape=(len(rhs), dm.n_dofs))
        self.link_offsets = np.array(rhs, dtype=float)

    def _assemble_elements(self) -> sp.csr_matrix:
        mesh, dm = self.mesh, self.dofmap
        coords = mesh.element_coords()
        edofs = (4 * dm.node_index[mesh.elements][:, :, None] + np.arange(4)).reshape(len(mesh.elements), 32)
        chunks = np.array_split(np.arange(len(coords)), max(1, min(self.options.threads, len(coords))))

        def work(idx):
            return element_stiffness(coords[idx], self.D, element_ids=idx)

        if self.options.threads > 1:
            with ThreadPoolExecutor(self.options.threads) as pool:
                parts = list(pool.map(work, chunks))  # results kept in chunk order
        else:
            parts = [work(c) for c in chunks]
        Ke = np.concatenate(parts)
        rows = np.repeat(edofs, 32, axis=1).ravel()
        cols = np.tile(edofs, (1, 32)).ravel()
        K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(dm.n_dofs, dm.n_dofs)).tocsr()
        K.sum_duplicates()
        return K

    # -- state ---------------------------------------------------------------

    def initial_state(self) -> np.ndarray:
        q = np.zeros(self.dofmap.n_dofs)
        q[self.fixed] = self.fixed_values
        return q

    def positions(self, q) -> np.ndarray:
        return self.mesh.nodes + self.dofmap.expand(q)[:, :3]

    def update_active_set(self, q) -> bool:
        """Project every slave and update activity; returns True if the set changed."""
        x = self.positions(q)
        h = self.options.hysteresis * self.length
        changed = False
        for c in self.contacts:
            itf = self.interfaces[c.interface]
            res = itf.project(x[c.slave], x, self.beta, start=c.patch)
            if res is None:
                res = itf.project(x[c.slave], x, self.beta)
            if res is None:
                c.g_N = np.inf
                new = False
            else:
                c.patch, c.zeta, r, c.normal = res
                c.g_N = float(r @ c.normal)
                new = c.g_N < 0.0 or (c.active and c.g_N <= h)
            if c.frozen:
                continue
            if new != c.active:
                c.active = new
                c.flips += 1
                changed = True
        return changed

    def _contact_terms(self, q):
        """Sum of active contact contributions (reduced R, COO triplets, energies)."""
        n = self.dofmap.n_dofs
        R = np.zeros(n)
        rows, cols, vals = [], [], []
        e_m = e_e = f = 0.0
        if not self.contacts:
            return R, (rows, cols, vals), 0.0, 0.0, 0.0
        x = self.positions(q)
        qn = self.dofmap.expand(q)
        for c in self.contacts:
            if not c.active or c.patch is None:
                continue
            itf = self.interfaces[c.interface]
            st = itf.stencils[c.patch]
            # keep the projection consistent with the current configuration
            res = itf.project(x[c.slave], x, self.beta, start=c.patch)
            if res is not None:
                c.patch, c.zeta, r, c.normal = res
                st = itf.stencils[c.patch]
            rho_m = self.penalty.rho_mech * c.area
            rho_e = self.penalty.rho_el * c.area
            fi, em, ee, Rc, Kc = contact_contribution(
                x[c.slave], qn[c.slave, 3], x[st.nodes], qn[st.nodes, 3], st, c.zeta, rho_m, rho_e, self.beta
            )
            c.g_phi = float(qn[c.slave, 3] - st.weights(c.zeta, self.beta)[0] @ qn[st.nodes, 3])
            dofs = self.dofmap.dofs_of_nodes(np.concatenate([[c.slave], st.nodes]))
            np.add.at(R, dofs, Rc)
            rows.append(np.repeat(dofs, len(dofs)))
            cols.append(np.tile(dofs, len(dofs)))
            vals.append(Kc.ravel())
            e_m += em
            e_e += ee
            f += fi
        return R, (rows, cols, vals), e_m, e_e, f

    def evaluate(self, q):
        """Functional, residual and tangent (reduced, before constraints)."""
        Rc, (rows, cols, vals), e_m, e_e, fc = self._contact_terms(q)
        R_el = self.K_el @ q
        K = self.K_el
        if rows:
            n = self.dofmap.n_dofs
            Kc = sp.coo_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
            ).tocsr()
            K = K + Kc
        functional = 0.5 * float(q @ R_el) + fc
        return functional, R_el + Rc, K, Rc, (e_m, e_e)

    def constraint_residual(self, q) -> np.ndarray:
        return self.C @ q - self.link_offsets


def _residual_measures(r_f, r_c, R, q, free, offsets):
    """Work-weighted residual measures and their reference scales.

    Mechanical and electric residuals have different units; weighting each
    by the largest DOF magnitude of its kind turns both into work so a
    single relative tolerance applies.
    """
    comp = free % 4
    qu = np.max(np.abs(q[np.arange(len(q)) % 4 < 3]), initial=0.0)
    qp = np.max(np.abs(q[3::4]), initial=0.0)
    allc = np.arange(len(R)) % 4
    meas = np.array(
        [np.linalg.norm(r_f[comp < 3]) * qu, np.linalg.norm(r_f[comp == 3]) * qp, np.linalg.norm(r_c)]
    )
    ref = np.array(
        [
            max(np.linalg.norm(R[allc < 3]) * qu, np.linalg.norm(R[allc == 3]) * qp, abs(float(q @ R))),
            max(np.linalg.norm(offsets), max(qu, qp)),
        ]
    )
    return meas, ref


def _scaled_solver(A, n_primal):
    """LU of the symmetrically scaled saddle matrix; returns a solve callable.

    Mechanical and electric diagonal entries differ by many orders of
    magnitude, so rows and columns are scaled by 1/sqrt|A_ii|; multiplier rows
    are scaled to make their largest entry one.
    """
    A = A.tocsc()
    diag = np.abs(A.diagonal())
    s = np.ones(A.shape[0])
    prim = diag[:n_primal]
    s[:n_primal] = 1.0 / np.sqrt(np.where(prim > 0, prim, 1.0))
    if A.shape[0] > n_primal:
        Cs = abs(A[n_primal:, :n_primal]) @ sp.diags(s[:n_primal])
        rowmax = Cs.max(axis=1).toarray().ravel()
        s[n_primal:] = 1.0 / np.where(rowmax > 0, rowmax, 1.0)
    S = sp.diags(s)
    msg = "coupled system is singular: the boundary conditions leave a mechanism or an ungrounded potential"
    try:
        lu = spla.splu((S @ A @ S).tocsc(), permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SingularSystemError(msg) from exc
    # the scaled matrix has unit-order pivots unless a null space is present
    piv = np.abs(lu.U.diagonal())
    if piv.size and piv.min() < PIVOT_TOL * piv.max():
        raise SingularSystemError(msg)
    return lambda b: s * lu.solve(s * b)


def newton_solve(system: CoupledSystem, max_iter: int | None = None, tol: float | None = None) -> Solution:
    """Active-set Newton iteration with residual-norm line search."""
    opts = system.options
    max_iter = opts.max_iter if max_iter is None else max_iter
    tol = opts.tol if tol is None else tol
    t0 = time.perf_counter()
    report = SolveReport()
    free, C = system.free, system.C
    Cf = C[:, free]
    nf, nc = len(free), C.shape[0]
    q = system.initial_state()
    lam = np.zeros(nc)
    scale = np.zeros(2)
    changed = system.update_active_set(q) if system.contacts else False

    def residual(qv, lv):
        _, R, K, _, _ = system.evaluate(qv)
        r_f = R[free] + Cf.T @ lv
        r_c = system.constraint_residual(qv)
        return r_f, r_c, K, R

    r_f, r_c, K, R = residual(q, lam)
    converged = False
    while True:
        meas, ref = _residual_measures(r_f, r_c, R, q, free, system.link_offsets)
        scale = np.maximum(scale, np.maximum(ref, [max(meas[0], meas[1]), meas[2]]))
        report.residual_norms.append(float(np.linalg.norm(np.concatenate([r_f, r_c]))))
        report.active_counts.append(sum(c.active for c in system.contacts))
        if not changed and np.all(meas <= tol * scale[[0, 0, 1]]):
            converged = True
            break
        if report.iterations >= max_iter:
            break
        A = sp.bmat([[K[free][:, free], Cf.T], [Cf, None]], format="csc") if nc else K[free][:, free].tocsc()
        solve = _scaled_solver(A, nf)
        rhs = -np.concatenate([r_f, r_c])
        step = solve(rhs)
        if not np.all(np.isfinite(step)) or np.linalg.norm(A @ step - rhs) > 1e-6 * max(np.linalg.norm(rhs), 1e-300):
            raise SingularSystemError("linear solve failed: the coupled system is singular or ill-posed")
        report.iterations += 1
        dq = np.zeros_like(q)
        dq[free] = step[:nf]
        dl = step[nf:]
        merit0 = np.linalg.norm(np.concatenate([r_f, r_c]))
        alpha = 1.0
        for _ in range(opts.line_search_cuts + 1):
            q_t, l_t = q + alpha * dq, lam + alpha * dl
            r_f_t, r_c_t, _, _ = residual(q_t, l_t)
            if not system.contacts or np.linalg.norm(np.concatenate([r_f_t, r_c_t])) <= merit0:
                break
            alpha *= 0.5
        q, lam = q_t, l_t
        changed = system.update_active_set(q) if system.contacts else False
        r_f, r_c, K, R = residual(q, lam)
        inc_u = np.max(np.abs(alpha * dq[free][free % 4 < 3]), initial=0.0)
        inc_p = np.max(np.abs(alpha * dq[free][free % 4 == 3]), initial=0.0)
        phi_scale = 1.0 + np.max(np.abs(q[3::4]), initial=0.0)
        if (
            not changed
            and system.contacts
            and inc_u <= opts.increment_tol * system.length
            and inc_p <= opts.increment_tol * phi_scale
        ):
            report.residual_norms.append(float(np.linalg.norm(np.concatenate([r_f, r_c]))))
            report.active_counts.append(sum(c.active for c in system.contacts))
            converged = True
            break
    report.converged = converged
    report.wall_time = time.perf_counter() - t0
    if not converged:
        report.message = f"not converged after {report.iterations} iterations"

    functional, R, _, Rc, (e_m, e_e) = system.evaluate(q)
    pairs = [
        ContactPair(c.slave, c.patch, c.zeta, c.g_N, c.g_phi, c.normal, c.active)
        for c in system.contacts
        if c.patch is not None
    ]
    return Solution(
        q=system.dofmap.expand(q),
        q_reduced=q,
        multipliers=lam,
        internal_force=R,
        contact_force=Rc,
        report=report,
        pairs=pairs,
        energy_contact_mech=e_m,
        energy_contact_el=e_e,
        functional=functional,
    )


def solve_case(mesh, D, cset, interfaces=(), penalty=None, options=None, beta=DEFAULT_BETA) -> Solution:
    system = CoupledSystem(mesh, D, cset, interfaces, penalty, beta, options)
    return newton_solve(system)


def nodal_reactions(system: CoupledSystem, sol: Solution) -> np.ndarray:
    """Internal force (element + contact) per condensed node, shape (n_kept, 4)."""
    return sol.internal_force.reshape(-1, 4)
