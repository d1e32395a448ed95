"""Periodic links, perfect-bond condensation and Dirichlet load programs.

All DOF ids in this module are *full* ids ``4 * node + i`` with ``i = 0, 1, 2``
for displacements and ``i = 3`` for the potential. Condensation of bonded
nodes is recorded as node merges and resolved by the solver's DOF map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import RveMesh, identify_periodic_pairs

N_SLOTS = 9
PHI = 3


class ConstraintError(ValueError):
    pass


class _UnionFind:
    """Union-find keeping the smallest id as representative."""

    def __init__(self, n):
        self.parent = np.arange(n)

    def find(self, a):
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            lo, hi = min(ra, rb), max(ra, rb)
            self.parent[hi] = lo

    def roots(self):
        return np.array([self.find(i) for i in range(len(self.parent))])


@dataclass
class ConstraintSet:
    """Links ``q[b] - q[a] = offset``, node merges and prescribed DOFs."""

    n_nodes: int
    links: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=int))
    offsets: np.ndarray = field(default_factory=lambda: np.zeros(0))
    merges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=int))  # (kept, eliminated)
    dirichlet: dict = field(default_factory=dict)  # full dof -> value

    def node_representatives(self) -> np.ndarray:
        uf = _UnionFind(self.n_nodes)
        for a, b in self.merges:
            uf.union(int(a), int(b))
        return uf.roots()

    def prescribe(self, dof: int, value: float, tol: float = 1e-12):
        old = self.dirichlet.get(dof)
        if old is not None and abs(old - value) > tol * max(1.0, abs(old), abs(value)):
            node, comp = divmod(dof, 4)
            raise ConstraintError(
                f"conflicting prescriptions for node {node} component {comp}: {old} vs {value}"
            )
        self.dirichlet[dof] = float(value)

    def resolved_dirichlet(self) -> dict:
        """Prescriptions mapped onto representative nodes, with conflict check."""
        rep = self.node_representatives()
        out = ConstraintSet(self.n_nodes)
        for dof, val in sorted(self.dirichlet.items()):
            node, comp = divmod(dof, 4)
            out.prescribe(4 * int(rep[node]) + comp, val)
        return out.dirichlet

    def copy(self) -> "ConstraintSet":
        return ConstraintSet(
            self.n_nodes, self.links.copy(), self.offsets.copy(), self.merges.copy(), dict(self.dirichlet)
        )


def condense_bonds(cset: ConstraintSet, bond_pairs) -> ConstraintSet:
    """Merge all 4 DOFs of every bonded node into its partner.

    Chains and cycles collapse to the smallest node id of each group.
    """
    out = cset.copy()
    bond_pairs = np.asarray(bond_pairs, dtype=int).reshape(-1, 2)
    if len(bond_pairs) == 0:
        return out
    uf = _UnionFind(cset.n_nodes)
    for a, b in np.vstack([cset.merges, bond_pairs]):
        uf.union(int(a), int(b))
    roots = uf.roots()
    elim = np.flatnonzero(roots != np.arange(cset.n_nodes))
    out.merges = np.column_stack([roots[elim], elim]).astype(int)
    out.resolved_dirichlet()  # raises on conflicts
    return out


def _strain_tensor(macro):
    e = np.asarray(macro, dtype=float)
    return np.array(
        [
            [e[0], 0.5 * e[3], 0.5 * e[4]],
            [0.5 * e[3], e[1], 0.5 * e[5]],
            [0.5 * e[4], 0.5 * e[5], e[2]],
        ]
    )


def affine_jump(macro, dx) -> np.ndarray:
    """Jump of (u1, u2, u3, phi) of the affine field implied by ``macro`` across ``dx``."""
    macro = np.zeros(N_SLOTS) if macro is None else np.asarray(macro, dtype=float)
    if macro.shape != (N_SLOTS,):
        raise ConstraintError("macro generalized strain must have 9 entries")
    return np.concatenate([_strain_tensor(macro) @ dx, [-(macro[6:] @ dx)]])


def build_periodic_constraints(mesh: RveMesh, macro_strain=None, pin: bool = True) -> ConstraintSet:
    """Periodic links for all face pairs, with bonds condensed.

    Every node class (image nodes connected through periodic pairs, after
    bond merging) gets one representative; the others are linked to it with
    the affine jump of ``macro_strain`` as offset. With ``pin`` the class at
    the lowest cell corner has its displacement and potential fixed to 0.
    """
    n = mesh.n_nodes
    cset = condense_bonds(ConstraintSet(n), mesh.bond_pairs)
    base = cset.node_representatives()
    uf = _UnionFind(n)
    for a, b, _ in identify_periodic_pairs(mesh):
        uf.union(int(base[a]), int(base[b]))
    links, offsets = [], []
    tol = 1e-10 * mesh.char_length
    for node in np.unique(base):
        rep = uf.find(int(node))
        if rep == node:
            continue
        dx = mesh.nodes[node] - mesh.nodes[rep]
        jump = affine_jump(macro_strain, dx)
        for comp in range(4):
            links.append((4 * rep + comp, 4 * int(node) + comp))
            offsets.append(jump[comp])
    # bonds inside one periodic class must not demand a non-zero jump
    for kept, elim in cset.merges:
        if np.linalg.norm(mesh.nodes[kept] - mesh.nodes[elim]) > tol:
            raise ConstraintError(f"bonded nodes {kept} and {elim} are not coincident")
    cset.links = np.array(links, dtype=int).reshape(-1, 2)
    cset.offsets = np.array(offsets, dtype=float)
    if pin:
        lo = mesh.nodes.min(axis=0)
        corner = int(np.argmin(np.linalg.norm(mesh.nodes - lo, axis=1)))
        rep = uf.find(int(base[corner]))
        for comp in range(4):
            cset.prescribe(4 * rep + comp, 0.0)
    return cset


def link_residuals(cset: ConstraintSet, q_full) -> np.ndarray:
    """``q[b] - q[a] - offset`` for every link; zero for admissible fields."""
    q = np.asarray(q_full).ravel()
    if len(cset.links) == 0:
        return np.zeros(0)
    return q[cset.links[:, 1]] - q[cset.links[:, 0]] - cset.offsets


def affine_field(mesh: RveMesh, macro) -> np.ndarray:
    """Nodal (u1, u2, u3, phi) of the homogeneous field of a macro strain, (n, 4)."""
    x = mesh.nodes - mesh.nodes.min(axis=0)
    return np.array([affine_jump(macro, xi) for xi in x])


# ---------------------------------------------------------------------------
# load programs


@dataclass(frozen=True)
class Prescription:
    """``dof value = amplitude * coef * (x - x_lo)[axis]`` on every node of ``face``.

    ``axis=None`` means a homogeneous (zero) prescription.
    """

    face: str
    comp: int
    coef: float = 0.0
    axis: int | None = None


def _zero(faces, comp):
    return [Prescription(f, comp) for f in faces]


def _driven(faces, comp, coef, axis):
    return [Prescription(f, comp, coef, axis) for f in faces]


_A, _B, _C = ("A-", "A+"), ("B-", "B+"), ("C-", "C+")

_NORMALS_FIXED = _zero(_A, 0) + _zero(_B, 1) + _zero(_C, 2)


def _table():
    uniax1 = _driven(_A, 0, 1.0, 0) + _zero(_B, 1) + _zero(_C, 2) + _zero(_C, PHI)
    uniax2 = _zero(_A, 0) + _driven(_B, 1, 1.0, 1) + _zero(_C, 2) + _zero(_C, PHI)
    uniax3 = _zero(_A, 0) + _zero(_B, 1) + _driven(_C, 2, 1.0, 2) + _zero(("C-",), PHI)
    shear13 = _driven(_A, 2, 0.5, 0) + _zero(_A, PHI) + _zero(_B, 1) + _driven(_C, 0, 0.5, 2)
    shear12 = _driven(_A, 1, 0.5, 0) + _driven(_B, 0, 0.5, 1) + _zero(_C, 2) + _zero(_C, PHI)
    field3 = _NORMALS_FIXED + _driven(_C, PHI, -1.0, 2)
    field1 = _NORMALS_FIXED + _driven(_A, PHI, -1.0, 0)
    # name: (prescriptions, numerator slot, denominator slot, sign)
    return {
        "C11bar": (uniax1, 0, 0, 1.0),
        "C12bar": (uniax1, 1, 0, 1.0),
        "C22bar": (uniax2, 1, 1, 1.0),
        "C13bar": (uniax3, 0, 2, 1.0),
        "C33bar": (uniax3, 2, 2, 1.0),
        "C44bar": (shear13, 4, 4, 1.0),
        "C66bar": (shear12, 3, 3, 1.0),
        "e13bar": (field3, 0, 8, -1.0),
        "e33bar": (field3, 2, 8, -1.0),
        "e15bar": (shear13, 6, 4, 1.0),
        "eps11bar": (field1, 6, 6, 1.0),
        "eps33bar": (field3, 8, 8, 1.0),
    }


LOAD_TABLE = _table()
TABLE_ROWS = tuple(k for k in LOAD_TABLE if k != "C22bar")  # the 11 independent coefficients
SUPPLEMENTARY_ROWS = ("C22bar",)


@dataclass(frozen=True)
class LoadCase:
    """One coefficient experiment.

    ``amplitude`` is the value of the driven generalized-strain slot
    (engineering shear for the shear cases, Ef for the field cases).
    """

    name: str
    amplitude: float
    prescriptions: tuple
    numerator: int
    denominator: int
    sign: float = 1.0
    mode: str = "dirichlet"

    @property
    def macro_strain(self) -> np.ndarray:
        m = np.zeros(N_SLOTS)
        m[self.denominator] = self.amplitude
        return m

    def constraints(self, mesh: RveMesh) -> ConstraintSet:
        if self.mode == "periodic":
            return build_periodic_constraints(mesh, self.macro_strain)
        if self.mode != "dirichlet":
            raise ConstraintError(f"unknown boundary mode {self.mode!r}")
        cset = condense_bonds(ConstraintSet(mesh.n_nodes), mesh.bond_pairs)
        lo = mesh.nodes.min(axis=0)
        for p in self.prescriptions:
            nodes = mesh.face_sets[p.face]
            if p.axis is None:
                vals = np.zeros(len(nodes))
            else:
                vals = self.amplitude * p.coef * (mesh.nodes[nodes, p.axis] - lo[p.axis])
            for node, v in zip(nodes, vals):
                cset.prescribe(4 * int(node) + p.comp, v)
        cset.resolved_dirichlet()
        return cset


def build_load_case(row: str, amplitude: float, mode: str = "dirichlet") -> LoadCase:
    """Load case for a coefficient name such as ``C11bar``, ``e33bar`` or ``eps11bar``."""
    if row not in LOAD_TABLE:
        raise ConstraintError(f"unknown load case {row!r}; expected one of {sorted(LOAD_TABLE)}")
    pres, num, den, sign = LOAD_TABLE[row]
    return LoadCase(row, float(amplitude), tuple(pres), num, den, sign, mode)
