"""Structured hexahedral meshes of square-packed cylindrical fiber RVEs.

Each circular cross-section is meshed with a butterfly (O-grid) pattern: a
square core plus ring blocks, built per quadrant and extruded along the fiber
axis. ``circumferential`` counts the boundary edges around a full fiber; it
must be a multiple of 8 so that each quarter arc has an even number of edges
(the butterfly core splits them between two square sides) and nodes sit
exactly on the tangency lines at 0, 90, 180 and 270 degrees.

Three layouts are available:

``quarter``
    cell of edge 2R with a quarter fiber at each corner. Neighbouring quarters
    touch at the mid-points of the cell faces.
``full``
    ``n_x x n_y`` complete fibers, cell edges ``2R n_x`` and ``2R n_y``.
``solid``
    homogeneous block without voids, used for verification.

Face names: A-/A+ are normal to x1, B-/B+ to x2, C-/C+ to x3.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .element import GAUSS_WEIGHTS, N_GP, gauss_operators

FACE_NAMES = ("A-", "A+", "B-", "B+", "C-", "C+")
LAYOUTS = ("quarter", "full", "solid")

# quadrant sign patterns (s1, s2) in the cross-section plane
_QUADRANT_SIGNS = {0: (1.0, 1.0), 1: (-1.0, 1.0), 2: (-1.0, -1.0), 3: (1.0, -1.0)}

# cyclic permutations mapping (cross1, cross2, axial) -> global axes
_AXIS_PERMUTATION = {3: (0, 1, 2), 2: (2, 0, 1), 1: (1, 2, 0)}


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class MeshParams:
    """Geometry and resolution of the RVE.

    ``divisions`` is ``(circumferential, radial, axial)`` for fiber layouts.
    For the ``solid`` layout the first entry is the element count along each
    cross-section axis and the second is ignored.
    """

    fiber_radius: float = 1.0
    grid: tuple[int, int] = (1, 1)
    divisions: tuple[int, int, int] = (32, 2, 2)  # (circumferential, radial, axial)
    layout: str = "quarter"
    fiber_axis: int = 3
    axial_length: float | None = None
    core_ratio: float = 0.5
    contact_window: int | None = None
    two_pass_contact: bool = True

    def __post_init__(self):
        c, r, a = self.divisions
        if self.layout not in LAYOUTS:
            raise MeshError(f"unknown layout {self.layout!r}; expected one of {LAYOUTS}")
        if min(self.divisions) < 1 or min(self.grid) < 1:
            raise MeshError("all division and grid counts must be >= 1")
        if self.layout != "solid" and c % 8:
            raise MeshError(
                f"circumferential divisions must be a multiple of 8, got {c}: "
                "tangency and periodic nodes would not match"
            )
        if self.fiber_radius <= 0.0:
            raise MeshError("fiber_radius must be positive")
        if self.fiber_axis not in _AXIS_PERMUTATION:
            raise MeshError("fiber_axis must be 1, 2 or 3")
        if not 0.0 < self.core_ratio < 1.0 / np.sqrt(2.0):
            raise MeshError("core_ratio must lie in (0, 1/sqrt(2))")

    @property
    def per_quarter(self) -> int:
        """Boundary edges along one quarter arc."""
        return self.divisions[0] // 4

    @property
    def length_axial(self) -> float:
        return 2.0 * self.fiber_radius if self.axial_length is None else float(self.axial_length)


@dataclass
class ContactSurface:
    """One master/slave interface between two touching fibers."""

    master_fiber: int
    slave_fiber: int
    master_grid: np.ndarray  # (n_circ, n_axial) node ids, structured
    slave_nodes: np.ndarray
    slave_area: np.ndarray
    outward: np.ndarray  # unit vector from master towards slave at the tangency


@dataclass
class RveMesh:
    nodes: np.ndarray
    elements: np.ndarray
    box: np.ndarray  # cell edge lengths along x1, x2, x3
    fiber_radius: float
    element_fiber: np.ndarray
    node_fiber: np.ndarray
    fiber_centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    face_sets: dict = field(default_factory=dict)
    bond_pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=int))
    contact_surfaces: list = field(default_factory=list)
    surface_grids: list = field(default_factory=list)  # per fiber: {circ index: node ids}
    params: MeshParams | None = None

    @property
    def rve_edge(self) -> float:
        return float(self.box[0])

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def volume_cell(self) -> float:
        return float(np.prod(self.box))

    @property
    def char_length(self) -> float:
        return float(np.max(self.box))

    def element_coords(self) -> np.ndarray:
        return self.nodes[self.elements]

    def element_volumes(self) -> np.ndarray:
        _, dv = gauss_operators(self.element_coords())
        return dv.sum(axis=1)

    def solid_volume(self) -> float:
        return float(self.element_volumes().sum())

    def fiber_volume(self, fiber: int) -> float:
        return float(self.element_volumes()[self.element_fiber == fiber].sum())

    def min_jacobian(self) -> float:
        _, dv = gauss_operators(self.element_coords())
        return float(np.min(dv / GAUSS_WEIGHTS))

    def gauss_point_coords(self) -> np.ndarray:
        return np.einsum("ga,eai->egi", N_GP, self.element_coords())

    def translated(self, shift) -> "RveMesh":
        out = _copy_mesh(self)
        out.nodes = self.nodes + np.asarray(shift, dtype=float)
        out.fiber_centers = self.fiber_centers + np.asarray(shift, dtype=float)
        return out


def _copy_mesh(mesh: RveMesh) -> RveMesh:
    return RveMesh(
        nodes=mesh.nodes.copy(),
        elements=mesh.elements.copy(),
        box=mesh.box.copy(),
        fiber_radius=mesh.fiber_radius,
        element_fiber=mesh.element_fiber.copy(),
        node_fiber=mesh.node_fiber.copy(),
        fiber_centers=mesh.fiber_centers.copy(),
        face_sets={k: v.copy() for k, v in mesh.face_sets.items()},
        bond_pairs=mesh.bond_pairs.copy(),
        contact_surfaces=list(mesh.contact_surfaces),
        surface_grids=[dict(g) for g in mesh.surface_grids],
        params=mesh.params,
    )


# ---------------------------------------------------------------------------
# cross-section template


def _quarter_disk(R, c, n_r, core_ratio):
    """2D mesh of the quarter disk s, t >= 0.

    Returns points (n, 2), quads (m, 4) and ``arc`` mapping the circumferential
    index k = 0..c (angle k * pi / (2c)) to the point on the circle.
    """
    m = c // 2
    a = core_ratio * R
    ids = {}
    pts = []

    def add(key, p):
        if key not in ids:
            ids[key] = len(pts)
            pts.append(p)
        return ids[key]

    for j in range(m + 1):
        for i in range(m + 1):
            add(("core", i, j), (a * i / m, a * j / m))

    def ring_point(k, r):
        # k in 0..c along the arc, r in 0..n_r
        if k <= m:
            base = np.array([a, a * k / m])
        else:
            base = np.array([a * (c - k) / m, a])
        theta = 0.5 * np.pi * k / c
        tip = R * np.array([np.cos(theta), np.sin(theta)])
        return base + (r / n_r) * (tip - base)

    def ring_key(k, r):
        if r == 0:
            return ("core", m, k) if k <= m else ("core", c - k, m)
        return ("ring", k, r)

    for r in range(1, n_r + 1):
        for k in range(c + 1):
            p = ring_point(k, r)
            if r == n_r:
                theta = 0.5 * np.pi * k / c
                p = R * np.array([np.cos(theta), np.sin(theta)])
            add(ring_key(k, r), tuple(p))

    quads = []
    for j in range(m):
        for i in range(m):
            quads.append(
                [ids["core", i, j], ids["core", i + 1, j], ids["core", i + 1, j + 1], ids["core", i, j + 1]]
            )
    for r in range(n_r):
        for k in range(c):
            quads.append(
                [
                    ids[ring_key(k, r)],
                    ids[ring_key(k, r + 1)],
                    ids[ring_key(k + 1, r + 1)],
                    ids[ring_key(k + 1, r)],
                ]
            )
    pts = np.array(pts, dtype=float)
    quads = np.array(quads, dtype=int)
    # enforce counter-clockwise ordering
    p = pts[quads]
    area = 0.5 * np.sum(p[:, :, 0] * np.roll(p[:, :, 1], -1, axis=1) - np.roll(p[:, :, 0], -1, axis=1) * p[:, :, 1], axis=1)
    quads[area < 0] = quads[area < 0][:, ::-1]
    arc = np.array([ids[ring_key(k, n_r)] for k in range(c + 1)])
    return pts, quads, arc


def _fix_orientation(nodes, elements):
    """Reorder hexes with negative Jacobian (mirrored blocks)."""
    x = nodes[elements]
    e1 = x[:, 1] - x[:, 0]
    e2 = x[:, 3] - x[:, 0]
    e3 = x[:, 4] - x[:, 0]
    neg = np.einsum("ei,ei->e", np.cross(e1, e2), e3) < 0
    elements = elements.copy()
    elements[neg] = elements[neg][:, [0, 3, 2, 1, 4, 7, 6, 5]]
    return elements


class _Builder:
    def __init__(self, tol):
        self.tol = tol
        self.nodes = []
        self.node_fiber = []
        self.keys = {}

    def node(self, fiber, p):
        key = (fiber,) + tuple(np.round(np.asarray(p) / self.tol).astype(np.int64))
        idx = self.keys.get(key)
        if idx is None:
            idx = len(self.nodes)
            self.keys[key] = idx
            self.nodes.append(np.asarray(p, dtype=float))
            self.node_fiber.append(fiber)
        return idx


def generate_fiber_rve(params: MeshParams) -> RveMesh:
    """Build the RVE mesh, its face sets, bond pairs and contact interfaces."""
    if params.layout == "solid":
        return _generate_solid(params)
    R = params.fiber_radius
    _, n_r, n_a = params.divisions
    c = params.per_quarter
    La = params.length_axial
    if params.layout == "quarter":
        box2 = np.array([2 * R, 2 * R])
        fibers = [
            ((0.0, 0.0), [0]),
            ((2 * R, 0.0), [1]),
            ((2 * R, 2 * R), [2]),
            ((0.0, 2 * R), [3]),
        ]
    else:
        nx, ny = params.grid
        box2 = np.array([2 * R * nx, 2 * R * ny])
        fibers = [
            (((2 * i + 1) * R, (2 * j + 1) * R), [0, 1, 2, 3]) for j in range(ny) for i in range(nx)
        ]
    perm = _AXIS_PERMUTATION[params.fiber_axis]
    box_local = np.array([box2[0], box2[1], La])
    box = np.empty(3)
    box[list(perm)] = box_local
    tol = 1e-9 * float(np.max(box_local))

    pts, quads, arc = _quarter_disk(R, c, n_r, params.core_ratio)
    zs = np.linspace(0.0, La, n_a + 1)
    builder = _Builder(tol)
    elements, element_fiber = [], []
    surface_grids = []
    centers = []

    def to_global(p):
        g = np.empty(3)
        g[list(perm)] = p
        return g

    for f, (center, quadrants) in enumerate(fibers):
        grid = {}
        centers.append(to_global(np.array([center[0], center[1], 0.5 * La])))
        for q in quadrants:
            s1, s2 = _QUADRANT_SIGNS[q]
            local = np.column_stack([center[0] + s1 * pts[:, 0], center[1] + s2 * pts[:, 1]])
            layer_ids = np.array(
                [[builder.node(f, to_global(np.array([x, y, z]))) for x, y in local] for z in zs]
            )
            for lay in range(n_a):
                bot = layer_ids[lay][quads]
                top = layer_ids[lay + 1][quads]
                elements.append(np.hstack([bot, top]))
                element_fiber.extend([f] * len(quads))
            for k in range(c + 1):
                K = {0: k, 1: 2 * c - k, 2: 2 * c + k, 3: (4 * c - k) % (4 * c)}[q]
                grid[K] = layer_ids[:, arc[k]]
        surface_grids.append(grid)

    nodes = np.array(builder.nodes)
    elements = _fix_orientation(nodes, np.vstack(elements))
    mesh = RveMesh(
        nodes=nodes,
        elements=elements,
        box=box,
        fiber_radius=R,
        element_fiber=np.array(element_fiber, dtype=int),
        node_fiber=np.array(builder.node_fiber, dtype=int),
        fiber_centers=np.array(centers),
        surface_grids=surface_grids,
        params=params,
    )
    mesh.face_sets = tag_faces(mesh)
    mesh.bond_pairs = find_bond_pairs(mesh)
    mesh.contact_surfaces = identify_contact_interfaces(mesh)
    return mesh


def _generate_solid(params: MeshParams) -> RveMesh:
    n, _, n_a = params.divisions
    L = 2.0 * params.fiber_radius
    box = np.array([L, L, L])
    box[params.fiber_axis - 1] = params.length_axial
    counts = [n, n, n]
    counts[params.fiber_axis - 1] = n_a
    return generate_block(box, counts, params)


def generate_block(box, counts, params: MeshParams | None = None) -> RveMesh:
    """Homogeneous box [0, box] meshed with counts[i] elements per axis."""
    box = np.asarray(box, dtype=float)
    n1, n2, n3 = counts
    axes = [np.linspace(0.0, box[i], counts[i] + 1) for i in range(3)]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def nid(i, j, k):
        return (i * (n2 + 1) + j) * (n3 + 1) + k

    elements = []
    for i in range(n1):
        for j in range(n2):
            for k in range(n3):
                elements.append(
                    [
                        nid(i, j, k), nid(i + 1, j, k), nid(i + 1, j + 1, k), nid(i, j + 1, k),
                        nid(i, j, k + 1), nid(i + 1, j, k + 1), nid(i + 1, j + 1, k + 1), nid(i, j + 1, k + 1),
                    ]
                )
    mesh = RveMesh(
        nodes=nodes,
        elements=np.array(elements, dtype=int),
        box=box,
        fiber_radius=0.5 * float(box[0]),
        element_fiber=np.zeros(len(elements), dtype=int),
        node_fiber=np.zeros(len(nodes), dtype=int),
        fiber_centers=(0.5 * box)[None],
        surface_grids=[{}],
        params=params,
    )
    mesh.face_sets = tag_faces(mesh)
    return mesh


# ---------------------------------------------------------------------------
# tagging


def _tol(mesh: RveMesh) -> float:
    return 1e-10 * mesh.char_length


def tag_faces(mesh: RveMesh) -> dict:
    lo = mesh.nodes.min(axis=0)
    hi = lo + mesh.box
    tol = _tol(mesh)
    sets = {}
    for axis, name in enumerate("ABC"):
        sets[name + "-"] = np.flatnonzero(np.abs(mesh.nodes[:, axis] - lo[axis]) < tol)
        sets[name + "+"] = np.flatnonzero(np.abs(mesh.nodes[:, axis] - hi[axis]) < tol)
    return sets


def _coord_keys(points, tol):
    return [tuple(k) for k in np.round(points / tol).astype(np.int64)]


def find_bond_pairs(mesh: RveMesh) -> np.ndarray:
    """Coincident nodes belonging to different fibers (tangency generatrices)."""
    tol = _tol(mesh)
    groups = {}
    for idx, key in enumerate(_coord_keys(mesh.nodes, 10 * tol)):
        groups.setdefault(key, []).append(idx)
    pairs = []
    for members in groups.values():
        if len(members) > 1:
            first = members[0]
            pairs.extend((first, other) for other in members[1:])
    pairs = np.array(sorted(pairs), dtype=int).reshape(-1, 2)
    if len(pairs):
        dist = np.linalg.norm(mesh.nodes[pairs[:, 0]] - mesh.nodes[pairs[:, 1]], axis=1)
        if np.any(dist > tol * 100):
            raise MeshError("bond pair nodes are not coincident")
    return pairs


def identify_periodic_pairs(mesh: RveMesh):
    """Match every node of each minus face with its image on the plus face.

    Returns a list of ``(node_minus, node_plus, axis)`` tuples.
    """
    tol = _tol(mesh)
    pairs = []
    for axis, name in enumerate("ABC"):
        minus = mesh.face_sets[name + "-"]
        plus = mesh.face_sets[name + "+"]
        others = [i for i in range(3) if i != axis]
        plus_keys = {}
        for idx, key in zip(plus, _coord_keys(mesh.nodes[plus][:, others], 10 * tol)):
            plus_keys.setdefault(key, []).append(idx)
        minus_keys = {}
        for idx, key in zip(minus, _coord_keys(mesh.nodes[minus][:, others], 10 * tol)):
            minus_keys.setdefault(key, []).append(idx)
        for key, members in minus_keys.items():
            partners = plus_keys.get(key)
            if partners is None:
                n = members[0]
                raise MeshError(
                    f"node {n} at {mesh.nodes[n]} on face {name}- has no periodic image on face {name}+"
                )
            for i, n in enumerate(members):
                pairs.append((int(n), int(partners[min(i, len(partners) - 1)]), axis))
        for key, members in plus_keys.items():
            if key not in minus_keys:
                n = members[0]
                raise MeshError(
                    f"node {n} at {mesh.nodes[n]} on face {name}+ has no periodic image on face {name}-"
                )
    return pairs


def _surface_area_weights(mesh: RveMesh, grid: dict) -> dict:
    """Tributary lateral area of every node of one fiber's surface grid."""
    ks = sorted(grid)
    weights = {}
    for K in ks:
        ids = grid[K]
        x = mesh.nodes[ids]
        width = 0.0
        for nb in (K - 1, K + 1):
            nb = nb % mesh.params.divisions[0]
            if nb in grid:
                width += 0.5 * np.linalg.norm(mesh.nodes[grid[nb]][0] - x[0])
        axial = np.linalg.norm(np.diff(x, axis=0), axis=1)
        span = np.zeros(len(ids))
        span[:-1] += 0.5 * axial
        span[1:] += 0.5 * axial
        weights[K] = width * span
    return weights


def identify_contact_interfaces(mesh: RveMesh) -> list:
    """Master/slave surfaces for every pair of touching fibers inside the cell.

    The facing surface of the master within ``contact_window`` circumferential
    steps of the tangency line forms the structured master grid; the
    partner's facing nodes, minus the bonded tangency line, are slaves. With
    ``two_pass_contact`` each touching pair yields two interfaces with the
    roles swapped, which keeps the discretization as symmetric as the cell.
    """
    params = mesh.params
    if params is None or params.layout == "solid" or len(mesh.surface_grids) < 2:
        return []
    c = params.per_quarter
    n_circ = 4 * c
    window = params.contact_window if params.contact_window is not None else max(c // 2, 1)
    R = mesh.fiber_radius
    axial = params.fiber_axis - 1
    perm = _AXIS_PERMUTATION[params.fiber_axis]
    centers = mesh.fiber_centers

    def facing_index(i, j):
        d = centers[j] - centers[i]
        d[axial] = 0.0
        local = d[list(perm)]
        angle = np.arctan2(local[1], local[0])
        return int(round(angle / (0.5 * np.pi / c))) % n_circ, d / np.linalg.norm(d)

    def interface(i, j):
        K_ij, outward = facing_index(i, j)
        K_ji, _ = facing_index(j, i)
        gi, gj = mesh.surface_grids[i], mesh.surface_grids[j]
        master_ks = [(K_ij + s) % n_circ for s in range(-window, window + 1)]
        master_ks = [K for K in master_ks if K in gi]
        if len(master_ks) < 2:
            raise MeshError(f"master surface of fiber {i} towards fiber {j} is not a structured grid")
        offsets = [(K - K_ij + n_circ // 2) % n_circ - n_circ // 2 for K in master_ks]
        if np.any(np.diff(offsets) != 1):
            raise MeshError(f"master surface of fiber {i} towards fiber {j} is not contiguous")
        master_grid = np.array([gi[K] for K in master_ks])
        areas = _surface_area_weights(mesh, gj)
        slave_nodes, slave_area = [], []
        for s in range(-window, window + 1):
            K = (K_ji + s) % n_circ
            if s == 0 or K not in gj:
                continue
            slave_nodes.extend(gj[K])
            slave_area.extend(areas[K])
        return ContactSurface(
            master_fiber=i,
            slave_fiber=j,
            master_grid=master_grid,
            slave_nodes=np.array(slave_nodes, dtype=int),
            slave_area=np.array(slave_area, dtype=float),
            outward=outward,
        )

    out = []
    for i in range(len(centers)):
        for j in range(i + 1, len(centers)):
            d = centers[j] - centers[i]
            d[axial] = 0.0
            if abs(np.linalg.norm(d) - 2 * R) > 1e-9 * R:
                continue
            out.append(interface(i, j))
            if params.two_pass_contact:
                out.append(interface(j, i))
    return out


def mirrored(mesh: RveMesh, axis: int) -> RveMesh:
    """Reflect the mesh across the mid-plane normal to ``axis``."""
    out = _copy_mesh(mesh)
    lo = mesh.nodes[:, axis].min()
    out.nodes[:, axis] = 2 * lo + mesh.box[axis] - mesh.nodes[:, axis]
    out.elements = _fix_orientation(out.nodes, mesh.elements)
    out.face_sets = tag_faces(out)
    return out
