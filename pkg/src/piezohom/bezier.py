"""Bicubic Bezier-9 smoothing of a structured master surface.

A patch is built around a central master node and its eight neighbours. The
16 control points follow from the 3x3 node stencil by the same linear
operator applied in both parametric directions,

    d = T X T^T,   T = [[1/2,        1/2,        0        ],
                        [(1-b)/2,    (1+b)/2,    0        ],
                        [0,          (1+b)/2,    (1-b)/2  ],
                        [0,          1/2,        1/2      ]]

so the patch spans the dual cell between the mid-points of the segments
adjacent to the central node. Because the map is linear, the surface point
is a fixed combination of the nine nodes: x(z) = sum_ij b_i(z1) b_j(z2) x_ij
with b = T^T B(z) and B the cubic Bernstein basis. Potentials use the same
weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_BETA = 2.0 / 3.0


class DegeneratePatchError(ValueError):
    pass


def control_operator(beta: float = DEFAULT_BETA) -> np.ndarray:
    return np.array(
        [
            [0.5, 0.5, 0.0],
            [0.5 * (1 - beta), 0.5 * (1 + beta), 0.0],
            [0.0, 0.5 * (1 + beta), 0.5 * (1 - beta)],
            [0.0, 0.5, 0.5],
        ]
    )


def bernstein3(t):
    """Cubic Bernstein values and first three derivatives, each shape (4,)."""
    s = 1.0 - t
    B = np.array([s**3, 3 * t * s**2, 3 * t**2 * s, t**3])
    dB = np.array([-3 * s**2, 3 * s**2 - 6 * t * s, 6 * t * s - 3 * t**2, 3 * t**2])
    ddB = np.array([6 * s, -12 * s + 6 * t, 6 * s - 12 * t, 6 * t])
    dddB = np.array([-6.0, 18.0, -18.0, 6.0])
    return B, dB, ddB, dddB


def bernstein(k: int, n: int, t):
    from math import comb

    return comb(n, k) * t**k * (1 - t) ** (n - k)


def stencil_basis(t, beta=DEFAULT_BETA):
    """1D stencil weights b = T^T B(t) and derivatives, shape (4, 3)."""
    T = control_operator(beta)
    return np.array([T.T @ v for v in bernstein3(t)])


@dataclass
class BezierPatch:
    control_points: np.ndarray  # (16, 3), index 4k + l
    control_potentials: np.ndarray  # (16,)
    beta: float
    grid: np.ndarray  # (3, 3) source node ids (-1 for ghost nodes)

    def cp(self) -> np.ndarray:
        return self.control_points.reshape(4, 4, 3)


def build_bezier9(grid_coords, grid_potentials=None, beta=DEFAULT_BETA, grid=None) -> BezierPatch:
    """Control net from a 3x3 node stencil (axis 0: first direction)."""
    X = np.asarray(grid_coords, dtype=float).reshape(3, 3, 3)
    phi = np.zeros((3, 3)) if grid_potentials is None else np.asarray(grid_potentials, float).reshape(3, 3)
    flat = X.reshape(9, 3)
    dist = np.linalg.norm(flat[:, None] - flat[None], axis=-1)
    scale = max(np.max(dist), 1e-300)
    if np.any(dist[np.triu_indices(9, 1)] < 1e-12 * scale):
        raise DegeneratePatchError("repeated master nodes in Bezier-9 stencil")
    T = control_operator(beta)
    d = np.einsum("ki,ijc,lj->klc", T, X, T)
    dphi = T @ phi @ T.T
    if grid is None:
        grid = np.full((3, 3), -1)
    return BezierPatch(d.reshape(16, 3), dphi.ravel(), float(beta), np.asarray(grid))


def surface_eval(patch: BezierPatch, zeta):
    """Point, potential, tangents (2, 3) and unit normal at zeta in [0, 1]^2."""
    z1, z2 = zeta
    B1, dB1, *_ = bernstein3(z1)
    B2, dB2, *_ = bernstein3(z2)
    d = patch.cp()
    x = np.einsum("k,l,klc->c", B1, B2, d)
    a1 = np.einsum("k,l,klc->c", dB1, B2, d)
    a2 = np.einsum("k,l,klc->c", B1, dB2, d)
    phi = B1 @ patch.control_potentials.reshape(4, 4) @ B2
    cr = np.cross(a1, a2)
    norm = np.linalg.norm(cr)
    if norm < 1e-14 * max(np.linalg.norm(a1) * np.linalg.norm(a2), 1e-300):
        raise DegeneratePatchError("zero-area tangent plane")
    return x, phi, np.array([a1, a2]), cr / norm


# ---------------------------------------------------------------------------
# stencils over real nodes of a structured master grid


def _stencil_1d(i: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Real node indices and (3, m) map for a stencil centred at i of n nodes.

    Missing neighbours at the grid border are linear extrapolations
    (ghost = 2 x_i - x_inner).
    """
    if n < 2:
        raise DegeneratePatchError("structured master grid needs at least 2 nodes per direction")
    if 0 < i < n - 1:
        return np.array([i - 1, i, i + 1]), np.eye(3)
    if i == 0:
        return np.array([0, 1]), np.array([[2.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    return np.array([n - 2, n - 1]), np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 2.0]])


@dataclass
class PatchStencil:
    """Patch centred at master grid node (i, j), expressed on real nodes."""

    center: tuple[int, int]
    nodes: np.ndarray  # (m,) global node ids
    S: np.ndarray  # (9, m) stencil position = S @ real positions
    sign: float = 1.0  # orientation making a1 x a2 point out of the master body

    def weights(self, zeta, beta=DEFAULT_BETA):
        """Surface weights on real nodes and their derivatives up to order 3.

        Returns w (m,), dw (m, 2), ddw (m, 2, 2), dddw (m, 2, 2, 2).
        """
        b1 = stencil_basis(zeta[0], beta)
        b2 = stencil_basis(zeta[1], beta)
        # W[o1, o2] = weights differentiated o1 times along z1 and o2 along z2
        W = (b1[:, None, :, None] * b2[None, :, None, :]).reshape(4, 4, 9) @ self.S
        w = W[0, 0]
        dw = np.stack([W[1, 0], W[0, 1]], axis=-1)
        ddw = np.empty((len(w), 2, 2))
        ddw[:, 0, 0] = W[2, 0]
        ddw[:, 1, 1] = W[0, 2]
        ddw[:, 0, 1] = ddw[:, 1, 0] = W[1, 1]
        dddw = np.empty((len(w), 2, 2, 2))
        for a in range(2):
            for b in range(2):
                for c in range(2):
                    o1 = (a == 0) + (b == 0) + (c == 0)
                    dddw[:, a, b, c] = W[o1, 3 - o1]
        return w, dw, ddw, dddw

    def to_patch(self, positions, potentials=None, beta=DEFAULT_BETA) -> BezierPatch:
        X = self.S @ np.asarray(positions)[self.nodes]
        phi = None if potentials is None else self.S @ np.asarray(potentials)[self.nodes]
        return build_bezier9(X.reshape(3, 3, 3), None if phi is None else phi.reshape(3, 3), beta)


def grid_stencils(master_grid: np.ndarray) -> dict:
    """Patch stencils centred at every node of a structured (n1, n2) grid."""
    n1, n2 = master_grid.shape
    out = {}
    for i in range(n1):
        ri, Si = _stencil_1d(i, n1)
        for j in range(n2):
            rj, Sj = _stencil_1d(j, n2)
            nodes = master_grid[np.ix_(ri, rj)].ravel()
            out[i, j] = PatchStencil((i, j), nodes, np.kron(Si, Sj))
    return out
