"""Thickness integration of the effective solid matrix into a shell law.

Shell generalized strains are ordered as

    (eps11, eps22, 2 eps12, k11, k22, 2 k12, g1, g2, E1, E2, eps33_0, eps33_1, E3_0, E3_1)

and map onto the solid generalized strain at the normalized thickness
coordinate ``xi3`` through ``E_g = A(xi3) E_s``, where the curvature-type
columns of ``A`` hold the distance ``h * xi3``. The shell matrix is

    D_shell = h * int_{-1/2}^{1/2} A^T D A mu dxi3.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_SHELL = 14

SHELL_LABELS = (
    "eps11", "eps22", "2eps12", "k11", "k22", "2k12", "g1", "g2",
    "E1", "E2", "eps33_0", "eps33_1", "E3_0", "E3_1",
)  # fmt: skip
RESULTANT_LABELS = (
    "n11", "n22", "n12", "m11", "m22", "m12", "p1", "p2",
    "-d1", "-d2", "n33_0", "n33_1", "-d3_0", "-d3_1",
)  # fmt: skip

# labelled partitions of the shell strain vector, used by the block report
PARTITIONS = {
    "membrane": (0, 1, 2),
    "bending": (3, 4, 5),
    "shear": (6, 7),
    "in-plane electric": (8, 9),
    "thickness": (10, 11),
    "thickness electric": (12, 13),
}

# (solid slot, shell slot) with a unit entry and with an h * xi3 entry
_UNIT = ((0, 0), (1, 1), (2, 10), (3, 2), (4, 6), (5, 7), (6, 8), (7, 9), (8, 12))
_LINEAR = ((0, 3), (1, 4), (2, 11), (3, 5), (8, 13))


class ShellError(ValueError):
    pass


def build_A(xi3: float, h: float = 1.0) -> np.ndarray:
    """Map from shell to solid generalized strain at thickness coordinate ``xi3``.

    Parameters
    ----------
    xi3 : float
        Normalized thickness coordinate in ``[-1/2, 1/2]``.
    h : float
        Thickness. Curvature-type columns carry the distance ``h * xi3`` from
        the midsurface, which gives the ``h^3 / 12`` bending weight.

    Returns
    -------
    ndarray, shape (9, 14)
    """
    xi3 = float(xi3)
    if not np.isfinite(xi3) or abs(xi3) > 0.5:
        raise ShellError(f"thickness coordinate {xi3} outside [-1/2, 1/2]")
    A = np.zeros((9, N_SHELL))
    for i, j in _UNIT:
        A[i, j] = 1.0
    for i, j in _LINEAR:
        A[i, j] = h * xi3
    return A


@dataclass
class ShellMatrix:
    D: np.ndarray  # (14, 14)
    h: float
    mu_bar: float = 1.0
    n_gauss: int = 2

    def block(self, rows: str, cols: str | None = None) -> np.ndarray:
        r = PARTITIONS[rows]
        c = PARTITIONS[cols or rows]
        return self.D[np.ix_(r, c)]


@dataclass
class StressResultants:
    L: np.ndarray  # (14,)

    def __getitem__(self, key):
        if isinstance(key, str):
            return self.L[RESULTANT_LABELS.index(key)]
        return self.L[key]

    def as_dict(self) -> dict:
        return dict(zip(RESULTANT_LABELS, map(float, self.L)))


def _solid_matrix(Dm):
    """Return a callable ``xi3 -> (9, 9)`` from a matrix, callable or effective matrix."""
    if callable(Dm):
        return Dm
    D = np.asarray(getattr(Dm, "D", Dm), dtype=float)
    if D.shape != (9, 9):
        raise ShellError(f"solid matrix must be 9x9, got {D.shape}")
    return lambda xi3: D


def integrate_shell_matrix(Dm, h: float, n_gauss: int = 2, mu_bar: float = 1.0) -> ShellMatrix:
    """Gauss integration of ``A^T D A`` through the thickness.

    Parameters
    ----------
    Dm : EffectiveMatrix, array_like or callable
        Solid matrix, constant or given per thickness coordinate as
        ``Dm(xi3) -> (9, 9)`` (layered RVEs).
    h : float
        Shell thickness.
    n_gauss : int
        Number of Gauss points; two integrate a constant matrix exactly.
    mu_bar : float
        Shifter determinant, 1 for slightly curved shells.
    """
    h = float(h)
    if not h > 0.0 or not np.isfinite(h):
        raise ShellError(f"shell thickness must be positive, got {h}")
    if n_gauss < 2:
        raise ShellError("at least 2 Gauss points are needed")
    if not mu_bar > 0.0:
        raise ShellError(f"shifter determinant must be positive, got {mu_bar}")
    layer = _solid_matrix(Dm)
    pts, wts = np.polynomial.legendre.leggauss(n_gauss)
    out = np.zeros((N_SHELL, N_SHELL))
    for p, w in zip(0.5 * pts, 0.5 * wts):
        A = build_A(p, h)
        D = np.asarray(layer(p), dtype=float)
        if D.shape != (9, 9):
            raise ShellError(f"solid matrix at xi3={p} must be 9x9, got {D.shape}")
        out += w * (A.T @ D @ A)
    return ShellMatrix(h * mu_bar * out, h, float(mu_bar), int(n_gauss))


def stress_resultants(shell: ShellMatrix, E_s) -> StressResultants:
    E_s = np.asarray(E_s, dtype=float)
    if E_s.shape != (N_SHELL,):
        raise ShellError(f"shell strain must have {N_SHELL} entries, got shape {E_s.shape}")
    return StressResultants(shell.D @ E_s)


def write_shell_csv(shell: ShellMatrix, path) -> None:
    """Write the matrix with a header row and a label column."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row"] + list(SHELL_LABELS))
        for lab, row in zip(SHELL_LABELS, shell.D):
            w.writerow([lab] + [repr(float(v)) for v in row])


def format_report(shell: ShellMatrix, fmt: str = "{:>11.4e}") -> str:
    """Block report of the non-zero partitions of the shell matrix."""
    lines = [f"shell matrix  h = {shell.h:g}  mu_bar = {shell.mu_bar:g}  gauss = {shell.n_gauss}"]
    for rname, r in PARTITIONS.items():
        for cname, c in PARTITIONS.items():
            blk = shell.D[np.ix_(r, c)]
            if not np.any(blk):
                continue
            lines.append("")
            lines.append(f"[{rname} / {cname}]")
            lines.append(" " * 9 + " ".join(f"{SHELL_LABELS[j]:>11}" for j in c))
            for i, vals in zip(r, blk):
                lines.append(f"{SHELL_LABELS[i]:>8} " + " ".join(fmt.format(v) for v in vals))
    return "\n".join(lines) + "\n"
