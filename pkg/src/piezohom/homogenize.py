"""Volume averaging, Hill check, coefficient extraction and the secant matrix.

Averaged generalized stress is the fiber-volume integral divided by the full
cell volume (voids carry no field). Averaged generalized strain is taken from
the cell boundary: face means of ``u`` and ``phi`` over the solid part of each
face. For periodic and affine boundary data this equals the imposed macro
strain exactly.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .constraints import (
    LOAD_TABLE,
    SUPPLEMENTARY_ROWS,
    TABLE_ROWS,
    LoadCase,
    affine_field,
    build_load_case,
    build_periodic_constraints,
)
from .contact import PenaltyParams, build_interfaces
from .element import _physical_gradients, b_matrix, gauss_fields, shape_eval
from .material import ENTHALPY_SIGNS, PiezoMaterial, micro_constitutive_matrix
from .mesh import RveMesh
from .solver import CoupledSystem, Solution, SolverOptions, newton_solve

# local node lists of the six faces of the 8-node brick
_HEX_FACES = np.array(
    [[0, 3, 7, 4], [1, 2, 6, 5], [0, 1, 5, 4], [3, 2, 6, 7], [0, 1, 2, 3], [4, 5, 6, 7]]
)
_G = 1.0 / np.sqrt(3.0)
_QUAD_GP = [(-_G, -_G), (_G, -_G), (_G, _G), (-_G, _G)]
_QUAD_XI = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)

# extraction order: field cases first so coupling terms are known when the
# mechanical cases need a row correction
EXTRACTION_ORDER = (
    "eps33bar", "e13bar", "e33bar", "eps11bar",
    "C11bar", "C12bar", "C22bar", "C13bar", "C33bar", "C44bar", "C66bar", "e15bar",
)  # fmt: skip


class ExtractionError(ValueError):
    pass


@dataclass
class AveragedState:
    strain: np.ndarray  # boundary-average generalized strain (9,)
    stress: np.ndarray  # volume-average generalized stress over V_RVE (9,)
    solid_strain: np.ndarray  # fiber-volume strain integral over V_RVE (9,)
    volume_solid: float
    volume_void: float
    volume_rve: float
    nominal: np.ndarray | None = None


@dataclass
class HillResult:
    gap: float | None  # |W_macro - w_micro| / |W_macro|; None when W_macro vanishes
    defect: float | None  # signed (W_macro - w_micro) / |W_macro|
    macro_work: float
    micro_work: float
    contact_work: float  # fluctuation work of the contact forces, per unit volume
    penalty_energy: float  # 1/2 rho g^2 summed, per unit volume

    @property
    def defined(self) -> bool:
        return self.gap is not None

    @property
    def predicted_defect(self) -> float | None:
        """Signed defect implied by the contact-force bookkeeping."""
        if not self.defined:
            return None
        return self.contact_work / abs(self.macro_work)

    @property
    def penalty_ratio(self) -> float | None:
        if not self.defined:
            return None
        return self.penalty_energy / abs(self.macro_work)


# ---------------------------------------------------------------------------
# averages


def face_area_weights(mesh: RveMesh, face: str):
    """Nodes of a cell face and their consistent area weights int N_a dA."""
    in_face = np.zeros(mesh.n_nodes, dtype=bool)
    in_face[mesh.face_sets[face]] = True
    quads = mesh.elements[:, _HEX_FACES].reshape(-1, 4)
    quads = quads[in_face[quads].all(axis=1)]
    weights = np.zeros(mesh.n_nodes)
    x = mesh.nodes[quads]  # (nq, 4, 3)
    for xi, eta in _QUAD_GP:
        N = 0.25 * (1 + _QUAD_XI[:, 0] * xi) * (1 + _QUAD_XI[:, 1] * eta)
        dxi = 0.25 * _QUAD_XI[:, 0] * (1 + _QUAD_XI[:, 1] * eta)
        deta = 0.25 * _QUAD_XI[:, 1] * (1 + _QUAD_XI[:, 0] * xi)
        a = np.einsum("a,qai->qi", dxi, x)
        b = np.einsum("a,qai->qi", deta, x)
        dA = np.linalg.norm(np.cross(a, b), axis=1)
        np.add.at(weights, quads, N[None, :] * dA[:, None])
    nodes = np.flatnonzero(weights > 0)
    return nodes, weights[nodes]


def boundary_strain(mesh: RveMesh, q) -> np.ndarray:
    """Generalized strain from face means of (u, phi) over the solid face parts."""
    q = np.asarray(q)
    means = {}
    for face in ("A-", "A+", "B-", "B+", "C-", "C+"):
        nodes, w = face_area_weights(mesh, face)
        if w.sum() <= 0:
            raise ExtractionError(f"face {face} carries no solid area")
        means[face] = w @ q[nodes] / w.sum()
    L = mesh.box
    grad = np.zeros((4, 3))  # d(u1,u2,u3,phi)/dx_j
    for j, name in enumerate("ABC"):
        grad[:, j] = (means[name + "+"] - means[name + "-"]) / L[j]
    H = grad[:3]
    return np.array(
        [
            H[0, 0],
            H[1, 1],
            H[2, 2],
            H[0, 1] + H[1, 0],
            H[0, 2] + H[2, 0],
            H[1, 2] + H[2, 1],
            -grad[3, 0],
            -grad[3, 1],
            -grad[3, 2],
        ]
    )


def volume_average(sol: Solution | np.ndarray, mesh: RveMesh, D, nominal=None) -> AveragedState:
    q = sol.q if isinstance(sol, Solution) else np.asarray(sol)
    qe = q[mesh.elements].reshape(len(mesh.elements), 32)
    strain, stress, dv = gauss_fields(mesh.element_coords(), qe, np.asarray(D))
    V = mesh.volume_cell
    Vs = float(dv.sum())
    return AveragedState(
        strain=boundary_strain(mesh, q),
        stress=np.einsum("egi,eg->i", stress, dv) / V,
        solid_strain=np.einsum("egi,eg->i", strain, dv) / V,
        volume_solid=Vs,
        volume_void=V - Vs,
        volume_rve=V,
        nominal=None if nominal is None else np.asarray(nominal, dtype=float),
    )


def midpoint_average(q, mesh: RveMesh, D) -> np.ndarray:
    """One-point (element centre) stress average, an independent cross-check."""
    _, dN = shape_eval(np.zeros(3))
    coords = mesh.element_coords()
    grads, detj = _physical_gradients(coords, dN[None])
    B = b_matrix(grads)[:, 0]
    qe = np.asarray(q)[mesh.elements].reshape(len(mesh.elements), 32)
    g = np.einsum("eip,ep->ei", B, qe)
    return (g @ np.asarray(D).T * (8.0 * detj[:, 0])[:, None]).sum(axis=0) / mesh.volume_cell


def hill_check(sol: Solution, avg: AveragedState, system: CoupledSystem, macro=None) -> HillResult:
    """Compare macro work with the volume average of the micro work.

    Works use the enthalpy pairing ``sigma:eps - D.Ef`` (the pairing the
    element residuals are conjugate to). For periodic data the exact discrete
    identity ``V (W_macro - w_micro) = q_fluct . R_contact`` holds, where
    ``q_fluct`` is the solution minus the affine part of ``macro``.
    """
    mesh = system.mesh
    J = ENTHALPY_SIGNS
    Ebar = avg.strain if macro is None else np.asarray(macro, dtype=float)
    W_M = float(Ebar @ (J * avg.stress))
    q = sol.q_reduced
    V = avg.volume_rve
    w_m = float(q @ (system.K_el @ q)) / V
    contact_work = 0.0
    if np.any(sol.contact_force):
        aff = affine_field(mesh, Ebar)
        q_aff = np.zeros_like(q)
        q_aff.reshape(-1, 4)[:] = aff[system.dofmap.kept]
        contact_work = float((q - q_aff) @ sol.contact_force) / V
    pen = sol.contact_energy / V
    scale = max(abs(W_M), abs(w_m))
    if scale == 0.0 or abs(W_M) <= 1e-14 * max(scale, 1e-300):
        return HillResult(None, None, W_M, w_m, contact_work, pen)
    defect = (W_M - w_m) / abs(W_M)
    return HillResult(abs(defect), defect, W_M, w_m, contact_work, pen)


# ---------------------------------------------------------------------------
# coefficients


def _tetragonal_matrix(c: dict) -> np.ndarray:
    """9x9 matrix with the tetragonal slot pattern, unknown entries left at 0."""
    g = lambda k: c.get(k, 0.0)  # noqa: E731
    M = np.zeros((9, 9))
    M[0, 0] = M[1, 1] = g("C11bar")
    if "C22bar" in c:
        M[1, 1] = c["C22bar"]
    M[0, 1] = M[1, 0] = g("C12bar")
    M[0, 2] = M[1, 2] = M[2, 0] = M[2, 1] = g("C13bar")
    M[2, 2] = g("C33bar")
    M[3, 3] = M[4, 4] = g("C44bar")
    M[5, 5] = g("C66bar")
    M[0, 8] = M[1, 8] = -g("e13bar")
    M[2, 8] = -g("e33bar")
    M[3, 7] = M[4, 6] = -g("e15bar")
    M[6, 4] = M[7, 3] = g("e15bar")
    M[6, 6] = M[7, 7] = g("eps11bar")
    M[8, 0] = M[8, 1] = g("e13bar")
    M[8, 2] = g("e33bar")
    M[8, 8] = g("eps33bar")
    return M


def tetragonal_pattern() -> np.ndarray:
    """Boolean mask of the structurally non-zero slots of the tetragonal matrix."""
    return _tetragonal_matrix({k: 1.0 for k in LOAD_TABLE}) != 0.0


def extract_coefficient(case: LoadCase, avg: AveragedState, known: dict | None = None) -> float:
    """Stress-to-strain ratio for ``case``, correcting for other non-zero strain slots.

    When the boundary data leave a secondary generalized strain component
    non-zero (e.g. a free potential face), its contribution is removed using
    already extracted coefficients of the same matrix row.
    """
    E = avg.strain
    den = E[case.denominator]
    if abs(den) <= 1e-14:
        raise ExtractionError(f"vanishing denominator for {case.name}: {den:.3e}")
    num = avg.stress[case.numerator]
    if known:
        row = _tetragonal_matrix(known)[case.numerator]
        thresh = 1e-12 * abs(den)
        for k in range(9):
            if k != case.denominator and abs(E[k]) > thresh and row[k] != 0.0:
                num -= row[k] * E[k]
    return case.sign * num / den


@dataclass
class CaseResult:
    name: str
    amplitude: float
    value: float | None
    averages: AveragedState
    hill: HillResult | None
    iterations: int
    converged: bool
    contact_energy: float
    solution: Solution | None = None


@dataclass
class EffectiveMatrix:
    D: np.ndarray
    amplitude: float
    coefficients: dict
    provenance: dict  # coefficient -> load case id
    partial: bool = False
    cases: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.coefficients[key]


@dataclass
class HomogenizationSetup:
    """Everything needed to run load cases on one RVE."""

    mesh: RveMesh
    material: PiezoMaterial
    mode: str = "periodic"
    contact: bool = True
    penalty: PenaltyParams | None = None
    options: SolverOptions = field(default_factory=SolverOptions)
    beta: float = 2.0 / 3.0
    field_amplitude: float = 1.0  # V/um, magnitude used by the field-driven cases
    keep_solutions: bool = False

    def __post_init__(self):
        self.D = micro_constitutive_matrix(self.material).D
        self.interfaces = build_interfaces(self.mesh) if self.contact else []
        if self.penalty is None:
            self.penalty = PenaltyParams.default(self.material, self.mesh.char_length)

    def system(self, cset) -> CoupledSystem:
        return CoupledSystem(
            self.mesh, self.D, cset, self.interfaces, self.penalty, self.beta, self.options
        )

    def run_case(self, name: str, amplitude: float) -> CaseResult:
        case = build_load_case(name, amplitude, self.mode)
        return self.run_load_case(case)

    def run_load_case(self, case: LoadCase) -> CaseResult:
        system = self.system(case.constraints(self.mesh))
        sol = newton_solve(system)
        nominal = case.macro_strain if case.mode == "periodic" else None
        avg = volume_average(sol, self.mesh, self.D, nominal)
        hill = hill_check(sol, avg, system, nominal) if case.mode == "periodic" else None
        return CaseResult(
            case.name,
            case.amplitude,
            None,
            avg,
            hill,
            sol.report.iterations,
            sol.report.converged,
            sol.contact_energy,
            sol if self.keep_solutions else None,
        )

    def run_macro(self, macro) -> tuple:
        """Periodic solve for an arbitrary macro generalized strain."""
        system = self.system(build_periodic_constraints(self.mesh, macro))
        sol = newton_solve(system)
        return sol, volume_average(sol, self.mesh, self.D, macro), system


def _map(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))  # order preserved
    return [fn(i) for i in items]


def build_secant_matrix(
    setup: HomogenizationSetup, amplitude: float, rows=None, threads: int = 1
) -> EffectiveMatrix:
    """Run the load cases at one amplitude and fill the tetragonal matrix.

    ``amplitude`` is the driven strain of the mechanical cases; its sign
    selects tension or compression. Field cases are driven by
    ``setup.field_amplitude`` with the same sign.
    """
    names = list(TABLE_ROWS + SUPPLEMENTARY_ROWS) if rows is None else list(rows)
    amps = {n: _case_amplitude(n, amplitude, setup.field_amplitude) for n in names}
    results = _map(lambda n: setup.run_case(n, amps[n]), names, threads)
    by_name = dict(zip(names, results))
    coeffs, prov = {}, {}
    partial = False
    for name in EXTRACTION_ORDER:
        if name not in by_name:
            continue
        res = by_name[name]
        if not res.converged:
            partial = True
        case = build_load_case(name, amps[name], setup.mode)
        res.value = extract_coefficient(case, res.averages, coeffs)
        coeffs[name] = res.value
        prov[name] = name
    missing = [n for n in TABLE_ROWS if n not in coeffs]
    partial = partial or bool(missing)
    return EffectiveMatrix(_tetragonal_matrix(coeffs), float(amplitude), coeffs, prov, partial, by_name)


def _case_amplitude(name: str, amplitude: float, field_amplitude: float) -> float:
    if LOAD_TABLE[name][2] >= 6:  # field-driven
        return float(np.copysign(field_amplitude, amplitude))
    return amplitude


def measured_matrix(setup: HomogenizationSetup, amplitude: float, threads: int = 1):
    """Full 9x9 secant matrix from nine periodic unit-slot experiments.

    Column ``j`` is the averaged generalized stress divided by the macro
    strain of slot ``j``. Returns ``(matrix, hill results)``.
    """
    M = np.zeros((9, 9))
    field_amp = _case_amplitude("eps33bar", amplitude, setup.field_amplitude)

    def column(j):
        macro = np.zeros(9)
        macro[j] = amplitude if j < 6 else field_amp
        sol, avg, system = setup.run_macro(macro)
        return macro[j], avg, hill_check(sol, avg, system, macro), sol.report.converged

    cols = _map(column, list(range(9)), threads)
    hills = []
    for j, (amp, avg, hill, conv) in enumerate(cols):
        M[:, j] = avg.stress / amp
        hills.append(hill)
    return M, hills


def sweep_amplitudes(setup: HomogenizationSetup, schedule, rows=None, threads: int = 1) -> dict:
    """Independent secant matrices along an amplitude schedule.

    Returns ``{"amplitudes": array, "matrices": [...], name: array, ...}``.
    """
    schedule = np.asarray(list(schedule), dtype=float)
    if schedule.ndim != 1 or len(schedule) == 0:
        raise ValueError("amplitude schedule must be a non-empty 1D sequence")
    d = np.diff(schedule)
    if len(d) and not (np.all(d > 0) or np.all(d < 0)):
        raise ValueError("amplitude schedule must be monotone")
    mats = [build_secant_matrix(setup, a, rows, threads) for a in schedule]
    out = {"amplitudes": schedule, "matrices": mats}
    for name in mats[0].coefficients:
        out[name] = np.array([m.coefficients[name] for m in mats])
    return out


def default_schedule(max_amplitude: float = 0.05, steps: int = 10) -> np.ndarray:
    """Log-spaced amplitudes, compression then tension."""
    pos = np.geomspace(max_amplitude / 100.0, max_amplitude, steps)
    return np.concatenate([-pos[::-1], pos])


def coefficient_rows(matrix: EffectiveMatrix) -> list:
    """CSV rows (amplitude, coefficient, value, hill_gap, iterations)."""
    rows = []
    for name, value in matrix.coefficients.items():
        res = matrix.cases.get(name)
        gap = None if res is None or res.hill is None else res.hill.gap
        rows.append((matrix.amplitude, name, value, gap, None if res is None else res.iterations))
    return rows


__all__ = [
    "AveragedState",
    "EffectiveMatrix",
    "HillResult",
    "HomogenizationSetup",
    "boundary_strain",
    "build_secant_matrix",
    "coefficient_rows",
    "default_schedule",
    "tetragonal_pattern",
    "extract_coefficient",
    "face_area_weights",
    "hill_check",
    "measured_matrix",
    "midpoint_average",
    "sweep_amplitudes",
    "volume_average",
]
