import numpy as np
import pytest
from conftest import UNIT_CUBE, distorted_cube, squeeze_constraints, two_bricks

from piezohom.constraints import ConstraintSet, build_load_case, build_periodic_constraints
from piezohom.contact import PenaltyParams
from piezohom.element import SingularJacobianError, element_stiffness
from piezohom.material import PiezoMaterial, micro_constitutive_matrix
from piezohom.mesh import RveMesh, generate_block
from piezohom.solver import (
    CoupledSystem,
    SingularSystemError,
    SolverOptions,
    newton_solve,
    solve_case,
)


def bare_mesh(coords_list):
    nodes = np.vstack(coords_list)
    elements = np.arange(len(nodes)).reshape(-1, 8)
    return RveMesh(
        nodes=nodes,
        elements=elements,
        box=np.ptp(nodes, axis=0),
        fiber_radius=1.0,
        element_fiber=np.zeros(len(elements), int),
        node_fiber=np.zeros(len(nodes), int),
    )


def test_single_element_blocks(D_micro, rng):
    coords = distorted_cube(rng)
    system = CoupledSystem(bare_mesh([coords]), D_micro, ConstraintSet(8))
    np.testing.assert_allclose(system.K_el.toarray(), element_stiffness(coords, D_micro), rtol=0, atol=0)


def test_disconnected_elements_block_diagonal(D_micro, rng):
    a, b = distorted_cube(rng), distorted_cube(rng) + [3.0, 0, 0]
    K = CoupledSystem(bare_mesh([a, b]), D_micro, ConstraintSet(16)).K_el.toarray()
    assert np.all(K[:32, 32:] == 0) and np.all(K[32:, :32] == 0)
    np.testing.assert_allclose(K[32:, 32:], element_stiffness(b, D_micro))


def test_global_residual_fd(contact_setup, rng):
    setup = contact_setup
    system = setup.system(build_load_case("C11bar", -0.05, "periodic").constraints(setup.mesh))
    q = newton_solve(system).q_reduced
    q = q + 1e-5 * rng.standard_normal(len(q)) * (np.arange(len(q)) % 4 < 3)
    system.update_active_set(q)
    f0, R, _, _, _ = system.evaluate(q)
    assert sum(c.active for c in system.contacts) > 0
    dirs = rng.standard_normal((5, len(q)))
    for d in dirs:
        d[3::4] *= 1e-2
        h = 1e-7 / np.max(np.abs(d))
        fp = system.evaluate(q + h * d)[0]
        fm = system.evaluate(q - h * d)[0]
        fd = (fp - fm) / (2 * h)
        assert fd == pytest.approx(R @ d, rel=1e-6)


def test_linear_problem_one_iteration(solid_mesh, D_micro):
    sol = solve_case(solid_mesh, D_micro, build_load_case("C33bar", 0.01).constraints(solid_mesh))
    assert sol.report.converged and sol.report.iterations == 1


def test_zero_load(solid_mesh, D_micro):
    sol = solve_case(solid_mesh, D_micro, build_periodic_constraints(solid_mesh))
    assert sol.report.converged and sol.report.iterations <= 1
    assert np.all(sol.q == 0)


@pytest.mark.parametrize("row", ["C11bar", "C13bar", "C44bar", "e33bar", "eps11bar"])
def test_reaction_work_twice_energy(coarse_fiber_mesh, D_micro, row):
    system = CoupledSystem(coarse_fiber_mesh, D_micro, build_load_case(row, 0.01).constraints(coarse_fiber_mesh))
    sol = newton_solve(system)
    q = sol.q_reduced
    work = sol.internal_force[system.fixed] @ q[system.fixed]
    assert work == pytest.approx(2 * sol.functional, rel=1e-8)


def test_two_brick_force_balance():
    mat = PiezoMaterial(lam=40.0, mu=30.0)
    D = micro_constitutive_matrix(mat).D
    mesh, iface, n_lower = two_bricks()
    pen = PenaltyParams(800.0, 1.0)
    system = CoupledSystem(mesh, D, squeeze_constraints(mesh, n_lower, 2e-3, 0.0), [iface], pen)
    sol = newton_solve(system)
    F = 2e-3 / (2 / mat.young + 1 / pen.rho_mech)
    top = np.flatnonzero(np.isclose(mesh.nodes[:, 2], 2.0))
    dofs = system.dofmap.dofs_of_nodes(top).reshape(-1, 4)[:, 2]
    assert -sol.internal_force[dofs].sum() == pytest.approx(F, rel=1e-8)
    contact_z = sol.contact_force.reshape(-1, 4)[:, 2]
    assert contact_z[contact_z > 0].sum() == pytest.approx(F, rel=1e-8)


def test_deterministic_reports(contact_setup):
    cs = build_load_case("C11bar", -0.05, "periodic").constraints(contact_setup.mesh)
    opts = SolverOptions(threads=3)
    a = solve_case(contact_setup.mesh, contact_setup.D, cs, contact_setup.interfaces, contact_setup.penalty, opts)
    b = solve_case(contact_setup.mesh, contact_setup.D, cs, contact_setup.interfaces, contact_setup.penalty, opts)
    assert a.report.residual_norms == b.report.residual_norms
    assert a.report.active_counts == b.report.active_counts
    assert np.array_equal(a.q, b.q)


def test_report_invariants(contact_setup):
    cs = build_load_case("C22bar", -0.05, "periodic").constraints(contact_setup.mesh)
    sol = newton_solve(contact_setup.system(cs))
    rep = sol.report
    assert rep.converged and rep.wall_time > 0
    assert len(rep.residual_norms) == len(rep.active_counts) >= rep.iterations
    assert rep.active_counts[-1] == rep.active_counts[-2]
    assert rep.active_counts[-1] > 0


def test_non_convergence_reported(contact_setup):
    cs = build_load_case("C11bar", -0.05, "periodic").constraints(contact_setup.mesh)
    sol = newton_solve(contact_setup.system(cs), max_iter=1)
    assert not sol.report.converged
    assert "not converged" in sol.report.message


def test_mechanism_detected(D_micro):
    m = generate_block([1.0, 1.0, 1.0], [1, 1, 1])
    cs = ConstraintSet(m.n_nodes)
    cs.prescribe(2, 0.1)
    with pytest.raises(SingularSystemError):
        solve_case(m, D_micro, cs)


def test_singular_jacobian_names_element(D_micro):
    bad = UNIT_CUBE.copy()
    bad[[4, 5, 6, 7], 2] = -1.0
    with pytest.raises(SingularJacobianError, match="1"):
        CoupledSystem(bare_mesh([UNIT_CUBE, bad + [2, 0, 0]]), D_micro, ConstraintSet(16))
