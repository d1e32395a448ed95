import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import expected_coefficients
from piezohom.constraints import TABLE_ROWS, affine_field, build_load_case
from piezohom.homogenize import (
    ExtractionError,
    HomogenizationSetup,
    build_secant_matrix,
    coefficient_rows,
    default_schedule,
    tetragonal_pattern,
    extract_coefficient,
    hill_check,
    measured_matrix,
    midpoint_average,
    sweep_amplitudes,
    volume_average,
)
from piezohom.material import generalized_symmetry_defect


@pytest.fixture(scope="module")
def solid_setup(solid_mesh, material):
    return HomogenizationSetup(solid_mesh, material)


@pytest.fixture(scope="module")
def coarse_free(coarse_fiber_mesh, material):
    return HomogenizationSetup(coarse_fiber_mesh, material, contact=False)


@pytest.fixture(scope="module")
def coarse_matrix(coarse_free):
    return build_secant_matrix(coarse_free, -0.05)


@pytest.fixture(scope="module")
def coarse_measured(coarse_free):
    return measured_matrix(coarse_free, 0.01)


macro_vectors = st.lists(st.floats(-0.05, 0.05), min_size=9, max_size=9).map(np.array)


# -- averages -----------------------------------------------------------------


@settings(max_examples=20, deadline=None)
@given(macro_vectors)
def test_uniform_field_averages_exactly(solid_mesh, D_micro, macro):
    q = affine_field(solid_mesh, macro)
    avg = volume_average(q, solid_mesh, D_micro)
    np.testing.assert_allclose(avg.strain, macro, atol=1e-14)
    np.testing.assert_allclose(avg.stress, D_micro @ macro, atol=1e-12 * (1 + np.abs(D_micro @ macro).max()))
    assert avg.volume_void == pytest.approx(0.0, abs=1e-12)


def test_half_void_cell_halves_stress(solid_mesh, D_micro):
    macro = np.array([0.01, -0.02, 0.005, 0.0, 0.003, 0.0, 0.1, 0.0, -0.2])
    q = affine_field(solid_mesh, macro)
    doubled = dataclasses.replace(solid_mesh, box=solid_mesh.box * [2.0, 1.0, 1.0])
    s = D_micro @ macro
    np.testing.assert_allclose(midpoint_average(q, doubled, D_micro), s / 2, rtol=1e-12, atol=1e-15)
    full = volume_average(q, solid_mesh, D_micro)
    np.testing.assert_allclose(full.stress * solid_mesh.volume_cell / doubled.volume_cell, s / 2, rtol=1e-12, atol=1e-15)


def test_midpoint_rule_agrees_on_fiber_cell(coarse_free, coarse_fiber_mesh):
    setup = dataclasses.replace(coarse_free, keep_solutions=True)
    res = setup.run_case("C11bar", -0.01)
    mid = midpoint_average(res.solution.q, coarse_fiber_mesh, setup.D)
    assert mid[0] == pytest.approx(res.averages.stress[0], rel=0.05)


def test_void_volume_of_fiber_cell(coarse_fiber_mesh, coarse_free):
    avg = coarse_free.run_case("C11bar", -0.01).averages
    assert avg.volume_solid + avg.volume_void == pytest.approx(avg.volume_rve)
    assert 0.0 < avg.volume_void < 0.25 * avg.volume_rve


# -- Hill check ---------------------------------------------------------------


@pytest.mark.parametrize("slot", range(9))
def test_hill_exact_for_homogeneous_cell(solid_setup, slot):
    macro = np.zeros(9)
    macro[slot] = 0.01
    sol, avg, system = solid_setup.run_macro(macro)
    hill = hill_check(sol, avg, system, macro)
    assert hill.gap < 1e-12


def test_hill_exact_without_contact(coarse_free):
    macro = np.array([-0.01, 0.004, 0.0, 0.002, 0.0, 0.0, 0.0, 0.0, 0.5])
    sol, avg, system = coarse_free.run_macro(macro)
    assert hill_check(sol, avg, system, macro).gap < 1e-10


def test_hill_undefined_at_zero_load(solid_setup):
    macro = np.zeros(9)
    sol, avg, system = solid_setup.run_macro(macro)
    hill = hill_check(sol, avg, system, macro)
    assert not hill.defined
    assert hill.predicted_defect is None and hill.penalty_ratio is None


def test_hill_defect_equals_contact_work(contact_setup):
    res = contact_setup.run_case("C11bar", -0.05)
    hill = res.hill
    assert res.contact_energy > 0
    assert hill.defect == pytest.approx(hill.predicted_defect, rel=1e-8)


# -- extraction ---------------------------------------------------------------


def test_homogeneous_cell_returns_micro_constants(solid_setup, D_micro):
    M = build_secant_matrix(solid_setup, -0.05)
    assert not M.partial
    assert M["C11bar"] == pytest.approx(196.5, rel=1e-12)
    assert M["eps11bar"] == pytest.approx(12 * 8.854e-6, rel=1e-12)
    for name, value in expected_coefficients(D_micro).items():
        assert M[name] == pytest.approx(value, rel=1e-10, abs=1e-15), name


@pytest.mark.parametrize("mode", ["dirichlet", "periodic"])
def test_extraction_is_mode_independent_for_homogeneous_cell(solid_mesh, material, mode):
    M = build_secant_matrix(HomogenizationSetup(solid_mesh, material, mode=mode), 0.02)
    assert M["C66bar"] == pytest.approx(material.mu, rel=1e-10)


def test_zero_amplitude_raises(solid_setup):
    avg = solid_setup.run_case("C11bar", 0.0).averages
    with pytest.raises(ExtractionError, match="C11bar"):
        extract_coefficient(build_load_case("C11bar", 0.0), avg)


def test_coefficient_rows_cover_every_coefficient(coarse_matrix):
    rows = coefficient_rows(coarse_matrix)
    assert {r[1] for r in rows} == set(coarse_matrix.coefficients)
    assert all(r[0] == -0.05 for r in rows)


# -- structure of the effective matrix -----------------------------------------


def test_matrix_follows_tetragonal_pattern(coarse_matrix):
    mask = tetragonal_pattern()
    assert mask.sum() == 25
    assert np.all(coarse_matrix.D[~mask] == 0.0)
    assert set(coarse_matrix.coefficients) >= set(TABLE_ROWS)


def test_measured_matrix_off_pattern_entries_vanish(coarse_measured):
    M, _ = coarse_measured
    scale = np.abs(M).max(axis=1, keepdims=True)
    off = np.abs(M) * ~tetragonal_pattern()
    assert np.all(off <= 1e-8 * scale)


def test_measured_matrix_has_enthalpy_symmetry(coarse_measured):
    M, hills = coarse_measured
    assert generalized_symmetry_defect(M) < 1e-8
    assert all(h.gap < 1e-10 for h in hills)


def test_table_cases_match_unit_slot_experiments(coarse_matrix, coarse_measured):
    M, _ = coarse_measured
    assert coarse_matrix["C11bar"] == pytest.approx(M[0, 0], rel=1e-8)
    assert coarse_matrix["C33bar"] == pytest.approx(M[2, 2], rel=1e-8)
    assert coarse_matrix["eps33bar"] == pytest.approx(M[8, 8], rel=1e-8)


def test_in_plane_swap_symmetry(coarse_matrix):
    assert coarse_matrix["C22bar"] == pytest.approx(coarse_matrix["C11bar"], rel=1e-10)


@pytest.mark.parametrize("name,slot", [("C11bar", 0), ("C33bar", 2), ("C44bar", 4), ("C66bar", 3)])
def test_stiffness_inside_voigt_bound(coarse_matrix, coarse_fiber_mesh, D_micro, name, slot):
    fraction = coarse_fiber_mesh.solid_volume() / coarse_fiber_mesh.volume_cell
    assert 0.0 < coarse_matrix[name] <= fraction * D_micro[slot, slot] * (1 + 1e-12)


def test_permittivity_inside_bounds(coarse_matrix, coarse_fiber_mesh, D_micro):
    fraction = coarse_fiber_mesh.solid_volume() / coarse_fiber_mesh.volume_cell
    reuss = 8.854e-6  # void in series
    for name, slot in (("eps11bar", 6), ("eps33bar", 8)):
        assert reuss * 0.99 < coarse_matrix[name] <= fraction * D_micro[slot, slot] + (1 - fraction) * reuss


def test_contact_stiffens_compression(contact_setup):
    tension = build_secant_matrix(contact_setup, 0.05, rows=["C11bar"])
    compression = build_secant_matrix(contact_setup, -0.05, rows=["C11bar"])
    assert compression["C11bar"] > 1.1 * tension["C11bar"]


# -- sweeps -------------------------------------------------------------------


def test_single_amplitude_sweep_equals_matrix(coarse_free, coarse_matrix):
    out = sweep_amplitudes(coarse_free, [-0.05])
    np.testing.assert_array_equal(out["matrices"][0].D, coarse_matrix.D)
    assert out["C11bar"].shape == (1,)


def test_homogeneous_sweep_is_flat(solid_setup):
    out = sweep_amplitudes(solid_setup, default_schedule(0.05, 3), rows=["C11bar", "e33bar"])
    np.testing.assert_allclose(out["C11bar"], 196.5, rtol=1e-10)
    assert np.ptp(out["e33bar"]) < 1e-12


def test_schedule_must_be_monotone(solid_setup):
    with pytest.raises(ValueError, match="monotone"):
        sweep_amplitudes(solid_setup, [0.01, -0.01, 0.02])
    with pytest.raises(ValueError):
        sweep_amplitudes(solid_setup, [])


def test_default_schedule_shape():
    s = default_schedule(0.05, 4)
    assert len(s) == 8 and np.all(np.diff(s) > 0)
    assert s[0] == -0.05 and s[-1] == 0.05
