import numpy as np
import pytest

from piezohom.element import gauss_operators
from piezohom.mesh import (
    MeshError,
    MeshParams,
    generate_block,
    generate_fiber_rve,
    identify_contact_interfaces,
    identify_periodic_pairs,
    mirrored,
)

LAYOUTS = [
    MeshParams(divisions=(8, 1, 1)),
    MeshParams(divisions=(16, 2, 3)),
    MeshParams(divisions=(16, 2, 2), fiber_axis=2),
    MeshParams(layout="full", grid=(2, 1), divisions=(8, 1, 1)),
    MeshParams(layout="full", grid=(2, 2), divisions=(16, 2, 1), fiber_radius=0.5),
    MeshParams(layout="solid", divisions=(3, 1, 2)),
]


@pytest.fixture(params=LAYOUTS, ids=lambda p: f"{p.layout}-{p.grid}-{p.divisions}-ax{p.fiber_axis}")
def mesh(request):
    return generate_fiber_rve(request.param)


def test_rve_edge_is_two_radii():
    m = generate_fiber_rve(MeshParams(fiber_radius=1.0, divisions=(8, 1, 1)))
    assert m.rve_edge == pytest.approx(2.0)
    np.testing.assert_allclose(m.box, 2.0)


def test_elements_valid(mesh):
    assert np.all(np.array([len(set(e)) for e in mesh.elements]) == 8)
    assert mesh.elements.min() >= 0 and mesh.elements.max() < mesh.n_nodes
    _, dv = gauss_operators(mesh.element_coords())
    assert np.all(dv > 0)


def test_periodic_pairs_are_translations(mesh):
    L = mesh.char_length
    pairs = identify_periodic_pairs(mesh)
    for a, b, axis in pairs:
        d = mesh.nodes[b] - mesh.nodes[a]
        shift = np.zeros(3)
        shift[axis] = mesh.box[axis]
        assert np.linalg.norm(d - shift) < 1e-10 * L
    for axis, name in enumerate("ABC"):
        assert len(mesh.face_sets[name + "-"]) == len(mesh.face_sets[name + "+"])


def test_bonds_coincident(mesh):
    L = mesh.char_length
    for a, b in mesh.bond_pairs:
        assert np.linalg.norm(mesh.nodes[a] - mesh.nodes[b]) < 1e-10 * L
        assert mesh.node_fiber[a] != mesh.node_fiber[b]


@pytest.mark.parametrize("n, expected", [(1, 4), (2, 9)])
def test_cube_pair_counts(n, expected):
    m = generate_block([1.0, 1.0, 1.0], [n, n, n])
    pairs = identify_periodic_pairs(m)
    for axis in range(3):
        assert sum(1 for p in pairs if p[2] == axis) == expected
    assert len(pairs) == 3 * expected


def test_pairing_translation_invariant(coarse_fiber_mesh):
    moved = coarse_fiber_mesh.translated([0.3, -1.2, 5.0])
    assert identify_periodic_pairs(moved) == identify_periodic_pairs(coarse_fiber_mesh)


def test_pairing_involution_under_mirror(coarse_fiber_mesh):
    pairs = identify_periodic_pairs(coarse_fiber_mesh)
    mpairs = identify_periodic_pairs(mirrored(coarse_fiber_mesh, 0))
    swapped = {(b, a) for a, b, axis in pairs if axis == 0}
    assert {(a, b) for a, b, axis in mpairs if axis == 0} == swapped


def test_tangency_lines_full_grid():
    p = MeshParams(layout="full", grid=(2, 2), divisions=(8, 1, 3))
    m = generate_fiber_rve(p)
    # brute force scan for coincident nodes of different fibers
    d = np.linalg.norm(m.nodes[:, None] - m.nodes[None], axis=-1)
    i, j = np.nonzero((d < 1e-10) & (m.node_fiber[:, None] != m.node_fiber[None]))
    coincident = {(min(a, b), max(a, b)) for a, b in zip(i, j)}
    assert len(coincident) == 4 * (3 + 1)
    assert coincident == {tuple(sorted(map(int, pr))) for pr in m.bond_pairs}


def test_contact_interface_counts():
    one = generate_fiber_rve(MeshParams(layout="full", grid=(1, 1), divisions=(8, 1, 1)))
    assert identify_contact_interfaces(one) == []
    two = MeshParams(layout="full", grid=(2, 1), divisions=(8, 1, 1), two_pass_contact=False)
    assert len(generate_fiber_rve(two).contact_surfaces) == 1
    four = MeshParams(layout="full", grid=(2, 2), divisions=(8, 1, 1), two_pass_contact=False)
    assert len(generate_fiber_rve(four).contact_surfaces) == 4
    both = MeshParams(layout="full", grid=(2, 2), divisions=(8, 1, 1))
    surfaces = generate_fiber_rve(both).contact_surfaces
    assert len(surfaces) == 8
    assert {(s.master_fiber, s.slave_fiber) for s in surfaces} == {
        (s.slave_fiber, s.master_fiber) for s in surfaces
    }


def test_master_grids_structured(coarse_fiber_mesh):
    for s in coarse_fiber_mesh.contact_surfaces:
        assert s.master_grid.ndim == 2 and min(s.master_grid.shape) >= 2
        assert len(s.slave_nodes) == len(s.slave_area)
        assert np.all(s.slave_area > 0)


@pytest.mark.parametrize(
    "kwargs",
    [dict(divisions=(12, 2, 2)), dict(divisions=(0, 2, 2)), dict(layout="hex"), dict(fiber_radius=-1.0), dict(fiber_axis=4)],
)
def test_invalid_params(kwargs):
    with pytest.raises(MeshError):
        MeshParams(**kwargs)


def test_fiber_volume_converges():
    errs = []
    for c in (32, 64, 128):
        m = generate_fiber_rve(MeshParams(divisions=(c, 2, 1)))
        area = sum(m.fiber_volume(f) for f in range(4)) / m.params.length_axial
        errs.append(abs(area - np.pi) / np.pi)
    assert errs[0] > errs[1] > errs[2]
    assert errs[-1] < 1e-3
