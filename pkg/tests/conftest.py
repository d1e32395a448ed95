import numpy as np
import pytest

from piezohom.constraints import ConstraintSet
from piezohom.contact import ContactInterface
from piezohom.homogenize import HomogenizationSetup
from piezohom.material import micro_constitutive_matrix, pvdf
from piezohom.mesh import MeshParams, RveMesh, generate_block, generate_fiber_rve

UNIT_CUBE = np.array(
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]], dtype=float
)


@pytest.fixture(scope="session")
def material():
    return pvdf()


@pytest.fixture(scope="session")
def D_micro(material):
    return micro_constitutive_matrix(material).D


@pytest.fixture(scope="session")
def solid_mesh():
    return generate_fiber_rve(MeshParams(layout="solid", divisions=(2, 2, 2)))


@pytest.fixture(scope="session")
def coarse_fiber_mesh():
    return generate_fiber_rve(MeshParams(divisions=(16, 2, 2)))


@pytest.fixture(scope="session")
def default_fiber_mesh():
    return generate_fiber_rve(MeshParams())


@pytest.fixture(scope="session")
def contact_setup(default_fiber_mesh, material):
    return HomogenizationSetup(default_fiber_mesh, material, contact=True)


@pytest.fixture(scope="session")
def free_setup(default_fiber_mesh, material):
    return HomogenizationSetup(default_fiber_mesh, material, contact=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def distorted_cube(rng, amount=0.1):
    return UNIT_CUBE + amount * rng.uniform(-1, 1, UNIT_CUBE.shape)


def two_bricks(L=1.0, W=1.0, layers=2):
    """Two stacked bricks, one element across, touching at z = L.

    Returns the combined mesh, the contact interface (master: top of the
    lower brick) and the node count of the lower brick. With one element
    across, every slave sits on a master node and carries unit weight.
    """
    a = generate_block([W, W, L], [1, 1, layers])
    b = generate_block([W, W, L], [1, 1, layers])
    nodes = np.vstack([a.nodes, b.nodes + [0.0, 0.0, L]])
    mesh = RveMesh(
        nodes=nodes,
        elements=np.vstack([a.elements, b.elements + a.n_nodes]),
        box=np.array([W, W, 2 * L]),
        fiber_radius=W,
        element_fiber=np.r_[np.zeros(a.n_elements, int), np.ones(b.n_elements, int)],
        node_fiber=np.r_[np.zeros(a.n_nodes, int), np.ones(b.n_nodes, int)],
    )
    top = np.flatnonzero(np.isclose(a.nodes[:, 2], L))
    grid = top[np.lexsort((a.nodes[top, 1], a.nodes[top, 0]))].reshape(2, 2)
    slaves = np.flatnonzero(np.isclose(b.nodes[:, 2], 0.0)) + a.n_nodes
    iface = ContactInterface.from_grid(grid, slaves, np.full(len(slaves), W * W / 4), nodes, np.array([0, 0, 1.0]))
    return mesh, iface, a.n_nodes


def squeeze_constraints(mesh, n_lower, delta, voltage, L=1.0, W=1.0):
    """Rollers at the outer faces, squeeze ``delta`` and potential ``voltage`` on top."""
    cs = ConstraintSet(mesh.n_nodes)
    z = mesh.nodes[:, 2]
    for i in np.flatnonzero(np.isclose(z, 0.0)):
        cs.prescribe(4 * i + 2, 0.0)
        cs.prescribe(4 * i + 3, 0.0)
    for i in np.flatnonzero(np.isclose(z, 2 * L)):
        cs.prescribe(4 * i + 2, -delta)
        cs.prescribe(4 * i + 3, voltage)
    for block in (np.arange(n_lower), np.arange(n_lower, mesh.n_nodes)):
        lo = mesh.nodes[block].min(axis=0)
        o = block[np.argmin(np.linalg.norm(mesh.nodes[block] - lo, axis=1))]
        x = block[np.argmin(np.linalg.norm(mesh.nodes[block] - (lo + [W, 0, 0]), axis=1))]
        cs.prescribe(4 * o, 0.0)
        cs.prescribe(4 * o + 1, 0.0)
        cs.prescribe(4 * x + 1, 0.0)
    return cs


def expected_coefficients(D):
    """Coefficient values of a homogeneous material with micro matrix ``D``."""
    return {
        "C11bar": D[0, 0],
        "C12bar": D[0, 1],
        "C22bar": D[1, 1],
        "C13bar": D[0, 2],
        "C33bar": D[2, 2],
        "C44bar": D[4, 4],
        "C66bar": D[3, 3],
        "e13bar": D[8, 0],
        "e33bar": D[8, 2],
        "e15bar": D[6, 4],
        "eps11bar": D[6, 6],
        "eps33bar": D[8, 8],
    }


# -- acceptance summary -------------------------------------------------------

ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def record(request):
    """Store ``(passed, detail)`` for an acceptance criterion."""
    store = request.config.stash[ACCEPTANCE]

    def rec(number, title, passed, detail):
        store[number] = (title, bool(passed), detail)
        return passed

    return rec


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(ACCEPTANCE, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        title, passed, detail = store[number]
        terminalreporter.write_line(f"criterion {number} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
