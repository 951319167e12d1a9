import numpy as np
import pytest

from cardiolts.data import FieldState
from cardiolts.ionics import FitzHughNagumo, MitchellSchaeffer
from cardiolts.mesh import build_cartesian_root
from cardiolts.sipg import Basis, nodal_coordinates


def make_state(mesh, basis, model, phi=None, t=0.0):
    """Synchronized state at rest, with phi(coords) overriding the potential"""
    coords = nodal_coordinates(mesh, basis)
    n_elem, n_nodes = coords.shape[:2]
    if phi is None:
        values = np.full((n_elem, n_nodes), model.phi_rest)
    else:
        values = np.array(phi(coords), dtype=float).reshape(n_elem, n_nodes)
    s = np.broadcast_to(
        model.rest_state[None, :, None], (n_elem, model.n_states, n_nodes)
    ).copy()
    return FieldState.synchronized(mesh.active_elements, mesh.generation, values, s, t)


@pytest.fixture
def state_factory():
    return make_state


@pytest.fixture
def cable():
    """10 mm cable, 1 mm roots"""
    return build_cartesian_root((10.0,), (10,), 1, max_level=3)


@pytest.fixture
def sheet():
    """4 x 4 mm sheet, 1 mm roots"""
    return build_cartesian_root((4.0, 4.0), (4, 4), 2, max_level=3)


@pytest.fixture
def hanging_sheet(sheet):
    """Sheet with the interior root at index (1, 1) refined once"""
    sheet.refine([5])
    return sheet


@pytest.fixture
def basis_1d():
    return Basis(1, 1)


@pytest.fixture
def basis_2d():
    return Basis(1, 2)


@pytest.fixture
def ms():
    return MitchellSchaeffer()


@pytest.fixture
def fhn():
    return FitzHughNagumo()
