import numpy as np
from numpy.testing import assert_allclose
import pytest

from cardiolts.const import FaceKind
from cardiolts.errors import InvalidArgumentError, LayoutError, StaleTopologyError
from cardiolts.mesh import build_cartesian_root, transfer_field
from cardiolts.sipg import Basis, nodal_coordinates


def test_root_mesh_layout(cable):
    assert cable.active_elements == tuple(range(10))
    assert cable.generation == 0
    assert cable.measure(3) == pytest.approx(1.0)
    assert_allclose(cable.bounds(3), ([3.0], [4.0]))
    assert cable.covers_domain()
    assert cable.is_balanced()


@pytest.mark.parametrize(
    "extent, counts, dim, max_level",
    [
        ((1.0,), (1,), 3, 2),
        ((1.0, 1.0), (1,), 2, 2),
        ((1.0,), (0,), 1, 2),
        ((0.0,), (2,), 1, 2),
        ((1.0,), (2,), 1, -1),
    ],
)
def test_build_rejects_bad_arguments(extent, counts, dim, max_level):
    with pytest.raises(InvalidArgumentError):
        build_cartesian_root(extent, counts, dim, max_level)


def test_refine_creates_children(sheet):
    delta = sheet.refine([5])
    parent, children = delta.refined[0]
    assert parent == 5
    assert len(children) == 4
    assert not delta.balance_induced
    assert sheet.generation == 1
    assert delta.generation_before == 0 and delta.generation_after == 1
    assert len(sheet.active_elements) == 19
    assert not sheet.is_active(5)
    assert all(sheet.measure(c) == pytest.approx(0.25) for c in children)
    assert sheet.covers_domain()


def test_refine_restores_balance(sheet):
    corner_children = sheet.refine([0]).refined[0][1]
    delta = sheet.refine([corner_children[3]])
    assert {parent for parent, _ in delta.balance_induced} == {1, 4}
    assert sheet.is_balanced()
    assert sheet.max_level_present == 2


def test_refine_at_max_level_is_skipped(caplog):
    mesh = build_cartesian_root((2.0,), (2,), 1, max_level=0)
    delta = mesh.refine([0])
    assert delta.skipped == [0]
    assert delta.is_empty
    assert mesh.generation == 0
    assert "max level" in caplog.text


def test_refine_rejects_stale_or_inactive_ids(sheet):
    with pytest.raises(StaleTopologyError):
        sheet.refine([0], generation=3)
    sheet.refine([5])
    with pytest.raises(StaleTopologyError):
        sheet.refine([5])


def test_coarsen_restores_parent(sheet):
    children = sheet.refine([5]).refined[0][1]
    delta = sheet.coarsen(children)
    assert delta.coarsened == [(children, 5)]
    assert sheet.is_active(5)
    assert len(sheet.active_elements) == 16
    assert sheet.generation == 2


def test_coarsen_ignores_incomplete_family(sheet):
    children = sheet.refine([5]).refined[0][1]
    delta = sheet.coarsen(children[:3])
    assert delta.is_empty
    assert sheet.generation == 1


def test_coarsen_keeps_balance(sheet):
    corner_children = sheet.refine([0]).refined[0][1]
    delta = sheet.refine([corner_children[3]])
    induced = dict(delta.balance_induced)
    result = sheet.coarsen(induced[1])
    assert result.is_empty
    assert sheet.is_balanced()


def test_complete_families(sheet):
    children = sheet.refine([5]).refined[0][1]
    assert sheet.complete_families(set(children) | {0}) == set(children)
    assert sheet.complete_families(children[:2]) == set()


def test_conforming_face_count(cable, sheet):
    assert len(cable.face_list()) == 9
    faces = sheet.face_list()
    assert len(faces) == 24
    assert all(face.kind == FaceKind.CONFORMING for face in faces)
    assert all(face.normal in ((1.0, 0.0), (0.0, 1.0)) for face in faces)


def test_hanging_faces_owned_by_fine_element(hanging_sheet):
    hanging = [f for f in hanging_sheet.face_list() if f.kind == FaceKind.HANGING]
    assert len(hanging) == 8
    for face in hanging:
        assert hanging_sheet.level(face.owner) == 1
        assert hanging_sheet.level(face.neighbor) == 0
        assert face.h_F == pytest.approx(0.5)
        assert face.W_F == pytest.approx(0.5)
        assert face.h_neighbor == pytest.approx(1.0)


def test_face_weight_is_surface_measure():
    cable = build_cartesian_root((10.0,), (5,), 1)
    assert all(face.h_F == 2.0 and face.W_F == 1.0 for face in cable.face_list())

    strip = build_cartesian_root((4.0, 2.0), (2, 2), 2, max_level=2)
    strip.refine([0])
    faces = strip.face_list()
    assert {face.W_F for face in faces} == {0.5, 1.0, 2.0}
    for face in faces:
        assert face.W_F == face.h_F
        tangent = 1 - face.axis
        assert face.h_F == strip.size(face.owner)[tangent]


def test_face_list_cached_per_generation(sheet):
    first = sheet.face_list()
    assert sheet.face_list() is first
    sheet.refine([5])
    assert sheet.face_list() is not first


def test_locate(hanging_sheet):
    ids, reference = hanging_sheet.locate(np.array([[1.25, 1.75], [3.5, 0.5]]))
    children = hanging_sheet.element(5).children
    assert ids == [children[2], 3]
    assert_allclose(reference, [[0.0, 0.0], [0.0, 0.0]], atol=1e-12)


def test_refine_box(cable):
    deltas = cable.refine_box([4.2], [4.8], 2)
    assert len(deltas) == 2
    levels = {cable.level(e) for e in cable.active_elements}
    assert levels == {0, 1, 2}
    assert cable.is_balanced()
    ids, _ = cable.locate(np.array([[4.5]]))
    assert cable.level(ids[0]) == 2


@pytest.mark.parametrize("order", [1, 2])
def test_transfer_is_exact_for_linear_fields(sheet, ms, state_factory, order):
    basis = Basis(order, 2)

    def linear(coords):
        return coords[..., 0] + 2.0 * coords[..., 1]

    state = state_factory(sheet, basis, ms, linear)
    delta = sheet.refine([5])
    refined = transfer_field(sheet, delta, state, basis)
    assert refined.generation == sheet.generation
    assert_allclose(refined.phi, linear(nodal_coordinates(sheet, basis)), atol=1e-12)
    assert_allclose(refined.s, 1.0)

    children = delta.refined[0][1]
    back = transfer_field(sheet, sheet.coarsen(children), refined, basis)
    assert_allclose(back.phi, state.phi, atol=1e-12)


def test_transfer_rejects_mismatched_layout(sheet, ms, state_factory, basis_2d):
    state = state_factory(sheet, basis_2d, ms)
    first = sheet.refine([5])
    second = sheet.refine([0])
    with pytest.raises(LayoutError):
        transfer_field(sheet, second, state, basis_2d)
    with pytest.raises(StaleTopologyError):
        transfer_field(sheet, first, state, basis_2d)
