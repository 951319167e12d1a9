"""Symmetric interior penalty DG operators on Gauss-Legendre nodal bases."""
from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
import logging

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import sparse

from .const import MAX_ORDER, TRACE_CACHE_SIZE
from .data import FaceInfo, FieldState
from .decorators import generation_checked
from .errors import InvalidArgumentError, LayoutError, StaleTopologyError
from .mesh import ForestMesh
from .util import LimitedSizeDict

_LOGGER = logging.getLogger(__name__)


class Basis:
    """Tensor-product Lagrange basis on the Gauss-Legendre points of [-1, 1]^dim.

    Node ``i + n * j`` sits at (x_i, x_j); the x index runs fastest.
    """

    def __init__(self, order: int, dim: int) -> None:
        if not 1 <= order <= MAX_ORDER:
            raise InvalidArgumentError(f"Polynomial order must be in 1..{MAX_ORDER}: {order}")
        if dim not in (1, 2):
            raise InvalidArgumentError(f"Dimension must be 1 or 2, got {dim}")
        self.order = order
        self.dim = dim
        self.n1d = order + 1
        self.nodes1d, self.weights1d = leggauss(self.n1d)
        self.n_nodes = self.n1d**dim
        self.derivative1d = self.lagrange_derivative(self.nodes1d)

        identity = np.eye(self.n1d)
        if dim == 1:
            self.reference_nodes = self.nodes1d[:, None]
            self.weights = self.weights1d.copy()
            self.reference_gradients = [self.derivative1d]
        else:
            xs, ys = np.meshgrid(self.nodes1d, self.nodes1d, indexing="xy")
            self.reference_nodes = np.column_stack([xs.ravel(), ys.ravel()])
            self.weights = np.kron(self.weights1d, self.weights1d)
            self.reference_gradients = [
                np.kron(identity, self.derivative1d),
                np.kron(self.derivative1d, identity),
            ]
        self._transfer: dict[tuple[str, int], np.ndarray] = {}
        self.trace_cache: LimitedSizeDict = LimitedSizeDict(TRACE_CACHE_SIZE)

    def __repr__(self) -> str:
        return f"Basis(order={self.order}, dim={self.dim})"

    def lagrange(self, x: np.ndarray) -> np.ndarray:
        """1D Lagrange values, shape (len(x), n1d)"""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        values = np.ones((x.size, self.n1d))
        for j, xj in enumerate(self.nodes1d):
            for m, xm in enumerate(self.nodes1d):
                if m != j:
                    values[:, j] *= (x - xm) / (xj - xm)
        return values

    def lagrange_derivative(self, x: np.ndarray) -> np.ndarray:
        """1D Lagrange derivatives, shape (len(x), n1d)"""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        nodes = self.nodes1d
        result = np.zeros((x.size, self.n1d))
        for j in range(self.n1d):
            for k in range(self.n1d):
                if k == j:
                    continue
                term = np.full(x.size, 1.0 / (nodes[j] - nodes[k]))
                for m in range(self.n1d):
                    if m not in (j, k):
                        term *= (x - nodes[m]) / (nodes[j] - nodes[m])
                result[:, j] += term
        return result

    def evaluate(self, reference: np.ndarray) -> np.ndarray:
        """Basis values at reference points, shape (n_points, n_nodes)"""
        reference = np.asarray(reference, dtype=float).reshape(-1, self.dim)
        if self.dim == 1:
            return self.lagrange(reference[:, 0])
        lx = self.lagrange(reference[:, 0])
        ly = self.lagrange(reference[:, 1])
        return np.einsum("qj,qi->qji", ly, lx).reshape(len(reference), self.n_nodes)

    def evaluate_gradient(self, reference: np.ndarray) -> list[np.ndarray]:
        """Reference-coordinate derivatives per axis at reference points"""
        reference = np.asarray(reference, dtype=float).reshape(-1, self.dim)
        if self.dim == 1:
            return [self.lagrange_derivative(reference[:, 0])]
        n = len(reference)
        lx, ly = self.lagrange(reference[:, 0]), self.lagrange(reference[:, 1])
        dx = self.lagrange_derivative(reference[:, 0])
        dy = self.lagrange_derivative(reference[:, 1])
        return [
            np.einsum("qj,qi->qji", ly, dx).reshape(n, self.n_nodes),
            np.einsum("qj,qi->qji", dy, lx).reshape(n, self.n_nodes),
        ]

    def prolongation(self, child: int) -> np.ndarray:
        """Parent polynomial evaluated at the nodes of child number ``child``"""
        key = ("prolong", child)
        if key not in self._transfer:
            per_axis = []
            for axis in range(self.dim):
                bit = (child >> axis) & 1
                per_axis.append(self.lagrange((self.nodes1d + 2 * bit - 1) / 2.0))
            matrix = per_axis[0] if self.dim == 1 else np.kron(per_axis[1], per_axis[0])
            self._transfer[key] = matrix
        return self._transfer[key]

    def restriction(self, child: int) -> np.ndarray:
        """Child contribution to the parent's L2 projection"""
        key = ("restrict", child)
        if key not in self._transfer:
            prolong = self.prolongation(child)
            self._transfer[key] = (
                (prolong.T * self.weights) / self.weights[:, None] / 2**self.dim
            )
        return self._transfer[key]


def _jacobian(mesh: ForestMesh, element_id: int) -> float:
    return mesh.measure(element_id) / 2**mesh.dim


def element_mass_inverse(mesh: ForestMesh, element_id: int, basis: Basis) -> np.ndarray:
    """Diagonal of the inverse mass matrix; collocation makes M diagonal"""
    return 1.0 / (basis.weights * _jacobian(mesh, element_id))


def element_stiffness(
    mesh: ForestMesh, element_id: int, basis: Basis, D: np.ndarray
) -> np.ndarray:
    """Volume block -int D grad(N_j) . grad(N_i) by collocated quadrature"""
    size = mesh.size(element_id)
    weights = basis.weights * _jacobian(mesh, element_id)
    gradients = [g * (2.0 / size[a]) for a, g in enumerate(basis.reference_gradients)]
    block = np.zeros((basis.n_nodes, basis.n_nodes))
    for a in range(mesh.dim):
        for b in range(mesh.dim):
            if D[a, b] != 0.0:
                block -= D[a, b] * gradients[a].T @ (weights[:, None] * gradients[b])
    return block


@dataclass
class FaceBlocks:
    """Blocks of the SIPG face form for one face; the diffusion operator is -A.

    Consistency and penalty parts are kept apart so the penalty scales with
    gamma alone.
    """

    consistency: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]
    penalty: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]
    traces: FaceTraces | None = None

    @property
    def A_oo(self) -> np.ndarray:
        return self.consistency[0] + self.penalty[0]

    @property
    def A_on(self) -> np.ndarray:
        return self.consistency[1] + self.penalty[1]

    @property
    def A_no(self) -> np.ndarray:
        return self.consistency[2] + self.penalty[2]

    @property
    def A_nn(self) -> np.ndarray:
        return self.consistency[3] + self.penalty[3]


@dataclass
class FaceTraces:
    """Basis traces and normal fluxes on one face's quadrature points"""

    weights: np.ndarray
    owner_values: np.ndarray
    owner_flux: np.ndarray
    neighbor_values: np.ndarray
    neighbor_flux: np.ndarray


def _reference_trace(
    basis: Basis, face_index: int, span: tuple[float, float]
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Values and reference gradients on an element face, cached per configuration"""
    key = (basis.dim, face_index, span)
    cached = basis.trace_cache.get(key)
    if cached is None:
        axis, upper = divmod(face_index, 2)
        fixed = 1.0 if upper else -1.0
        if basis.dim == 1:
            reference = np.array([[fixed]])
        else:
            lo, hi = span
            points = lo + 0.5 * (basis.nodes1d + 1.0) * (hi - lo)
            reference = np.empty((basis.n1d, 2))
            reference[:, axis] = fixed
            reference[:, 1 - axis] = points
        cached = (basis.evaluate(reference), basis.evaluate_gradient(reference))
        basis.trace_cache[key] = cached
    return cached


def _element_span(
    mesh: ForestMesh, element_id: int, face: FaceInfo
) -> tuple[float, float]:
    """Reference interval of the face quadrature segment along the tangent axis"""
    if mesh.dim == 1:
        return (-1.0, 1.0)
    tangent = 1 - face.axis
    lo, hi = mesh.bounds(element_id)
    start = face.origin[tangent]
    width = hi[tangent] - lo[tangent]
    a = 2.0 * (start - lo[tangent]) / width - 1.0
    b = 2.0 * (start + face.h_F - lo[tangent]) / width - 1.0
    return (round(a, 12) + 0.0, round(b, 12) + 0.0)


def face_traces(
    mesh: ForestMesh, face: FaceInfo, basis: Basis, D: np.ndarray
) -> FaceTraces:
    """Owner and neighbor traces on the (fine) face, with D grad . n"""
    if mesh.dim == 1:
        weights = np.array([face.W_F])
    else:
        weights = basis.weights1d * face.W_F / 2.0
    normal = np.asarray(face.normal)
    d_normal = D @ normal

    def _side(element_id: int, face_index: int) -> tuple[np.ndarray, np.ndarray]:
        values, gradients = _reference_trace(
            basis, face_index, _element_span(mesh, element_id, face)
        )
        size = mesh.size(element_id)
        flux = sum(d_normal[a] * gradients[a] * (2.0 / size[a]) for a in range(mesh.dim))
        return values, flux

    owner_values, owner_flux = _side(face.owner, face.owner_face_index)
    neighbor_values, neighbor_flux = _side(face.neighbor, face.neighbor_face_index)
    return FaceTraces(weights, owner_values, owner_flux, neighbor_values, neighbor_flux)


def face_coupling(
    mesh: ForestMesh, face: FaceInfo, basis: Basis, D: np.ndarray, gamma: float
) -> FaceBlocks:
    """SIPG face blocks with jump [u] = u_owner - u_neighbor along the owner normal"""
    if not gamma > 0:
        raise InvalidArgumentError(f"Penalty gamma must be positive: {gamma}")
    traces = face_traces(mesh, face, basis, D)
    w = traces.weights[:, None]
    vo, go = traces.owner_values, traces.owner_flux
    vn, gn = traces.neighbor_values, traces.neighbor_flux
    normal = np.asarray(face.normal)
    sigma = gamma * float(normal @ D @ normal) * 0.5 * (1.0 / face.h_F + 1.0 / face.h_neighbor)

    consistency = (
        -0.5 * vo.T @ (w * go) - 0.5 * go.T @ (w * vo),
        -0.5 * vo.T @ (w * gn) + 0.5 * go.T @ (w * vn),
        -0.5 * gn.T @ (w * vo) + 0.5 * vn.T @ (w * go),
        0.5 * vn.T @ (w * gn) + 0.5 * gn.T @ (w * vn),
    )
    penalty = (
        sigma * vo.T @ (w * vo),
        -sigma * vo.T @ (w * vn),
        -sigma * vn.T @ (w * vo),
        sigma * vn.T @ (w * vn),
    )
    return FaceBlocks(consistency, penalty, traces)


@dataclass
class ElementOps:
    """Per-element mass and stiffness blocks plus face blocks for one generation"""

    generation: int
    basis: Basis
    D: np.ndarray
    gamma: float
    element_ids: tuple[int, ...]
    minv: dict[int, np.ndarray]
    kvol: dict[int, np.ndarray]
    faces: list[FaceInfo]
    face_blocks: list[FaceBlocks]
    element_faces: dict[int, list[int]]
    assembled_elements: int = 0
    assembled_faces: int = 0
    _matrix: sparse.csr_matrix | None = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.basis.n_nodes

    def require(self, mesh: ForestMesh) -> None:
        if mesh.generation != self.generation:
            raise StaleTopologyError(mesh.generation, self.generation, "operators")

    def minv_vector(self) -> np.ndarray:
        return np.concatenate([self.minv[e] for e in self.element_ids])

    def global_matrix(self) -> sparse.csr_matrix:
        """K over all nodes in ``element_ids`` row order (element-major)"""
        if self._matrix is None:
            nb = self.n_nodes
            offset = {e: row * nb for row, e in enumerate(self.element_ids)}
            local = np.arange(nb)
            rows_i = np.repeat(local, nb)
            cols_i = np.tile(local, nb)
            rows, cols, vals = [], [], []

            def _add(r: int, c: int, block: np.ndarray) -> None:
                rows.append(rows_i + offset[r])
                cols.append(cols_i + offset[c])
                vals.append(block.ravel())

            for element_id in self.element_ids:
                _add(element_id, element_id, self.kvol[element_id])
            for face, blocks in zip(self.faces, self.face_blocks):
                _add(face.owner, face.owner, -blocks.A_oo)
                _add(face.owner, face.neighbor, -blocks.A_on)
                _add(face.neighbor, face.owner, -blocks.A_no)
                _add(face.neighbor, face.neighbor, -blocks.A_nn)
            size = nb * len(self.element_ids)
            self._matrix = sparse.coo_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(size, size),
            ).tocsr()
        return self._matrix

    def operator_matrix(self) -> sparse.csr_matrix:
        """L = M^-1 K"""
        return sparse.diags(self.minv_vector()) @ self.global_matrix()


def _face_key(face: FaceInfo) -> tuple[int, int, int]:
    return (face.owner, face.neighbor, face.owner_face_index)


def assemble_operators(
    mesh: ForestMesh,
    basis: Basis,
    D: np.ndarray,
    gamma: float,
    previous: ElementOps | None = None,
) -> ElementOps:
    """Element and face blocks for the current generation.

    Element ids are never reused for different geometry, so blocks of ids
    present in ``previous`` are taken over unchanged.
    """
    D = validate_diffusion(D, mesh.dim)
    if not gamma > 0:
        raise InvalidArgumentError(f"Penalty gamma must be positive: {gamma}")
    reusable = (
        previous is not None
        and previous.basis is basis
        and previous.gamma == gamma
        and np.array_equal(previous.D, D)
    )
    old_minv = previous.minv if reusable else {}
    old_kvol = previous.kvol if reusable else {}
    old_faces = (
        {_face_key(f): b for f, b in zip(previous.faces, previous.face_blocks)}
        if reusable
        else {}
    )

    element_ids = mesh.active_elements
    minv: dict[int, np.ndarray] = {}
    kvol: dict[int, np.ndarray] = {}
    built_elements = 0
    for element_id in element_ids:
        if element_id in old_kvol:
            minv[element_id] = old_minv[element_id]
            kvol[element_id] = old_kvol[element_id]
        else:
            minv[element_id] = element_mass_inverse(mesh, element_id, basis)
            kvol[element_id] = element_stiffness(mesh, element_id, basis, D)
            built_elements += 1

    faces = mesh.face_list()
    blocks: list[FaceBlocks] = []
    element_faces: dict[int, list[int]] = {e: [] for e in element_ids}
    built_faces = 0
    for number, face in enumerate(faces):
        cached = old_faces.get(_face_key(face))
        if cached is None:
            cached = face_coupling(mesh, face, basis, D, gamma)
            built_faces += 1
        blocks.append(cached)
        element_faces[face.owner].append(number)
        element_faces[face.neighbor].append(number)

    _LOGGER.debug(
        "Assembled generation %d: %d/%d elements, %d/%d faces rebuilt",
        mesh.generation,
        built_elements,
        len(element_ids),
        built_faces,
        len(faces),
    )
    return ElementOps(
        generation=mesh.generation,
        basis=basis,
        D=D,
        gamma=float(gamma),
        element_ids=element_ids,
        minv=minv,
        kvol=kvol,
        faces=faces,
        face_blocks=blocks,
        element_faces=element_faces,
        assembled_elements=built_elements,
        assembled_faces=built_faces,
    )


def apply_diffusion(
    ops: ElementOps,
    element_id: int,
    own_values: np.ndarray,
    neighbor_traces: Mapping[int, np.ndarray],
) -> np.ndarray:
    """Element-local M^-1 (K u) given the neighbors' nodal values"""
    rate = ops.kvol[element_id] @ own_values
    for number in ops.element_faces[element_id]:
        face = ops.faces[number]
        blocks = ops.face_blocks[number]
        other = face.neighbor if face.owner == element_id else face.owner
        if other not in neighbor_traces:
            raise LayoutError(f"Missing trace of neighbor {other} for element {element_id}")
        values = neighbor_traces[other]
        if face.owner == element_id:
            rate = rate - blocks.A_oo @ own_values - blocks.A_on @ values
        else:
            rate = rate - blocks.A_no @ values - blocks.A_nn @ own_values
    return ops.minv[element_id] * rate


def validate_diffusion(D: Sequence | np.ndarray | float, dim: int) -> np.ndarray:
    """Diffusion tensor as a symmetric positive-semidefinite dim x dim array (mm^2/ms)"""
    D = np.asarray(D, dtype=float)
    if D.ndim == 0:
        D = D * np.eye(dim)
    elif D.ndim == 1:
        if D.size == dim:
            D = np.diag(D)
        elif D.size == dim * dim:
            D = D.reshape(dim, dim)
    if D.shape != (dim, dim):
        raise InvalidArgumentError(f"Diffusion tensor must be {dim}x{dim}, got {D.shape}")
    if not np.allclose(D, D.T, rtol=0.0, atol=1e-14):
        raise InvalidArgumentError("Diffusion tensor must be symmetric")
    if np.linalg.eigvalsh(D).min() < -1e-14:
        raise InvalidArgumentError("Diffusion tensor must be positive semidefinite")
    return D


def nodal_coordinates(mesh: ForestMesh, basis: Basis) -> np.ndarray:
    """Physical node positions per active element, shape (n_elem, n_nodes, dim)"""
    return np.array(
        [mesh.to_physical(e, basis.reference_nodes) for e in mesh.active_elements]
    )


def element_integral(mesh: ForestMesh, basis: Basis, values: np.ndarray) -> np.ndarray:
    """Per-element quadrature of nodal values, shape (n_elem,)"""
    jacobians = np.array([_jacobian(mesh, e) for e in mesh.active_elements])
    return (values @ basis.weights) * jacobians


class FieldSampler:
    """Evaluates nodal DG fields at fixed physical points on one mesh generation"""

    def __init__(self, mesh: ForestMesh, basis: Basis, points: np.ndarray) -> None:
        self.points = np.asarray(points, dtype=float).reshape(-1, mesh.dim)
        self.generation = mesh.generation
        element_ids, reference = mesh.locate(self.points)
        row_of = {e: row for row, e in enumerate(mesh.active_elements)}
        self.rows = np.array([row_of[e] for e in element_ids], dtype=int)
        self.values = basis.evaluate(reference)

    @generation_checked("field", reference="self")
    def sample(self, field: FieldState, component: int | None = None) -> np.ndarray:
        """phi at the points, or state ``component`` when given"""
        if component is None:
            nodal = field.phi[self.rows]
        else:
            nodal = field.s[self.rows, component]
        return np.einsum("pk,pk->p", self.values, nodal)
