"""Forest-of-trees non-conforming h-refinement on Cartesian root meshes."""
from __future__ import annotations

from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass
import logging
import math
from typing import TYPE_CHECKING

import numpy as np

from .const import DEFAULT_MAX_LEVEL, PARTITION_RTOL, FaceKind
from .data import FaceInfo, FieldState, RefinementDelta
from .errors import (
    GeometryError,
    InvalidArgumentError,
    LayoutError,
    StaleTopologyError,
)

if TYPE_CHECKING:
    from .sipg import Basis

_LOGGER = logging.getLogger(__name__)


@dataclass
class Element:
    """Tree node. Leaves (no children) are the active elements."""

    id: int
    level: int
    index: tuple[int, ...]
    root: int
    parent: int | None
    children: tuple[int, ...] = ()

    @property
    def active(self) -> bool:
        return not self.children


class ForestMesh:
    """Root Cartesian mesh plus one refinement tree per root element.

    Element positions are tracked as integer indices in the uniform grid of
    their level, so neighbor lookup across trees is a dictionary probe.
    """

    def __init__(
        self,
        extent: Sequence[float],
        counts: Sequence[int],
        max_level: int = DEFAULT_MAX_LEVEL,
        logger: logging.Logger | None = None,
    ) -> None:
        self._logger = logger or _LOGGER
        self.dim = len(counts)
        self.extent = tuple(float(e) for e in extent)
        self.counts = tuple(int(c) for c in counts)
        self.max_level = int(max_level)
        self.root_size = tuple(e / c for e, c in zip(self.extent, self.counts))
        self.generation = 0
        self._elements: dict[int, Element] = {}
        self._nodes: dict[tuple[int, tuple[int, ...]], int] = {}
        self._next_id = 0
        self._active: tuple[int, ...] | None = None
        self._faces: tuple[int, list[FaceInfo]] | None = None

        self.roots: list[int] = []
        for flat in range(math.prod(self.counts)):
            index = self._unflatten(flat)
            self.roots.append(self._create(0, index, flat, None))

    def __repr__(self) -> str:
        return (
            f"ForestMesh(dim={self.dim}, extent={self.extent}, counts={self.counts}, "
            f"active={len(self.active_elements)}, generation={self.generation})"
        )

    def _unflatten(self, flat: int) -> tuple[int, ...]:
        if self.dim == 1:
            return (flat,)
        return (flat % self.counts[0], flat // self.counts[0])

    def _create(
        self, level: int, index: tuple[int, ...], root: int, parent: int | None
    ) -> int:
        element_id = self._next_id
        self._next_id += 1
        self._elements[element_id] = Element(element_id, level, index, root, parent)
        self._nodes[(level, index)] = element_id
        return element_id

    def _touch(self) -> None:
        self.generation += 1
        self._active = None
        self._faces = None

    # --- queries -------------------------------------------------------------

    @property
    def active_elements(self) -> tuple[int, ...]:
        """Leaf ids in depth-first tree order, roots in lexicographic order"""
        if self._active is None:
            ordered: list[int] = []
            for root in self.roots:
                stack = [root]
                while stack:
                    element = self._elements[stack.pop()]
                    if element.active:
                        ordered.append(element.id)
                    else:
                        stack.extend(reversed(element.children))
            self._active = tuple(ordered)
        return self._active

    def element(self, element_id: int) -> Element:
        try:
            return self._elements[element_id]
        except KeyError as err:
            raise StaleTopologyError(
                self.generation, self.generation, f"unknown element {element_id}"
            ) from err

    def is_active(self, element_id: int) -> bool:
        element = self._elements.get(element_id)
        return element is not None and element.active

    def level(self, element_id: int) -> int:
        return self.element(element_id).level

    def size(self, element_id: int) -> np.ndarray:
        level = self.element(element_id).level
        return np.array([r / 2**level for r in self.root_size])

    def lower(self, element_id: int) -> np.ndarray:
        element = self.element(element_id)
        size = self.size(element_id)
        return np.array(element.index, dtype=float) * size

    def bounds(self, element_id: int) -> tuple[np.ndarray, np.ndarray]:
        lo = self.lower(element_id)
        return lo, lo + self.size(element_id)

    def center(self, element_id: int) -> np.ndarray:
        lo, hi = self.bounds(element_id)
        return 0.5 * (lo + hi)

    def measure(self, element_id: int) -> float:
        value = float(np.prod(self.size(element_id)))
        if value <= 0.0:
            raise GeometryError(element_id, value)
        return value

    @property
    def max_level_present(self) -> int:
        return max(self._elements[e].level for e in self.active_elements)

    def topology_key(self) -> frozenset[tuple[int, tuple[int, ...]]]:
        """Order- and id-independent description of the active set"""
        return frozenset(
            (self._elements[e].level, self._elements[e].index) for e in self.active_elements
        )

    def siblings(self, element_id: int) -> tuple[int, ...]:
        parent = self.element(element_id).parent
        if parent is None:
            return (element_id,)
        return self._elements[parent].children

    def to_physical(self, element_id: int, reference: np.ndarray) -> np.ndarray:
        """Map reference coordinates in [-1, 1]^dim to physical (mm)"""
        lo, hi = self.bounds(element_id)
        return lo + 0.5 * (np.asarray(reference) + 1.0) * (hi - lo)

    def _in_grid(self, level: int, index: tuple[int, ...]) -> bool:
        return all(0 <= i < c * 2**level for i, c in zip(index, self.counts))

    def _covering_leaf(self, level: int, index: tuple[int, ...]) -> int | None:
        """Leaf containing the level-grid cell, or None if the cell is refined"""
        for m in range(level, -1, -1):
            node = self._nodes.get((m, tuple(i >> (level - m) for i in index)))
            if node is None:
                continue
            return node if self._elements[node].active else None
        raise LayoutError(f"No tree covers cell {index} at level {level}")

    def _touching_leaves(self, node: int, axis: int, upper: bool) -> Iterator[int]:
        """Leaves below ``node`` touching its lower (or upper) face on ``axis``"""
        element = self._elements[node]
        if element.active:
            yield node
            return
        bit = 1 if upper else 0
        for child in element.children:
            if self._elements[child].index[axis] & 1 == bit:
                yield from self._touching_leaves(child, axis, upper)

    def _neighbor_cell(
        self, element: Element, axis: int, side: int
    ) -> tuple[int, ...] | None:
        index = list(element.index)
        index[axis] += side
        index = tuple(index)
        return index if self._in_grid(element.level, index) else None

    def neighbors(self, element_id: int) -> Iterator[tuple[int, int, list[int]]]:
        """Yield (axis, side, neighbor leaves) for every interior face of a leaf"""
        element = self.element(element_id)
        for axis in range(self.dim):
            for side in (-1, 1):
                cell = self._neighbor_cell(element, axis, side)
                if cell is None:
                    continue
                leaf = self._covering_leaf(element.level, cell)
                if leaf is not None:
                    yield axis, side, [leaf]
                else:
                    node = self._nodes[(element.level, cell)]
                    yield axis, side, list(self._touching_leaves(node, axis, side < 0))

    # --- topology changes -----------------------------------------------------

    def _check_ids(self, marked: Iterable[int], generation: int | None) -> list[int]:
        if generation is not None and generation != self.generation:
            raise StaleTopologyError(self.generation, generation)
        ids = sorted(set(marked))
        for element_id in ids:
            if not self.is_active(element_id):
                raise StaleTopologyError(
                    self.generation,
                    self.generation if generation is None else generation,
                    f"element {element_id} is not active",
                )
        return ids

    def _split(self, element_id: int) -> tuple[int, ...]:
        element = self._elements[element_id]
        children = []
        for child in range(2**self.dim):
            bits = tuple((child >> axis) & 1 for axis in range(self.dim))
            index = tuple(2 * i + b for i, b in zip(element.index, bits))
            children.append(self._create(element.level + 1, index, element.root, element_id))
        element.children = tuple(children)
        return element.children

    def refine(
        self, marked: Iterable[int], generation: int | None = None
    ) -> RefinementDelta:
        """Refine marked leaves and restore 2:1 balance"""
        ids = self._check_ids(marked, generation)
        delta = RefinementDelta(
            before=self.active_elements,
            generation_before=self.generation,
            generation_after=self.generation,
        )
        worklist: list[int] = []
        for element_id in ids:
            if self._elements[element_id].level >= self.max_level:
                delta.skipped.append(element_id)
                continue
            children = self._split(element_id)
            delta.refined.append((element_id, children))
            worklist.extend(children)

        while worklist:
            element = self._elements[worklist.pop()]
            if not element.active:
                continue
            for axis in range(self.dim):
                for side in (-1, 1):
                    cell = self._neighbor_cell(element, axis, side)
                    if cell is None:
                        continue
                    leaf = self._covering_leaf(element.level, cell)
                    if leaf is None or self._elements[leaf].level >= element.level - 1:
                        continue
                    children = self._split(leaf)
                    delta.balance_induced.append((leaf, children))
                    worklist.extend(children)
                    worklist.append(element.id)

        if delta.skipped:
            self._logger.warning(
                "Skipped %d element(s) already at max level %d",
                len(delta.skipped),
                self.max_level,
            )
        if not delta.is_empty:
            self._touch()
            assert self.is_balanced(), "2:1 balance violated after refine"
            assert self.covers_domain(), "partition violated after refine"
        delta.generation_after = self.generation
        return delta

    def _collapse_keeps_balance(self, parent: Element) -> bool:
        for axis in range(self.dim):
            for side in (-1, 1):
                cell = self._neighbor_cell(parent, axis, side)
                if cell is None:
                    continue
                node = self._nodes.get((parent.level, cell))
                if node is None or self._elements[node].active:
                    continue
                upper = side < 0
                for child in self._elements[node].children:
                    child_el = self._elements[child]
                    touches = child_el.index[axis] & 1 == (1 if upper else 0)
                    if touches and not child_el.active:
                        return False
        return True

    def coarsen(
        self, marked: Iterable[int], generation: int | None = None
    ) -> RefinementDelta:
        """Collapse complete, fully marked sibling families that keep 2:1 balance"""
        ids = set(self._check_ids(marked, generation))
        delta = RefinementDelta(
            before=self.active_elements,
            generation_before=self.generation,
            generation_after=self.generation,
        )
        parents = {
            self._elements[e].parent for e in ids if self._elements[e].parent is not None
        }
        families = sorted(
            parents, key=lambda p: (-self._elements[p].level, p)
        )
        for parent_id in families:
            parent = self._elements[parent_id]
            children = parent.children
            if not all(c in ids and self._elements[c].active for c in children):
                continue
            if not self._collapse_keeps_balance(parent):
                self._logger.debug("Family of %d kept for 2:1 balance", parent_id)
                continue
            for child in children:
                child_el = self._elements.pop(child)
                del self._nodes[(child_el.level, child_el.index)]
            parent.children = ()
            delta.coarsened.append((children, parent_id))

        if not delta.is_empty:
            self._touch()
            assert self.is_balanced(), "2:1 balance violated after coarsen"
            assert self.covers_domain(), "partition violated after coarsen"
        delta.generation_after = self.generation
        return delta

    def complete_families(self, marked: Iterable[int]) -> set[int]:
        """Subset of ``marked`` made of complete active sibling families"""
        marked = set(marked)
        keep: set[int] = set()
        for element_id in marked:
            element = self._elements.get(element_id)
            if element is None or element.parent is None:
                continue
            family = self._elements[element.parent].children
            if all(c in marked and self._elements[c].active for c in family):
                keep.add(element_id)
        return keep

    def refine_box(
        self, lower: Sequence[float], upper: Sequence[float], level: int
    ) -> list[RefinementDelta]:
        """Refine every leaf intersecting the box until it reaches ``level``"""
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        deltas = []
        for target in range(1, min(level, self.max_level) + 1):
            marked = []
            for element_id in self.active_elements:
                if self._elements[element_id].level >= target:
                    continue
                lo, hi = self.bounds(element_id)
                if np.all(lo < upper) and np.all(hi > lower):
                    marked.append(element_id)
            if marked:
                deltas.append(self.refine(marked))
        return deltas

    # --- invariants -------------------------------------------------------------

    def is_balanced(self) -> bool:
        for element_id in self.active_elements:
            level = self._elements[element_id].level
            for _, _, leaves in self.neighbors(element_id):
                if any(abs(self._elements[n].level - level) > 1 for n in leaves):
                    return False
        return True

    def covers_domain(self) -> bool:
        total = sum(self.measure(e) for e in self.active_elements)
        domain = math.prod(self.extent)
        return abs(total - domain) <= PARTITION_RTOL * domain

    # --- faces and point location ---------------------------------------------

    def face_list(self) -> list[FaceInfo]:
        """Every interior interface once; hanging faces owned by the finer leaf"""
        if self._faces is not None and self._faces[0] == self.generation:
            return self._faces[1]
        faces: list[FaceInfo] = []
        for element_id in self.active_elements:
            element = self._elements[element_id]
            size = self.size(element_id)
            lo = self.lower(element_id)
            for axis in range(self.dim):
                for side in (-1, 1):
                    cell = self._neighbor_cell(element, axis, side)
                    if cell is None:
                        continue
                    leaf = self._covering_leaf(element.level, cell)
                    if leaf is None:
                        continue
                    neighbor = self._elements[leaf]
                    if neighbor.level == element.level:
                        if side < 0:
                            continue
                        kind = FaceKind.CONFORMING
                    else:
                        kind = FaceKind.HANGING
                    faces.append(
                        self._face_info(element_id, leaf, axis, side, kind, lo, size)
                    )
        self._faces = (self.generation, faces)
        return faces

    def _face_info(
        self,
        owner: int,
        neighbor: int,
        axis: int,
        side: int,
        kind: FaceKind,
        lo: np.ndarray,
        size: np.ndarray,
    ) -> FaceInfo:
        normal = [0.0] * self.dim
        normal[axis] = float(side)
        origin = lo.copy()
        if side > 0:
            origin[axis] += size[axis]
        neighbor_size = self.size(neighbor)
        if self.dim == 1:
            h_face, h_neighbor, weight = float(size[0]), float(neighbor_size[0]), 1.0
        else:
            tangent = 1 - axis
            h_face = float(size[tangent])
            h_neighbor = float(neighbor_size[tangent])
            weight = h_face
        owner_face = 2 * axis + (1 if side > 0 else 0)
        neighbor_face = 2 * axis + (0 if side > 0 else 1)
        return FaceInfo(
            owner=owner,
            neighbor=neighbor,
            owner_face_index=owner_face,
            neighbor_face_index=neighbor_face,
            kind=kind,
            normal=tuple(normal),
            h_F=h_face,
            W_F=weight,
            h_neighbor=h_neighbor,
            axis=axis,
            origin=tuple(float(v) for v in origin),
        )

    def locate(self, points: np.ndarray) -> tuple[list[int], np.ndarray]:
        """Leaf ids and reference coordinates of physical points"""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self.dim:
            points = points.reshape(-1, self.dim)
        found: list[int] = []
        reference = np.empty_like(points)
        for row, point in enumerate(points):
            index = tuple(
                int(limit)
                for limit in np.clip(
                    np.floor(point / np.array(self.root_size)), 0, np.array(self.counts) - 1
                )
            )
            node = self._nodes[(0, index)]
            while not self._elements[node].active:
                mid = self.center(node)
                child = sum(
                    (1 << axis) for axis in range(self.dim) if point[axis] >= mid[axis]
                )
                node = self._elements[node].children[child]
            lo, hi = self.bounds(node)
            found.append(node)
            reference[row] = np.clip(2.0 * (point - lo) / (hi - lo) - 1.0, -1.0, 1.0)
        return found, reference


def build_cartesian_root(
    extent: Sequence[float],
    counts: Sequence[int],
    dim: int,
    max_level: int = DEFAULT_MAX_LEVEL,
) -> ForestMesh:
    """Uniform level-0 forest over [0, extent] with counts roots per axis"""
    if dim not in (1, 2):
        raise InvalidArgumentError(f"Dimension must be 1 or 2, got {dim}")
    if len(extent) != dim or len(counts) != dim:
        raise InvalidArgumentError(
            f"Expected {dim} extents and counts, got {len(extent)} and {len(counts)}"
        )
    if any(int(c) != c or c < 1 for c in counts):
        raise InvalidArgumentError(f"Element counts must be positive integers: {counts}")
    if any(not e > 0 for e in extent):
        raise InvalidArgumentError(f"Extents must be positive: {extent}")
    if max_level < 0:
        raise InvalidArgumentError(f"max_level must be non-negative: {max_level}")
    return ForestMesh(extent, counts, max_level)


def transfer_field(
    mesh: ForestMesh, delta: RefinementDelta, field: FieldState, basis: Basis
) -> FieldState:
    """Move a field across a refinement delta.

    Children receive the parent polynomial at their nodes; a coarsened parent
    receives the L2 projection of its children.
    """
    if (
        tuple(field.element_ids) != tuple(delta.before)
        or field.generation != delta.generation_before
    ):
        raise LayoutError("Field is not laid out on the pre-delta active set")
    if mesh.generation != delta.generation_after:
        raise StaleTopologyError(delta.generation_after, mesh.generation, "delta")

    values: dict[int, tuple] = {
        element_id: (
            field.phi[row],
            field.s[row],
            field.phi_prev[row],
            field.s_prev[row],
            field.t_curr[row],
            field.t_prev[row],
        )
        for row, element_id in enumerate(field.element_ids)
    }

    for parent, children in delta.refined + delta.balance_induced:
        phi, s, phi_prev, s_prev, t_curr, t_prev = values.pop(parent)
        for child_number, child in enumerate(children):
            prolong = basis.prolongation(child_number)
            values[child] = (
                prolong @ phi,
                s @ prolong.T,
                prolong @ phi_prev,
                s_prev @ prolong.T,
                t_curr,
                t_prev,
            )

    for children, parent in delta.coarsened:
        parts = [values.pop(child) for child in children]
        restrict = [basis.restriction(n) for n in range(len(children))]
        values[parent] = (
            sum(r @ part[0] for r, part in zip(restrict, parts)),
            sum(part[1] @ r.T for r, part in zip(restrict, parts)),
            sum(r @ part[2] for r, part in zip(restrict, parts)),
            sum(part[3] @ r.T for r, part in zip(restrict, parts)),
            parts[0][4],
            parts[0][5],
        )

    element_ids = mesh.active_elements
    if set(values) != set(element_ids):
        raise LayoutError("Delta does not map the field onto the current active set")
    rows = [values[e] for e in element_ids]
    return FieldState(
        element_ids=element_ids,
        generation=mesh.generation,
        phi=np.array([r[0] for r in rows]),
        s=np.array([r[1] for r in rows]),
        phi_prev=np.array([r[2] for r in rows]),
        s_prev=np.array([r[3] for r in rows]),
        t_curr=np.array([r[4] for r in rows], dtype=float),
        t_prev=np.array([r[5] for r in rows], dtype=float),
    )
