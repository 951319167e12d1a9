"""Data models for cardiolts."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .const import FaceKind
from .errors import LayoutError


@dataclass(frozen=True)
class FaceInfo:
    """Interior face between two active elements.

    For hanging faces the finer element is the owner and the face geometry is
    the owner's full face. ``origin`` is the face's lower corner, ``axis`` the
    normal axis.
    """

    owner: int
    neighbor: int
    owner_face_index: int
    neighbor_face_index: int
    kind: FaceKind
    normal: tuple[float, ...]
    h_F: float
    W_F: float
    h_neighbor: float
    axis: int
    origin: tuple[float, ...]


@dataclass
class RefinementDelta:
    """Topology change produced by one refine or coarsen call"""

    before: tuple[int, ...]
    generation_before: int
    generation_after: int
    refined: list[tuple[int, tuple[int, ...]]] = field(default_factory=list)
    coarsened: list[tuple[tuple[int, ...], int]] = field(default_factory=list)
    balance_induced: list[tuple[int, tuple[int, ...]]] = field(default_factory=list)
    skipped: list[int] = field(default_factory=list)

    @property
    def is_empty(self) -> bool:
        return not (self.refined or self.coarsened or self.balance_induced)

    @property
    def touched(self) -> set[int]:
        """Ids created by this delta"""
        ids: set[int] = set()
        for _, children in self.refined + self.balance_induced:
            ids.update(children)
        for _, parent in self.coarsened:
            ids.add(parent)
        return ids


@dataclass
class FieldState:
    """Per-element nodal values of phi and the cell state.

    Arrays are indexed by row in ``element_ids``: ``phi`` is (n_elem, n_nodes),
    ``s`` is (n_elem, n_states, n_nodes). Previous values and times support
    linear time interpolation within a barrier step.
    """

    element_ids: tuple[int, ...]
    generation: int
    phi: np.ndarray
    s: np.ndarray
    phi_prev: np.ndarray
    s_prev: np.ndarray
    t_curr: np.ndarray
    t_prev: np.ndarray

    def __post_init__(self) -> None:
        n_elem = len(self.element_ids)
        for name in ("phi", "s", "phi_prev", "s_prev", "t_curr", "t_prev"):
            if getattr(self, name).shape[0] != n_elem:
                raise LayoutError(
                    f"{name} has {getattr(self, name).shape[0]} rows for {n_elem} elements"
                )

    @classmethod
    def synchronized(
        cls,
        element_ids: tuple[int, ...],
        generation: int,
        phi: np.ndarray,
        s: np.ndarray,
        time: float,
    ) -> FieldState:
        times = np.full(len(element_ids), float(time))
        return cls(
            element_ids=tuple(element_ids),
            generation=generation,
            phi=phi,
            s=s,
            phi_prev=phi.copy(),
            s_prev=s.copy(),
            t_curr=times,
            t_prev=times.copy(),
        )

    def copy(self) -> FieldState:
        return replace(
            self,
            phi=self.phi.copy(),
            s=self.s.copy(),
            phi_prev=self.phi_prev.copy(),
            s_prev=self.s_prev.copy(),
            t_curr=self.t_curr.copy(),
            t_prev=self.t_prev.copy(),
        )

    def row(self, element_id: int) -> int:
        try:
            return self.element_ids.index(element_id)
        except ValueError as err:
            raise LayoutError(f"Element {element_id} is not part of this field") from err

    @property
    def time(self) -> float:
        """Common time of a synchronized state"""
        return float(self.t_curr[0]) if len(self.t_curr) else 0.0

    @property
    def is_synchronized(self) -> bool:
        return bool(np.all(self.t_curr == self.t_curr[0])) if len(self.t_curr) else True


@dataclass
class StepPlan:
    """Substep assignment for one barrier step"""

    element_ids: tuple[int, ...]
    dt: float
    cfl: np.ndarray
    b_cfl: np.ndarray
    b_cell: np.ndarray
    substeps: np.ndarray

    @property
    def max_substeps(self) -> int:
        return int(self.substeps.max()) if len(self.substeps) else 1

    @property
    def strides(self) -> np.ndarray:
        """Queue stride maxS / S_e per element"""
        return self.max_substeps // self.substeps

    @property
    def updates(self) -> int:
        return int(self.substeps.sum())

    def queue(self, index: int) -> list[int]:
        """Element ids in substep queue Q_index"""
        members = np.flatnonzero(index % self.strides == 0)
        return [self.element_ids[row] for row in members]

    @property
    def queues(self) -> list[list[int]]:
        return [self.queue(i) for i in range(self.max_substeps)]


@dataclass
class IndicatorReport:
    """Spatial and temporal indicators with the resulting marking sets"""

    element_ids: tuple[int, ...]
    eta_s: np.ndarray
    eta_t: np.ndarray
    refine_set: set[int]
    coarsen_set: set[int]
    tau_refine: float
    tau_coarsen: float
    tau_cell: float


@dataclass
class Snapshot:
    """A synchronized state at a barrier time; ``state`` may be dropped to save memory"""

    index: int
    time: float
    generation: int
    state: FieldState | None = None
    probes: np.ndarray | None = None
    filename: str | None = None


@dataclass
class Trajectory:
    """Snapshots at barrier-time multiples"""

    points: np.ndarray | None = None
    snapshots: list[Snapshot] = field(default_factory=list)
    metadata: dict[str, object] = field(default_factory=dict)

    def append(self, snapshot: Snapshot) -> None:
        if self.snapshots and snapshot.time <= self.snapshots[-1].time:
            raise LayoutError(
                f"Snapshot time {snapshot.time} not after {self.snapshots[-1].time}"
            )
        if snapshot.state is not None and snapshot.state.generation != snapshot.generation:
            raise LayoutError("Snapshot layout does not match its recorded generation")
        self.snapshots.append(snapshot)

    @property
    def times(self) -> np.ndarray:
        return np.array([snap.time for snap in self.snapshots])

    @property
    def final(self) -> Snapshot:
        return self.snapshots[-1]

    def probe_matrix(self) -> np.ndarray:
        """Sampled phi, shape (n_snapshots, n_points)"""
        return np.vstack([snap.probes for snap in self.snapshots])


@dataclass
class BarrierStats:
    """Per barrier step statistics"""

    step: int
    time: float
    elements: int
    updates: int
    max_level: int
    max_substeps: int
    refined: int = 0
    coarsened: int = 0
    wall_time: float | None = None


@dataclass
class LATField:
    """Local activation time per point; NaN marks never activated"""

    points: np.ndarray
    times: np.ndarray
    threshold: float

    @property
    def activated(self) -> np.ndarray:
        return ~np.isnan(self.times)


@dataclass
class StateMetrics:
    """Discrete norms of a phi difference (mV)"""

    linf: float
    l2: float
    per_element: dict[int, float]
