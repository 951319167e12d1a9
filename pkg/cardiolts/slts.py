"""Adaptive multi-queue synchronous local time stepping.

Each barrier step adapts the mesh once, assigns every element a power-of-two
substep count S_e and sweeps the substep queues. Within a sweep all updated
elements read the same buffered snapshot, in which neighbors that are between
their own steps are linearly interpolated in time. Time is tracked as integer
ticks of dt / max(S_e) so all elements land exactly on the barrier.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import logging
import time

import numpy as np
from scipy import sparse

from .const import (
    DEFAULT_CELL_HALO,
    DEFAULT_SUBSTEP_DT,
    DEFAULT_TAU_CELL,
    DEFAULT_TAU_COARSEN,
    DEFAULT_TAU_REFINE,
)
from .data import BarrierStats, FieldState, IndicatorReport, StepPlan
from .errors import (
    DivergenceError,
    ExtrapolationError,
    InvalidArgumentError,
    SchedulingError,
)
from .indicators import (
    indicator_report,
    kelly_indicator,
    mark_elements,
    rvt_indicator,
)
from .ionics import CellModel, StimulusProtocol, advance_states, ionic_rhs, stimulus_eval
from .mesh import ForestMesh, transfer_field
from .sipg import ElementOps, assemble_operators, nodal_coordinates
from .util import ceil_log2, is_power_of_two

_LOGGER = logging.getLogger(__name__)


@dataclass
class AdaptivitySettings:
    """Thresholds driving mesh adaptation and cell-driven substepping"""

    tau_refine: float = DEFAULT_TAU_REFINE
    tau_coarsen: float = DEFAULT_TAU_COARSEN
    tau_cell: float = DEFAULT_TAU_CELL
    dt_bar: float = DEFAULT_SUBSTEP_DT
    amr: bool = True
    cell_halo: int = DEFAULT_CELL_HALO

    def __post_init__(self) -> None:
        if not self.tau_coarsen < self.tau_refine:
            raise InvalidArgumentError(
                f"tau_coarsen ({self.tau_coarsen}) must be below tau_refine ({self.tau_refine})"
            )
        if not self.dt_bar > 0:
            raise InvalidArgumentError(f"Substep length must be positive: {self.dt_bar}")
        if self.cell_halo < 0:
            raise InvalidArgumentError(f"Cell halo must be non-negative: {self.cell_halo}")


def _gershgorin_radii(ops: ElementOps) -> np.ndarray:
    """Largest absolute row sum of M^-1 K per element"""
    row_sums = np.asarray(abs(ops.operator_matrix()).sum(axis=1)).ravel()
    return row_sums.reshape(len(ops.element_ids), ops.n_nodes).max(axis=1)


def cfl_estimates(ops: ElementOps) -> np.ndarray:
    """CFL_e for every element; inf where the element has no diffusion coupling"""
    radii = _gershgorin_radii(ops)
    with np.errstate(divide="ignore"):
        return np.where(radii > 0.0, 1.0 / radii, np.inf)


def cfl_estimate(ops: ElementOps, element_id: int) -> float:
    """1 / max Gershgorin radius over the element's rows of L = M^-1 K"""
    row = ops.element_ids.index(element_id)
    nb = ops.n_nodes
    rows = ops.operator_matrix()[row * nb : (row + 1) * nb]
    radius = float(np.asarray(abs(rows).sum(axis=1)).max())
    return 1.0 / radius if radius > 0.0 else float("inf")


def substep_count(
    dt: float, cfl: float, eta_t: float, tau_cell: float, dt_bar: float
) -> tuple[int, int, int]:
    """(S_e, b_cfl, b_cell) with S_e = 2 ** max(b_cfl, b_cell)"""
    if not (dt > 0 and dt_bar > 0):
        raise InvalidArgumentError(f"Time steps must be positive: dt={dt}, dt_bar={dt_bar}")
    b_cfl = max(0, ceil_log2(dt / cfl)) if np.isfinite(cfl) else 0
    b_cell = max(0, ceil_log2(dt / dt_bar)) if eta_t > tau_cell else 0
    return 2 ** max(b_cfl, b_cell), b_cfl, b_cell


def spread_over_faces(values: np.ndarray, ops: ElementOps, layers: int) -> np.ndarray:
    """Per-element maximum over the element and its face neighbours, ``layers`` times"""
    values = np.asarray(values, dtype=float).copy()
    if layers <= 0 or not ops.faces:
        return values
    row_of = {e: row for row, e in enumerate(ops.element_ids)}
    owners = np.array([row_of[face.owner] for face in ops.faces])
    neighbors = np.array([row_of[face.neighbor] for face in ops.faces])
    for _ in range(layers):
        spread = values.copy()
        np.maximum.at(spread, owners, values[neighbors])
        np.maximum.at(spread, neighbors, values[owners])
        values = spread
    return values


def plan_substeps(
    ops: ElementOps,
    dt: float,
    eta_t: np.ndarray | None = None,
    tau_cell: float = DEFAULT_TAU_CELL,
    dt_bar: float = DEFAULT_SUBSTEP_DT,
    cfl: np.ndarray | None = None,
    halo: int = 0,
) -> StepPlan:
    """Substep counts from the CFL estimates and the temporal indicator.

    With ``halo`` > 0 the indicator is first spread over that many layers of
    face neighbours, so elements a front reaches during the step are
    substepped as well.
    """
    cfl = cfl_estimates(ops) if cfl is None else np.asarray(cfl, dtype=float)
    eta_t = np.zeros(len(cfl)) if eta_t is None else spread_over_faces(eta_t, ops, halo)
    counts = [substep_count(dt, c, e, tau_cell, dt_bar) for c, e in zip(cfl, eta_t)]
    plan = StepPlan(
        element_ids=ops.element_ids,
        dt=dt,
        cfl=cfl,
        b_cfl=np.array([c[1] for c in counts], dtype=int),
        b_cell=np.array([c[2] for c in counts], dtype=int),
        substeps=np.array([c[0] for c in counts], dtype=int),
    )
    check_plan(plan, ops)
    return plan


def check_plan(plan: StepPlan, ops: ElementOps) -> None:
    """Raise SchedulingError unless the plan satisfies the synchronicity rules"""
    top = plan.max_substeps
    for element_id, count in zip(plan.element_ids, plan.substeps):
        if not is_power_of_two(int(count)) or top % int(count):
            raise SchedulingError(f"Element {element_id}: S_e={count} does not divide {top}")
    with np.errstate(divide="ignore"):
        too_long = plan.dt / plan.substeps > plan.cfl * (1.0 + 1e-12)
    if np.any(too_long):
        raise SchedulingError("Substep exceeds the element CFL estimate")
    row_of = {e: row for row, e in enumerate(plan.element_ids)}
    for face in ops.faces:
        a = int(plan.substeps[row_of[face.owner]])
        b = int(plan.substeps[row_of[face.neighbor]])
        if not is_power_of_two(max(a, b) // min(a, b)):
            raise SchedulingError(f"Substep ratio {a}/{b} across face is not a power of two")


def predict_state(
    kernel: ReactionDiffusionKernel, state: FieldState, dt: float
) -> FieldState:
    """One explicit diffusion and reaction step over the whole barrier interval.

    Only feeds the temporal indicator; elements pulled up by their neighbours
    show drift here even while their own reaction is still quiet.
    """
    rows = np.arange(len(state.element_ids))
    phi, s = kernel.step(rows, state.phi, state.phi, state.s, state.time, dt)
    return FieldState.synchronized(state.element_ids, state.generation, phi, s, state.time + dt)


def interpolate_neighbor(state: FieldState, element_id: int, t_query: float) -> np.ndarray:
    """Linear interpolation of phi between t_prev and t_curr, exact at both ends"""
    row = state.row(element_id)
    t_prev, t_curr = float(state.t_prev[row]), float(state.t_curr[row])
    if t_query == t_curr:
        return state.phi[row].copy()
    if t_query == t_prev:
        return state.phi_prev[row].copy()
    if not t_prev < t_query < t_curr:
        raise ExtrapolationError(t_query, t_prev, t_curr)
    theta = (t_query - t_prev) / (t_curr - t_prev)
    return state.phi_prev[row] + theta * (state.phi[row] - state.phi_prev[row])


class ReactionDiffusionKernel:
    """Combined explicit diffusion and reaction update for groups of elements.

    Shared by the local time stepping engine and the uniform solver so both
    follow the same arithmetic.
    """

    def __init__(
        self,
        mesh: ForestMesh,
        ops: ElementOps,
        model: CellModel,
        stimulus: StimulusProtocol | None = None,
    ) -> None:
        ops.require(mesh)
        self.ops = ops
        self.model = model
        self.stimulus = stimulus
        self.n_nodes = ops.n_nodes
        self.matrix = ops.global_matrix()
        self.minv = ops.minv_vector().reshape(len(ops.element_ids), ops.n_nodes)
        self.coords = nodal_coordinates(mesh, ops.basis)
        self._slices: dict[bytes, sparse.csr_matrix] = {}

    def rows_matrix(self, rows: np.ndarray) -> sparse.csr_matrix:
        key = rows.tobytes()
        if key not in self._slices:
            nodes = (rows[:, None] * self.n_nodes + np.arange(self.n_nodes)).ravel()
            self._slices[key] = self.matrix[nodes]
        return self._slices[key]

    def step(
        self,
        rows: np.ndarray,
        snapshot: np.ndarray,
        phi: np.ndarray,
        s: np.ndarray,
        t: float,
        dt: float | np.ndarray,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Advance ``rows`` one step of length ``dt`` from time t.

        ``snapshot`` holds phi of every element at time t and feeds the
        diffusion term; ``phi``/``s`` are the rows' own values.
        """
        diffusion = (self.rows_matrix(rows) @ snapshot.ravel()).reshape(len(rows), -1)
        diffusion *= self.minv[rows]
        states = np.moveaxis(s, 1, 0)
        stim = stimulus_eval(self.stimulus, self.coords[rows], t)
        terms = ionic_rhs(self.model, phi, states, t, stim)
        dt = np.asarray(dt, dtype=float)
        dt_rows = dt[:, None] if dt.ndim else dt
        new_phi = phi + dt_rows * (diffusion + terms.rate)
        new_s = np.moveaxis(advance_states(self.model, terms, states, dt_rows), 0, 1)
        return new_phi, new_s


@dataclass
class BarrierResult:
    """Outcome of one barrier step"""

    state: FieldState
    ops: ElementOps
    plan: StepPlan
    report: IndicatorReport
    stats: BarrierStats
    deltas: list = field(default_factory=list)


def adapt_mesh(
    mesh: ForestMesh,
    ops: ElementOps,
    state: FieldState,
    settings: AdaptivitySettings,
) -> tuple[FieldState, ElementOps, np.ndarray, list]:
    """Spatial indicator, refine, coarsen and reassembly"""
    eta_s = kelly_indicator(mesh, ops, state)
    refine_set, coarsen_set = mark_elements(
        eta_s, settings.tau_refine, settings.tau_coarsen, mesh, state.element_ids
    )
    refine_set = {e for e in refine_set if mesh.level(e) < mesh.max_level}
    deltas = []
    basis = ops.basis
    if refine_set:
        delta = mesh.refine(refine_set, generation=state.generation)
        if not delta.is_empty:
            state = transfer_field(mesh, delta, state, basis)
            deltas.append(delta)
    coarsen_set = mesh.complete_families(e for e in coarsen_set if mesh.is_active(e))
    if coarsen_set:
        delta = mesh.coarsen(coarsen_set, generation=state.generation)
        if not delta.is_empty:
            state = transfer_field(mesh, delta, state, basis)
            deltas.append(delta)
    if deltas:
        ops = assemble_operators(mesh, basis, ops.D, ops.gamma, previous=ops)
    return state, ops, eta_s, deltas


def run_sweeps(
    kernel: ReactionDiffusionKernel, state: FieldState, plan: StepPlan
) -> tuple[FieldState, int]:
    """Execute the substep queues of one barrier step; returns the new state and update count"""
    if not state.is_synchronized:
        raise SchedulingError("Barrier step must start from a synchronized state")
    t0 = state.time
    top = plan.max_substeps
    tick = plan.dt / top
    strides = plan.strides
    phi, s = state.phi.copy(), state.s.copy()
    phi_prev, s_prev = phi.copy(), s.copy()
    tick_prev = np.zeros(len(strides), dtype=int)
    tick_curr = np.zeros(len(strides), dtype=int)
    classes = {int(k): np.flatnonzero(strides == k) for k in np.unique(strides)}
    updates = 0

    for i in range(top):
        if np.any(tick_prev > i) or np.any(tick_curr < i):
            raise ExtrapolationError(
                t0 + i * tick, t0 + tick_prev.min() * tick, t0 + tick_curr.max() * tick
            )
        span = np.maximum(tick_curr - tick_prev, 1)
        theta = ((i - tick_prev) / span)[:, None]
        snapshot = np.where(
            (tick_curr == i)[:, None], phi, phi_prev + theta * (phi - phi_prev)
        )
        t_i = t0 + i * tick
        for stride, rows in classes.items():
            if i % stride:
                continue
            new_phi, new_s = kernel.step(rows, snapshot, phi[rows], s[rows], t_i, stride * tick)
            phi_prev[rows], s_prev[rows] = phi[rows], s[rows]
            phi[rows], s[rows] = new_phi, new_s
            tick_prev[rows] = i
            tick_curr[rows] = i + stride
            updates += len(rows)

    if np.any(tick_curr != top):
        raise SchedulingError("Elements did not reach the barrier time")
    t_end = t0 + plan.dt
    result = FieldState(
        element_ids=state.element_ids,
        generation=state.generation,
        phi=phi,
        s=s,
        phi_prev=phi_prev,
        s_prev=s_prev,
        t_curr=np.full(len(strides), t_end),
        t_prev=t0 + tick_prev * tick,
    )
    if not np.all(np.isfinite(phi)):
        raise DivergenceError(t_end)
    return result, updates


def barrier_step(
    state: FieldState,
    mesh: ForestMesh,
    ops: ElementOps,
    model: CellModel,
    settings: AdaptivitySettings,
    dt: float,
    stimulus: StimulusProtocol | None = None,
    step: int = 0,
) -> BarrierResult:
    """Advance a synchronized state from t to t + dt"""
    started = time.perf_counter()
    t = state.time
    deltas: list = []
    if settings.amr:
        state, ops, eta_s, deltas = adapt_mesh(mesh, ops, state, settings)
        if deltas:
            eta_s = kelly_indicator(mesh, ops, state)
    else:
        eta_s = kelly_indicator(mesh, ops, state)

    kernel = ReactionDiffusionKernel(mesh, ops, model, stimulus)
    predicted = predict_state(kernel, state, dt)
    eta_t = rvt_indicator(model, mesh, ops.basis, state, predicted, t, t + dt, stimulus)
    plan = plan_substeps(
        ops, dt, eta_t, settings.tau_cell, settings.dt_bar, halo=settings.cell_halo
    )
    report = indicator_report(
        eta_s, eta_t, settings.tau_refine, settings.tau_coarsen, settings.tau_cell, mesh
    )

    new_state, updates = run_sweeps(kernel, state, plan)
    if updates != plan.updates:
        raise SchedulingError(f"Executed {updates} updates, planned {plan.updates}")

    stats = BarrierStats(
        step=step,
        time=new_state.time,
        elements=len(new_state.element_ids),
        updates=updates,
        max_level=mesh.max_level_present,
        max_substeps=plan.max_substeps,
        refined=sum(len(d.refined) + len(d.balance_induced) for d in deltas),
        coarsened=sum(len(d.coarsened) for d in deltas),
        wall_time=time.perf_counter() - started,
    )
    _LOGGER.debug(
        "Barrier %d at t=%.4f: %d elements, %d updates, max S %d",
        step,
        stats.time,
        stats.elements,
        updates,
        plan.max_substeps,
    )
    return BarrierResult(new_state, ops, plan, report, stats, deltas)
