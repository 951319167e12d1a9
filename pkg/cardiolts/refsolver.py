"""Uniform global time stepping on the same discretization, used as oracle."""
from __future__ import annotations

from collections.abc import Callable
import logging
import time

import numpy as np

from .data import FieldState, Snapshot, StateMetrics, Trajectory
from .errors import DivergenceError, InvalidArgumentError, LayoutError
from .ionics import CellModel, StimulusProtocol
from .mesh import ForestMesh
from .sipg import Basis, ElementOps
from .slts import ReactionDiffusionKernel, cfl_estimates

_LOGGER = logging.getLogger(__name__)


def _step_count(span: float, dt: float, what: str) -> int:
    count = round(span / dt)
    if abs(count * dt - span) > 1e-9 * max(span, dt):
        raise InvalidArgumentError(f"{what} {span} is not a multiple of the time step {dt}")
    return count


def uniform_step_run(
    mesh: ForestMesh,
    ops: ElementOps,
    model: CellModel,
    dt: float,
    T: float,
    initial: FieldState,
    stim: StimulusProtocol | None = None,
    snapshot_every: float | None = None,
    probe: Callable[[FieldState], np.ndarray] | None = None,
    on_snapshot: Callable[[Snapshot], None] | None = None,
    keep_states: bool = True,
) -> Trajectory:
    """March every element with one global forward Euler / Rush-Larsen step.

    Snapshots are taken at t0 and at every multiple of ``snapshot_every``;
    ``on_snapshot`` sees each one before its state is dropped when
    ``keep_states`` is false. The stepping time, without snapshot sampling
    and callbacks, is reported as ``metadata["wall_time"]``.
    """
    if not dt > 0:
        raise InvalidArgumentError(f"Time step must be positive: {dt}")
    if T < 0:
        raise InvalidArgumentError(f"End time must be non-negative: {T}")
    ops.require(mesh)
    if initial.generation != mesh.generation:
        raise LayoutError("Initial state is not laid out on the current mesh")

    bound = float(np.min(cfl_estimates(ops))) if len(ops.element_ids) else np.inf
    if dt > bound:
        _LOGGER.warning(
            "Uniform step %.4g ms exceeds the smallest CFL estimate %.4g ms", dt, bound
        )

    steps = _step_count(T, dt, "End time")
    every = steps
    if snapshot_every is not None:
        every = _step_count(snapshot_every, dt, "Snapshot interval")
    every = max(every, 1)

    kernel = ReactionDiffusionKernel(mesh, ops, model, stim)
    rows = np.arange(len(initial.element_ids))
    t0 = initial.time
    phi, s = initial.phi.copy(), initial.s.copy()
    io_time = 0.0

    def _snapshot(index: int, t: float) -> Snapshot:
        nonlocal io_time
        started = time.perf_counter()
        state = FieldState.synchronized(
            initial.element_ids, mesh.generation, phi.copy(), s.copy(), t
        )
        snapshot = Snapshot(
            index=index,
            time=t,
            generation=mesh.generation,
            state=state,
            probes=probe(state) if probe else None,
        )
        if on_snapshot is not None:
            on_snapshot(snapshot)
        if not keep_states:
            snapshot.state = None
        io_time += time.perf_counter() - started
        return snapshot

    started = time.perf_counter()
    trajectory = Trajectory(
        metadata={"solver": "uniform", "dt": dt, "generation": mesh.generation}
    )
    trajectory.append(_snapshot(0, t0))
    for n in range(1, steps + 1):
        t_start = t0 + (n - 1) * dt
        phi, s = kernel.step(rows, phi, phi, s, t_start, dt)
        if not np.all(np.isfinite(phi)):
            raise DivergenceError(t0 + n * dt)
        if n % every == 0:
            trajectory.append(_snapshot(len(trajectory.snapshots), t0 + n * dt))
    trajectory.metadata["updates"] = steps * len(rows)
    trajectory.metadata["wall_time"] = time.perf_counter() - started - io_time
    _LOGGER.info("Uniform run finished: %d steps of %.4g ms", steps, dt)
    return trajectory


def compare_states(
    a: FieldState, b: FieldState, mesh: ForestMesh, basis: Basis
) -> StateMetrics:
    """Nodal max, L2 and per-element max of phi_a - phi_b (mV)"""
    if a.generation != b.generation or a.generation != mesh.generation:
        raise LayoutError(
            f"States on generations {a.generation}/{b.generation}, mesh at {mesh.generation}"
        )
    difference = a.phi - b.phi
    jacobians = np.array([mesh.measure(e) / 2**mesh.dim for e in a.element_ids])
    l2 = float(np.sqrt(np.sum(difference**2 @ basis.weights * jacobians)))
    per_element = np.abs(difference).max(axis=1) if difference.size else np.zeros(0)
    return StateMetrics(
        linf=float(per_element.max()) if per_element.size else 0.0,
        l2=l2,
        per_element=dict(zip(a.element_ids, per_element.tolist())),
    )
