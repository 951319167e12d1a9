"""Monodomain simulation facade."""
from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field
import logging

import numpy as np

from .config import RunConfig
from .const import InitialCondition, SolverKind
from .data import BarrierStats, FieldState, Snapshot, Trajectory
from .indicators import kelly_indicator, mark_elements
from .ionics import create_model
from .mesh import build_cartesian_root
from .output import RunWriter
from .refsolver import uniform_step_run
from .sipg import Basis, FieldSampler, assemble_operators, nodal_coordinates
from .slts import BarrierResult, barrier_step

SPIRAL_PHI_RANGE = (10.0, -85.0)
SPIRAL_GATE_RANGE = (0.6, 0.1)


@dataclass
class RunResult:
    """Outcome of a full run"""

    trajectory: Trajectory
    stats: list[BarrierStats] = field(default_factory=list)
    updates: int = 0
    wall_time: float = 0.0
    config_hash: str = ""

    @property
    def final_state(self) -> FieldState | None:
        return self.trajectory.final.state if self.trajectory.snapshots else None

    def summary(self, solver: SolverKind) -> dict[str, object]:
        return {
            "config_hash": self.config_hash,
            "solver": str(solver),
            "snapshots": len(self.trajectory.snapshots),
            "barrier_steps": len(self.stats),
            "element_updates": self.updates,
            "final_time": float(self.trajectory.times[-1]) if self.trajectory.snapshots else 0.0,
            "max_elements": max((s.elements for s in self.stats), default=0),
            "wall_time": self.wall_time,
        }


class MonodomainSimulation:
    """Builds mesh, operators and cell model from a RunConfig and marches it"""

    def __init__(self, config: RunConfig, logger: logging.Logger | None = None) -> None:
        self._logger = logger or logging.getLogger("cardiolts")
        self.config = config
        self.mesh = build_cartesian_root(
            config.extent, config.counts, config.dim, config.max_level
        )
        if config.patch is not None:
            lower, upper, level = config.patch
            self.mesh.refine_box(lower, upper, level)
        self.basis = Basis(config.order, config.dim)
        self.model = create_model(config.model_name, config.model_parameters)
        self.ops = assemble_operators(self.mesh, self.basis, config.diffusion, config.gamma)
        self.state = self.initial_state()
        self.probe_points = self.default_probe_points()
        self._sampler: FieldSampler | None = None
        self._observer: Callable[[Snapshot], None] | None = None

    def __repr__(self) -> str:
        return f"MonodomainSimulation({self.mesh!r}, {self.basis!r}, {self.model!r})"

    def initial_state(self, t: float = 0.0) -> FieldState:
        """Nodal initial condition on the current mesh"""
        coords = nodal_coordinates(self.mesh, self.basis)
        n_elem, n_nodes = coords.shape[:2]
        phi = np.full((n_elem, n_nodes), self.model.phi_rest)
        s = np.broadcast_to(
            self.model.rest_state[None, :, None], (n_elem, self.model.n_states, n_nodes)
        ).copy()
        if self.config.init_kind == InitialCondition.SPIRAL:
            width, height = self.config.extent
            x = coords[..., 0] / width
            if self.config.init_mirror:
                x = 1.0 - x
            y = coords[..., 1] / height
            phi = SPIRAL_PHI_RANGE[0] + (SPIRAL_PHI_RANGE[1] - SPIRAL_PHI_RANGE[0]) * x
            s[:, 0] = SPIRAL_GATE_RANGE[0] + (SPIRAL_GATE_RANGE[1] - SPIRAL_GATE_RANGE[0]) * y
        return FieldState.synchronized(self.mesh.active_elements, self.mesh.generation, phi, s, t)

    def adapt_initial(self, max_rounds: int | None = None) -> int:
        """Refine against the initial condition until the indicator is satisfied"""
        settings = self.config.adaptivity
        rounds = self.config.max_level if max_rounds is None else max_rounds
        refined = 0
        for _ in range(rounds):
            eta = kelly_indicator(self.mesh, self.ops, self.state)
            marked, _ = mark_elements(eta, settings.tau_refine, settings.tau_coarsen, self.mesh)
            if not marked:
                break
            delta = self.mesh.refine(marked, generation=self.state.generation)
            if delta.is_empty:
                break
            refined += len(delta.refined) + len(delta.balance_induced)
            self.ops = assemble_operators(
                self.mesh, self.basis, self.config.diffusion, self.config.gamma, previous=self.ops
            )
            self.state = self.initial_state(self.state.time)
        self._logger.debug("Initial adaptation refined %d element(s)", refined)
        return refined

    def default_probe_points(self) -> np.ndarray:
        """Points along the long axis through the domain center"""
        axis = self.config.long_axis
        count = self.config.probes
        extent = np.asarray(self.config.extent)
        points = np.tile(extent / 2.0, (count, 1))
        points[:, axis] = np.linspace(0.0, extent[axis], count)
        return points

    def probe(self, state: FieldState, component: int | None = None) -> np.ndarray:
        if self._sampler is None or self._sampler.generation != self.mesh.generation:
            self._sampler = FieldSampler(self.mesh, self.basis, self.probe_points)
        return self._sampler.sample(state, component)

    def _snapshot(self, index: int, state: FieldState) -> Snapshot:
        return Snapshot(
            index=index,
            time=state.time,
            generation=state.generation,
            state=state.copy(),
            probes=self.probe(state),
        )

    def advance(self, dt: float | None = None, step: int = 0) -> BarrierResult:
        """One local time stepping barrier step"""
        result = barrier_step(
            self.state,
            self.mesh,
            self.ops,
            self.model,
            self.config.adaptivity,
            self.config.dt if dt is None else dt,
            self.config.stimulus,
            step=step,
        )
        self.state, self.ops = result.state, result.ops
        return result

    def run(
        self,
        writer: RunWriter | None = None,
        keep_states: bool = False,
        on_snapshot: Callable[[Snapshot], None] | None = None,
    ) -> RunResult:
        """March to the configured end time, writing artifacts through ``writer``.

        ``on_snapshot`` sees every snapshot while its mesh generation is current.
        """
        config = self.config
        self._observer = on_snapshot
        self._logger.info(
            "Starting %s run to %.4g ms on %d element(s)",
            config.solver,
            config.t_end,
            len(self.mesh.active_elements),
        )
        if config.solver == SolverKind.UNIFORM:
            result = self._run_uniform(writer, keep_states)
        else:
            result = self._run_slts(writer, keep_states)
        result.config_hash = config.hash
        if writer is not None:
            writer.finish(result.summary(config.solver))
        self._logger.info(
            "Finished: %d element updates in %.3f s", result.updates, result.wall_time
        )
        return result

    def _emit(self, writer: RunWriter | None, snapshot: Snapshot) -> None:
        if self._observer is not None:
            self._observer(snapshot)
        if writer is not None:
            writer.snapshot(self.mesh, snapshot, self.model.state_names)

    def barrier_times(self) -> np.ndarray:
        """Barrier end times; the last step is shortened to land on the end time"""
        config = self.config
        t0 = self.state.time
        full = int(np.floor(config.t_end / config.dt + 1e-9))
        times = [t0 + n * config.dt for n in range(1, full + 1)]
        if config.t_end - full * config.dt > 1e-9 * config.dt:
            times.append(t0 + config.t_end)
        return np.asarray(times)

    def _run_slts(self, writer: RunWriter | None, keep_states: bool) -> RunResult:
        config = self.config
        trajectory = Trajectory(points=self.probe_points, metadata={"solver": "slts"})
        result = RunResult(trajectory)

        def _record() -> None:
            snapshot = self._snapshot(len(trajectory.snapshots), self.state)
            self._emit(writer, snapshot)
            if not keep_states:
                snapshot.state = None
            trajectory.append(snapshot)

        if config.adaptivity.amr:
            self.adapt_initial()
        _record()
        t0 = self.state.time
        next_snapshot = t0 + config.snapshot_every
        times = self.barrier_times()
        for step, t_end in enumerate(times, start=1):
            barrier = self.advance(t_end - self.state.time, step=step)
            # barrier times come from the step count, not from accumulation
            barrier.state.t_curr[:] = t_end
            barrier.stats.time = float(t_end)
            result.stats.append(barrier.stats)
            result.updates += barrier.stats.updates
            result.wall_time += barrier.stats.wall_time or 0.0
            if writer is not None:
                writer.barrier(barrier.stats)
            if t_end >= next_snapshot - 1e-9 * config.dt or step == len(times):
                _record()
                while next_snapshot <= t_end + 1e-9 * config.dt:
                    next_snapshot += config.snapshot_every
        trajectory.metadata["updates"] = result.updates
        return result

    def _run_uniform(self, writer: RunWriter | None, keep_states: bool) -> RunResult:
        config = self.config
        trajectory = uniform_step_run(
            self.mesh,
            self.ops,
            self.model,
            config.uniform_dt,
            config.t_end,
            self.state,
            stim=config.stimulus,
            snapshot_every=config.snapshot_every,
            probe=self.probe,
            on_snapshot=lambda snapshot: self._emit(writer, snapshot),
            keep_states=True,
        )
        trajectory.points = self.probe_points
        final = trajectory.final.state
        if final is not None:
            self.state = final
        if not keep_states:
            for snapshot in trajectory.snapshots[:-1]:
                snapshot.state = None
        return RunResult(
            trajectory=trajectory,
            updates=int(trajectory.metadata["updates"]),
            wall_time=float(trajectory.metadata["wall_time"]),
        )
