"""Adaptive DG monodomain solver with synchronous local time stepping"""
from __future__ import annotations

from typing import Tuple

from .benchmarks import bench_cable, bench_spiral, compare_runs, compute_lat
from .config import RunConfig, load_config, parse_config
from .core import MonodomainSimulation, RunResult
from .data import (
    BarrierStats,
    FaceInfo,
    FieldState,
    IndicatorReport,
    LATField,
    RefinementDelta,
    Snapshot,
    StateMetrics,
    StepPlan,
    Trajectory,
)
from .errors import (
    CardioError,
    CellModelError,
    ConfigError,
    ConfigErrorCode,
    DivergenceError,
    ExtrapolationError,
    GeometryError,
    InsufficientDataError,
    InvalidArgumentError,
    LayoutError,
    NumericalDomainError,
    OutputError,
    PropagationError,
    SchedulingError,
    StaleTopologyError,
)
from .ionics import CellModel, FitzHughNagumo, MitchellSchaeffer, StimulusProtocol, create_model
from .mesh import ForestMesh, build_cartesian_root, transfer_field
from .output import write_vtk
from .refsolver import compare_states, uniform_step_run
from .sipg import Basis, ElementOps, assemble_operators
from .slts import AdaptivitySettings, barrier_step

__all__: Tuple[str, ...] = (
    "AdaptivitySettings",
    "BarrierStats",
    "Basis",
    "CardioError",
    "CellModel",
    "CellModelError",
    "ConfigError",
    "ConfigErrorCode",
    "DivergenceError",
    "ElementOps",
    "ExtrapolationError",
    "FaceInfo",
    "FieldState",
    "FitzHughNagumo",
    "ForestMesh",
    "GeometryError",
    "IndicatorReport",
    "InsufficientDataError",
    "InvalidArgumentError",
    "LATField",
    "LayoutError",
    "MitchellSchaeffer",
    "MonodomainSimulation",
    "NumericalDomainError",
    "OutputError",
    "PropagationError",
    "RefinementDelta",
    "RunConfig",
    "RunResult",
    "SchedulingError",
    "Snapshot",
    "StaleTopologyError",
    "StateMetrics",
    "StepPlan",
    "StimulusProtocol",
    "Trajectory",
    "assemble_operators",
    "barrier_step",
    "bench_cable",
    "bench_spiral",
    "build_cartesian_root",
    "compare_runs",
    "compare_states",
    "compute_lat",
    "create_model",
    "load_config",
    "parse_config",
    "transfer_field",
    "uniform_step_run",
    "write_vtk",
)
