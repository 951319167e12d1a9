"""Activation times, conduction velocity, spiral tip tracking and benchmark runs."""
from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace
import logging
from pathlib import Path
from typing import Any

import numpy as np
from scipy import stats
from scipy.spatial import cKDTree
from scipy.spatial.distance import directed_hausdorff

from .config import RunConfig, build_config, parse_override
from .const import LAT_THRESHOLD_MV, NEVER_ACTIVATED, SolverKind
from .core import MonodomainSimulation, RunResult
from .data import LATField, Snapshot, Trajectory
from .errors import InsufficientDataError, InvalidArgumentError, PropagationError
from .mesh import ForestMesh
from .output import read_manifest, read_vtk_points
from .sipg import FieldSampler
from .slts import cfl_estimates
from .util import ceil_log2

_LOGGER = logging.getLogger(__name__)

TIP_GATE_LEVEL = 0.5
CV_WINDOW = (0.25, 0.75)
AXIS_LOCK_FRACTION = 0.25

CABLE_CONFIG = {
    "mesh.dim": "1",
    "mesh.extent": "20",
    "mesh.counts": "20",
    "mesh.max_level": "3",
    "basis.order": "1",
    "diffusion.tensor": "0.1334",
    "time.dt": "0.125",
    "time.end": "40",
    "output.snapshot_every": "0.5",
    "stimulus.center": "0",
    "stimulus.size": "1.5",
    "model.name": "mitchell_schaeffer",
}

STRIP_CONFIG = {
    **CABLE_CONFIG,
    "mesh.dim": "2",
    "mesh.extent": "20, 7",
    "mesh.counts": "20, 7",
    "stimulus.center": "0, 3.5",
    "stimulus.size": "1.5, 3.5",
}

SPIRAL_CONFIG = {
    "mesh.dim": "2",
    "mesh.extent": "40, 40",
    "mesh.counts": "20, 20",
    "mesh.max_level": "3",
    "basis.order": "2",
    "sipg.gamma": "8",
    "diffusion.tensor": "0.1",
    "amr.tau_refine": "1.0",
    "amr.tau_coarsen": "0.33",
    "amr.tau_cell": "0.5",
    "time.dt": "0.125",
    "time.dt_bar": "0.01",
    "time.end": "400",
    "output.snapshot_every": "5",
    "stimulus.enabled": "false",
    "init.kind": "spiral",
    "model.name": "mitchell_schaeffer",
}


def activation_times(
    values: np.ndarray, times: np.ndarray, threshold: float = LAT_THRESHOLD_MV
) -> np.ndarray:
    """First upward threshold crossing per column of ``values`` (n_times, n_points).

    Crossing times are linearly interpolated between the bracketing samples;
    points already above threshold at the first sample activate at that time.
    """
    values = np.asarray(values, dtype=float)
    times = np.asarray(times, dtype=float)
    if values.ndim != 2 or len(times) != values.shape[0]:
        raise InvalidArgumentError(f"Expected ({len(times)}, n) samples, got {values.shape}")
    if len(times) < 2:
        raise InsufficientDataError(f"Need at least two snapshots, got {len(times)}")

    above = values > threshold
    activated = above.any(axis=0)
    first = np.argmax(above, axis=0)
    result = np.full(values.shape[1], NEVER_ACTIVATED)
    result[activated & (first == 0)] = times[0]

    columns = np.flatnonzero(activated & (first > 0))
    after = first[columns]
    v0, v1 = values[after - 1, columns], values[after, columns]
    t0, t1 = times[after - 1], times[after]
    result[columns] = t0 + (threshold - v0) / (v1 - v0) * (t1 - t0)
    return result


def compute_lat(trajectory: Trajectory, threshold: float = LAT_THRESHOLD_MV) -> LATField:
    """Activation times at the trajectory's probe points"""
    if len(trajectory.snapshots) < 2:
        raise InsufficientDataError(
            f"Need at least two snapshots, got {len(trajectory.snapshots)}"
        )
    times = activation_times(trajectory.probe_matrix(), trajectory.times, threshold)
    return LATField(points=np.asarray(trajectory.points), times=times, threshold=threshold)


def lat_from_manifest(path: str | Path, threshold: float = LAT_THRESHOLD_MV) -> LATField:
    """Activation times at the nodes of the first snapshot listed in a manifest.

    Later snapshots on a different mesh are mapped to those nodes by nearest
    neighbour lookup.
    """
    entries = read_manifest(path)
    if len(entries) < 2:
        raise InsufficientDataError(f"Manifest {path} lists {len(entries)} snapshot(s)")
    points, fields = read_vtk_points(entries[0][2])
    dim = 2 if np.any(points[:, 1] != 0.0) else 1
    samples = [fields["phi"]]
    for _, _, name in entries[1:]:
        other, other_fields = read_vtk_points(name)
        if other.shape == points.shape and np.array_equal(other, points):
            samples.append(other_fields["phi"])
            continue
        _, nearest = cKDTree(other).query(points)
        samples.append(other_fields["phi"][nearest])
    times = np.array([time for _, time, _ in entries])
    return LATField(
        points=points[:, :dim],
        times=activation_times(np.vstack(samples), times, threshold),
        threshold=threshold,
    )


def conduction_velocity(
    lat: LATField, axis: int = 0, window: tuple[float, float] = CV_WINDOW
) -> float:
    """Inverse slope of a least-squares fit of LAT against distance, in mm/ms"""
    position = np.asarray(lat.points)[:, axis]
    low, high = position.min(), position.max()
    lower = low + window[0] * (high - low)
    upper = low + window[1] * (high - low)
    mask = lat.activated & (position >= lower) & (position <= upper)
    diagnostics = {"activated": int(lat.activated.sum()), "in_window": int(mask.sum())}
    if mask.sum() < 2:
        raise PropagationError("Wave did not cross the measurement window", diagnostics)
    fit = stats.linregress(position[mask], lat.times[mask])
    if not fit.slope > 0:
        diagnostics["slope"] = float(fit.slope)
        raise PropagationError("Activation times do not increase along the axis", diagnostics)
    return 1.0 / float(fit.slope)


def lat_is_monotone(lat: LATField, axis: int = 0, tolerance: float = 0.0) -> bool:
    """True if activation times never decrease along ``axis`` over activated points"""
    position = np.asarray(lat.points)[lat.activated, axis]
    times = lat.times[lat.activated][np.argsort(position, kind="stable")]
    return bool(np.all(np.diff(times) >= -tolerance))


def refined_intervals(mesh: ForestMesh, axis: int = 0) -> list[tuple[float, float]]:
    """Merged extents along ``axis`` covered by elements above the root level"""
    spans = sorted(
        (float(lower[axis]), float(upper[axis]))
        for lower, upper in (mesh.bounds(e) for e in mesh.active_elements if mesh.level(e) > 0)
    )
    merged: list[tuple[float, float]] = []
    for start, stop in spans:
        if merged and start <= merged[-1][1] + 1e-9:
            merged[-1] = (merged[-1][0], max(merged[-1][1], stop))
        else:
            merged.append((start, stop))
    return merged


def sampling_grid(extent: Iterable[float], spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """Node coordinates along x and y of a regular grid covering the domain"""
    width, height = extent
    xs = np.linspace(0.0, width, int(round(width / spacing)) + 1)
    ys = np.linspace(0.0, height, int(round(height / spacing)) + 1)
    return xs, ys


def isoline_points(
    values: np.ndarray, xs: np.ndarray, ys: np.ndarray, level: float
) -> np.ndarray:
    """Level crossings on the edges of a grid; ``values`` is indexed [iy, ix]"""
    shifted = values - level
    points = []
    across_x = shifted[:, :-1] * shifted[:, 1:] < 0
    for iy, ix in zip(*np.nonzero(across_x)):
        a, b = shifted[iy, ix], shifted[iy, ix + 1]
        points.append((xs[ix] + a / (a - b) * (xs[ix + 1] - xs[ix]), ys[iy]))
    across_y = shifted[:-1, :] * shifted[1:, :] < 0
    for iy, ix in zip(*np.nonzero(across_y)):
        a, b = shifted[iy, ix], shifted[iy + 1, ix]
        points.append((xs[ix], ys[iy] + a / (a - b) * (ys[iy + 1] - ys[iy])))
    return np.array(points).reshape(-1, 2)


def _sign_change(shifted: np.ndarray) -> np.ndarray:
    """Grid cells whose four corners do not share one sign"""
    corners = np.stack(
        [shifted[:-1, :-1], shifted[:-1, 1:], shifted[1:, :-1], shifted[1:, 1:]]
    )
    return (corners.min(axis=0) < 0) & (corners.max(axis=0) > 0)


def tip_position(
    phi: np.ndarray,
    gate: np.ndarray,
    xs: np.ndarray,
    ys: np.ndarray,
    previous: np.ndarray | None = None,
    threshold: float = LAT_THRESHOLD_MV,
    gate_level: float = TIP_GATE_LEVEL,
) -> np.ndarray | None:
    """Center of the grid cell where the phi and gate level sets intersect"""
    cells = _sign_change(phi - threshold) & _sign_change(gate - gate_level)
    iy, ix = np.nonzero(cells)
    if not len(ix):
        return None
    centers = np.column_stack([(xs[ix] + xs[ix + 1]) / 2, (ys[iy] + ys[iy + 1]) / 2])
    if previous is None:
        return centers[0]
    return centers[np.argmin(np.linalg.norm(centers - previous, axis=1))]


def rotation(tips: np.ndarray) -> float:
    """Signed rotation of the tip about the centroid of its path; positive is counterclockwise"""
    tips = np.asarray(tips, dtype=float)
    if len(tips) < 3:
        return 0.0
    offset = tips - tips.mean(axis=0)
    angles = np.unwrap(np.arctan2(offset[:, 1], offset[:, 0]))
    return float(angles[-1] - angles[0])


def turning_angle(tips: np.ndarray) -> float:
    """Accumulated rotation of the tip in radians, either direction"""
    return abs(rotation(tips))


def axis_locked(tips: np.ndarray, spacing: float, fraction: float = AXIS_LOCK_FRACTION) -> bool:
    """True if one tip coordinate stays within ``spacing`` of its median too often"""
    tips = np.asarray(tips, dtype=float)
    if not len(tips):
        return False
    near = np.abs(tips - np.median(tips, axis=0)) <= spacing
    return bool(np.any(near.mean(axis=0) > fraction))


def hausdorff_distance(a: np.ndarray, b: np.ndarray) -> float:
    if not (len(a) and len(b)):
        raise InsufficientDataError("Hausdorff distance needs two non-empty point sets")
    return max(directed_hausdorff(a, b)[0], directed_hausdorff(b, a)[0])


@dataclass
class SpiralObserver:
    """Samples phi and the gate on a grid at every snapshot of a 2D run"""

    simulation: MonodomainSimulation
    spacing: float
    tips: list[np.ndarray] = field(default_factory=list)
    tip_times: list[float] = field(default_factory=list)
    final_phi: np.ndarray | None = None
    _sampler: FieldSampler | None = None

    def __post_init__(self) -> None:
        self.xs, self.ys = sampling_grid(self.simulation.config.extent, self.spacing)
        gx, gy = np.meshgrid(self.xs, self.ys)
        self.points = np.column_stack([gx.ravel(), gy.ravel()])

    def __call__(self, snapshot: Snapshot) -> None:
        mesh = self.simulation.mesh
        if self._sampler is None or self._sampler.generation != mesh.generation:
            self._sampler = FieldSampler(mesh, self.simulation.basis, self.points)
        shape = (len(self.ys), len(self.xs))
        phi = self._sampler.sample(snapshot.state).reshape(shape)
        gate = self._sampler.sample(snapshot.state, component=0).reshape(shape)
        previous = self.tips[-1] if self.tips else None
        tip = tip_position(phi, gate, self.xs, self.ys, previous)
        if tip is not None:
            self.tips.append(tip)
            self.tip_times.append(snapshot.time)
        self.final_phi = phi

    def isoline(self, level: float = LAT_THRESHOLD_MV) -> np.ndarray:
        if self.final_phi is None:
            return np.zeros((0, 2))
        return isoline_points(self.final_phi, self.xs, self.ys, level)


def bench_config(
    base: Mapping[str, str], overrides: Iterable[str] = (), **changes: str
) -> RunConfig:
    """Benchmark defaults, then ``changes``, then user ``key=value`` overrides"""
    raw: dict[str, Any] = {**base, **changes}
    lines: dict[str, int | None] = {}
    for override in overrides:
        key, value = parse_override(override)
        raw[key] = value
        lines[key] = None
    return build_config(raw, lines)


def oracle_time_step(simulation: MonodomainSimulation, dt: float) -> float:
    """Largest dt / 2**k below the smallest element CFL estimate"""
    bound = float(np.min(cfl_estimates(simulation.ops)))
    if not np.isfinite(bound):
        return dt
    return dt / 2 ** max(0, ceil_log2(dt / bound))


def uniform_oracle(config: RunConfig, refine_levels: int = 0) -> MonodomainSimulation:
    """Uniform stepping on a root mesh refined ``refine_levels`` times everywhere"""
    patch = None
    if refine_levels:
        patch = ((0.0,) * config.dim, tuple(config.extent), refine_levels)
    config = replace(
        config,
        solver=SolverKind.UNIFORM,
        patch=patch,
        values={
            **config.values,
            "solver.kind": str(SolverKind.UNIFORM),
            "mesh.patch_level": refine_levels,
        },
    )
    simulation = MonodomainSimulation(config)
    uniform_dt = oracle_time_step(simulation, config.dt)
    simulation.config = replace(
        config, uniform_dt=uniform_dt, values={**config.values, "time.uniform_dt": uniform_dt}
    )
    return simulation


def compare_runs(
    a: RunResult, b: RunResult, threshold: float = LAT_THRESHOLD_MV
) -> dict[str, Any]:
    """Probe differences at common snapshot times plus activation time difference"""
    times_b = b.trajectory.times
    linf, l2, common = 0.0, 0.0, 0
    for snapshot in a.trajectory.snapshots:
        match = np.flatnonzero(np.isclose(times_b, snapshot.time, rtol=0.0, atol=1e-9))
        if not len(match):
            continue
        other = b.trajectory.snapshots[int(match[0])]
        difference = snapshot.probes - other.probes
        linf = max(linf, float(np.abs(difference).max()))
        l2 = max(l2, float(np.sqrt(np.mean(difference**2))))
        common += 1
    if not common:
        raise InsufficientDataError("Runs share no snapshot times")
    report: dict[str, Any] = {
        "common_snapshots": common,
        "phi_linf": linf,
        "phi_rms": l2,
        "config_hash_a": a.config_hash,
        "config_hash_b": b.config_hash,
    }
    if len(a.trajectory.snapshots) > 1 and len(b.trajectory.snapshots) > 1:
        lat_a = compute_lat(a.trajectory, threshold).times
        lat_b = compute_lat(b.trajectory, threshold).times
        both = ~np.isnan(lat_a) & ~np.isnan(lat_b)
        report["lat_max_difference"] = (
            float(np.abs(lat_a[both] - lat_b[both]).max()) if both.any() else None
        )
        report["lat_activation_mismatch"] = int(np.sum(np.isnan(lat_a) != np.isnan(lat_b)))
    return report


def _measure(result: RunResult, config: RunConfig) -> float:
    return conduction_velocity(compute_lat(result.trajectory), axis=config.long_axis)


def bench_cable(
    overrides: Iterable[str] = (), strip: bool = False, oracle_level: int | None = None
) -> dict[str, Any]:
    """Adaptive run against uniform oracles at the finest level and one coarser.

    Reports conduction velocities, their relative differences, element
    update counts and I/O free wall times.
    """
    overrides = list(overrides)
    config = bench_config(STRIP_CONFIG if strip else CABLE_CONFIG, overrides)
    level = config.max_level if oracle_level is None else oracle_level
    if level < 1:
        raise InvalidArgumentError("Cable benchmark needs at least one refinement level")

    adaptive = MonodomainSimulation(config).run()
    fine = uniform_oracle(config, level).run()
    coarse = uniform_oracle(config, level - 1).run()

    cv = _measure(adaptive, config)
    cv_fine = _measure(fine, config)
    cv_coarse = _measure(coarse, config)
    report = {
        "benchmark": "strip" if strip else "cable",
        "config_hash": config.hash,
        "cv": cv,
        "cv_oracle": cv_fine,
        "cv_oracle_coarse": cv_coarse,
        "cv_error": abs(cv - cv_fine) / cv_fine,
        "cv_self_convergence": abs(cv_fine - cv_coarse) / cv_fine,
        "updates": adaptive.updates,
        "updates_oracle": fine.updates,
        "update_ratio": adaptive.updates / fine.updates if fine.updates else None,
        "wall_time": adaptive.wall_time,
        "wall_time_oracle": fine.wall_time,
        "lat_monotone": lat_is_monotone(
            compute_lat(adaptive.trajectory), config.long_axis, tolerance=config.dt
        ),
    }
    for key, value in compare_runs(adaptive, fine).items():
        if key.startswith(("phi", "lat")):
            report[f"oracle_{key}"] = value
    _LOGGER.info(
        "Cable benchmark: CV %.4f mm/ms (oracle %.4f), update ratio %.3f",
        cv,
        cv_fine,
        report["update_ratio"] or float("nan"),
    )
    return report


def _spiral_run(config: RunConfig, spacing: float) -> tuple[RunResult, SpiralObserver]:
    simulation = MonodomainSimulation(config)
    observer = SpiralObserver(simulation, spacing)
    return simulation.run(on_snapshot=observer), observer


def bench_spiral(
    overrides: Iterable[str] = (),
    spacing: float | None = None,
    oracle_level: int = 1,
    check_mirror: bool = False,
) -> dict[str, Any]:
    """Graded initial condition run with tip tracking and isoline comparison"""
    overrides = list(overrides)
    config = bench_config(SPIRAL_CONFIG, overrides)
    if config.dim != 2:
        raise InvalidArgumentError("Spiral benchmark needs a 2D configuration")
    coarse_width = min(e / c for e, c in zip(config.extent, config.counts))
    spacing = coarse_width / 2 if spacing is None else spacing

    result, observer = _spiral_run(config, spacing)
    tips = np.array(observer.tips).reshape(-1, 2)
    isoline = observer.isoline()
    diagnostics = {"tip_samples": len(tips), "isoline_points": len(isoline)}
    if len(tips) < 3 or not len(isoline):
        _LOGGER.warning("No spiral formed: %s", diagnostics)
        raise PropagationError("Spiral wave did not form or died out", diagnostics)

    signed = rotation(tips)
    angle = abs(signed)
    locked = axis_locked(tips, spacing)
    report: dict[str, Any] = {
        "benchmark": "spiral",
        "config_hash": config.hash,
        "tip_samples": len(tips),
        "tip_path": tips.tolist(),
        "turning_angle": angle,
        "rotation": signed,
        "axis_locked": locked,
        "pinned": not (angle > 2 * np.pi and not locked),
        "updates": result.updates,
        "wall_time": result.wall_time,
        "tolerance": 2 * coarse_width,
    }

    oracle = uniform_oracle(config, oracle_level)
    oracle_observer = SpiralObserver(oracle, spacing)
    oracle_result = oracle.run(on_snapshot=oracle_observer)
    report["hausdorff_oracle"] = hausdorff_distance(isoline, oracle_observer.isoline())
    report["updates_oracle"] = oracle_result.updates
    report["wall_time_oracle"] = oracle_result.wall_time

    if check_mirror:
        mirrored = bench_config(SPIRAL_CONFIG, overrides, **{"init.mirror": "true"})
        _, mirror_observer = _spiral_run(mirrored, spacing)
        mirror_tips = np.array(mirror_observer.tips).reshape(-1, 2)
        report["mirror_rotation"] = rotation(mirror_tips)
        report["mirror_axis_locked"] = axis_locked(mirror_tips, spacing)
        reflected = mirror_observer.isoline()
        if len(reflected):
            reflected[:, 0] = config.extent[0] - reflected[:, 0]
        report["hausdorff_mirror"] = hausdorff_distance(isoline, reflected)

    _LOGGER.info(
        "Spiral benchmark: turning angle %.2f rad, axis locked %s, Hausdorff %.3f mm",
        angle,
        locked,
        report["hausdorff_oracle"],
    )
    return report
