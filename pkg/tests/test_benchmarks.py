import numpy as np
from numpy.testing import assert_allclose
import pytest

from cardiolts.benchmarks import (
    CABLE_CONFIG,
    STRIP_CONFIG,
    SpiralObserver,
    activation_times,
    axis_locked,
    bench_cable,
    bench_config,
    bench_spiral,
    compare_runs,
    compute_lat,
    conduction_velocity,
    hausdorff_distance,
    isoline_points,
    lat_from_manifest,
    lat_is_monotone,
    oracle_time_step,
    refined_intervals,
    rotation,
    tip_position,
    turning_angle,
    uniform_oracle,
)
from cardiolts.config import parse_config
from cardiolts.const import SolverKind
from cardiolts.core import MonodomainSimulation
from cardiolts.data import LATField, Snapshot, Trajectory
from cardiolts.errors import (
    ConfigError,
    InsufficientDataError,
    InvalidArgumentError,
    PropagationError,
)
from cardiolts.mesh import build_cartesian_root
from cardiolts.output import write_manifest, write_vtk
from cardiolts.sipg import Basis
from cardiolts.slts import cfl_estimates

SHORT_CABLE = """
mesh.extent = 10
mesh.counts = 10
mesh.max_level = 1
time.dt = 0.1
time.end = 1
output.snapshot_every = 0.5
output.probes = 11
"""


def test_activation_times():
    values = np.array([[-80.0, -20.0, -85.0], [20.0, 0.0, -85.0]])
    lat = activation_times(values, np.array([0.0, 1.0]))
    assert_allclose(lat[:2], [0.5, 0.0])
    assert np.isnan(lat[2])
    assert activation_times(values, np.array([0.0, 1.0]), threshold=10.0)[0] == pytest.approx(0.9)


def test_activation_times_validation():
    with pytest.raises(InsufficientDataError):
        activation_times(np.zeros((1, 3)), np.array([0.0]))
    with pytest.raises(InvalidArgumentError):
        activation_times(np.zeros((2, 3)), np.array([0.0, 1.0, 2.0]))


def test_compute_lat():
    trajectory = Trajectory(points=np.array([[0.0], [1.0]]))
    trajectory.append(Snapshot(0, 0.0, 0, probes=np.array([-85.0, -85.0])))
    with pytest.raises(InsufficientDataError):
        compute_lat(trajectory)
    trajectory.append(Snapshot(1, 2.0, 0, probes=np.array([15.0, -85.0])))
    lat = compute_lat(trajectory)
    assert lat.times[0] == pytest.approx(1.1)
    assert not lat.activated[1]
    assert lat.threshold == -30.0


def test_conduction_velocity():
    points = np.linspace(0.0, 10.0, 11)[:, None]
    lat = LATField(points=points, times=points[:, 0] / 0.5 + 3.0, threshold=-30.0)
    assert conduction_velocity(lat) == pytest.approx(0.5)

    silent = LATField(points=points, times=np.full(11, np.nan), threshold=-30.0)
    with pytest.raises(PropagationError) as info:
        conduction_velocity(silent)
    assert info.value.diagnostics["activated"] == 0

    backwards = LATField(points=points, times=10.0 - points[:, 0], threshold=-30.0)
    with pytest.raises(PropagationError):
        conduction_velocity(backwards)


def test_lat_is_monotone():
    points = np.array([[2.0], [0.0], [1.0], [3.0]])
    lat = LATField(points=points, times=np.array([2.0, 0.0, 1.0, np.nan]), threshold=-30.0)
    assert lat_is_monotone(lat)
    lat.times[1] = 1.05
    assert not lat_is_monotone(lat)
    assert lat_is_monotone(lat, tolerance=0.1)


def test_cable_activation_times_increase_along_the_cable():
    config = bench_config(
        CABLE_CONFIG,
        ["mesh.extent=10", "mesh.counts=10", "mesh.max_level=1", "time.end=15"],
        **{"output.snapshot_every": "0.25", "output.probes": "21"},
    )
    lat = compute_lat(MonodomainSimulation(config).run().trajectory)
    assert lat.activated.sum() >= 6
    assert lat_is_monotone(lat, tolerance=config.dt)


def test_refined_intervals():
    mesh = build_cartesian_root((8.0, 2.0), (8, 2), 1, max_level=2)
    assert refined_intervals(mesh) == []
    mesh.refine([2, 3, 10])
    mesh.refine([6])
    assert refined_intervals(mesh) == [(2.0, 4.0), (6.0, 7.0)]
    assert refined_intervals(mesh, axis=1) == [(0.0, 2.0)]


def test_lat_from_manifest(tmp_path):
    mesh = build_cartesian_root((2.0,), (2,), 1, max_level=2)
    basis = Basis(1, 1)
    write_vtk(mesh, basis, tmp_path / "s0.vtk", {"phi": np.full((2, 2), -85.0)})
    write_vtk(mesh, basis, tmp_path / "s1.vtk", {"phi": np.full((2, 2), 15.0)})
    mesh.refine([0])
    write_vtk(mesh, basis, tmp_path / "s2.vtk", {"phi": np.full((3, 2), 15.0)})
    manifest = write_manifest(
        tmp_path / "manifest.txt", [(0, 0.0, "s0.vtk"), (1, 1.0, "s1.vtk"), (2, 2.0, "s2.vtk")]
    )
    lat = lat_from_manifest(manifest)
    assert lat.points.shape == (4, 1)
    assert_allclose(lat.times, 0.55)

    write_manifest(manifest, [(0, 0.0, "s0.vtk")])
    with pytest.raises(InsufficientDataError):
        lat_from_manifest(manifest)


def test_tip_position():
    xs = ys = np.arange(4.0)
    gx, gy = np.meshgrid(xs, ys)
    phi = -30.0 + 10.0 * (gx - 1.5)
    gate = 0.5 + 0.1 * (gy - 1.5)
    assert_allclose(tip_position(phi, gate, xs, ys), [1.5, 1.5])
    assert tip_position(phi, np.ones_like(gate), xs, ys) is None


def test_tip_position_prefers_previous():
    xs = ys = np.arange(5.0)
    gx, gy = np.meshgrid(xs, ys)
    phi = -30.0 + 10.0 * np.abs(gx - 2.0) - 5.0
    gate = 0.5 + 0.1 * (gy - 1.5)
    assert_allclose(tip_position(phi, gate, xs, ys, previous=np.array([3.4, 1.5])), [2.5, 1.5])


def test_turning_angle():
    theta = np.linspace(0.0, 4.0 * np.pi, 81)
    circle = np.column_stack([np.cos(theta), np.sin(theta)])
    assert turning_angle(circle) == pytest.approx(4.0 * np.pi, rel=1e-9)
    assert rotation(circle) == pytest.approx(4.0 * np.pi, rel=1e-9)
    assert rotation(circle * np.array([-1.0, 1.0])) == pytest.approx(-4.0 * np.pi, rel=1e-9)
    assert turning_angle(circle[:2]) == 0.0


def test_axis_locked():
    theta = np.linspace(0.0, 2.0 * np.pi, 80, endpoint=False)
    circle = 10.0 * np.column_stack([np.cos(theta), np.sin(theta)])
    assert not axis_locked(circle, 0.5)
    line = np.column_stack([np.full(20, 5.0), np.linspace(0.0, 19.0, 20)])
    assert axis_locked(line, 0.5)
    assert not axis_locked(np.zeros((0, 2)), 0.5)


def test_isoline_points():
    xs = np.array([0.0, 1.0, 2.0])
    ys = np.array([0.0, 1.0])
    values = np.tile(xs, (2, 1))
    points = isoline_points(values, xs, ys, 0.5)
    assert_allclose(sorted(map(tuple, points)), [(0.5, 0.0), (0.5, 1.0)])
    assert isoline_points(values, xs, ys, 5.0).shape == (0, 2)


def test_hausdorff_distance():
    assert hausdorff_distance(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]])) == 5.0
    a = np.array([[0.0, 0.0], [1.0, 0.0]])
    assert hausdorff_distance(a, a[:1]) == pytest.approx(1.0)
    with pytest.raises(InsufficientDataError):
        hausdorff_distance(a, np.zeros((0, 2)))


def test_bench_config_layers_overrides():
    config = bench_config(CABLE_CONFIG, ["time.end=5"], **{"time.dt": "0.25"})
    assert config.t_end == 5.0
    assert config.dt == 0.25
    assert config.extent == (20.0,)
    with pytest.raises(ConfigError):
        bench_config(CABLE_CONFIG, ["mesh.bogus=1"])


def test_oracle_time_step():
    simulation = MonodomainSimulation(parse_config(SHORT_CABLE))
    bound = float(np.min(cfl_estimates(simulation.ops)))
    for dt in (0.1, 1.0, 3.0):
        step = oracle_time_step(simulation, dt)
        assert step <= bound or step == dt
        exponent = np.log2(dt / step)
        assert exponent == pytest.approx(round(exponent))
        assert step == dt or 2.0 * step > bound


def test_uniform_oracle():
    config = parse_config(SHORT_CABLE)
    oracle = uniform_oracle(config, 1)
    assert oracle.config.solver == SolverKind.UNIFORM
    assert len(oracle.mesh.active_elements) == 20
    assert oracle.config.uniform_dt <= oracle.config.dt
    assert oracle.config.hash != config.hash
    assert len(uniform_oracle(config).mesh.active_elements) == 10


def test_compare_runs():
    config = parse_config(SHORT_CABLE)
    adaptive = MonodomainSimulation(config).run()
    oracle = uniform_oracle(config, 1).run()
    report = compare_runs(adaptive, oracle)
    assert report["common_snapshots"] == 3
    assert report["phi_linf"] >= report["phi_rms"] >= 0.0
    assert "lat_activation_mismatch" in report
    same = compare_runs(adaptive, adaptive)
    assert same["phi_linf"] == 0.0


def test_compare_runs_needs_common_times():
    config = parse_config(SHORT_CABLE)
    a = MonodomainSimulation(config).run()
    b = MonodomainSimulation(parse_config(SHORT_CABLE, ["output.snapshot_every=0.3"])).run()
    b.trajectory.snapshots = b.trajectory.snapshots[1:-1]
    with pytest.raises(InsufficientDataError):
        compare_runs(a, b)


def test_spiral_observer_finds_initial_tip():
    config = parse_config(
        "mesh.dim = 2\nmesh.extent = 8, 8\nmesh.counts = 4, 4\namr.enabled = false\n"
        "stimulus.enabled = false\ninit.kind = spiral\ntime.end = 0.5\n"
        "output.snapshot_every = 0.25\n"
    )
    simulation = MonodomainSimulation(config)
    observer = SpiralObserver(simulation, 1.0)
    assert observer.points.shape == (81, 2)
    simulation.run(on_snapshot=observer)
    assert len(observer.tip_times) >= 1
    assert observer.tip_times[0] == 0.0
    assert_allclose(observer.tips[0], [3.5, 1.5])
    assert len(observer.isoline()) > 0


def test_spiral_bench_requires_2d():
    with pytest.raises(InvalidArgumentError):
        bench_spiral(["mesh.dim=1", "mesh.extent=40", "mesh.counts=20", "init.kind=rest"])


@pytest.mark.slow
@pytest.mark.parametrize("strip", [False, True])
def test_cable_benchmark(strip):
    report = bench_cable(strip=strip)
    assert report["cv_self_convergence"] < 0.02
    assert report["cv_error"] < 0.03
    assert report["lat_monotone"]
    if strip:
        assert report["update_ratio"] <= 0.5
        assert report["wall_time_oracle"] >= 2.0 * report["wall_time"]


@pytest.mark.slow
def test_strip_refines_one_band_around_the_front():
    config = bench_config(STRIP_CONFIG, ["time.end=10"], **{"output.probes": "81"})
    simulation = MonodomainSimulation(config)
    probes = simulation.run().trajectory.snapshots[-1].probes
    front = float(simulation.probe_points[probes > -30.0, 0].max())
    bands = refined_intervals(simulation.mesh)
    assert len(bands) == 1
    start, stop = bands[0]
    assert start - 1.0 <= front <= stop + 1.0
    assert stop < config.extent[0]


@pytest.mark.slow
def test_spiral_benchmark():
    report = bench_spiral(check_mirror=True)
    assert report["turning_angle"] > 2.0 * np.pi
    assert not report["axis_locked"]
    assert not report["pinned"]
    assert report["hausdorff_oracle"] <= report["tolerance"]
    assert np.sign(report["mirror_rotation"]) == -np.sign(report["rotation"])
    assert not report["mirror_axis_locked"]
    assert report["hausdorff_mirror"] <= report["tolerance"]
