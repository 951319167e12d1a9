import json

import numpy as np
from numpy.testing import assert_allclose
import pytest

from cardiolts.config import parse_config
from cardiolts.const import MANIFEST_FILE, STATS_CSV, SUMMARY_FILE, SolverKind
from cardiolts.core import MonodomainSimulation
from cardiolts.output import RunWriter, read_manifest

CABLE = """
mesh.extent = 10
mesh.counts = 10
mesh.max_level = 1
time.dt = 0.1
time.end = 2
output.snapshot_every = 0.5
output.probes = 21
"""

SPIRAL = """
mesh.dim = 2
mesh.extent = 8, 8
mesh.counts = 4, 4
stimulus.enabled = false
init.kind = spiral
"""


def _simulation(text, *overrides):
    return MonodomainSimulation(parse_config(text, overrides))


def test_setup():
    simulation = _simulation(CABLE)
    assert simulation.mesh.active_elements == tuple(range(10))
    assert simulation.basis.order == 1
    assert simulation.state.generation == simulation.mesh.generation
    assert_allclose(simulation.state.phi, simulation.model.phi_rest)
    assert simulation.probe_points.shape == (21, 1)
    assert_allclose(simulation.probe_points[:, 0], np.linspace(0.0, 10.0, 21))


def test_patch_is_refined_at_setup():
    simulation = _simulation(
        CABLE, "mesh.patch_lower=4", "mesh.patch_upper=6", "mesh.patch_level=1"
    )
    assert len(simulation.mesh.active_elements) > 10
    assert simulation.mesh.max_level_present == 1
    assert simulation.ops.generation == simulation.mesh.generation


def test_barrier_times_land_on_end_time():
    simulation = _simulation(CABLE, "time.dt=0.15", "time.end=1")
    times = simulation.barrier_times()
    assert len(times) == 7
    assert_allclose(times[:-1], 0.15 * np.arange(1, 7))
    assert times[-1] == 1.0


def test_slts_run():
    simulation = _simulation(CABLE)
    seen = []

    def observe(snapshot):
        seen.append(snapshot.state.generation == simulation.mesh.generation)

    result = simulation.run(keep_states=True, on_snapshot=observe)
    assert_allclose(result.trajectory.times, [0.0, 0.5, 1.0, 1.5, 2.0])
    assert seen == [True] * 5
    assert len(result.stats) == 20
    assert [s.step for s in result.stats] == list(range(1, 21))
    assert result.stats[-1].time == pytest.approx(2.0)
    assert result.updates == sum(s.updates for s in result.stats)
    assert result.updates >= 20 * 10
    assert result.final_state.is_synchronized
    assert result.final_state.time == pytest.approx(2.0)
    assert result.trajectory.probe_matrix().shape == (5, 21)
    # stimulated end depolarizes
    assert result.trajectory.snapshots[-1].probes[0] > simulation.model.phi_rest + 10.0


def test_snapshot_states_are_dropped_by_default():
    result = _simulation(CABLE, "time.end=0.5").run()
    assert all(snap.state is None for snap in result.trajectory.snapshots)
    assert result.final_state is None
    assert result.trajectory.probe_matrix().shape == (2, 21)


def test_zero_end_time():
    result = _simulation(CABLE, "time.end=0").run()
    assert len(result.trajectory.snapshots) == 1
    assert not result.stats
    summary = result.summary(SolverKind.SLTS)
    assert summary["final_time"] == 0.0
    assert summary["barrier_steps"] == 0


def test_uniform_run():
    simulation = _simulation(CABLE, "solver.kind=uniform")
    result = simulation.run()
    assert result.updates == 200 * 10
    assert not result.stats
    assert_allclose(result.trajectory.times, [0.0, 0.5, 1.0, 1.5, 2.0])
    assert result.final_state is not None
    assert simulation.state.time == pytest.approx(2.0)
    assert result.summary(SolverKind.UNIFORM)["solver"] == "uniform"


def test_run_writes_artifacts(tmp_path):
    simulation = _simulation(CABLE)
    with RunWriter(tmp_path, simulation.basis, timing=False) as writer:
        result = simulation.run(writer)
    entries = read_manifest(tmp_path / MANIFEST_FILE)
    assert [index for index, _, _ in entries] == [0, 1, 2, 3, 4]
    assert all(path.exists() for _, _, path in entries)
    rows = (tmp_path / STATS_CSV).read_text(encoding="utf-8").splitlines()
    assert len(rows) == 21
    summary = json.loads((tmp_path / SUMMARY_FILE).read_text(encoding="utf-8"))
    assert summary["config_hash"] == simulation.config.hash == result.config_hash
    assert summary["snapshots"] == 5
    assert "wall_time" not in summary


def test_spiral_initial_state_and_mirror():
    plain = _simulation(SPIRAL)
    mirrored = _simulation(SPIRAL, "init.mirror=true")
    assert_allclose(plain.state.phi + mirrored.state.phi, -75.0)
    assert_allclose(plain.state.s, mirrored.state.s)
    assert plain.state.phi.max() <= 10.0 and plain.state.phi.min() >= -85.0
    assert plain.state.s.max() <= 0.6 and plain.state.s.min() >= 0.1


def test_initial_adaptation_at_rest_is_a_no_op():
    simulation = _simulation(CABLE)
    assert simulation.adapt_initial() == 0
    assert simulation.mesh.generation == 0


def test_probe_follows_mesh_changes():
    simulation = _simulation(CABLE)
    before = simulation.probe(simulation.state)
    simulation.mesh.refine([3])
    simulation.state = simulation.initial_state()
    after = simulation.probe(simulation.state)
    assert_allclose(before, after)
