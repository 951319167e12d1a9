import json

import pytest

from cardiolts.cli import EXIT_CONFIG, EXIT_FAILURE, EXIT_OK, main
from cardiolts.const import MANIFEST_FILE, STATS_CSV, SUMMARY_FILE

RUN = """\
mesh.extent = 6
mesh.counts = 6
mesh.max_level = 1
time.dt = 0.1
time.end = 0.5
output.snapshot_every = 0.25
output.probes = 7
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(RUN + f"output.directory = {tmp_path / 'out'}\n", encoding="utf-8")
    return path


def test_run(config_file, tmp_path, capsys):
    assert main(["run", str(config_file)]) == EXIT_OK
    out = tmp_path / "out"
    assert len((out / MANIFEST_FILE).read_text(encoding="utf-8").splitlines()) == 3
    assert "3 snapshot(s)" in capsys.readouterr().out
    summary = json.loads((out / SUMMARY_FILE).read_text(encoding="utf-8"))
    assert "wall_time" in summary


def test_run_without_timing(config_file, tmp_path):
    target = tmp_path / "quiet"
    code = main(
        ["run", str(config_file), "--no-timing", "--set", f"output.directory={target}"]
    )
    assert code == EXIT_OK
    assert "wall_time" not in (target / STATS_CSV).read_text(encoding="utf-8")
    assert "wall_time" not in (target / SUMMARY_FILE).read_text(encoding="utf-8")


def test_unknown_key_is_a_config_error(config_file, capsys):
    code = main(["run", str(config_file), "--set", "amr.tua_refine=0.5"])
    assert code == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "unknown_key" in err
    assert "amr.tua_refine" in err


def test_unknown_key_in_file_reports_line(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("time.end = 1\namr.tua_refine = 0.5\n", encoding="utf-8")
    assert main(["run", str(path)]) == EXIT_CONFIG
    assert "line 2" in capsys.readouterr().err


def test_unwritable_output_directory(config_file, tmp_path, capsys):
    blocker = tmp_path / "occupied"
    blocker.write_text("", encoding="utf-8")
    code = main(["run", str(config_file), "--set", f"output.directory={blocker}"])
    assert code == EXIT_FAILURE
    assert "error: Cannot write" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["run", str(tmp_path / "nope.cfg")]) == EXIT_CONFIG


def test_lat_from_run(config_file, tmp_path, capsys):
    assert main(["run", str(config_file)]) == EXIT_OK
    manifest = tmp_path / "out" / MANIFEST_FILE
    assert main(["lat", str(manifest)]) == EXIT_OK
    lines = (tmp_path / "out" / "lat.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "x,lat"
    assert len(lines) == 1 + 6 * 2
    assert "point(s) activated" in capsys.readouterr().out


def test_lat_needs_two_snapshots(tmp_path, capsys):
    manifest = tmp_path / MANIFEST_FILE
    manifest.write_text("0 0 snapshot_0000.vtk\n", encoding="utf-8")
    assert main(["lat", str(manifest)]) == EXIT_FAILURE
    assert "error:" in capsys.readouterr().err


def test_compare(config_file, tmp_path, capsys):
    output = tmp_path / "cmp"
    code = main(
        [
            "compare",
            str(config_file),
            str(config_file),
            "--output",
            str(output),
            "--set",
            "output.vtk=false",
        ]
    )
    assert code == EXIT_OK
    report = json.loads((output / "compare.jsonl").read_text(encoding="utf-8"))
    assert report["common_snapshots"] == 3
    assert report["phi_linf"] == 0.0
    assert report["config_hash_a"] == report["config_hash_b"]
    assert json.loads(capsys.readouterr().out) == report


def test_spiral_bench_rejects_1d(tmp_path):
    code = main(
        [
            "bench",
            "spiral",
            "--output",
            str(tmp_path),
            "--set",
            "mesh.dim=1",
            "--set",
            "mesh.extent=40",
            "--set",
            "mesh.counts=20",
            "--set",
            "init.kind=rest",
        ]
    )
    assert code == EXIT_FAILURE


def test_bench_with_bad_override(tmp_path):
    code = main(["bench", "cable", "--output", str(tmp_path), "--set", "mesh.bogus=1"])
    assert code == EXIT_CONFIG


def test_usage_errors_exit():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
