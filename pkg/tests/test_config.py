import numpy as np
from numpy.testing import assert_allclose
import pytest

from cardiolts.config import load_config, parse_config, parse_lines, parse_override
from cardiolts.const import InitialCondition, ModelName, SolverKind, StimulusShape
from cardiolts.errors import ConfigError, ConfigErrorCode

SHEET = """
# 2D sheet
mesh.dim = 2
mesh.extent = 40, 40
mesh.counts = 8 8
diffusion.tensor = 0.2, 0.1   # anisotropic
basis.order = 2
stimulus.shape = ball
stimulus.size = 3
"""


def test_defaults():
    config = parse_config("")
    assert config.dim == 1
    assert config.extent == (20.0,)
    assert config.counts == (20,)
    assert config.order == 1
    assert config.gamma == 4.0
    assert config.dt == 0.15
    assert config.adaptivity.tau_refine == 0.75
    assert config.adaptivity.tau_coarsen == pytest.approx(0.25)
    assert config.adaptivity.tau_cell == 0.05
    assert config.adaptivity.cell_halo == 2
    assert config.adaptivity.amr
    assert config.solver == SolverKind.SLTS
    assert config.model_name == ModelName.MITCHELL_SCHAEFFER
    assert config.stimulus.shape == StimulusShape.BOX
    assert config.stimulus.center == (0.0,)
    assert config.stimulus.half_size == (1.5,)
    assert config.init_kind == InitialCondition.REST
    assert config.patch is None
    assert_allclose(config.diffusion, [[0.1334]])


def test_sheet_file():
    config = parse_config(SHEET)
    assert config.dim == 2
    assert config.counts == (8, 8)
    assert config.gamma == 8.0
    assert_allclose(config.diffusion, np.diag([0.2, 0.1]))
    assert config.stimulus.shape == StimulusShape.BALL
    assert config.stimulus.center == (0.0, 0.0)
    assert config.stimulus.half_size == (3.0,)
    assert config.long_axis == 0


def test_full_tensor_and_explicit_penalty():
    config = parse_config(
        "mesh.dim = 2\nmesh.extent = 4 2\nmesh.counts = 4 2\n"
        "diffusion.tensor = 1 0.2 0.2 0.5\nsipg.gamma = 20\n"
    )
    assert_allclose(config.diffusion, [[1.0, 0.2], [0.2, 0.5]])
    assert config.gamma == 20.0
    assert config.long_axis == 0


def test_overrides_win():
    config = parse_config("time.end = 20\n", ["time.end=5", "solver.kind = uniform"])
    assert config.t_end == 5.0
    assert config.solver == SolverKind.UNIFORM


def test_model_parameters():
    config = parse_config("model.tau_in = 0.25\nstimulus.enabled = no\n")
    assert config.model_parameters == {"tau_in": 0.25}
    assert config.stimulus is None


def test_patch():
    config = parse_config(
        "mesh.patch_lower = 4\nmesh.patch_upper = 6\nmesh.patch_level = 2\n"
    )
    assert config.patch == ((4.0,), (6.0,), 2)


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError) as info:
        parse_config("mesh.dim = 1\namr.tua_refine = 0.5\n")
    assert info.value.code == ConfigErrorCode.UNKNOWN_KEY
    assert info.value.key == "amr.tua_refine"
    assert info.value.line == 2
    assert str(info.value) == "Config error (unknown_key) line 2: 'amr.tua_refine': unknown key"


@pytest.mark.parametrize(
    "text, code, key",
    [
        ("basis.order = 5", ConfigErrorCode.INVALID_VALUE, "basis.order"),
        ("time.dt = -1", ConfigErrorCode.INVALID_VALUE, "time.dt"),
        ("mesh.extent = ten", ConfigErrorCode.INVALID_VALUE, "mesh.extent"),
        ("mesh.dim = 2", ConfigErrorCode.INVALID_VALUE, "mesh.extent"),
        ("model.a = 0.1", ConfigErrorCode.UNKNOWN_KEY, "model.a"),
        ("model.name = luo_rudy", ConfigErrorCode.INVALID_VALUE, "model.name"),
        ("diffusion.tensor = 1 2 3", ConfigErrorCode.INVALID_VALUE, "diffusion.tensor"),
        ("amr.tau_coarsen = 0.9", ConfigErrorCode.INVALID_VALUE, "amr.tau_coarsen"),
        ("amr.cell_halo = -1", ConfigErrorCode.INVALID_VALUE, "amr.cell_halo"),
        ("stimulus.start = 3\nstimulus.end = 1", ConfigErrorCode.INVALID_VALUE, "stimulus.end"),
        ("init.kind = spiral", ConfigErrorCode.INVALID_VALUE, "init.kind"),
        ("mesh.patch_level = 1", ConfigErrorCode.MISSING_KEY, "mesh.patch_lower"),
    ],
)
def test_invalid_configs(text, code, key):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.code == code
    assert info.value.key == key


def test_asymmetric_tensor_rejected():
    with pytest.raises(ConfigError) as info:
        parse_config(
            "mesh.dim = 2\nmesh.extent = 1 1\nmesh.counts = 1 1\n"
            "diffusion.tensor = 1 0.5 0 1\n"
        )
    assert info.value.key == "diffusion.tensor"


def test_parse_lines():
    entries = parse_lines("a = 1\n\n  # note\nb= x y # trailing\n")
    assert entries == {"a": ("1", 1), "b": ("x y", 4)}
    with pytest.raises(ConfigError) as info:
        parse_lines("a = 1\nbroken\n")
    assert info.value.code == ConfigErrorCode.PARSE_ERROR
    assert info.value.line == 2
    with pytest.raises(ConfigError) as info:
        parse_lines("a = 1\na = 2\n")
    assert "duplicate" in info.value.message


def test_parse_override():
    assert parse_override(" time.end = 3 ") == ("time.end", "3")
    with pytest.raises(ConfigError):
        parse_override("time.end")


def test_hash_ignores_order_and_output_directory():
    a = parse_config("time.end = 5\nmesh.counts = 10\noutput.directory = one\n")
    b = parse_config("mesh.counts = 10\ntime.end = 5.0\noutput.directory = two\n")
    c = parse_config("mesh.counts = 10\ntime.end = 6\n")
    assert a.hash == b.hash
    assert a.hash != c.hash


def test_load_config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("time.end = 7\n", encoding="utf-8")
    assert load_config(path).t_end == 7.0
    with pytest.raises(ConfigError) as info:
        load_config(tmp_path / "missing.cfg")
    assert info.value.code == ConfigErrorCode.PARSE_ERROR
