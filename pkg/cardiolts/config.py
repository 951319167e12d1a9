"""Run configuration: flat ``section.key = value`` files validated with voluptuous."""
from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
import logging
from pathlib import Path
from typing import Any

import numpy as np
import voluptuous as vol

from .const import (
    DEFAULT_BARRIER_DT,
    DEFAULT_CELL_HALO,
    DEFAULT_GAMMA,
    DEFAULT_MAX_LEVEL,
    DEFAULT_ORDER,
    DEFAULT_SUBSTEP_DT,
    DEFAULT_TAU_CELL,
    DEFAULT_TAU_REFINE,
    DEFAULT_UNIFORM_DT,
    MAX_ORDER,
    InitialCondition,
    ModelName,
    SolverKind,
    StimulusShape,
)
from .errors import CardioError, ConfigError, ConfigErrorCode
from .ionics import AVAILABLE_MODELS, StimulusProtocol
from .slts import AdaptivitySettings
from .util import config_hash

_LOGGER = logging.getLogger(__name__)


def _numbers(kind: type):
    """Validator for comma or whitespace separated number lists"""

    def _validate(value: Any) -> tuple:
        if isinstance(value, (int, float)):
            return (kind(value),)
        if isinstance(value, (list, tuple)):
            items = value
        else:
            items = str(value).replace(",", " ").split()
        if not items:
            raise vol.Invalid("expected at least one number")
        try:
            return tuple(kind(item) for item in items)
        except ValueError as err:
            raise vol.Invalid(f"expected {kind.__name__} values") from err

    return _validate


def _positive(values: tuple) -> tuple:
    if any(not v > 0 for v in values):
        raise vol.Invalid("values must be positive")
    return values


_POSITIVE_FLOAT = vol.All(vol.Coerce(float), vol.Range(min=0.0, min_included=False))
_NON_NEGATIVE_FLOAT = vol.All(vol.Coerce(float), vol.Range(min=0.0))

_MODEL_PARAMETERS = sorted(
    {name for model in AVAILABLE_MODELS.values() for name in model.defaults}
)

CONFIG_SCHEMA = vol.Schema(
    {
        vol.Optional("mesh.dim", default=1): vol.All(vol.Coerce(int), vol.In([1, 2])),
        vol.Optional("mesh.extent", default="20"): vol.All(_numbers(float), _positive),
        vol.Optional("mesh.counts", default="20"): vol.All(_numbers(int), _positive),
        vol.Optional("mesh.max_level", default=DEFAULT_MAX_LEVEL): vol.All(
            vol.Coerce(int), vol.Range(min=0)
        ),
        vol.Optional("mesh.patch_lower"): _numbers(float),
        vol.Optional("mesh.patch_upper"): _numbers(float),
        vol.Optional("mesh.patch_level", default=0): vol.All(vol.Coerce(int), vol.Range(min=0)),
        vol.Optional("basis.order", default=DEFAULT_ORDER): vol.All(
            vol.Coerce(int), vol.Range(min=1, max=MAX_ORDER)
        ),
        vol.Optional("diffusion.tensor", default="0.1334"): _numbers(float),
        vol.Optional("sipg.gamma"): _POSITIVE_FLOAT,
        vol.Optional("time.dt", default=DEFAULT_BARRIER_DT): _POSITIVE_FLOAT,
        vol.Optional("time.dt_bar", default=DEFAULT_SUBSTEP_DT): _POSITIVE_FLOAT,
        vol.Optional("time.uniform_dt", default=DEFAULT_UNIFORM_DT): _POSITIVE_FLOAT,
        vol.Optional("time.end", default=50.0): _NON_NEGATIVE_FLOAT,
        vol.Optional("amr.enabled", default=True): vol.Boolean(),
        vol.Optional("amr.tau_refine", default=DEFAULT_TAU_REFINE): _POSITIVE_FLOAT,
        vol.Optional("amr.tau_coarsen"): _NON_NEGATIVE_FLOAT,
        vol.Optional("amr.tau_cell", default=DEFAULT_TAU_CELL): _NON_NEGATIVE_FLOAT,
        vol.Optional("amr.cell_halo", default=DEFAULT_CELL_HALO): vol.All(
            vol.Coerce(int), vol.Range(min=0)
        ),
        vol.Optional("model.name", default=ModelName.MITCHELL_SCHAEFFER.value): vol.All(
            str, vol.In([m.value for m in ModelName])
        ),
        **{vol.Optional(f"model.{name}"): vol.Coerce(float) for name in _MODEL_PARAMETERS},
        vol.Optional("stimulus.enabled", default=True): vol.Boolean(),
        vol.Optional("stimulus.shape", default=StimulusShape.BOX.value): vol.All(
            str, vol.In([s.value for s in StimulusShape])
        ),
        vol.Optional("stimulus.center", default="0"): _numbers(float),
        vol.Optional("stimulus.size", default="1.5"): vol.All(_numbers(float), _positive),
        vol.Optional("stimulus.amplitude", default=100.0): vol.Coerce(float),
        vol.Optional("stimulus.start", default=0.0): _NON_NEGATIVE_FLOAT,
        vol.Optional("stimulus.end", default=2.0): _NON_NEGATIVE_FLOAT,
        vol.Optional("stimulus.decay", default=0.0): vol.All(
            vol.Coerce(float), vol.Range(min=0.0, max=1.0)
        ),
        vol.Optional("init.kind", default=InitialCondition.REST.value): vol.All(
            str, vol.In([i.value for i in InitialCondition])
        ),
        vol.Optional("init.mirror", default=False): vol.Boolean(),
        vol.Optional("solver.kind", default=SolverKind.SLTS.value): vol.All(
            str, vol.In([s.value for s in SolverKind])
        ),
        vol.Optional("output.directory", default="output"): str,
        vol.Optional("output.snapshot_every", default=1.0): _POSITIVE_FLOAT,
        vol.Optional("output.vtk", default=True): vol.Boolean(),
        vol.Optional("output.probes", default=201): vol.All(vol.Coerce(int), vol.Range(min=2)),
        vol.Optional("run.seed", default=0): vol.Coerce(int),
    },
    extra=vol.PREVENT_EXTRA,
)


@dataclass
class RunConfig:
    """Validated run parameters"""

    dim: int
    extent: tuple[float, ...]
    counts: tuple[int, ...]
    max_level: int
    order: int
    diffusion: np.ndarray
    gamma: float
    dt: float
    uniform_dt: float
    t_end: float
    adaptivity: AdaptivitySettings
    model_name: ModelName
    model_parameters: dict[str, float]
    stimulus: StimulusProtocol | None
    init_kind: InitialCondition
    init_mirror: bool
    solver: SolverKind
    output_dir: Path
    snapshot_every: float
    write_vtk: bool
    probes: int
    seed: int
    patch: tuple[tuple[float, ...], tuple[float, ...], int] | None = None
    values: dict[str, Any] = field(default_factory=dict)

    @property
    def hash(self) -> str:
        return config_hash(self.values)

    @property
    def long_axis(self) -> int:
        return int(np.argmax(self.extent))


def parse_lines(text: str) -> dict[str, tuple[str, int]]:
    """``key -> (raw value, line number)``; ``#`` starts a comment"""
    entries: dict[str, tuple[str, int]] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(
                ConfigErrorCode.PARSE_ERROR, key or line, "expected 'key = value'", number
            )
        if key in entries:
            raise ConfigError(
                ConfigErrorCode.PARSE_ERROR,
                key,
                f"duplicate key (first set on line {entries[key][1]})",
                number,
            )
        entries[key] = (value, number)
    return entries


def parse_override(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(ConfigErrorCode.PARSE_ERROR, text, "expected --set key=value")
    return key.strip(), value.strip()


def _schema_error(error: vol.Invalid, lines: Mapping[str, int | None]) -> ConfigError:
    key = str(error.path[0]) if error.path else "<config>"
    message = error.error_message or str(error)
    if "extra keys not allowed" in message:
        code = ConfigErrorCode.UNKNOWN_KEY
        message = "unknown key"
    elif "required key not provided" in message:
        code = ConfigErrorCode.MISSING_KEY
    else:
        code = ConfigErrorCode.INVALID_VALUE
    return ConfigError(code, key, message, lines.get(key))


def _fail(code: ConfigErrorCode, key: str, message: str, lines: Mapping[str, int | None]):
    raise ConfigError(code, key, message, lines.get(key))


def build_config(
    raw: Mapping[str, Any], lines: Mapping[str, int | None] | None = None
) -> RunConfig:
    """Validate a flat key/value mapping into a RunConfig"""
    lines = dict(lines or {})
    try:
        values = CONFIG_SCHEMA(dict(raw))
    except vol.MultipleInvalid as err:
        raise _schema_error(err.errors[0], lines) from err
    except vol.Invalid as err:
        raise _schema_error(err, lines) from err

    dim = values["mesh.dim"]
    for key in ("mesh.extent", "mesh.counts"):
        if len(values[key]) != dim:
            _fail(ConfigErrorCode.INVALID_VALUE, key, f"expected {dim} value(s)", lines)

    model_name = ModelName(values["model.name"])
    allowed = AVAILABLE_MODELS[model_name].defaults
    model_parameters = {}
    for key, value in values.items():
        if key.startswith("model.") and key != "model.name":
            name = key.split(".", 1)[1]
            if name not in allowed:
                _fail(ConfigErrorCode.UNKNOWN_KEY, key, f"not a {model_name} parameter", lines)
            model_parameters[name] = value

    tensor = np.asarray(values["diffusion.tensor"], dtype=float)
    if tensor.size == 1:
        diffusion = tensor[0] * np.eye(dim)
    elif tensor.size == dim:
        diffusion = np.diag(tensor)
    elif tensor.size == dim * dim:
        diffusion = tensor.reshape(dim, dim)
    else:
        _fail(
            ConfigErrorCode.INVALID_VALUE,
            "diffusion.tensor",
            f"expected 1, {dim} or {dim * dim} entries",
            lines,
        )
    if not np.allclose(diffusion, diffusion.T, rtol=0.0, atol=1e-14) or (
        np.linalg.eigvalsh(diffusion).min() < -1e-14
    ):
        _fail(
            ConfigErrorCode.INVALID_VALUE,
            "diffusion.tensor",
            "tensor must be symmetric positive semidefinite",
            lines,
        )

    order = values["basis.order"]
    gamma = values.get("sipg.gamma", DEFAULT_GAMMA[order])
    tau_refine = values["amr.tau_refine"]
    tau_coarsen = values.get("amr.tau_coarsen", tau_refine / 3.0)
    try:
        adaptivity = AdaptivitySettings(
            tau_refine=tau_refine,
            tau_coarsen=tau_coarsen,
            tau_cell=values["amr.tau_cell"],
            dt_bar=values["time.dt_bar"],
            amr=values["amr.enabled"],
            cell_halo=values["amr.cell_halo"],
        )
    except CardioError as err:
        _fail(ConfigErrorCode.INVALID_VALUE, "amr.tau_coarsen", str(err), lines)

    stimulus = None
    if values["stimulus.enabled"]:
        center = values["stimulus.center"]
        if len(center) == 1 and dim > 1:
            center = center * dim
        if len(center) != dim:
            _fail(ConfigErrorCode.INVALID_VALUE, "stimulus.center", f"expected {dim} values", lines)
        size = values["stimulus.size"]
        shape = StimulusShape(values["stimulus.shape"])
        if shape == StimulusShape.BOX and len(size) == 1:
            size = size * dim
        if len(size) != (1 if shape == StimulusShape.BALL else dim):
            _fail(ConfigErrorCode.INVALID_VALUE, "stimulus.size", "wrong number of values", lines)
        if values["stimulus.end"] < values["stimulus.start"]:
            _fail(ConfigErrorCode.INVALID_VALUE, "stimulus.end", "ends before it starts", lines)
        stimulus = StimulusProtocol(
            shape=shape,
            center=center,
            half_size=size,
            amplitude=values["stimulus.amplitude"],
            t_start=values["stimulus.start"],
            t_end=values["stimulus.end"],
            spatial_decay=values["stimulus.decay"],
        )

    patch = None
    if values["mesh.patch_level"] > 0:
        for key in ("mesh.patch_lower", "mesh.patch_upper"):
            if len(values.get(key, ())) != dim:
                _fail(ConfigErrorCode.MISSING_KEY, key, f"patch needs {dim} value(s)", lines)
        patch = (values["mesh.patch_lower"], values["mesh.patch_upper"], values["mesh.patch_level"])

    init_kind = InitialCondition(values["init.kind"])
    if init_kind == InitialCondition.SPIRAL and (
        dim != 2 or model_name != ModelName.MITCHELL_SCHAEFFER
    ):
        _fail(
            ConfigErrorCode.INVALID_VALUE,
            "init.kind",
            "spiral initial condition needs a 2D mitchell_schaeffer run",
            lines,
        )

    canonical = {
        key: ", ".join(str(v) for v in value) if isinstance(value, tuple) else value
        for key, value in values.items()
        if key != "output.directory"
    }
    return RunConfig(
        dim=dim,
        extent=values["mesh.extent"],
        counts=values["mesh.counts"],
        max_level=values["mesh.max_level"],
        order=order,
        diffusion=diffusion,
        gamma=gamma,
        dt=values["time.dt"],
        uniform_dt=values["time.uniform_dt"],
        t_end=values["time.end"],
        adaptivity=adaptivity,
        model_name=model_name,
        model_parameters=model_parameters,
        stimulus=stimulus,
        init_kind=init_kind,
        init_mirror=values["init.mirror"],
        solver=SolverKind(values["solver.kind"]),
        output_dir=Path(values["output.directory"]),
        snapshot_every=values["output.snapshot_every"],
        write_vtk=values["output.vtk"],
        probes=values["output.probes"],
        seed=values["run.seed"],
        patch=patch,
        values=canonical,
    )


def parse_config(text: str, overrides: Iterable[str] = ()) -> RunConfig:
    entries = parse_lines(text)
    raw = {key: value for key, (value, _) in entries.items()}
    lines: dict[str, int | None] = {key: line for key, (_, line) in entries.items()}
    for override in overrides:
        key, value = parse_override(override)
        raw[key] = value
        lines[key] = None
    return build_config(raw, lines)


def load_config(path: str | Path, overrides: Iterable[str] = ()) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(ConfigErrorCode.PARSE_ERROR, str(path), f"cannot read: {err}") from err
    _LOGGER.debug("Loading configuration from %s", path)
    return parse_config(text, overrides)
