"""Cell models, Rush-Larsen state update and stimulus protocols."""
from __future__ import annotations

from abc import ABC, abstractmethod
from collections.abc import Mapping
from dataclasses import dataclass
import logging
from typing import ClassVar

import numpy as np

from .const import PHI_REST_MV, ModelName, StimulusShape
from .errors import CellModelError, InvalidArgumentError, NumericalDomainError

_LOGGER = logging.getLogger(__name__)


@dataclass
class ReactionTerms:
    """Reaction rates at a set of nodes.

    ``rate`` is dphi/dt in mV/ms (stimulus included). Gates are reported as
    (h_inf, tau) pairs; remaining states as plain rates. State arrays carry
    the state index on axis 0.
    """

    rate: np.ndarray
    gate_inf: np.ndarray
    gate_tau: np.ndarray
    nongate_rate: np.ndarray


class CellModel(ABC):
    """Ionic model in physical units (mV, ms)"""

    name: ClassVar[ModelName]
    state_names: ClassVar[tuple[str, ...]]
    gates: ClassVar[tuple[bool, ...]]
    defaults: ClassVar[dict[str, float]]
    phi_rest: ClassVar[float] = PHI_REST_MV

    def __init__(self, **parameters: float) -> None:
        unknown = set(parameters) - set(self.defaults)
        if unknown:
            raise InvalidArgumentError(
                f"Unknown {self.name} parameter(s): {', '.join(sorted(unknown))}"
            )
        self.parameters = {**self.defaults, **{k: float(v) for k, v in parameters.items()}}

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.parameters})"

    def __getattr__(self, name: str) -> float:
        parameters = self.__dict__.get("parameters", {})
        if name in parameters:
            return parameters[name]
        raise AttributeError(name)

    @property
    def n_states(self) -> int:
        return len(self.state_names)

    @property
    def gate_mask(self) -> np.ndarray:
        return np.array(self.gates, dtype=bool)

    @property
    @abstractmethod
    def rest_state(self) -> np.ndarray:
        """State vector at rest"""

    @abstractmethod
    def phi_scale(self) -> tuple[float, float]:
        """(offset, scale) with phi = offset + scale * v"""

    def normalized(self, phi: np.ndarray) -> np.ndarray:
        offset, scale = self.phi_scale()
        return (phi - offset) / scale

    def physical(self, v: np.ndarray) -> np.ndarray:
        offset, scale = self.phi_scale()
        return offset + scale * v

    @abstractmethod
    def evaluate(
        self, phi: np.ndarray, s: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(-I_ion, h_inf, tau, nongate rates) without stimulus"""


class MitchellSchaeffer(CellModel):
    """Two-variable model with one gate h; phi = -85 + 100 v"""

    name = ModelName.MITCHELL_SCHAEFFER
    state_names = ("h",)
    gates = (True,)
    defaults = {
        "tau_in": 0.3,
        "tau_out": 6.0,
        "tau_open": 120.0,
        "tau_close": 150.0,
        "v_gate": 0.13,
    }

    @property
    def rest_state(self) -> np.ndarray:
        return np.array([1.0])

    def phi_scale(self) -> tuple[float, float]:
        return (self.phi_rest, 100.0)

    def evaluate(self, phi, s):
        _, scale = self.phi_scale()
        v = self.normalized(phi)
        h = s[0]
        j_in = h * v * v * (1.0 - v) / self.tau_in
        j_out = -v / self.tau_out
        closing = v >= self.v_gate
        h_inf = np.where(closing, 0.0, 1.0)
        tau = np.where(closing, self.tau_close, self.tau_open)
        empty = np.zeros((0,) + np.shape(phi))
        return scale * (j_in + j_out), h_inf[None], tau[None], empty


class FitzHughNagumo(CellModel):
    """Cubic excitable model with a linear recovery variable s (mV)"""

    name = ModelName.FITZHUGH_NAGUMO
    state_names = ("s",)
    gates = (False,)
    defaults = {
        "a": 0.13,
        "b": 0.013,
        "c_1": 0.26,
        "c_2": 0.1,
        "c_3": 1.0,
        "v_peak": 40.0,
    }

    @property
    def rest_state(self) -> np.ndarray:
        return np.array([0.0])

    def phi_scale(self) -> tuple[float, float]:
        return (self.phi_rest, self.v_peak - self.phi_rest)

    def evaluate(self, phi, s):
        v_amp = self.v_peak - self.phi_rest
        v_th = self.phi_rest + self.a * v_amp
        recovery = s[0]
        depolarization = phi - self.phi_rest
        current = (self.c_1 / v_amp**2) * depolarization * (phi - v_th) * (
            self.v_peak - phi
        ) - (self.c_2 / v_amp) * depolarization * recovery
        ds_dt = self.b * (depolarization - self.c_3 * recovery)
        empty = np.zeros((0,) + np.shape(phi))
        return current, empty, empty, ds_dt[None]


AVAILABLE_MODELS: dict[str, type[CellModel]] = {
    ModelName.MITCHELL_SCHAEFFER: MitchellSchaeffer,
    ModelName.FITZHUGH_NAGUMO: FitzHughNagumo,
}


def create_model(name: str, parameters: Mapping[str, float] | None = None) -> CellModel:
    try:
        model_class = AVAILABLE_MODELS[ModelName(name)]
    except ValueError as err:
        raise InvalidArgumentError(f"Unknown cell model: {name}") from err
    return model_class(**(parameters or {}))


def ionic_rhs(
    model: CellModel,
    phi: np.ndarray,
    s: np.ndarray,
    t: float,
    stim: np.ndarray | float = 0.0,
) -> ReactionTerms:
    """Reaction rates; a positive stimulus depolarizes"""
    phi = np.asarray(phi, dtype=float)
    s = np.asarray(s, dtype=float)
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(s))):
        raise NumericalDomainError(f"Non-finite cell state at t={t} ms")
    rate, gate_inf, gate_tau, nongate_rate = model.evaluate(phi, s)
    return ReactionTerms(rate + stim, gate_inf, gate_tau, nongate_rate)


def advance_states(
    model: CellModel, terms: ReactionTerms, s: np.ndarray, dt: float | np.ndarray
) -> np.ndarray:
    """Exponential update for gates, forward Euler for the other states.

    ``dt`` may be an array broadcasting against one state component.
    """
    if not np.all(np.asarray(dt) > 0):
        raise InvalidArgumentError(f"Time step must be positive: {dt}")
    if np.any(terms.gate_tau <= 0.0):
        raise CellModelError(f"{model.name}: non-positive gate time constant")
    mask = model.gate_mask
    updated = np.array(s, dtype=float, copy=True)
    if mask.any():
        h = updated[mask]
        updated[mask] = terms.gate_inf + (h - terms.gate_inf) * np.exp(-dt / terms.gate_tau)
    if (~mask).any():
        updated[~mask] = updated[~mask] + dt * terms.nongate_rate
    return updated


def rush_larsen_step(
    model: CellModel, phi: np.ndarray, s: np.ndarray, dt: float, t: float = 0.0
) -> np.ndarray:
    """Advance the cell state by dt at fixed phi"""
    return advance_states(model, ionic_rhs(model, phi, s, t), s, dt)


@dataclass
class StimulusProtocol:
    """Applied current (mV/ms) on a box or ball, decaying linearly in time.

    ``half_size`` is the box half-widths or the ball radius. ``spatial_decay``
    is the fraction of the amplitude lost between center and region boundary.
    """

    shape: StimulusShape
    center: tuple[float, ...]
    half_size: tuple[float, ...]
    amplitude: float
    t_start: float
    t_end: float
    spatial_decay: float = 0.0

    def __post_init__(self) -> None:
        self.shape = StimulusShape(self.shape)
        if self.t_end < self.t_start:
            raise InvalidArgumentError(
                f"Stimulus window end {self.t_end} before start {self.t_start}"
            )
        if any(h <= 0 for h in self.half_size):
            raise InvalidArgumentError(f"Stimulus size must be positive: {self.half_size}")
        if not 0.0 <= self.spatial_decay <= 1.0:
            raise InvalidArgumentError(
                f"Spatial decay must lie in [0, 1]: {self.spatial_decay}"
            )

    def spatial_factor(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        offset = x - np.asarray(self.center)
        if self.shape == StimulusShape.BALL:
            distance = np.linalg.norm(offset, axis=-1) / self.half_size[0]
        else:
            distance = np.max(np.abs(offset) / np.asarray(self.half_size), axis=-1)
        inside = distance <= 1.0
        return np.where(inside, 1.0 - self.spatial_decay * np.minimum(distance, 1.0), 0.0)

    def temporal_factor(self, t: float) -> float:
        if t < self.t_start or t > self.t_end:
            return 0.0
        if self.t_end == self.t_start:
            return 1.0
        return 1.0 - (t - self.t_start) / (self.t_end - self.t_start)

    def active(self, t: float) -> bool:
        return self.t_start <= t < self.t_end


def stimulus_eval(
    protocol: StimulusProtocol | None, x: np.ndarray, t: float
) -> np.ndarray:
    """Stimulus current at positions ``x`` (..., dim) and time t"""
    x = np.asarray(x, dtype=float)
    if protocol is None:
        return np.zeros(x.shape[:-1])
    temporal = protocol.temporal_factor(t)
    if temporal == 0.0:
        return np.zeros(x.shape[:-1])
    return protocol.amplitude * temporal * protocol.spatial_factor(x)
