"""Spatial (flux jump) and temporal (reaction drift) error indicators."""
from __future__ import annotations

import logging

import numpy as np

from .data import FieldState, IndicatorReport
from .decorators import generation_checked
from .errors import InvalidArgumentError
from .ionics import CellModel, StimulusProtocol, ionic_rhs, stimulus_eval
from .mesh import ForestMesh
from .sipg import Basis, ElementOps, face_traces, nodal_coordinates

_LOGGER = logging.getLogger(__name__)


@generation_checked("ops", "field")
def kelly_indicator(mesh: ForestMesh, ops: ElementOps, field: FieldState) -> np.ndarray:
    """Penalized flux jump per element, eta_e = sqrt(sum_F h_F/2p |W_F [D grad phi . n]|^2_F)"""
    row_of = {e: row for row, e in enumerate(field.element_ids)}
    squared = np.zeros(len(field.element_ids))
    order = ops.basis.order
    for face, blocks in zip(ops.faces, ops.face_blocks):
        traces = blocks.traces or face_traces(mesh, face, ops.basis, ops.D)
        owner, neighbor = row_of[face.owner], row_of[face.neighbor]
        jump = face.W_F * (
            traces.owner_flux @ field.phi[owner] - traces.neighbor_flux @ field.phi[neighbor]
        )
        contribution = face.h_F / (2.0 * order) * float(traces.weights @ jump**2)
        squared[owner] += contribution
        squared[neighbor] += contribution
    return np.sqrt(squared)


def _drift_terms(
    model: CellModel,
    phi: np.ndarray,
    s: np.ndarray,
    t: float,
    stim: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Reaction rate and state rates, states on axis 0"""
    terms = ionic_rhs(model, phi, s, t, stim)
    mask = model.gate_mask
    rates = np.empty_like(s)
    if mask.any():
        rates[mask] = (terms.gate_inf - s[mask]) / terms.gate_tau
    if (~mask).any():
        rates[~mask] = terms.nongate_rate
    return terms.rate, rates


def rvt_indicator(
    model: CellModel,
    mesh: ForestMesh,
    basis: Basis,
    u_start: FieldState,
    u_end: FieldState,
    t_a: float,
    t_b: float,
    stimulus: StimulusProtocol | None = None,
) -> np.ndarray:
    """Temporal indicator from reaction drift over [t_a, t_b], midpoint rule in time.

    eta_X = sqrt(int_e |X(u_mid, t_mid) - X(u_a, t_a)|^2 dx / (t_b - t_a)) for the
    current term and the state rates, combined as sqrt(eta_I^2 + eta_g^2).
    """
    if not t_b > t_a:
        raise InvalidArgumentError(f"Indicator interval must be increasing: [{t_a}, {t_b}]")
    if u_start.element_ids != u_end.element_ids:
        raise InvalidArgumentError("Indicator states are laid out on different meshes")
    t_mid = 0.5 * (t_a + t_b)
    coords = nodal_coordinates(mesh, basis)
    states_start = np.moveaxis(u_start.s, 1, 0)
    states_mid = 0.5 * (states_start + np.moveaxis(u_end.s, 1, 0))
    phi_mid = 0.5 * (u_start.phi + u_end.phi)

    rate_a, state_rate_a = _drift_terms(
        model, u_start.phi, states_start, t_a, stimulus_eval(stimulus, coords, t_a)
    )
    rate_m, state_rate_m = _drift_terms(
        model, phi_mid, states_mid, t_mid, stimulus_eval(stimulus, coords, t_mid)
    )
    jacobians = np.array([mesh.measure(e) / 2**mesh.dim for e in u_start.element_ids])
    weights = basis.weights[None, :] * jacobians[:, None]

    eta_current = np.sum(weights * (rate_m - rate_a) ** 2, axis=1)
    eta_states = np.sum(weights * np.sum((state_rate_m - state_rate_a) ** 2, axis=0), axis=1)
    return np.sqrt((eta_current + eta_states) / (t_b - t_a))


def mark_elements(
    eta_s: np.ndarray,
    tau_refine: float,
    tau_coarsen: float,
    mesh: ForestMesh,
    element_ids: tuple[int, ...] | None = None,
) -> tuple[set[int], set[int]]:
    """Refine where eta >= tau_refine, coarsen complete families with eta <= tau_coarsen"""
    if not tau_coarsen < tau_refine:
        raise InvalidArgumentError(
            f"tau_coarsen ({tau_coarsen}) must be below tau_refine ({tau_refine})"
        )
    element_ids = mesh.active_elements if element_ids is None else element_ids
    eta_s = np.asarray(eta_s)
    refine_set = {e for e, eta in zip(element_ids, eta_s) if eta >= tau_refine}
    coarsen_candidates = {e for e, eta in zip(element_ids, eta_s) if eta <= tau_coarsen}
    coarsen_set = mesh.complete_families(coarsen_candidates)
    _LOGGER.debug(
        "Marked %d for refinement, %d for coarsening", len(refine_set), len(coarsen_set)
    )
    return refine_set, coarsen_set


def indicator_report(
    eta_s: np.ndarray,
    eta_t: np.ndarray,
    tau_refine: float,
    tau_coarsen: float,
    tau_cell: float,
    mesh: ForestMesh,
) -> IndicatorReport:
    refine_set, coarsen_set = mark_elements(eta_s, tau_refine, tau_coarsen, mesh)
    return IndicatorReport(
        element_ids=mesh.active_elements,
        eta_s=np.asarray(eta_s),
        eta_t=np.asarray(eta_t),
        refine_set=refine_set,
        coarsen_set=coarsen_set,
        tau_refine=tau_refine,
        tau_coarsen=tau_coarsen,
        tau_cell=tau_cell,
    )
