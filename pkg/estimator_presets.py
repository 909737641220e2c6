#!/usr/bin/env python3
"""
Estimator Preset Configuration

Defines the estimation methods the toolkit can run:
- itg: iterative tomogravity from a uniform start (works with missing links)
- itg-gravity: a single ITG iteration seeded with the simple gravity solution
- stg: simple tomogravity (needs every edge link observed)
- ertg: entropy-regularized tomogravity, phi = 1e-3 (needs every edge link observed)
- sg: simple gravity (needs every edge link observed)
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, Optional

import numpy as np

from errors import InvalidInputError
from estimators import (
    DEFAULT_PHI,
    INIT_GRAVITY,
    INIT_UNIFORM,
    BaselineEstimate,
    ItgOptions,
    entropy_regularized_tomogravity,
    itg_estimate,
    simple_gravity_estimate,
    simple_tomogravity,
)
from gravity import node_totals, simple_gravity
from network_model import LinkLoads, RoutingMatrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EstimatorPreset:
    """Structured estimator configuration"""
    name: str
    description: str
    family: str  # "itg", "stg", "ertg" or "sg"

    # Whether every edge link load must be observed (simple gravity prior)
    needs_node_totals: bool

    # ITG
    init: str = INIT_UNIFORM
    max_outer_iters: int = 500

    # ERTG
    phi: float = DEFAULT_PHI

    # STG
    clamp_negative: bool = False


ESTIMATOR_PRESETS: Dict[str, EstimatorPreset] = {
    "itg": EstimatorPreset(
        name="itg",
        description="Iterative tomogravity, uniform start",
        family="itg",
        needs_node_totals=False,
    ),
    "itg-gravity": EstimatorPreset(
        name="itg-gravity",
        description="One ITG iteration from the simple gravity solution",
        family="itg",
        needs_node_totals=True,
        init=INIT_GRAVITY,
        max_outer_iters=1,
    ),
    "stg": EstimatorPreset(
        name="stg",
        description="Simple tomogravity (Euclidean projection of the gravity solution)",
        family="stg",
        needs_node_totals=True,
    ),
    "ertg": EstimatorPreset(
        name="ertg",
        description="Entropy-regularized tomogravity",
        family="ertg",
        needs_node_totals=True,
    ),
    "sg": EstimatorPreset(
        name="sg",
        description="Simple gravity",
        family="sg",
        needs_node_totals=True,
    ),
}


@dataclass(frozen=True, eq=False)
class MethodOutcome:
    """Estimate from any preset, in a common shape for reports and comparisons"""
    method: str
    values: np.ndarray
    converged: bool
    details: object


def map_method_alias(name: str) -> str:
    """
    Map long method names to preset keys

    iterative -> itg, tomogravity -> stg, entropy -> ertg, gravity -> sg
    """
    mapping = {
        "iterative": "itg",
        "tomogravity": "stg",
        "simple-tomogravity": "stg",
        "entropy": "ertg",
        "entropy-regularized": "ertg",
        "gravity": "sg",
        "simple-gravity": "sg",
    }
    key = name.strip().lower()
    return mapping.get(key, key)


def get_preset(method: str) -> EstimatorPreset:
    """Get estimator preset by name or alias"""
    key = map_method_alias(method)
    if key not in ESTIMATOR_PRESETS:
        known = ", ".join(sorted(ESTIMATOR_PRESETS))
        raise InvalidInputError(f"unknown method '{method}' (known: {known})")
    return ESTIMATOR_PRESETS[key]


def run_preset(
    preset: EstimatorPreset,
    routing: RoutingMatrix,
    loads: LinkLoads,
    itg_options: Optional[ItgOptions] = None,
    phi: Optional[float] = None,
    clamp: Optional[bool] = None,
) -> MethodOutcome:
    """
    Run one preset on one snapshot

    Args:
        preset: estimator preset
        routing: full routing matrix
        loads: link-load snapshot
        itg_options: ITG options; the preset's init and iteration cap override
                     the defaults only when the preset says so
        phi: ERTG penalty override
        clamp: STG negative clamp override
    """
    if preset.family == "itg":
        options = itg_options or ItgOptions()
        if preset.init != INIT_UNIFORM:
            options = replace(options, init=preset.init, max_outer_iters=preset.max_outer_iters)
        report = itg_estimate(routing, loads, options)
        return MethodOutcome(preset.name, report.x_hat.values.copy(), report.converged, report)

    if preset.family == "sg":
        estimate = simple_gravity_estimate(routing, loads)
        return MethodOutcome(preset.name, estimate.values, True, estimate)

    prior = simple_gravity(node_totals(routing, loads))
    if preset.family == "stg":
        estimate = simple_tomogravity(
            routing, loads, prior, clamp=preset.clamp_negative if clamp is None else clamp
        )
        return MethodOutcome(preset.name, estimate.values, True, estimate)

    if preset.family == "ertg":
        estimate = entropy_regularized_tomogravity(
            routing, loads, prior, phi=preset.phi if phi is None else phi
        )
        return MethodOutcome(preset.name, estimate.values, estimate.converged, estimate)

    raise InvalidInputError(f"preset '{preset.name}' has unknown family '{preset.family}'")


def describe_outcome(outcome: MethodOutcome) -> Dict[str, object]:
    """Summary fields for reports"""
    details = outcome.details
    if isinstance(details, BaselineEstimate):
        return {
            "method": outcome.method,
            "converged": outcome.converged,
            "negative_components": len(details.negative_pairs),
            "objective": details.objective,
            "iterations": details.iterations,
            "residual": details.residual,
        }
    return {
        "method": outcome.method,
        "converged": outcome.converged,
        "outer_iterations": details.outer_iters,
        "n_hat": details.n_hat,
        "kl_final": details.kl_trajectory[-1] if details.kl_trajectory else None,
        "kl_trajectory": list(details.kl_trajectory),
        "forced_zero": sorted(details.forced_zero),
        "max_relative_link_error": details.constraint_residual,
        "inner_sweeps": details.inner_sweeps,
        "stalled": details.stalled,
    }
