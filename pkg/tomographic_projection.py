#!/usr/bin/env python3
"""
Tomographic Projection
KL projection of a reference measure onto the tomographic space
{f >= 0, sum f = 1, y* proportional to A* f}, computed with a relaxation
(dual coordinate ascent) scheme.

The proportionality constraints plus normalization are rewritten as
H f = (0, ..., 0, 1) with

    h_ij = a_ij / y_i - a_rj / y_r    (i < r)
    h_rj = 1

and the concave dual

    D(v) = v_r - sum_j g_j exp(sum_i h_ij v_i - 1)

is maximized one coordinate at a time with safeguarded Newton steps. The
primal solution is f_j = g_j exp(sum_i h_ij v_i - 1).
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import linprog

from errors import (
    DegenerateProblemError,
    DimensionMismatchError,
    InfeasibleError,
    InvalidInputError,
)
from gravity import ProbabilityVector
from network_model import LinkLoads, RoutingMatrix

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-9
DEFAULT_MAX_SWEEPS = 10_000
EXPONENT_CAP = 700.0
MAX_HALVINGS = 30
# |v_i| beyond this means the dual is running off to infinity
DUAL_BOUND = 1e12
_CURVATURE_FLOOR = 1e-300
# coordinate Newton decrement gradient^2 / curvature below which a step cannot move D in floating point
_DECREMENT_FLOOR = 1e-32


@dataclass(frozen=True, eq=False)
class DualProblem:
    """
    H matrix, reference measure and starting dual vector.

    ``row_order[i]`` is the routing row behind H row i; the reference link
    (largest load) is moved to the last position.
    """
    h: np.ndarray
    g_old: np.ndarray
    v: np.ndarray
    row_order: np.ndarray
    row_support: Tuple[np.ndarray, ...] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "row_support", tuple(np.flatnonzero(row) for row in self.h))

    @property
    def rank(self) -> int:
        return self.h.shape[0]

    def target(self) -> np.ndarray:
        rhs = np.zeros(self.rank)
        rhs[-1] = 1.0
        return rhs


@dataclass(frozen=True, eq=False)
class ProjectionResult:
    f_new: ProbabilityVector
    dual_value: float
    constraint_residual: float
    newton_sweeps: int
    converged: bool
    dual: np.ndarray
    dual_trajectory: List[float] = field(default_factory=list)


def build_dual(
    routing: RoutingMatrix,
    loads: LinkLoads,
    g_old,
    v0: Optional[np.ndarray] = None,
) -> DualProblem:
    """
    Build the dual of the KL projection of g_old onto the tomographic space

    Args:
        routing: observed, zero-reduced routing matrix A**
        loads: strictly positive loads y**
        g_old: reference measure, strictly positive on every column (rescaled to sum 1)
        v0: optional starting dual in H row order; defaults to (0, ..., 0, 1)

    Raises:
        InvalidInputError: a zero load, or g_old vanishing on a retained column
    """
    y = np.asarray(loads.values, dtype=float)
    g = np.asarray(getattr(g_old, "values", g_old), dtype=float)
    if y.shape != (routing.link_count,):
        raise DimensionMismatchError("loads do not match routing rows")
    if g.shape != (routing.column_count,):
        raise DimensionMismatchError("reference measure does not match routing columns")
    if routing.link_count == 0:
        raise InvalidInputError("no observed links to build constraints from")
    if np.any(~(y > 0)):
        raise InvalidInputError("build_dual needs strictly positive loads; reduce zero loads first")
    if np.any(~(g > 0)) or not np.all(np.isfinite(g)):
        raise InvalidInputError("reference measure must be strictly positive on retained pairs")

    reference = int(np.argmax(y))
    others = np.array([i for i in range(routing.link_count) if i != reference], dtype=int)
    row_order = np.append(others, reference)

    a = routing.entries
    h = np.empty((routing.link_count, routing.column_count))
    h[:-1] = a[others] / y[others, None] - a[reference] / y[reference]
    h[-1] = 1.0

    if v0 is None:
        v = np.zeros(routing.link_count)
        v[-1] = 1.0
    else:
        v = np.array(v0, dtype=float)
        if v.shape != (routing.link_count,):
            raise DimensionMismatchError("starting dual vector does not match the constraint count")

    return DualProblem(h=h, g_old=g / g.sum(), v=v, row_order=row_order)


def _exponents(dp: DualProblem, v: np.ndarray) -> np.ndarray:
    return dp.h.T @ v - 1.0


def dual_objective(dp: DualProblem, v: np.ndarray) -> float:
    """D(v) = v_r - sum_j g_j exp(min(H^T v - 1, cap))"""
    v = np.asarray(v, dtype=float)
    exponents = np.minimum(_exponents(dp, v), EXPONENT_CAP)
    return float(v[-1] - np.sum(dp.g_old * np.exp(exponents)))


def primal_from_dual(dp: DualProblem, v: np.ndarray) -> np.ndarray:
    return dp.g_old * np.exp(np.minimum(_exponents(dp, v), EXPONENT_CAP))


def constraint_residual(dp: DualProblem, f: np.ndarray) -> float:
    return float(np.max(np.abs(dp.h @ f - dp.target())))


def check_feasible(dp: DualProblem) -> None:
    """
    Raise InfeasibleError when no f >= 0 satisfies H f = (0, ..., 0, 1)

    Some empty tomographic spaces only push the dual off slowly, so the
    bound on |v_i| alone would not catch them within the sweep cap.
    """
    result = linprog(
        np.zeros(dp.h.shape[1]),
        A_eq=dp.h,
        b_eq=dp.target(),
        bounds=(0, None),
        method="highs",
    )
    if result.status == 2:
        raise InfeasibleError("the observed loads admit no nonnegative traffic vector proportional to them")


def _ascend(
    dp: DualProblem,
    tol: float,
    max_sweeps: int,
) -> Tuple[np.ndarray, np.ndarray, int, bool, float, List[float]]:
    """
    Cyclic safeguarded Newton ascent

    Returns: (v, exponents, sweeps, converged, residual, trajectory); the
    residual is measured on the same unnormalized primal iterate the stopping
    rule tests.
    """
    v = dp.v.copy()
    exponents = _exponents(dp, v)
    f = dp.g_old * np.exp(np.minimum(exponents, EXPONENT_CAP))
    last = dp.rank - 1

    dual = v[last] - f.sum()
    trajectory = [float(dual)]
    converged = False
    sweeps = 0

    residual = constraint_residual(dp, f)
    for sweeps in range(1, max_sweeps + 1):
        moved = False
        for i in range(dp.rank):
            idx = dp.row_support[i]
            if idx.size == 0:
                continue
            h_i = dp.h[i, idx]
            f_i = f[idx]
            curvature = float(np.dot(h_i * h_i, f_i))
            if curvature <= _CURVATURE_FLOOR:
                continue
            unit = 1.0 if i == last else 0.0
            gradient = unit - float(np.dot(h_i, f_i))
            if gradient * gradient <= _DECREMENT_FLOOR * curvature:
                continue
            step = gradient / curvature
            capped = bool(np.any(exponents[idx] > EXPONENT_CAP))
            for _ in range(MAX_HALVINGS + 1):
                delta = step * h_i
                trial_exponents = exponents[idx] + delta
                if capped or np.any(trial_exponents > EXPONENT_CAP):
                    trial_f = dp.g_old[idx] * np.exp(np.minimum(trial_exponents, EXPONENT_CAP))
                    gain = unit * step - (trial_f.sum() - f_i.sum())
                else:
                    # D gain = step * gradient - sum f (e^d - 1 - d), no cancellation near the optimum
                    excess = np.where(
                        np.abs(delta) < 1e-4,
                        delta * delta * (0.5 + delta / 6.0 + delta * delta / 24.0),
                        np.expm1(delta) - delta,
                    )
                    trial_f = dp.g_old[idx] * np.exp(trial_exponents)
                    gain = step * gradient - float(np.dot(f_i, excess))
                if gain >= 0.0:
                    v[i] += step
                    moved = True
                    exponents[idx] = trial_exponents
                    f[idx] = trial_f
                    break
                step *= 0.5

        if np.max(np.abs(v)) > DUAL_BOUND:
            raise InfeasibleError(
                "dual variables diverge: the observed loads admit no proportional traffic vector"
            )

        new_dual = v[last] - f.sum()
        improvement = (new_dual - dual) / max(1.0, abs(dual))
        dual = new_dual
        trajectory.append(float(dual))
        residual = constraint_residual(dp, f)
        if residual <= tol and abs(improvement) <= tol:
            converged = True
            break
        if not moved:
            # no coordinate can improve D any further in floating point
            converged = residual <= tol
            break

    return v, exponents, sweeps, converged, residual, trajectory


def krupp_project(
    routing: RoutingMatrix,
    loads: LinkLoads,
    g_old,
    tol: float = DEFAULT_TOLERANCE,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
    v0: Optional[np.ndarray] = None,
) -> ProjectionResult:
    """
    KL projection of g_old onto the tomographic space of (A**, y**)

    Columns where g_old vanishes stay at zero and are left out of the dual.
    Loads are rescaled to sum 1 first; the constraint set is scale-free and
    the rescaling keeps H entries of order one.

    Args:
        routing: observed, zero-reduced routing matrix A**
        loads: strictly positive loads y**
        g_old: reference measure over the routing columns
        tol: constraint residual and relative dual improvement threshold
        max_sweeps: cap on full coordinate cycles
        v0: warm-start dual vector (from a previous ProjectionResult.dual)

    Returns:
        ProjectionResult; ``converged`` is False when max_sweeps ran out

    Raises:
        DegenerateProblemError: g_old vanishes on every column
        InfeasibleError: the tomographic space is empty
    """
    if tol <= 0:
        raise InvalidInputError("tolerance must be positive")
    if max_sweeps < 1:
        raise InvalidInputError("max_sweeps must be at least 1")

    g = np.asarray(getattr(g_old, "values", g_old), dtype=float)
    if g.shape != (routing.column_count,):
        raise DimensionMismatchError("reference measure does not match routing columns")
    support = g > 0
    if not support.any():
        raise DegenerateProblemError("reference measure has empty support on the retained pairs")

    sub_routing = routing if support.all() else routing.select_columns(np.flatnonzero(support))
    stranded = np.flatnonzero(~sub_routing.entries.any(axis=1))
    if stranded.size:
        raise InfeasibleError(
            f"link '{routing.link_ids[stranded[0]]}' carries load but no pair with positive weight"
        )

    y = np.asarray(loads.values, dtype=float)
    scaled = LinkLoads.fully_observed(y / y.sum())
    dp = build_dual(sub_routing, scaled, g[support], v0=v0)
    if v0 is None:
        check_feasible(dp)

    v, exponents, sweeps, converged, residual, trajectory = _ascend(dp, tol, max_sweeps)

    if converged and np.any(exponents > EXPONENT_CAP):
        raise InfeasibleError("projection only converged by saturating the exponent cap")

    f_support = dp.g_old * np.exp(np.minimum(exponents, EXPONENT_CAP))
    f_support /= f_support.sum()

    f_full = np.zeros(routing.column_count)
    f_full[support] = f_support

    if converged:
        logger.debug(f"Projection converged in {sweeps} sweeps (residual {residual:.3g})")
    else:
        logger.warning(
            f"Projection stopped after {sweeps} sweeps without converging (residual {residual:.3g})"
        )

    return ProjectionResult(
        f_new=ProbabilityVector(f_full),
        dual_value=trajectory[-1],
        constraint_residual=residual,
        newton_sweeps=sweeps,
        converged=converged,
        dual=v,
        dual_trajectory=trajectory,
    )
