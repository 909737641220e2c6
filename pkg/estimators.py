#!/usr/bin/env python3
"""
Traffic Matrix Estimators

- ITG: iterative tomogravity, alternating KL projections between the
  tomographic space and the gravity space, rescaled to the observed load
- STG: simple tomogravity, Euclidean projection of the gravity solution onto {A* x = y*}
- ERTG: entropy-regularized tomogravity, least squares + phi N^2 K(x/N, x_tilde/N)
- SG: the simple gravity solution itself
"""

import logging
from dataclasses import dataclass, field
from typing import FrozenSet, List, Optional, Tuple

import numpy as np
import scipy.linalg
from scipy.optimize import minimize
from scipy.special import kl_div

from errors import (
    DegenerateProblemError,
    InconsistentSystemError,
    InvalidInputError,
    NoObservationsError,
)
from gravity import (
    ProbabilityVector,
    kl_divergence,
    node_totals,
    project_to_gravity,
    project_to_quasi_gravity,
    simple_gravity,
)
from network_model import (
    LinkKind,
    LinkLoads,
    RoutingMatrix,
    TrafficVector,
    reduce_zero_loads,
    restrict,
)
from tomographic_projection import DEFAULT_MAX_SWEEPS, DEFAULT_TOLERANCE, krupp_project

logger = logging.getLogger(__name__)

DEFAULT_PHI = 1e-3
INIT_UNIFORM = "uniform"
INIT_GRAVITY = "gravity"
# relative slack allowed between the finalized self-pair estimate and its observed load
SELF_PAIR_SLACK = 10.0
CONSISTENCY_RTOL = 1e-8


@dataclass(frozen=True)
class ItgOptions:
    outer_tol: float = 1e-10
    max_outer_iters: int = 500
    inner_tol: float = DEFAULT_TOLERANCE
    max_sweeps: int = DEFAULT_MAX_SWEEPS
    init: str = INIT_UNIFORM
    starts: int = 1
    seed: int = 0
    gravity_exclude_self: bool = False
    warm_start: bool = True

    def __post_init__(self):
        if self.outer_tol <= 0 or self.inner_tol <= 0:
            raise InvalidInputError("ITG tolerances must be positive")
        if self.max_outer_iters < 1 or self.max_sweeps < 1 or self.starts < 1:
            raise InvalidInputError("ITG iteration caps and start count must be at least 1")
        if self.seed < 0:
            raise InvalidInputError("ITG seed must be nonnegative")
        if self.init not in (INIT_UNIFORM, INIT_GRAVITY):
            raise InvalidInputError(f"unknown ITG initialization '{self.init}'")


@dataclass(frozen=True, eq=False)
class EstimateReport:
    x_hat: TrafficVector
    n_hat: float
    outer_iters: int
    kl_trajectory: List[float]
    converged: bool
    forced_zero: FrozenSet[int]
    f_final: ProbabilityVector
    g_final: ProbabilityVector
    constraint_residual: float
    inner_sweeps: int = 0
    best_start: int = 0
    start_divergences: List[float] = field(default_factory=list)
    stalled: bool = False


@dataclass(frozen=True, eq=False)
class BaselineEstimate:
    """
    Result of STG / ERTG / SG.

    ``values`` is not clamped unless asked for, so STG may carry negative
    components; they are listed in ``negative_pairs``.
    """
    values: np.ndarray
    method: str
    negative_pairs: Tuple[int, ...] = ()
    residual: float = 0.0
    objective: Optional[float] = None
    converged: bool = True
    iterations: int = 0

    def to_traffic(self, index) -> TrafficVector:
        return TrafficVector(np.maximum(self.values, 0.0), index)


def observed_system(routing: RoutingMatrix, loads: LinkLoads) -> Tuple[RoutingMatrix, LinkLoads]:
    """Restrict to links that are observed in both the topology and the load snapshot"""
    observed = routing.observed & loads.observed
    return restrict(routing.with_observed(observed), loads.masked(observed))


# ============================================================================
# Iterative tomogravity
# ============================================================================

def _initial_gravity(
    routing: RoutingMatrix,
    loads: LinkLoads,
    options: ItgOptions,
) -> np.ndarray:
    J = routing.index.pair_count
    if options.init == INIT_GRAVITY:
        prior = simple_gravity(node_totals(routing, loads))
        return prior.values / prior.total
    return np.full(J, 1.0 / J)


def _perturbed(g: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    perturbed = g * rng.lognormal(mean=0.0, sigma=0.5, size=g.size)
    return perturbed / perturbed.sum()


def _gravity_step(f: np.ndarray, routing: RoutingMatrix, exclude_self: bool) -> np.ndarray:
    if exclude_self:
        return project_to_quasi_gravity(f, routing.index).values
    return project_to_gravity(f, routing.index).as_probability().values


def _run_itg(
    reduced: RoutingMatrix,
    reduced_loads: LinkLoads,
    g_start: np.ndarray,
    options: ItgOptions,
) -> Tuple[np.ndarray, np.ndarray, List[float], int, bool, bool, int]:
    """One ITG run from g_start; returns (f, g, trajectory, iterations, converged, stalled, sweeps)"""
    J = reduced.index.pair_count
    retained = reduced.columns
    g = g_start
    f = None
    dual = None
    trajectory: List[float] = []
    converged = False
    stalled = False
    inner_ok = True
    total_sweeps = 0
    iteration = 0

    for iteration in range(1, options.max_outer_iters + 1):
        g_retained = g[retained]
        if not g_retained.sum() > 0:
            raise DegenerateProblemError("gravity iterate has no mass on the pairs left after zero reduction")
        projection = krupp_project(
            reduced,
            reduced_loads,
            g_retained,
            tol=options.inner_tol,
            max_sweeps=options.max_sweeps,
            v0=dual if options.warm_start else None,
        )
        total_sweeps += projection.newton_sweeps
        inner_ok = projection.converged
        dual = projection.dual

        f_new = np.zeros(J)
        f_new[retained] = projection.f_new.values
        k_tomographic = kl_divergence(f_new, g)

        previous = trajectory[-1] if trajectory else k_tomographic
        if f is not None and k_tomographic > previous:
            # the projection did not beat the previous feasible iterate
            rise = k_tomographic - previous
            if rise <= options.outer_tol:
                converged = inner_ok
            else:
                stalled = True
                logger.info(f"ITG iteration {iteration}: K rose by {rise:.3g}, keeping previous iterate")
            break

        f = f_new
        g = _gravity_step(f, reduced, options.gravity_exclude_self)
        k_gravity = kl_divergence(f, g)
        trajectory.append(k_gravity)
        logger.debug(f"ITG iteration {iteration}: K(f, g) = {k_gravity:.12g}")

        if abs(previous - k_gravity) <= options.outer_tol:
            converged = inner_ok
            break

    return f, g, trajectory, iteration, converged, stalled, total_sweeps


def itg_estimate(
    routing: RoutingMatrix,
    loads: LinkLoads,
    options: Optional[ItgOptions] = None,
) -> EstimateReport:
    """
    Iterative tomogravity estimate of the traffic matrix

    Args:
        routing: full routing matrix A with its observation mask
        loads: link-load snapshot; unobserved links are ignored
        options: ITG options (defaults to uniform initialization, one start)

    Returns:
        EstimateReport with x_hat = N_hat f_final

    Raises:
        NoObservationsError: nothing observed, or every observed load is zero
        InfeasibleError: the tomographic space is empty
    """
    options = options or ItgOptions()
    observed_routing, observed_loads = observed_system(routing, loads)
    y_star = observed_loads.values
    if not y_star.sum() > 0:
        raise NoObservationsError("every observed link load is zero")

    reduction = reduce_zero_loads(observed_routing, observed_loads)
    reduced, reduced_loads = reduction.routing, reduction.loads

    g_initial = _initial_gravity(routing, loads, options)
    seeds = np.random.SeedSequence(options.seed).spawn(options.starts - 1) if options.starts > 1 else []
    starts = [g_initial] + [_perturbed(g_initial, np.random.default_rng(s)) for s in seeds]

    runs = [_run_itg(reduced, reduced_loads, g0, options) for g0 in starts]
    finals = [run[2][-1] if run[2] else float("inf") for run in runs]
    best = int(np.argmin(finals))
    f, g, trajectory, iterations, converged, stalled, sweeps = runs[best]
    if options.starts > 1:
        logger.info(f"ITG multi-start: best of {options.starts} starts is #{best} (K = {finals[best]:.6g})")

    # finalization: N_hat = 1'y* / 1'A* f, x_hat = N_hat f
    f_retained = f[reduced.columns]
    n_hat = float(reduced_loads.values.sum() / (reduced.entries @ f_retained).sum())
    x_hat = n_hat * f

    _pin_self_pairs(x_hat, observed_routing, y_star, options.inner_tol)

    fitted = observed_routing.entries @ x_hat[observed_routing.columns]
    positive = y_star > 0
    residual = float(np.max(np.abs(fitted[positive] - y_star[positive]) / y_star[positive]))

    if stalled:
        logger.warning(f"ITG stalled after {iterations} iterations: the projection no longer decreases K")
    elif not converged:
        logger.warning(f"ITG stopped after {iterations} iterations without converging")
    logger.info(
        f"ITG finished: {iterations} iterations, K = {trajectory[-1]:.6g}, "
        f"N_hat = {n_hat:.6g}, max relative link error {residual:.3g}"
    )

    return EstimateReport(
        x_hat=TrafficVector(x_hat, routing.index),
        n_hat=n_hat,
        outer_iters=iterations,
        kl_trajectory=trajectory,
        converged=converged,
        forced_zero=reduction.forced_zero,
        f_final=ProbabilityVector(f),
        g_final=ProbabilityVector(g),
        constraint_residual=residual,
        inner_sweeps=sweeps,
        best_start=best,
        start_divergences=finals,
        stalled=stalled,
    )


def _pin_self_pairs(x_hat: np.ndarray, routing: RoutingMatrix, y_star: np.ndarray, tol: float) -> None:
    """Self pairs on observed self links equal the link load exactly"""
    for i, kind in enumerate(routing.link_kinds):
        if kind is not LinkKind.SELF:
            continue
        hits = routing.row_support[i]
        if hits.size != 1:
            continue
        j = int(routing.columns[hits[0]])
        observed = y_star[i]
        gap = abs(x_hat[j] - observed)
        if gap > SELF_PAIR_SLACK * tol * max(observed, 1.0):
            logger.warning(
                f"Self pair on link '{routing.link_ids[i]}' off by {gap:.3g} before pinning to its load"
            )
        x_hat[j] = observed


# ============================================================================
# Baselines
# ============================================================================

def simple_gravity_estimate(
    routing: RoutingMatrix,
    loads: LinkLoads,
    include_self: bool = True,
) -> BaselineEstimate:
    """Simple gravity solution from the observed edge and self link loads"""
    prior = simple_gravity(node_totals(routing, loads, include_self=include_self))
    return BaselineEstimate(values=prior.values.copy(), method="sg")


def simple_tomogravity(
    routing: RoutingMatrix,
    loads: LinkLoads,
    x_tilde,
    clamp: bool = False,
) -> BaselineEstimate:
    """
    Euclidean projection of x_tilde onto {x : A* x = y*}

    x_hat = x_tilde + delta with delta the minimum-norm solution of
    A* delta = y* - A* x_tilde, i.e. delta = A*^T w for the minimum-norm w of
    (A* A*^T) w = y* - A* x_tilde.

    Args:
        routing, loads: the system; unobserved rows are dropped first
        x_tilde: prior (TrafficVector or array over all pairs)
        clamp: clip negative components to zero afterwards

    Raises:
        InconsistentSystemError: y* is not in the range of A*
    """
    a_star, y_star = observed_system(routing, loads)
    prior = np.asarray(getattr(x_tilde, "values", x_tilde), dtype=float)
    a = a_star.entries
    y = y_star.values
    deficit = y - a @ prior
    delta, _, _, _ = scipy.linalg.lstsq(a, deficit, lapack_driver="gelsd")
    x_hat = prior + delta

    residual = float(np.linalg.norm(a @ x_hat - y))
    if residual > CONSISTENCY_RTOL * max(np.linalg.norm(y), 1.0):
        raise InconsistentSystemError("observed loads are not in the range of the routing matrix", residual)

    negative = tuple(int(j) for j in np.flatnonzero(x_hat < 0))
    if negative:
        logger.warning(f"Simple tomogravity produced {len(negative)} negative components")
    if clamp:
        x_hat = np.maximum(x_hat, 0.0)
    return BaselineEstimate(values=x_hat, method="stg", negative_pairs=negative, residual=residual)


def ertg_objective(a: np.ndarray, y: np.ndarray, x: np.ndarray, x_tilde: np.ndarray, phi: float) -> float:
    """||y - A x||^2 + phi N^2 K(x/N, x_tilde/N) with the generalized divergence and N = sum x_tilde"""
    n_total = x_tilde.sum()
    support = x_tilde > 0
    if np.any(x[~support] != 0):
        return float("inf")
    misfit = y - a @ x
    penalty = np.sum(kl_div(x[support] / n_total, x_tilde[support] / n_total))
    return float(misfit @ misfit + phi * n_total ** 2 * penalty)


def entropy_regularized_tomogravity(
    routing: RoutingMatrix,
    loads: LinkLoads,
    x_tilde,
    phi: float = DEFAULT_PHI,
    gtol: float = 1e-8,
    max_iter: int = 20_000,
) -> BaselineEstimate:
    """
    Entropy-regularized tomogravity

    Minimizes ||y* - A* x||^2 + phi N^2 K(x/N, x_tilde/N) over x >= 0 with
    support inside support(x_tilde), in units of N = sum x_tilde. The start is
    the better of x_tilde and the clamped STG solution, so the result never
    scores worse than either.

    Raises:
        InvalidInputError: phi <= 0 or x_tilde identically zero
    """
    if not phi > 0:
        raise InvalidInputError("phi must be positive")
    prior = np.asarray(getattr(x_tilde, "values", x_tilde), dtype=float)
    if np.any(prior < 0) or not prior.sum() > 0:
        raise InvalidInputError("x_tilde must be nonnegative with positive total")

    a_star, y_star = observed_system(routing, loads)
    a, y = a_star.entries, y_star.values
    n_total = prior.sum()
    support = np.flatnonzero(prior > 0)
    a_s = a[:, support]
    eta = y / n_total
    u_prior = prior[support] / n_total

    def objective(u: np.ndarray) -> Tuple[float, np.ndarray]:
        misfit = eta - a_s @ u
        value = misfit @ misfit + phi * np.sum(kl_div(u, u_prior))
        grad = -2.0 * (a_s.T @ misfit) + phi * np.log(np.maximum(u, 1e-300) / u_prior)
        return float(value), grad

    candidates = [u_prior]
    try:
        stg = simple_tomogravity(routing, loads, prior, clamp=True)
        candidates.append(stg.values[support] / n_total)
    except InconsistentSystemError:
        logger.debug("STG start unavailable for ERTG (inconsistent system)")
    u_start = min(candidates, key=lambda u: objective(u)[0])

    result = minimize(
        objective,
        u_start,
        jac=True,
        method="L-BFGS-B",
        bounds=[(0.0, None)] * support.size,
        options={"maxiter": max_iter, "maxfun": 4 * max_iter, "gtol": gtol, "ftol": 1e-15},
    )
    u_best = result.x if objective(result.x)[0] <= objective(u_start)[0] else u_start

    x_hat = np.zeros_like(prior)
    x_hat[support] = np.maximum(u_best, 0.0) * n_total
    value = ertg_objective(a, y, x_hat, prior, phi)
    if not result.success:
        logger.warning(f"ERTG optimizer stopped early: {result.message}")
    logger.info(f"ERTG finished: {result.nit} iterations, objective {value:.6g}")
    return BaselineEstimate(
        values=x_hat,
        method="ertg",
        objective=value,
        converged=bool(result.success),
        iterations=int(result.nit),
        residual=float(np.linalg.norm(a @ x_hat - y)),
    )
