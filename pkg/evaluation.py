#!/usr/bin/env python3
"""
Evaluation
Error metrics, flow-level grouping, the missing-link robustness sweep,
the ERTG penalty scan and multi-method comparison over snapshot series.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import InvalidInputError
from estimator_presets import MethodOutcome, get_preset, run_preset
from estimators import DEFAULT_PHI, ItgOptions, entropy_regularized_tomogravity, itg_estimate
from gravity import node_totals, simple_gravity
from network_model import LinkKind, LinkLoads, RoutingMatrix, SdIndex, TrafficVector

logger = logging.getLogger(__name__)

# Flow grid in units of FLOW_UNIT packets
DEFAULT_FLOW_GRID: Tuple[float, ...] = (0, 0.25, 0.5, 0.75, 1, 1.5, 2, 2.5, 3, 4, 5, 7)
FLOW_UNIT = 1e10
DEFAULT_T_STAR = 72
DEFAULT_K_MAX = 5
DEFAULT_REPS = 10

ProgressCallback = Callable[[int, int], None]


def _values(x) -> np.ndarray:
    return np.asarray(getattr(x, "values", x), dtype=float)


def _as_series(item, kind) -> list:
    return [item] if isinstance(item, kind) else list(item)


# ============================================================================
# Metrics
# ============================================================================

def relative_total_error(
    x_hat,
    x_true,
    exclude_self: bool = True,
    index: Optional[SdIndex] = None,
) -> float:
    """
    sum |x_hat - x| / sum x over the included pairs

    Args:
        x_hat, x_true: TrafficVector or arrays over the same SD index
        exclude_self: leave self pairs out of both sums
        index: SD index, needed when arrays are passed with exclude_self

    Raises:
        InvalidInputError: the included truth sums to zero, or self pairs must be
            excluded but no SD index is available
    """
    estimate, truth = _values(x_hat), _values(x_true)
    if estimate.shape != truth.shape:
        raise InvalidInputError("estimate and truth have different lengths")
    keep = np.ones(truth.shape, dtype=bool)
    if exclude_self:
        for candidate in (index, getattr(x_true, "index", None), getattr(x_hat, "index", None)):
            if candidate is not None:
                index = candidate
                break
        else:
            raise InvalidInputError("excluding self pairs needs an SD index; pass index= or TrafficVectors")
        if index.pair_count != truth.size:
            raise InvalidInputError("SD index does not match the traffic vectors")
        keep = ~index.self_pairs()
    denominator = truth[keep].sum()
    if not denominator > 0:
        raise InvalidInputError("true traffic over the included pairs sums to zero")
    return float(np.abs(estimate[keep] - truth[keep]).sum() / denominator)


@dataclass(frozen=True, eq=False)
class TemporalErrors:
    """
    Per-pair relative error over a time window.

    Pairs with zero total flow get NaN and are listed in ``zero_flow``.
    """
    errors: np.ndarray
    totals: np.ndarray
    zero_flow: Tuple[int, ...]
    index: Optional[SdIndex] = None

    def as_mapping(self) -> Dict[object, float]:
        keys = list(self.index.pairs()) if self.index is not None else list(range(self.errors.size))
        return {key: float(e) for key, e in zip(keys, self.errors) if not math.isnan(e)}


def per_pair_temporal_error(
    x_hat_series: Sequence,
    x_true_series: Sequence,
    t_star: int = DEFAULT_T_STAR,
) -> TemporalErrors:
    """
    sum_t |x_hat_sd(t) - x_sd(t)| / sum_t x_sd(t) over the first t_star snapshots

    Raises:
        InvalidInputError: a series is shorter than t_star
    """
    if t_star < 1:
        raise InvalidInputError("t_star must be at least 1")
    if len(x_hat_series) < t_star or len(x_true_series) < t_star:
        raise InvalidInputError(
            f"window t_star={t_star} exceeds the series length "
            f"({len(x_hat_series)} estimates, {len(x_true_series)} truths)"
        )
    estimate = np.vstack([_values(x) for x in x_hat_series[:t_star]])
    truth = np.vstack([_values(x) for x in x_true_series[:t_star]])
    if estimate.shape != truth.shape:
        raise InvalidInputError("estimate and truth series have different pair counts")

    totals = truth.sum(axis=0)
    gaps = np.abs(estimate - truth).sum(axis=0)
    zero = totals <= 0
    errors = np.full(totals.shape, np.nan)
    errors[~zero] = gaps[~zero] / totals[~zero]
    zero_flow = tuple(int(j) for j in np.flatnonzero(zero))
    if zero_flow:
        logger.debug(f"{len(zero_flow)} pairs carry no flow in the window and are left ungrouped")
    return TemporalErrors(
        errors=errors,
        totals=totals,
        zero_flow=zero_flow,
        index=getattr(x_true_series[0], "index", None),
    )


@dataclass(frozen=True)
class FlowGroup:
    """Pairs whose total flow lies in [lower, upper)"""
    lower: float
    upper: float
    count: int
    mean_error: float


def group_by_flow(
    per_pair_errors,
    totals,
    grid: Sequence[float] = DEFAULT_FLOW_GRID,
    unit: float = 1.0,
) -> List[FlowGroup]:
    """
    Group per-pair errors by total flow on half-open bins

    Bins are [g_k, g_{k+1}) plus a last bin [g_last, inf). Totals are divided
    by ``unit`` before binning. NaN errors and totals below g_0 are ungrouped.
    An empty bin has count 0 and mean NaN.

    Raises:
        InvalidInputError: grid not strictly increasing
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise InvalidInputError("flow grid must be strictly increasing")
    if not unit > 0:
        raise InvalidInputError("flow unit must be positive")
    errors = _values(getattr(per_pair_errors, "errors", per_pair_errors))
    flows = _values(totals) / unit
    if errors.shape != flows.shape:
        raise InvalidInputError("errors and totals have different lengths")

    valid = ~np.isnan(errors) & (flows >= grid[0])
    bins = np.searchsorted(grid, flows, side="right") - 1
    uppers = np.append(grid[1:], np.inf)

    groups = []
    for k, (lower, upper) in enumerate(zip(grid, uppers)):
        members = valid & (bins == k)
        count = int(members.sum())
        mean = float(errors[members].mean()) if count else float("nan")
        groups.append(FlowGroup(lower=float(lower), upper=float(upper), count=count, mean_error=mean))

    ungrouped = int(errors.size - valid.sum())
    if ungrouped:
        logger.debug(f"{ungrouped} pairs fall outside the flow grid or carry no flow")
    return groups


# ============================================================================
# Missing-link sweep
# ============================================================================

@dataclass(frozen=True)
class SweepPoint:
    """Mean relative total error at k masked edge links"""
    k: int
    mean_error: float
    cell_errors: Tuple[float, ...]
    patterns: Tuple[Tuple[str, ...], ...]
    converged: bool


def eligible_links(routing: RoutingMatrix, loads_series: Sequence[LinkLoads]) -> np.ndarray:
    """Observed non-self edge links (observed in every snapshot)"""
    observed = routing.observed.copy()
    for loads in loads_series:
        observed &= loads.observed
    return np.flatnonzero(observed & routing.kind_mask(LinkKind.EDGE))


def _sweep_cell(
    routing: RoutingMatrix,
    loads_series: Sequence[LinkLoads],
    truth_series: Sequence[TrafficVector],
    missing: np.ndarray,
    options: ItgOptions,
) -> Tuple[float, bool]:
    mask = routing.observed.copy()
    mask[missing] = False
    masked_routing = routing.with_observed(mask)
    errors, converged = [], True
    for loads, truth in zip(loads_series, truth_series):
        report = itg_estimate(masked_routing, loads.masked(loads.observed & mask), options)
        errors.append(relative_total_error(report.x_hat, truth, exclude_self=True, index=routing.index))
        converged = converged and report.converged
    return float(np.mean(errors)), converged


def missing_link_sweep(
    routing: RoutingMatrix,
    loads,
    x_true,
    k_max: int = DEFAULT_K_MAX,
    reps: int = DEFAULT_REPS,
    seed: Optional[int] = None,
    options: Optional[ItgOptions] = None,
    workers: int = 1,
    progress_callback: Optional[ProgressCallback] = None,
) -> List[SweepPoint]:
    """
    ITG error as edge links go missing

    For each k in 0..k_max, ``reps`` uniform random k-subsets of the eligible
    edge links are masked and ITG is rerun on every snapshot; each cell
    averages the relative total error (self pairs excluded) over snapshots.
    k = 0 runs once and draws nothing. Cell (k, rep) draws from its own
    stream SeedSequence(entropy, spawn_key=(k, rep)), so results do not
    depend on ``workers`` or completion order.

    Args:
        routing: full routing matrix
        loads: LinkLoads or a series of them
        x_true: TrafficVector or a series aligned with ``loads``
        k_max: largest number of masked links
        reps: random patterns per k >= 1
        seed: root seed
        options: ITG options
        workers: thread count for independent cells
        progress_callback: called as (completed cells, total cells)

    Raises:
        InvalidInputError: k_max not below the number of eligible edge links
    """
    loads_series = _as_series(loads, LinkLoads)
    truth_series = _as_series(x_true, TrafficVector)
    if len(loads_series) != len(truth_series) or not loads_series:
        raise InvalidInputError("loads and truth series must be non-empty and aligned")
    if k_max < 0 or reps < 1:
        raise InvalidInputError("k_max must be >= 0 and reps >= 1")
    eligible = eligible_links(routing, loads_series)
    if k_max >= eligible.size:
        raise InvalidInputError(f"k_max={k_max} must be below the number of eligible edge links ({eligible.size})")
    options = options or ItgOptions()
    entropy = np.random.SeedSequence(seed).entropy

    cells: List[Tuple[int, np.ndarray]] = [(0, np.zeros(0, dtype=int))]
    for k in range(1, k_max + 1):
        for rep in range(reps):
            rng = np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=(k, rep)))
            cells.append((k, np.sort(rng.choice(eligible, size=k, replace=False))))

    total = len(cells)
    completed = 0

    def run(cell: Tuple[int, np.ndarray]) -> Tuple[float, bool]:
        return _sweep_cell(routing, loads_series, truth_series, cell[1], options)

    results: List[Tuple[float, bool]] = []
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            for result in executor.map(run, cells):
                results.append(result)
                completed += 1
                if progress_callback:
                    progress_callback(completed, total)
    else:
        for cell in cells:
            results.append(run(cell))
            completed += 1
            if progress_callback:
                progress_callback(completed, total)

    points = []
    for k in range(k_max + 1):
        members = [i for i, (cell_k, _) in enumerate(cells) if cell_k == k]
        errors = tuple(results[i][0] for i in members)
        patterns = tuple(tuple(routing.link_ids[j] for j in cells[i][1]) for i in members)
        points.append(SweepPoint(
            k=k,
            mean_error=float(np.mean(errors)),
            cell_errors=errors,
            patterns=patterns,
            converged=all(results[i][1] for i in members),
        ))
        logger.info(f"Sweep k={k}: mean relative error {points[-1].mean_error:.6g} over {len(errors)} patterns")
    return points


# ============================================================================
# Penalty scan and method comparison
# ============================================================================

@dataclass(frozen=True)
class PhiScanPoint:
    phi: float
    mean_error: float
    converged: bool


def phi_scan(
    routing: RoutingMatrix,
    loads,
    x_tilde,
    phis: Sequence[float],
    x_true,
) -> List[PhiScanPoint]:
    """
    ERTG relative total error over a grid of penalty weights

    Args:
        loads, x_true: a snapshot or aligned series
        x_tilde: prior (or series); None uses the simple gravity solution per snapshot
        phis: positive penalty weights
    """
    loads_series = _as_series(loads, LinkLoads)
    truth_series = _as_series(x_true, TrafficVector)
    if x_tilde is None:
        priors = [simple_gravity(node_totals(routing, y)) for y in loads_series]
    elif isinstance(x_tilde, (TrafficVector, np.ndarray)):
        priors = [x_tilde] * len(loads_series)
    else:
        priors = list(x_tilde)
    if not (len(loads_series) == len(truth_series) == len(priors)):
        raise InvalidInputError("loads, priors and truth series must be aligned")

    points = []
    for phi in phis:
        errors, converged = [], True
        for y, prior, truth in zip(loads_series, priors, truth_series):
            estimate = entropy_regularized_tomogravity(routing, y, prior, phi=phi)
            errors.append(relative_total_error(estimate.values, truth, exclude_self=True, index=routing.index))
            converged = converged and estimate.converged
        points.append(PhiScanPoint(phi=float(phi), mean_error=float(np.mean(errors)), converged=converged))
        logger.info(f"phi={phi:g}: mean relative error {points[-1].mean_error:.6g}")
    return points


@dataclass(frozen=True, eq=False)
class ComparisonResult:
    methods: Tuple[str, ...]
    snapshot_errors: Dict[str, List[float]]
    mean_errors: Dict[str, float]
    converged: Dict[str, bool]
    temporal: Dict[str, TemporalErrors] = field(default_factory=dict)
    groups: Dict[str, List[FlowGroup]] = field(default_factory=dict)
    t_star: int = 0
    phi_points: List[PhiScanPoint] = field(default_factory=list)

    @property
    def all_converged(self) -> bool:
        return all(self.converged.values()) and all(p.converged for p in self.phi_points)


def compare_methods(
    routing: RoutingMatrix,
    loads,
    x_true,
    methods: Sequence[str] = ("itg", "stg", "ertg"),
    itg_options: Optional[ItgOptions] = None,
    phi: float = DEFAULT_PHI,
    clamp: Optional[bool] = None,
    t_star: int = DEFAULT_T_STAR,
    grid: Sequence[float] = DEFAULT_FLOW_GRID,
    flow_unit: float = FLOW_UNIT,
    phi_grid: Sequence[float] = (),
    progress_callback: Optional[ProgressCallback] = None,
) -> ComparisonResult:
    """
    Run several methods over a snapshot series and score them

    Per snapshot: relative total error (self pairs excluded). Per pair: the
    temporal error over the first min(t_star, steps) snapshots, grouped on
    the flow grid. Columns are keyed by the method names as requested.
    """
    loads_series = _as_series(loads, LinkLoads)
    truth_series = _as_series(x_true, TrafficVector)
    if len(loads_series) != len(truth_series) or not loads_series:
        raise InvalidInputError("loads and truth series must be non-empty and aligned")
    names = tuple(m.strip() for m in methods)
    if not names:
        raise InvalidInputError("no methods requested")
    presets = {name: get_preset(name) for name in names}
    window = min(t_star, len(truth_series))
    total = len(names) * len(loads_series)

    snapshot_errors: Dict[str, List[float]] = {}
    converged: Dict[str, bool] = {}
    temporal: Dict[str, TemporalErrors] = {}
    groups: Dict[str, List[FlowGroup]] = {}
    done = 0
    for name in names:
        outcomes: List[MethodOutcome] = []
        for y in loads_series:
            outcomes.append(run_preset(presets[name], routing, y, itg_options, phi=phi, clamp=clamp))
            done += 1
            if progress_callback:
                progress_callback(done, total)
        estimates = [o.values for o in outcomes]
        snapshot_errors[name] = [
            relative_total_error(x, t, exclude_self=True, index=routing.index) for x, t in zip(estimates, truth_series)
        ]
        converged[name] = all(o.converged for o in outcomes)
        temporal[name] = per_pair_temporal_error(estimates, truth_series, window)
        groups[name] = group_by_flow(temporal[name], temporal[name].totals, grid, unit=flow_unit)

    mean_errors = {name: float(np.mean(errors)) for name, errors in snapshot_errors.items()}
    for name in names:
        logger.info(f"{name}: mean relative error {mean_errors[name]:.6g} over {len(loads_series)} snapshots")

    phi_points = phi_scan(routing, loads_series, None, phi_grid, truth_series) if phi_grid else []
    return ComparisonResult(
        methods=names,
        snapshot_errors=snapshot_errors,
        mean_errors=mean_errors,
        converged=converged,
        temporal=temporal,
        groups=groups,
        t_star=window,
        phi_points=phi_points,
    )
