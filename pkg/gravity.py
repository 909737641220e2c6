#!/usr/bin/env python3
"""
Gravity Model
Simple gravity solution, KL divergence and the KL projections onto the
gravity space of rank-1 probability matrices.
"""

import logging
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.special import rel_entr

from errors import (
    DimensionMismatchError,
    InconsistentTotalsError,
    InvalidInputError,
    MissingEdgeLoadError,
)
from network_model import LinkKind, LinkLoads, RoutingMatrix, SdIndex, TrafficVector

logger = logging.getLogger(__name__)

PROBABILITY_TOLERANCE = 1e-12

# K(f, g) when f puts mass where g has none
INFINITE_DIVERGENCE = math.inf

ArrayLike = Union[np.ndarray, Sequence[float]]


@dataclass(frozen=True, eq=False)
class ProbabilityVector:
    """Nonnegative vector summing to one"""
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise DimensionMismatchError("probability vector must be one-dimensional")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise InvalidInputError("probability vector must be finite and nonnegative")
        if abs(values.sum() - 1.0) > PROBABILITY_TOLERANCE * max(1, values.size):
            raise InvalidInputError(f"probability vector sums to {values.sum():.15g}, not 1")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def normalized(cls, values: ArrayLike) -> "ProbabilityVector":
        values = np.asarray(values, dtype=float)
        total = values.sum()
        if not total > 0:
            raise InvalidInputError("cannot normalize a vector with zero mass")
        return cls(values / total)

    @classmethod
    def uniform(cls, size: int) -> "ProbabilityVector":
        return cls(np.full(size, 1.0 / size))

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True, eq=False)
class GravityFactors:
    """Source weights p and destination weights q; g_sd = p_s q_d"""
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        for name in ("p", "q"):
            weights = np.asarray(getattr(self, name), dtype=float)
            if weights.ndim != 1 or np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
                raise InvalidInputError(f"gravity weights {name} must be a probability vector")
            weights = weights.copy()
            weights.setflags(write=False)
            object.__setattr__(self, name, weights)

    def as_matrix(self) -> np.ndarray:
        return np.outer(self.p, self.q)

    def as_probability(self) -> ProbabilityVector:
        # re-normalize away the rounding left in p and q
        return ProbabilityVector.normalized(self.as_matrix().reshape(-1))


@dataclass(frozen=True, eq=False)
class NodeTotals:
    """Total inbound traffic per source and outbound traffic per destination"""
    inbound: np.ndarray
    outbound: np.ndarray
    index: SdIndex
    rtol: float = 1e-9

    def __post_init__(self):
        inbound = np.asarray(self.inbound, dtype=float)
        outbound = np.asarray(self.outbound, dtype=float)
        if inbound.shape != (len(self.index.sources),) or outbound.shape != (len(self.index.destinations),):
            raise DimensionMismatchError("node totals do not match the SD index")
        if np.any(inbound < 0) or np.any(outbound < 0):
            raise InvalidInputError("node totals must be nonnegative")
        total_in, total_out = inbound.sum(), outbound.sum()
        if abs(total_in - total_out) > self.rtol * max(total_in, total_out):
            raise InconsistentTotalsError(
                f"inbound total {total_in:.6g} differs from outbound total {total_out:.6g}"
            )
        object.__setattr__(self, "inbound", inbound)
        object.__setattr__(self, "outbound", outbound)

    @property
    def total(self) -> float:
        return float(self.inbound.sum())


def _as_array(f) -> np.ndarray:
    return f.values if isinstance(f, ProbabilityVector) else np.asarray(f, dtype=float)


def node_totals(routing: RoutingMatrix, loads: LinkLoads, include_self: bool = True) -> NodeTotals:
    """
    Sum observed edge-link loads per node.

    Inbound edge links start at their source node, outbound edge links end at
    their destination node. With ``include_self`` the self link of a node is
    counted on both sides.

    Raises:
        MissingEdgeLoadError: a node has no edge link, or one of its edge links is unobserved
    """
    if loads.values.shape != (routing.link_count,):
        raise DimensionMismatchError("loads do not match routing rows")
    index = routing.index
    observed = loads.observed & routing.observed

    def collect(node: str, side: int) -> float:
        total = 0.0
        found = False
        for i, (kind, ends) in enumerate(zip(routing.link_kinds, routing.link_ends)):
            is_edge = kind is LinkKind.EDGE and ends[side] == node
            is_self = include_self and kind is LinkKind.SELF and ends[0] == node
            if not (is_edge or is_self):
                continue
            if not observed[i]:
                raise MissingEdgeLoadError(
                    f"node totals need the load of link '{routing.link_ids[i]}', which is not observed"
                )
            found = found or is_edge
            total += loads.values[i]
        if not found:
            direction = "inbound" if side == 0 else "outbound"
            raise MissingEdgeLoadError(f"node '{node}' has no {direction} edge link")
        return total

    inbound = np.array([collect(s, 0) for s in index.sources])
    outbound = np.array([collect(d, 1) for d in index.destinations])
    return NodeTotals(inbound=inbound, outbound=outbound, index=index)


def simple_gravity(totals: NodeTotals) -> TrafficVector:
    """
    Simple gravity solution x_sd = N_s(in) N_d(out) / N

    Raises:
        InvalidInputError: N = 0
    """
    n_total = totals.total
    if not n_total > 0:
        raise InvalidInputError("simple gravity needs a positive total flow N")
    matrix = np.outer(totals.inbound, totals.outbound) / n_total
    return TrafficVector(totals.index.from_matrix(matrix), totals.index)


def kl_divergence(f, g) -> float:
    """
    K(f, g) = sum_j f_j log(f_j / g_j), with 0 log(0/g) = 0

    Returns INFINITE_DIVERGENCE when f_j > 0 on some g_j = 0.
    """
    f_values, g_values = _as_array(f), _as_array(g)
    if f_values.shape != g_values.shape:
        raise DimensionMismatchError(f"KL arguments have shapes {f_values.shape} and {g_values.shape}")
    terms = rel_entr(f_values, g_values)
    if np.any(np.isinf(terms)):
        return INFINITE_DIVERGENCE
    return max(float(terms.sum()), 0.0)


def project_to_gravity(f, index: SdIndex) -> GravityFactors:
    """
    KL projection of f onto the gravity space: the product of its marginals.

    A zero row (column) marginal yields p_s = 0 (q_d = 0).
    """
    matrix = index.to_matrix(_as_array(f))
    return GravityFactors(p=matrix.sum(axis=1), q=matrix.sum(axis=0))


def project_to_quasi_gravity(
    f,
    index: SdIndex,
    tol: float = 1e-13,
    max_iter: int = 5000,
) -> ProbabilityVector:
    """
    KL projection of f onto the gravity space with self pairs left free.

    Off-diagonal entries follow g_sd = p_s q_d, fitted to the off-diagonal
    marginals of f by iterative proportional fitting; g_ss = f_ss.

    Args:
        f: probability vector over the full SD index
        index: SD index (self pairs are those with s = d)
        tol: stop when every off-diagonal marginal matches within tol
        max_iter: proportional-fitting sweep cap
    """
    matrix = index.to_matrix(_as_array(f))
    diagonal = index.to_matrix(index.self_pairs().astype(float)).astype(bool)
    off = np.where(diagonal, 0.0, matrix)
    row_target, col_target = off.sum(axis=1), off.sum(axis=0)

    fitted = (~diagonal).astype(float)
    for _ in range(max_iter):
        rows = fitted.sum(axis=1)
        fitted *= np.divide(row_target, rows, out=np.zeros_like(rows), where=rows > 0)[:, None]
        cols = fitted.sum(axis=0)
        fitted *= np.divide(col_target, cols, out=np.zeros_like(cols), where=cols > 0)[None, :]
        gap = np.abs(fitted.sum(axis=1) - row_target).max()
        if gap <= tol:
            break
    else:
        logger.warning(f"Proportional fitting stopped after {max_iter} sweeps (marginal gap {gap:.3g})")

    g = np.where(diagonal, matrix, fitted)
    return ProbabilityVector.normalized(index.from_matrix(g))
