#!/usr/bin/env python3
"""
Network Model
SD-pair index spaces, routing matrices, traffic vectors and link loads,
plus the forward map y = Ax and the observation masking used by every estimator.

Identifiers are strings at the edges of the system (files, reports) and dense
integer indices everywhere the math happens.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, FrozenSet, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from errors import (
    DegenerateProblemError,
    DimensionMismatchError,
    InfeasibleError,
    InvalidInputError,
    NoObservationsError,
)

logger = logging.getLogger(__name__)


class LinkKind(str, Enum):
    INNER = "inner"
    EDGE = "edge"
    SELF = "self"


class NodeKind(str, Enum):
    EDGE = "edge"
    INNER = "inner"


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class SdIndex:
    """
    Product set S x D of source/destination pairs.

    Pair j maps to (sources[j // |D|], destinations[j % |D|]); the same
    row-major order is used for vector <-> matrix reshapes everywhere.
    """
    sources: Tuple[str, ...]
    destinations: Tuple[str, ...]

    def __post_init__(self):
        if not self.sources or not self.destinations:
            raise InvalidInputError("SD index needs at least one source and one destination")
        if len(set(self.sources)) != len(self.sources):
            raise InvalidInputError("duplicate source identifiers")
        if len(set(self.destinations)) != len(self.destinations):
            raise InvalidInputError("duplicate destination identifiers")

    @property
    def pair_count(self) -> int:
        return len(self.sources) * len(self.destinations)

    @property
    def shape(self) -> Tuple[int, int]:
        return len(self.sources), len(self.destinations)

    def pair(self, j: int) -> Tuple[str, str]:
        if not 0 <= j < self.pair_count:
            raise IndexError(f"pair index {j} out of range for J={self.pair_count}")
        s, d = divmod(j, len(self.destinations))
        return self.sources[s], self.destinations[d]

    def position(self, source: str, destination: str) -> int:
        try:
            s = self.sources.index(source)
            d = self.destinations.index(destination)
        except ValueError:
            raise KeyError(f"({source}, {destination}) is not an SD pair of this index") from None
        return s * len(self.destinations) + d

    def pairs(self) -> Iterator[Tuple[str, str]]:
        for s in self.sources:
            for d in self.destinations:
                yield s, d

    def self_pairs(self) -> np.ndarray:
        """Boolean mask over pairs with s = d"""
        return np.array([s == d for s, d in self.pairs()], dtype=bool)

    def to_matrix(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.pair_count,):
            raise DimensionMismatchError(
                f"vector of length {values.shape} does not match J={self.pair_count}"
            )
        return values.reshape(self.shape)

    def from_matrix(self, matrix: np.ndarray) -> np.ndarray:
        matrix = np.asarray(matrix, dtype=float)
        if matrix.shape != self.shape:
            raise DimensionMismatchError(f"matrix shape {matrix.shape} != {self.shape}")
        return matrix.reshape(-1).copy()


@dataclass(frozen=True, eq=False)
class RoutingMatrix:
    """
    0/1 incidence of links over SD paths (rows = links, columns = SD pairs).

    ``columns`` maps each column back to its pair in ``index``; it is the
    identity for a full matrix and a subset after zero-load reduction.
    """
    entries: np.ndarray
    link_ids: Tuple[str, ...]
    link_kinds: Tuple[LinkKind, ...]
    observed: np.ndarray
    index: SdIndex
    link_ends: Tuple[Tuple[str, str], ...] = ()
    columns: Optional[np.ndarray] = None
    row_support: Tuple[np.ndarray, ...] = field(init=False, repr=False)

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        if entries.ndim != 2:
            raise DimensionMismatchError("routing matrix must be two-dimensional")
        n_links, n_cols = entries.shape
        if not np.all((entries == 0.0) | (entries == 1.0)):
            raise InvalidInputError("routing matrix entries must be 0 or 1")
        if len(self.link_ids) != n_links or len(self.link_kinds) != n_links:
            raise DimensionMismatchError("link metadata does not match routing matrix rows")
        observed = np.asarray(self.observed, dtype=bool)
        if observed.shape != (n_links,):
            raise DimensionMismatchError("observation mask does not match routing matrix rows")
        link_ends = tuple(self.link_ends) or tuple(("", "") for _ in range(n_links))
        if len(link_ends) != n_links:
            raise DimensionMismatchError("link endpoints do not match routing matrix rows")
        columns = np.arange(n_cols) if self.columns is None else np.asarray(self.columns, dtype=int)
        if columns.shape != (n_cols,):
            raise DimensionMismatchError("column map does not match routing matrix columns")
        if n_cols and (columns.min() < 0 or columns.max() >= self.index.pair_count):
            raise DimensionMismatchError("column map points outside the SD index")

        kinds = tuple(LinkKind(k) for k in self.link_kinds)
        self_mask = self.index.self_pairs()[columns]
        for i, kind in enumerate(kinds):
            if kind is not LinkKind.SELF:
                continue
            hits = np.flatnonzero(entries[i])
            # a self row may lose its column after zero-load reduction
            if hits.size > 1 or (hits.size == 1 and not self_mask[hits[0]]):
                raise InvalidInputError(
                    f"self link '{self.link_ids[i]}' must carry exactly one self pair"
                )

        object.__setattr__(self, "entries", _frozen(entries))
        object.__setattr__(self, "observed", _frozen(observed))
        object.__setattr__(self, "link_kinds", kinds)
        object.__setattr__(self, "link_ids", tuple(self.link_ids))
        object.__setattr__(self, "link_ends", link_ends)
        object.__setattr__(self, "columns", _frozen(columns))
        object.__setattr__(self, "row_support", tuple(_frozen(np.flatnonzero(row)) for row in entries))

    @classmethod
    def from_array(
        cls,
        entries: Sequence[Sequence[float]],
        index: Optional[SdIndex] = None,
        observed: Optional[Sequence[bool]] = None,
    ) -> "RoutingMatrix":
        """Wrap a bare 0/1 array: inner links l0..l{n-1}, all observed"""
        entries = np.atleast_2d(np.asarray(entries, dtype=float))
        n_links, n_cols = entries.shape
        if index is None:
            index = SdIndex(("src",), tuple(f"dst{j}" for j in range(n_cols)))
        if observed is None:
            observed = np.ones(n_links, dtype=bool)
        return cls(
            entries=entries,
            link_ids=tuple(f"l{i}" for i in range(n_links)),
            link_kinds=tuple(LinkKind.INNER for _ in range(n_links)),
            observed=np.asarray(observed, dtype=bool),
            index=index,
        )

    @property
    def link_count(self) -> int:
        return self.entries.shape[0]

    @property
    def column_count(self) -> int:
        return self.entries.shape[1]

    @property
    def observed_count(self) -> int:
        return int(self.observed.sum())

    def kind_mask(self, kind: LinkKind) -> np.ndarray:
        return np.array([k is kind for k in self.link_kinds], dtype=bool)

    def with_observed(self, observed: Sequence[bool]) -> "RoutingMatrix":
        return replace(self, observed=np.asarray(observed, dtype=bool), columns=self.columns)

    def select_rows(self, keep: np.ndarray) -> "RoutingMatrix":
        keep = np.asarray(keep)
        return RoutingMatrix(
            entries=self.entries[keep],
            link_ids=tuple(np.asarray(self.link_ids, dtype=object)[keep]),
            link_kinds=tuple(np.asarray(self.link_kinds, dtype=object)[keep]),
            observed=self.observed[keep],
            index=self.index,
            link_ends=tuple(tuple(e) for e in np.asarray(self.link_ends, dtype=object)[keep]),
            columns=self.columns,
        )

    def select_columns(self, keep: np.ndarray) -> "RoutingMatrix":
        keep = np.asarray(keep)
        return replace(self, entries=self.entries[:, keep], columns=self.columns[keep])

    def unrouted_pairs(self) -> List[Tuple[str, str]]:
        empty = np.flatnonzero(~self.entries.any(axis=0))
        return [self.index.pair(int(self.columns[j])) for j in empty]


@dataclass(frozen=True, eq=False)
class TrafficVector:
    """Nonnegative SD flow x over a full SD index"""
    values: np.ndarray
    index: SdIndex

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.index.pair_count,):
            raise DimensionMismatchError(
                f"traffic vector has length {values.shape}, SD index has J={self.index.pair_count}"
            )
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise InvalidInputError("traffic values must be finite and nonnegative")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def total(self) -> float:
        return float(self.values.sum())

    def as_matrix(self) -> np.ndarray:
        return self.index.to_matrix(self.values)

    def as_mapping(self) -> Dict[Tuple[str, str], float]:
        return {pair: float(v) for pair, v in zip(self.index.pairs(), self.values)}


@dataclass(frozen=True, eq=False)
class LinkLoads:
    """
    Per-link load vector y with its observation mask.

    Unobserved entries are carried as NaN and never read by the math.
    """
    values: np.ndarray
    observed: np.ndarray
    link_ids: Tuple[str, ...] = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        observed = np.asarray(self.observed, dtype=bool)
        if values.ndim != 1 or observed.shape != values.shape:
            raise DimensionMismatchError("load values and observation mask must be aligned vectors")
        if self.link_ids and len(self.link_ids) != values.size:
            raise DimensionMismatchError("link ids do not match load vector length")
        seen = values[observed]
        if not np.all(np.isfinite(seen)) or np.any(seen < 0):
            raise InvalidInputError("observed loads must be finite and nonnegative")
        values = np.where(observed, values, np.nan)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "observed", _frozen(observed))
        object.__setattr__(self, "link_ids", tuple(self.link_ids))

    @classmethod
    def fully_observed(cls, values: Sequence[float], link_ids: Sequence[str] = ()) -> "LinkLoads":
        values = np.asarray(values, dtype=float)
        return cls(values=values, observed=np.ones(values.shape, dtype=bool), link_ids=tuple(link_ids))

    @property
    def observed_count(self) -> int:
        return int(self.observed.sum())

    def masked(self, observed: Sequence[bool]) -> "LinkLoads":
        """Same loads with a narrower observation mask"""
        observed = np.asarray(observed, dtype=bool)
        if np.any(observed & ~self.observed):
            raise InvalidInputError("cannot observe a link whose load is unknown")
        return LinkLoads(values=self.values, observed=observed, link_ids=self.link_ids)

    def scaled(self, factor: float) -> "LinkLoads":
        return LinkLoads(values=self.values * factor, observed=self.observed, link_ids=self.link_ids)


@dataclass(frozen=True, eq=False)
class ZeroReduction:
    """Observed system after pinning every pair on a zero-load link to 0"""
    routing: RoutingMatrix
    loads: LinkLoads
    forced_zero: FrozenSet[int]


@dataclass(frozen=True)
class LinkSpec:
    link_id: str
    source: str
    target: str
    kind: LinkKind
    observed: bool = True


@dataclass(frozen=True, eq=False)
class Topology:
    """Nodes (with kinds) plus the routing matrix built from their routes"""
    nodes: Mapping[str, NodeKind]
    routing: RoutingMatrix

    @property
    def index(self) -> SdIndex:
        return self.routing.index


# ============================================================================
# Construction
# ============================================================================

def build_topology(
    nodes: Mapping[str, NodeKind],
    links: Sequence[LinkSpec],
    routes: Mapping[Tuple[str, str], Sequence[str]],
) -> Topology:
    """
    Assemble a Topology from node, link and route declarations

    Sources and destinations are the edge nodes that start/end a route, in
    node declaration order; the routes must cover the full product S x D.

    Raises:
        InvalidInputError: unknown ids, missing routes, unrouted pairs
    """
    node_kinds = {node: NodeKind(kind) for node, kind in nodes.items()}
    link_pos: Dict[str, int] = {}
    for i, link in enumerate(links):
        if link.link_id in link_pos:
            raise InvalidInputError(f"duplicate link id '{link.link_id}'")
        for end in (link.source, link.target):
            if end not in node_kinds:
                raise InvalidInputError(f"link '{link.link_id}' references unknown node '{end}'")
        if LinkKind(link.kind) is LinkKind.SELF and link.source != link.target:
            raise InvalidInputError(f"self link '{link.link_id}' must start and end at the same node")
        link_pos[link.link_id] = i

    route_sources = {s for s, _ in routes}
    route_targets = {d for _, d in routes}
    for node in route_sources | route_targets:
        if node not in node_kinds:
            raise InvalidInputError(f"route references unknown node '{node}'")
        if node_kinds[node] is not NodeKind.EDGE:
            raise InvalidInputError(f"route endpoint '{node}' is not an edge node")

    sources = tuple(n for n in node_kinds if n in route_sources)
    destinations = tuple(n for n in node_kinds if n in route_targets)
    index = SdIndex(sources, destinations)

    entries = np.zeros((len(links), index.pair_count))
    for (s, d), path in routes.items():
        j = index.position(s, d)
        for link_id in path:
            if link_id not in link_pos:
                raise InvalidInputError(f"route {s}->{d} uses unknown link '{link_id}'")
            entries[link_pos[link_id], j] = 1.0

    missing = [pair for pair in index.pairs() if pair not in routes]
    if missing:
        preview = ", ".join(f"{s}->{d}" for s, d in missing[:5])
        raise InvalidInputError(f"routes do not cover the product set S x D; missing {preview}")

    routing = RoutingMatrix(
        entries=entries,
        link_ids=tuple(link.link_id for link in links),
        link_kinds=tuple(LinkKind(link.kind) for link in links),
        observed=np.array([link.observed for link in links], dtype=bool),
        index=index,
        link_ends=tuple((link.source, link.target) for link in links),
    )
    unrouted = routing.unrouted_pairs()
    if unrouted:
        raise InvalidInputError(f"SD pair {unrouted[0][0]}->{unrouted[0][1]} traverses no link")

    logger.info(
        f"Built topology: {len(node_kinds)} nodes, {routing.link_count} links, "
        f"{len(sources)}x{len(destinations)} SD pairs"
    )
    return Topology(nodes=node_kinds, routing=routing)


# ============================================================================
# Operations
# ============================================================================

def forward(routing: RoutingMatrix, traffic) -> LinkLoads:
    """
    Forward map y = Ax; every link of the result is observed.

    Args:
        routing: routing matrix (L x J)
        traffic: TrafficVector or array of length J
    """
    values = traffic.values if isinstance(traffic, TrafficVector) else np.asarray(traffic, dtype=float)
    if values.shape != (routing.column_count,):
        raise DimensionMismatchError(
            f"routing matrix has {routing.column_count} columns, traffic has length {values.shape}"
        )
    return LinkLoads.fully_observed(routing.entries @ values, routing.link_ids)


def restrict(routing: RoutingMatrix, loads: LinkLoads) -> Tuple[RoutingMatrix, LinkLoads]:
    """
    Keep only the observed rows (A*, y*), in their original order

    Raises:
        DimensionMismatchError: masks disagree
        NoObservationsError: no observed row
    """
    if loads.values.shape != (routing.link_count,):
        raise DimensionMismatchError(
            f"{loads.values.size} loads for a routing matrix with {routing.link_count} links"
        )
    if not np.array_equal(routing.observed, loads.observed):
        raise DimensionMismatchError("routing and load observation masks disagree")
    keep = np.flatnonzero(routing.observed)
    if keep.size == 0:
        raise NoObservationsError("no observed links")
    sub_routing = routing.select_rows(keep)
    link_ids = tuple(np.asarray(loads.link_ids, dtype=object)[keep]) if loads.link_ids else ()
    sub_loads = LinkLoads.fully_observed(loads.values[keep], link_ids)
    return sub_routing, sub_loads


def reduce_zero_loads(routing: RoutingMatrix, loads: LinkLoads) -> ZeroReduction:
    """
    Pin every pair routed over a zero-load link to 0 and drop those columns and rows.

    The remaining loads are strictly positive.

    Raises:
        InfeasibleError: a positive-load link has no pair left to carry it
        DegenerateProblemError: every pair is forced to zero
    """
    y = np.asarray(loads.values, dtype=float)
    if y.shape != (routing.link_count,):
        raise DimensionMismatchError("loads do not match the observed routing rows")
    zero_rows = y <= 0.0
    forced_cols = routing.entries[zero_rows].any(axis=0)
    forced_zero = frozenset(int(j) for j in routing.columns[forced_cols])

    kept_rows = ~zero_rows
    reduced = routing.select_rows(np.flatnonzero(kept_rows)).select_columns(np.flatnonzero(~forced_cols))
    y_reduced = y[kept_rows]

    stranded = np.flatnonzero(~reduced.entries.any(axis=1))
    if stranded.size:
        link_id = reduced.link_ids[stranded[0]]
        raise InfeasibleError(
            f"link '{link_id}' has load {y_reduced[stranded[0]]:.6g} but every pair it carries "
            f"is forced to zero by another zero-load link"
        )
    if reduced.column_count == 0:
        raise DegenerateProblemError("every SD pair is forced to zero by zero link loads")

    if forced_zero:
        logger.debug(f"Zero loads pin {len(forced_zero)} pairs; {reduced.column_count} remain")
    link_ids = tuple(np.asarray(loads.link_ids, dtype=object)[kept_rows]) if loads.link_ids else ()
    return ZeroReduction(
        routing=reduced,
        loads=LinkLoads.fully_observed(y_reduced, link_ids),
        forced_zero=forced_zero,
    )
