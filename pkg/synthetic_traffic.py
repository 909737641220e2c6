#!/usr/bin/env python3
"""
Synthetic Traffic
Built-in topologies (with hop-count shortest-path routes) and a seeded
generator of gravity-like traffic series with log-normal deviations:

    x_sd(t) = N_t p_s q_d eps_sd(t),   eps ~ LogNormal(0, delta^2)

renormalized to N_t, and y(t) = A x(t).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from errors import InvalidInputError
from network_model import (
    LinkKind,
    LinkLoads,
    LinkSpec,
    NodeKind,
    Topology,
    TrafficVector,
    build_topology,
    forward,
)

logger = logging.getLogger(__name__)

DEFAULT_TOTAL_FLOW = 1.2e10
DEFAULT_STEPS = 72
DIURNAL_PERIOD = 24

# Reconstructed 12-PoP backbone; the measured routing is not available.
ABILENE_LIKE_POPS: Tuple[str, ...] = (
    "ATLA", "CHIN", "DNVR", "HSTN", "IPLS", "KSCY",
    "LOSA", "NYCM", "SNVA", "STTL", "WASH", "ATLA-M5",
)
ABILENE_LIKE_ADJACENCY: Tuple[Tuple[str, str], ...] = (
    ("ATLA-M5", "ATLA"),
    ("ATLA", "HSTN"),
    ("ATLA", "IPLS"),
    ("ATLA", "WASH"),
    ("CHIN", "IPLS"),
    ("CHIN", "NYCM"),
    ("DNVR", "KSCY"),
    ("DNVR", "SNVA"),
    ("DNVR", "STTL"),
    ("HSTN", "KSCY"),
    ("HSTN", "LOSA"),
    ("IPLS", "KSCY"),
    ("LOSA", "SNVA"),
    ("NYCM", "WASH"),
    ("SNVA", "STTL"),
)


# ============================================================================
# Topologies
# ============================================================================

def pop_topology(
    pops: Sequence[str],
    adjacency: Sequence[Tuple[str, str]],
    observe_self: bool = True,
) -> Topology:
    """
    Build a PoP backbone with one edge node and one router per PoP

    Each PoP p gets edge node E_p, router R_p, an inbound edge link in_p
    (E_p -> R_p), an outbound edge link out_p (R_p -> E_p) and a self link
    self_p. Every adjacency becomes two directed inner links. The route of
    s -> d (s != d) is in_s, the hop-count shortest router path, out_d; the
    route of s -> s is self_s alone.

    Raises:
        InvalidInputError: unknown PoP in the adjacency, or a disconnected backbone
    """
    pops = tuple(pops)
    position = {p: i for i, p in enumerate(pops)}
    if len(position) != len(pops):
        raise InvalidInputError("duplicate PoP name")

    nodes: Dict[str, NodeKind] = {}
    for p in pops:
        nodes[f"E_{p}"] = NodeKind.EDGE
        nodes[f"R_{p}"] = NodeKind.INNER

    links: List[LinkSpec] = []
    inner_id: Dict[Tuple[int, int], str] = {}
    rows, cols = [], []
    for a, b in adjacency:
        if a not in position or b not in position:
            raise InvalidInputError(f"adjacency {a}-{b} names an unknown PoP")
        for u, v in ((a, b), (b, a)):
            link_id = f"{u}>{v}"
            links.append(LinkSpec(link_id, f"R_{u}", f"R_{v}", LinkKind.INNER))
            inner_id[(position[u], position[v])] = link_id
            rows.append(position[u])
            cols.append(position[v])
    for p in pops:
        links.append(LinkSpec(f"in_{p}", f"E_{p}", f"R_{p}", LinkKind.EDGE))
        links.append(LinkSpec(f"out_{p}", f"R_{p}", f"E_{p}", LinkKind.EDGE))
        links.append(LinkSpec(f"self_{p}", f"E_{p}", f"E_{p}", LinkKind.SELF, observe_self))

    graph = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(pops), len(pops)))
    dist, predecessors = shortest_path(graph, directed=True, unweighted=True, return_predecessors=True)
    if np.isinf(dist).any():
        raise InvalidInputError("backbone is not connected")

    routes: Dict[Tuple[str, str], List[str]] = {}
    for s, src in enumerate(pops):
        for d, dst in enumerate(pops):
            if s == d:
                routes[(f"E_{src}", f"E_{dst}")] = [f"self_{src}"]
                continue
            hops: List[str] = []
            node = d
            while node != s:
                prev = int(predecessors[s, node])
                hops.append(inner_id[(prev, node)])
                node = prev
            routes[(f"E_{src}", f"E_{dst}")] = [f"in_{src}", *reversed(hops), f"out_{dst}"]

    return build_topology(nodes, links, routes)


def star_topology() -> Topology:
    """Two sources and two destinations joined through one hub"""
    nodes = {
        "s1": NodeKind.EDGE,
        "s2": NodeKind.EDGE,
        "hub": NodeKind.INNER,
        "d1": NodeKind.EDGE,
        "d2": NodeKind.EDGE,
    }
    links = [
        LinkSpec("s1>hub", "s1", "hub", LinkKind.EDGE),
        LinkSpec("s2>hub", "s2", "hub", LinkKind.EDGE),
        LinkSpec("hub>d1", "hub", "d1", LinkKind.EDGE),
        LinkSpec("hub>d2", "hub", "d2", LinkKind.EDGE),
    ]
    routes = {
        (s, d): [f"{s}>hub", f"hub>{d}"]
        for s in ("s1", "s2")
        for d in ("d1", "d2")
    }
    return build_topology(nodes, links, routes)


def abilene_like_topology() -> Topology:
    """12 PoPs, 30 inner, 24 edge and 12 self links"""
    return pop_topology(ABILENE_LIKE_POPS, ABILENE_LIKE_ADJACENCY)


def random_topology(
    n_pops: int,
    rng: np.random.Generator,
    extra_edges: Optional[int] = None,
) -> Topology:
    """
    Connected random backbone: a random spanning tree plus extra adjacencies

    Args:
        n_pops: number of PoPs (2..12)
        rng: random generator
        extra_edges: adjacencies added on top of the tree (default: random, up to n_pops)
    """
    if not 2 <= n_pops <= 12:
        raise InvalidInputError("random topologies have 2 to 12 PoPs")
    pops = [f"P{i}" for i in range(n_pops)]
    order = rng.permutation(n_pops)
    adjacency = set()
    for k in range(1, n_pops):
        a, b = int(order[k]), int(order[rng.integers(0, k)])
        adjacency.add((min(a, b), max(a, b)))

    candidates = [(a, b) for a in range(n_pops) for b in range(a + 1, n_pops) if (a, b) not in adjacency]
    if extra_edges is None:
        extra_edges = int(rng.integers(0, n_pops + 1))
    extra_edges = min(extra_edges, len(candidates))
    if extra_edges:
        for k in rng.choice(len(candidates), size=extra_edges, replace=False):
            adjacency.add(candidates[int(k)])

    return pop_topology(pops, [(pops[a], pops[b]) for a, b in sorted(adjacency)])


BUILTIN_TOPOLOGIES: Dict[str, Callable[[], Topology]] = {
    "star": star_topology,
    "abilene-like": abilene_like_topology,
}


def builtin_topology(name: str) -> Topology:
    if name not in BUILTIN_TOPOLOGIES:
        raise InvalidInputError(f"unknown built-in topology '{name}' (known: {', '.join(BUILTIN_TOPOLOGIES)})")
    return BUILTIN_TOPOLOGIES[name]()


# ============================================================================
# Generator
# ============================================================================

@dataclass(frozen=True, eq=False)
class SyntheticSpec:
    """
    Parameters of a synthetic traffic series.

    ``inbound``/``outbound`` weights are normalized to the gravity factors
    p and q; when omitted they are drawn log-normally with ``profile_sigma``.
    """
    topology: Topology
    steps: int = DEFAULT_STEPS
    delta: float = 0.0
    total_flow: float = DEFAULT_TOTAL_FLOW
    inbound: Optional[Sequence[float]] = None
    outbound: Optional[Sequence[float]] = None
    profile_sigma: float = 1.0
    diurnal_amplitude: float = 0.0
    seed: Optional[int] = None

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidInputError("steps must be at least 1")
        if not (self.delta >= 0 and math.isfinite(self.delta)):
            raise InvalidInputError("delta must be finite and nonnegative")
        if not (self.total_flow > 0 and math.isfinite(self.total_flow)):
            raise InvalidInputError("total flow must be positive")
        if self.profile_sigma < 0:
            raise InvalidInputError("profile_sigma must be nonnegative")
        if not 0 <= self.diurnal_amplitude < 1:
            raise InvalidInputError("diurnal amplitude must lie in [0, 1)")
        index = self.topology.index
        for name, weights, size in (
            ("inbound", self.inbound, len(index.sources)),
            ("outbound", self.outbound, len(index.destinations)),
        ):
            if weights is None:
                continue
            w = np.asarray(weights, dtype=float)
            if w.shape != (size,) or np.any(w < 0) or not w.sum() > 0:
                raise InvalidInputError(f"{name} weights need {size} nonnegative entries with positive sum")

    def config(self) -> Dict[str, object]:
        """Plain-data echo for file headers and manifests"""
        return {
            "steps": self.steps,
            "delta": self.delta,
            "total_flow": self.total_flow,
            "profile_sigma": self.profile_sigma,
            "diurnal_amplitude": self.diurnal_amplitude,
            "seed": self.seed,
            "inbound": None if self.inbound is None else [float(v) for v in self.inbound],
            "outbound": None if self.outbound is None else [float(v) for v in self.outbound],
        }


@dataclass(frozen=True, eq=False)
class SyntheticSeries:
    truth: List[TrafficVector]
    loads: List[LinkLoads]
    p: np.ndarray
    q: np.ndarray
    totals: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _profile(weights: Optional[Sequence[float]], size: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if weights is None:
        w = rng.lognormal(mean=0.0, sigma=sigma, size=size)
    else:
        w = np.asarray(weights, dtype=float)
    return w / w.sum()


def generate_synthetic(spec: SyntheticSpec) -> SyntheticSeries:
    """
    Generate truth and load series

    delta = 0 gives exactly rank-1 snapshots N_t p q^T. Loads carry the
    topology's observation mask. Same seed, same series.
    """
    topology = spec.topology
    index = topology.index
    routing = topology.routing
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))

    p = _profile(spec.inbound, len(index.sources), spec.profile_sigma, rng)
    q = _profile(spec.outbound, len(index.destinations), spec.profile_sigma, rng)
    base = np.outer(p, q).ravel()

    steps = np.arange(spec.steps)
    totals = spec.total_flow * (1.0 + spec.diurnal_amplitude * np.sin(2.0 * np.pi * steps / DIURNAL_PERIOD))

    truth: List[TrafficVector] = []
    loads: List[LinkLoads] = []
    for n_t in totals:
        x = n_t * base
        if spec.delta > 0:
            x = x * rng.lognormal(mean=0.0, sigma=spec.delta, size=x.size)
            x *= n_t / x.sum()
        traffic = TrafficVector(x, index)
        y = forward(routing, traffic)
        truth.append(traffic)
        loads.append(LinkLoads(values=y.values, observed=routing.observed, link_ids=routing.link_ids))

    logger.info(
        f"Generated {spec.steps} snapshots over {index.pair_count} SD pairs "
        f"(delta={spec.delta}, seed={spec.seed})"
    )
    return SyntheticSeries(truth=truth, loads=loads, p=p, q=q, totals=totals)
