"""Instance builders shared by the test modules"""

import numpy as np

from network_model import LinkLoads, RoutingMatrix

STAR_TRUTH = np.array([1.5, 1.5, 0.5, 0.5])
STAR_LOADS = np.array([3.0, 1.0, 2.0, 2.0])


def flat_routing(entries, observed=None) -> RoutingMatrix:
    """Routing matrix over a single-source index (no self pairs)"""
    return RoutingMatrix.from_array(entries, observed=observed)


def feasible_instance(rng: np.random.Generator, n_links: int, n_pairs: int):
    """Random 0/1 routing with nonzero rows and columns, plus loads from a positive x"""
    while True:
        entries = (rng.random((n_links, n_pairs)) < 0.5).astype(float)
        if entries.any(axis=0).all() and entries.any(axis=1).all():
            break
    x = rng.uniform(0.2, 2.0, size=n_pairs)
    return flat_routing(entries), LinkLoads.fully_observed(entries @ x), x
