import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import rel_entr

from errors import InconsistentTotalsError, InvalidInputError, MissingEdgeLoadError
from gravity import (
    NodeTotals,
    ProbabilityVector,
    kl_divergence,
    node_totals,
    project_to_gravity,
    project_to_quasi_gravity,
    simple_gravity,
)
from network_model import LinkLoads, SdIndex


@pytest.fixture
def two_by_two():
    return SdIndex(("s1", "s2"), ("d1", "d2"))


class TestSimpleGravity:
    def test_star_totals(self, two_by_two):
        x = simple_gravity(NodeTotals(inbound=[3.0, 1.0], outbound=[2.0, 2.0], index=two_by_two))
        np.testing.assert_allclose(x.as_matrix(), [[1.5, 1.5], [0.5, 0.5]])

    def test_single_active_source(self):
        index = SdIndex(("a", "b", "c"), ("x", "y"))
        x = simple_gravity(NodeTotals(inbound=[5.0, 0.0, 0.0], outbound=[2.0, 3.0], index=index))
        assert np.all(x.as_matrix()[1:] == 0.0)
        np.testing.assert_allclose(x.as_matrix()[0], [2.0, 3.0])

    def test_uniform_totals(self):
        n = 3
        index = SdIndex(tuple("abc"), tuple("abc"))
        x = simple_gravity(NodeTotals(inbound=[4.0] * n, outbound=[4.0] * n, index=index))
        np.testing.assert_allclose(x.values, 12.0 / n ** 2)

    def test_zero_total(self, two_by_two):
        with pytest.raises(InvalidInputError):
            simple_gravity(NodeTotals(inbound=[0.0, 0.0], outbound=[0.0, 0.0], index=two_by_two))

    def test_inconsistent_totals(self, two_by_two):
        with pytest.raises(InconsistentTotalsError):
            NodeTotals(inbound=[3.0, 1.0], outbound=[2.0, 3.0], index=two_by_two)


class TestNodeTotals:
    def test_star(self, star, star_loads):
        totals = node_totals(star.routing, star_loads)
        np.testing.assert_array_equal(totals.inbound, [3.0, 1.0])
        np.testing.assert_array_equal(totals.outbound, [2.0, 2.0])

    def test_unobserved_edge_link(self, star, star_loads):
        masked = star_loads.masked([True, False, True, True])
        with pytest.raises(MissingEdgeLoadError, match="s2>hub"):
            node_totals(star.routing, masked)

    def test_self_links_count_both_sides(self, small_backbone):
        routing = small_backbone.routing
        x = np.random.default_rng(3).uniform(1.0, 2.0, routing.column_count)
        loads = LinkLoads.fully_observed(routing.entries @ x)
        totals = node_totals(routing, loads)
        matrix = small_backbone.index.to_matrix(x)
        np.testing.assert_allclose(totals.inbound, matrix.sum(axis=1))
        np.testing.assert_allclose(totals.outbound, matrix.sum(axis=0))


class TestKlDivergence:
    def test_identical(self):
        assert kl_divergence([0.5, 0.5], [0.5, 0.5]) == 0.0

    def test_point_mass_against_uniform(self):
        assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2))

    def test_support_violation(self):
        assert kl_divergence([0.5, 0.5], [1.0, 0.0]) == math.inf

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0.01, 10.0), min_size=2, max_size=8), st.integers(0, 2 ** 31))
    def test_nonnegative(self, weights, seed):
        f = np.asarray(weights) / np.sum(weights)
        g = np.random.default_rng(seed).dirichlet(np.ones(len(weights)))
        assert kl_divergence(f, g) >= 0.0


class TestProjectToGravity:
    def test_rank_one_is_fixed(self, two_by_two):
        p, q = np.array([0.7, 0.3]), np.array([0.25, 0.75])
        factors = project_to_gravity(np.outer(p, q).ravel(), two_by_two)
        np.testing.assert_allclose(factors.p, p)
        np.testing.assert_allclose(factors.q, q)

    def test_diagonal(self, two_by_two):
        factors = project_to_gravity([0.5, 0.0, 0.0, 0.5], two_by_two)
        np.testing.assert_allclose(factors.as_matrix(), 0.25)

    def test_projection_minimizes_divergence(self, two_by_two):
        rng = np.random.default_rng(11)
        f = rng.dirichlet(np.ones(4))
        g = project_to_gravity(f, two_by_two).as_probability()
        p = rng.dirichlet(np.ones(2), size=10_000)
        q = rng.dirichlet(np.ones(2), size=10_000)
        others = (p[:, :, None] * q[:, None, :]).reshape(10_000, 4)
        divergences = rel_entr(f, others).sum(axis=1)
        assert kl_divergence(f, g) <= divergences.min() + 1e-12


class TestProjectToQuasiGravity:
    def test_keeps_self_pairs(self, pair_index):
        f = ProbabilityVector([0.4, 0.1, 0.2, 0.3])
        g = project_to_quasi_gravity(f, pair_index)
        assert g.values[0] == pytest.approx(0.4)
        assert g.values[3] == pytest.approx(0.3)
        np.testing.assert_allclose(g.values.sum(), 1.0)

    def test_matches_off_diagonal_marginals(self):
        index = SdIndex(tuple("abc"), tuple("abc"))
        f = np.random.default_rng(5).dirichlet(np.ones(9))
        g = project_to_quasi_gravity(f, index)
        off = ~index.to_matrix(index.self_pairs().astype(float)).astype(bool)
        fm, gm = index.to_matrix(f) * off, index.to_matrix(g.values) * off
        np.testing.assert_allclose(gm.sum(axis=1), fm.sum(axis=1), atol=1e-10)
        np.testing.assert_allclose(gm.sum(axis=0), fm.sum(axis=0), atol=1e-10)
