import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

import estimators
from errors import InconsistentSystemError, InfeasibleError, InvalidInputError, NoObservationsError
from estimators import (
    INIT_GRAVITY,
    ItgOptions,
    entropy_regularized_tomogravity,
    ertg_objective,
    itg_estimate,
    simple_gravity_estimate,
    simple_tomogravity,
)
from gravity import ProbabilityVector
from helpers import STAR_TRUTH, feasible_instance, flat_routing
from network_model import LinkKind, LinkLoads, TrafficVector, forward
from synthetic_traffic import SyntheticSpec, generate_synthetic, random_topology


class TestItg:
    def test_invertible_routing_recovers_truth(self):
        x = np.array([1.0, 4.0, 2.5])
        report = itg_estimate(flat_routing(np.eye(3)), LinkLoads.fully_observed(x))
        np.testing.assert_allclose(report.x_hat.values, x, rtol=1e-8)
        assert report.n_hat == pytest.approx(x.sum())

    def test_star_rank_one_recovery(self, star, star_loads):
        report = itg_estimate(star.routing, star_loads)
        assert report.converged
        np.testing.assert_allclose(report.x_hat.values, STAR_TRUTH, atol=1e-6)
        assert report.outer_iters <= 5

    def test_single_total_link_stays_uniform(self):
        report = itg_estimate(flat_routing([[1, 1, 1, 1]]), LinkLoads.fully_observed([8.0]))
        np.testing.assert_allclose(report.x_hat.values, 2.0)
        assert report.outer_iters <= 2

    def test_zero_load_pins_pairs(self):
        routing = flat_routing([[1, 0, 0], [0, 1, 1], [1, 1, 1]])
        report = itg_estimate(routing, LinkLoads.fully_observed([0.0, 4.0, 4.0]))
        assert report.forced_zero == frozenset({0})
        assert report.x_hat.values[0] == 0.0
        np.testing.assert_allclose(report.x_hat.values[1:].sum(), 4.0)

    def test_all_zero_observations(self):
        with pytest.raises(NoObservationsError):
            itg_estimate(flat_routing(np.eye(2)), LinkLoads.fully_observed([0.0, 0.0]))

    def test_infeasible_proportions(self):
        with pytest.raises(InfeasibleError):
            itg_estimate(flat_routing([[1, 1], [1, 1]]), LinkLoads.fully_observed([1.0, 2.0]))

    def test_unobserved_links_are_ignored(self, star, star_loads):
        masked = star_loads.masked([True, True, True, False])
        report = itg_estimate(star.routing, masked)
        np.testing.assert_allclose(report.x_hat.values, STAR_TRUTH, atol=1e-6)

    def test_monotone_trajectory_on_random_backbones(self):
        rng = np.random.default_rng(99)
        options = ItgOptions(outer_tol=1e-12, max_outer_iters=25, inner_tol=1e-10)
        for _ in range(100):
            topology = random_topology(int(rng.integers(2, 5)), rng)
            routing = topology.routing
            x = rng.lognormal(0.0, 1.0, routing.column_count)
            observed = rng.random(routing.link_count) > 0.3
            observed[routing.kind_mask(LinkKind.SELF)] = True
            loads = LinkLoads(values=routing.entries @ x, observed=observed)
            report = itg_estimate(routing.with_observed(observed), loads, options)
            assert np.all(np.diff(report.kl_trajectory) <= 1e-12)

    def test_constraint_fidelity_and_self_pairs(self, small_backbone):
        routing = small_backbone.routing
        rng = np.random.default_rng(4)
        x = rng.lognormal(0.0, 1.0, routing.column_count)
        loads = LinkLoads.fully_observed(routing.entries @ x)
        report = itg_estimate(routing, loads, ItgOptions(inner_tol=1e-11))
        fitted = routing.entries @ report.x_hat.values
        assert np.max(np.abs(fitted - loads.values) / loads.values) <= 1e-6
        for i in np.flatnonzero(routing.kind_mask(LinkKind.SELF)):
            j = int(routing.row_support[i][0])
            assert report.x_hat.values[j] == loads.values[i]

    @settings(max_examples=15, deadline=None)
    @given(st.floats(0.01, 1e6))
    def test_scale_equivariance(self, alpha):
        rng = np.random.default_rng(12)
        routing, loads, _ = feasible_instance(rng, 3, 5)
        base = itg_estimate(routing, loads).x_hat.values
        scaled = itg_estimate(routing, loads.scaled(alpha)).x_hat.values
        np.testing.assert_allclose(scaled, alpha * base, rtol=1e-6, atol=1e-9 * alpha)

    def test_gravity_init_single_iteration(self, star, star_loads):
        report = itg_estimate(star.routing, star_loads, ItgOptions(init=INIT_GRAVITY, max_outer_iters=1))
        assert report.outer_iters == 1
        np.testing.assert_allclose(report.x_hat.values, STAR_TRUTH, atol=1e-8)

    def test_multi_start_is_reproducible(self, small_backbone):
        routing = small_backbone.routing
        x = np.random.default_rng(5).lognormal(0.0, 1.0, routing.column_count)
        observed = ~routing.kind_mask(LinkKind.INNER)
        loads = LinkLoads(values=routing.entries @ x, observed=observed)
        options = ItgOptions(starts=3, seed=17, max_outer_iters=40)
        first = itg_estimate(routing.with_observed(observed), loads, options)
        second = itg_estimate(routing.with_observed(observed), loads, options)
        assert len(first.start_divergences) == 3
        assert first.best_start == second.best_start
        np.testing.assert_array_equal(first.x_hat.values, second.x_hat.values)
        assert first.kl_trajectory[-1] == min(first.start_divergences)

    def test_multi_start_default_seed_is_fixed(self, small_backbone):
        routing = small_backbone.routing
        x = np.random.default_rng(5).lognormal(0.0, 1.0, routing.column_count)
        observed = ~routing.kind_mask(LinkKind.INNER)
        loads = LinkLoads(values=routing.entries @ x, observed=observed)
        options = ItgOptions(starts=3, max_outer_iters=40)
        assert options.seed == 0
        first = itg_estimate(routing.with_observed(observed), loads, options)
        second = itg_estimate(routing.with_observed(observed), loads, options)
        assert first.start_divergences == second.start_divergences
        np.testing.assert_array_equal(first.x_hat.values, second.x_hat.values)

    def test_converged_run_is_not_stalled(self, star, star_loads):
        report = itg_estimate(star.routing, star_loads)
        assert report.converged
        assert not report.stalled

    def test_rising_divergence_is_a_stall(self, star, star_loads, monkeypatch):
        real_project = estimators.krupp_project
        calls = []

        def worse_after_first(*args, **kwargs):
            result = real_project(*args, **kwargs)
            calls.append(result)
            if len(calls) == 1:
                return result
            return dataclasses.replace(result, f_new=ProbabilityVector(np.array([1.0, 0.0, 0.0, 0.0])))

        monkeypatch.setattr(estimators, "krupp_project", worse_after_first)
        report = itg_estimate(star.routing, star_loads)
        assert report.stalled
        assert not report.converged
        assert report.outer_iters == 2
        # the first feasible iterate is kept
        np.testing.assert_allclose(forward(star.routing, report.x_hat).values, star_loads.values, rtol=1e-6)

    def test_gravity_exclude_self(self, small_backbone):
        routing = small_backbone.routing
        x = np.random.default_rng(6).lognormal(0.0, 1.0, routing.column_count)
        loads = LinkLoads.fully_observed(routing.entries @ x)
        report = itg_estimate(routing, loads, ItgOptions(gravity_exclude_self=True, max_outer_iters=50))
        fitted = routing.entries @ report.x_hat.values
        assert np.max(np.abs(fitted - loads.values) / loads.values) <= 1e-6

    def test_delta_zero_synthetic_recovery(self, star):
        series = generate_synthetic(SyntheticSpec(topology=star, steps=3, delta=0.0, seed=1))
        for truth, loads in zip(series.truth, series.loads):
            report = itg_estimate(star.routing, loads)
            error = np.abs(report.x_hat.values - truth.values).sum() / truth.total
            assert error <= 1e-4

    def test_invalid_options(self):
        with pytest.raises(InvalidInputError):
            ItgOptions(outer_tol=0.0)
        with pytest.raises(InvalidInputError):
            ItgOptions(init="random")
        with pytest.raises(InvalidInputError):
            ItgOptions(seed=-1)


class TestSimpleTomogravity:
    def test_feasible_prior_unchanged(self):
        routing = flat_routing([[1, 1, 0], [0, 1, 1]])
        prior = np.array([1.0, 2.0, 3.0])
        estimate = simple_tomogravity(routing, LinkLoads.fully_observed(routing.entries @ prior), prior)
        np.testing.assert_allclose(estimate.values, prior, atol=1e-12)

    def test_symmetric_split(self):
        estimate = simple_tomogravity(flat_routing([[1, 1]]), LinkLoads.fully_observed([4.0]), np.array([1.0, 1.0]))
        np.testing.assert_allclose(estimate.values, [2.0, 2.0], atol=1e-12)

    def test_hand_derived_example(self):
        routing = flat_routing([[1, 1, 0], [0, 1, 1]])
        estimate = simple_tomogravity(routing, LinkLoads.fully_observed([3.0, 3.0]), np.array([2.0, 0.0, 2.0]))
        np.testing.assert_allclose(estimate.values, [5 / 3, 4 / 3, 5 / 3], atol=1e-10)

    def test_projection_optimality(self):
        rng = np.random.default_rng(31)
        for _ in range(5):
            routing, loads, x = feasible_instance(rng, 3, 6)
            prior = rng.uniform(0.0, 3.0, 6)
            estimate = simple_tomogravity(routing, loads, prior)
            np.testing.assert_allclose(routing.entries @ estimate.values, loads.values, atol=1e-9)
            best = np.linalg.norm(estimate.values - prior)
            _, _, vt = np.linalg.svd(routing.entries)
            rank = np.linalg.matrix_rank(routing.entries)
            null = vt[rank:]
            for _ in range(1000):
                feasible = x + null.T @ rng.normal(0.0, 2.0, null.shape[0])
                assert best <= np.linalg.norm(feasible - prior) + 1e-10

    def test_negative_components_reported_and_clamped(self):
        routing = flat_routing([[1, 1]])
        loads = LinkLoads.fully_observed([1.0])
        estimate = simple_tomogravity(routing, loads, np.array([5.0, 0.0]))
        assert estimate.negative_pairs == (1,)
        np.testing.assert_allclose(estimate.values, [3.0, -2.0])
        clamped = simple_tomogravity(routing, loads, np.array([5.0, 0.0]), clamp=True)
        np.testing.assert_allclose(clamped.values, [3.0, 0.0])

    def test_inconsistent_system(self):
        with pytest.raises(InconsistentSystemError) as excinfo:
            simple_tomogravity(flat_routing([[1, 1], [1, 1]]), LinkLoads.fully_observed([1.0, 2.0]), np.ones(2))
        assert excinfo.value.residual > 0


class TestEntropyRegularized:
    def test_one_dimensional_stationarity(self):
        estimate = entropy_regularized_tomogravity(
            flat_routing([[1]]), LinkLoads.fully_observed([2.0]), np.array([1.0]), phi=1.0
        )
        root = brentq(lambda x: 2 * (x - 2) + np.log(x), 0.5, 2.0, xtol=1e-14)
        assert estimate.values[0] == pytest.approx(root, abs=1e-4)

    def test_large_phi_returns_feasible_prior(self):
        routing = flat_routing([[1, 1, 0], [0, 1, 1]])
        prior = np.array([1.0, 2.0, 3.0])
        loads = LinkLoads.fully_observed(routing.entries @ prior)
        estimate = entropy_regularized_tomogravity(routing, loads, prior, phi=1e6)
        np.testing.assert_allclose(estimate.values, prior, rtol=1e-5)

    def test_objective_beats_prior_and_clamped_stg(self):
        rng = np.random.default_rng(41)
        for _ in range(10):
            routing, loads, _ = feasible_instance(rng, 3, 6)
            prior = rng.uniform(0.1, 3.0, 6)
            estimate = entropy_regularized_tomogravity(routing, loads, prior, phi=1e-3)
            stg = simple_tomogravity(routing, loads, prior, clamp=True)
            a, y = routing.entries, loads.values
            assert estimate.objective <= ertg_objective(a, y, prior, prior, 1e-3) + 1e-12
            assert estimate.objective <= ertg_objective(a, y, stg.values, prior, 1e-3) + 1e-12

    def test_support_stays_inside_prior(self):
        routing = flat_routing([[1, 1, 1]])
        estimate = entropy_regularized_tomogravity(routing, LinkLoads.fully_observed([6.0]), np.array([1.0, 0.0, 1.0]))
        assert estimate.values[1] == 0.0

    def test_invalid_phi(self):
        with pytest.raises(InvalidInputError):
            entropy_regularized_tomogravity(flat_routing([[1]]), LinkLoads.fully_observed([1.0]), np.ones(1), phi=0.0)

    def test_zero_prior(self):
        with pytest.raises(InvalidInputError):
            entropy_regularized_tomogravity(flat_routing([[1]]), LinkLoads.fully_observed([1.0]), np.zeros(1))


class TestSimpleGravityEstimate:
    def test_star(self, star, star_loads):
        estimate = simple_gravity_estimate(star.routing, star_loads)
        np.testing.assert_allclose(estimate.values, STAR_TRUTH)
        assert isinstance(estimate.to_traffic(star.index), TrafficVector)

    def test_forward_of_estimate_matches_edge_loads(self, star, star_loads):
        estimate = simple_gravity_estimate(star.routing, star_loads)
        np.testing.assert_allclose(forward(star.routing, estimate.values).values, star_loads.values)
