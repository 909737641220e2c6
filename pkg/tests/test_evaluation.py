import math

import numpy as np
import pytest

from errors import InvalidInputError
from estimators import ItgOptions, itg_estimate
from evaluation import (
    DEFAULT_FLOW_GRID,
    compare_methods,
    eligible_links,
    group_by_flow,
    missing_link_sweep,
    per_pair_temporal_error,
    phi_scan,
    relative_total_error,
)
from network_model import LinkKind, TrafficVector
from synthetic_traffic import SyntheticSpec, generate_synthetic, random_topology

FAST_ITG = ItgOptions(outer_tol=1e-9, max_outer_iters=60, inner_tol=1e-9)


class TestRelativeTotalError:
    def test_perfect(self):
        assert relative_total_error([1.0, 2.0], [1.0, 2.0], exclude_self=False) == 0.0

    def test_total_miss(self):
        assert relative_total_error([0.0, 0.0], [1.0, 2.0], exclude_self=False) == 1.0

    def test_arithmetic(self):
        assert relative_total_error([1.0, 3.0], [2.0, 2.0], exclude_self=False) == 0.5

    def test_self_pairs_excluded(self, pair_index):
        truth = TrafficVector([5.0, 2.0, 2.0, 5.0], pair_index)
        estimate = TrafficVector([0.0, 1.0, 3.0, 0.0], pair_index)
        assert relative_total_error(estimate, truth) == 0.5
        assert relative_total_error(estimate, truth, exclude_self=False) == pytest.approx(12 / 14)

    def test_arrays_need_an_index_to_exclude_self(self, pair_index):
        truth, estimate = np.array([5.0, 2.0, 2.0, 5.0]), np.array([0.0, 1.0, 3.0, 0.0])
        with pytest.raises(InvalidInputError):
            relative_total_error(estimate, truth, exclude_self=True)
        assert relative_total_error(estimate, truth, exclude_self=True, index=pair_index) == 0.5

    def test_scale_invariant(self):
        x, x_hat = np.array([1.0, 4.0, 2.0]), np.array([2.0, 3.0, 2.5])
        base = relative_total_error(x_hat, x, exclude_self=False)
        assert relative_total_error(7 * x_hat, 7 * x, exclude_self=False) == pytest.approx(base)

    def test_zero_denominator(self, pair_index):
        truth = TrafficVector([5.0, 0.0, 0.0, 5.0], pair_index)
        with pytest.raises(InvalidInputError):
            relative_total_error(truth, truth)


class TestTemporalError:
    def test_constant_perfect_series(self):
        series = [np.array([1.0, 2.0])] * 4
        errors = per_pair_temporal_error(series, series, t_star=4)
        np.testing.assert_array_equal(errors.errors, [0.0, 0.0])

    def test_single_snapshot(self):
        errors = per_pair_temporal_error([np.array([2.0, 1.0])], [np.array([4.0, 2.0])], t_star=1)
        np.testing.assert_allclose(errors.errors, [0.5, 0.5])

    def test_two_step_arithmetic(self):
        errors = per_pair_temporal_error([np.array([2.0]), np.array([2.0])], [np.array([1.0]), np.array([3.0])], 2)
        assert errors.errors[0] == 0.5

    def test_zero_flow_pairs_flagged(self, pair_index):
        truth = [TrafficVector([1.0, 0.0, 2.0, 3.0], pair_index)] * 2
        errors = per_pair_temporal_error(truth, truth, t_star=2)
        assert errors.zero_flow == (1,)
        assert math.isnan(errors.errors[1])
        assert ("a", "b") not in errors.as_mapping()
        assert errors.as_mapping()[("b", "a")] == 0.0

    def test_window_longer_than_series(self):
        with pytest.raises(InvalidInputError):
            per_pair_temporal_error([np.ones(2)], [np.ones(2)], t_star=72)

    def test_scale_invariant(self):
        truth = [np.array([1.0, 3.0]), np.array([2.0, 1.0])]
        estimate = [np.array([1.5, 2.0]), np.array([2.5, 0.5])]
        base = per_pair_temporal_error(estimate, truth, 2).errors
        scaled = per_pair_temporal_error([3 * e for e in estimate], [3 * t for t in truth], 2).errors
        np.testing.assert_allclose(scaled, base)


class TestGroupByFlow:
    def test_default_grid_shape(self):
        groups = group_by_flow(np.zeros(3), np.array([0.1, 1.0, 8.0]) * 1e10, DEFAULT_FLOW_GRID, unit=1e10)
        assert len(groups) == len(DEFAULT_FLOW_GRID)
        assert groups[0].lower == 0 and groups[0].upper == 0.25
        assert groups[-1].lower == 7 and math.isinf(groups[-1].upper)
        assert [g.count for g in groups if g.count] == [1, 1, 1]

    def test_single_bin(self):
        groups = group_by_flow([0.2, 0.4, 0.6], [1.1, 1.2, 1.3], grid=[1.0, 2.0])
        assert groups[0].count == 3
        assert groups[0].mean_error == pytest.approx(0.4)
        assert groups[1].count == 0 and math.isnan(groups[1].mean_error)

    def test_boundary_goes_to_upper_bin(self):
        groups = group_by_flow([0.1, 0.9], [0.25, 0.2499], grid=DEFAULT_FLOW_GRID)
        assert groups[0].count == 1 and groups[0].mean_error == 0.9
        assert groups[1].count == 1 and groups[1].mean_error == 0.1

    def test_nan_and_below_grid_ungrouped(self):
        groups = group_by_flow([float("nan"), 0.3, 0.5], [0.0, -1.0, 0.5], grid=[0.0, 1.0])
        assert sum(g.count for g in groups) == 1

    def test_grid_must_increase(self):
        with pytest.raises(InvalidInputError):
            group_by_flow([0.1], [1.0], grid=[0.0, 1.0, 1.0])

    @pytest.mark.slow
    def test_error_decreases_with_flow_level(self, abilene):
        spec = SyntheticSpec(topology=abilene, steps=4, delta=0.3, profile_sigma=1.2, seed=5)
        series = generate_synthetic(spec)
        estimates = [itg_estimate(abilene.routing, y, FAST_ITG).x_hat for y in series.loads]
        temporal = per_pair_temporal_error(estimates, series.truth, t_star=4)
        keep = ~abilene.index.self_pairs()
        order = np.argsort(temporal.totals[keep])
        light, heavy = order[: order.size // 3], order[-(order.size // 3):]
        errors = temporal.errors[keep]
        assert errors[heavy].mean() < errors[light].mean()


class TestMissingLinkSweep:
    @pytest.fixture
    def backbone_series(self):
        topology = random_topology(4, np.random.default_rng(21), extra_edges=2)
        series = generate_synthetic(SyntheticSpec(topology=topology, steps=2, delta=0.2, seed=3))
        return topology, series

    def test_k_zero_matches_direct_run(self, backbone_series):
        topology, series = backbone_series
        points = missing_link_sweep(topology.routing, series.loads, series.truth, k_max=0, reps=3, seed=1,
                                    options=FAST_ITG)
        direct = np.mean([
            relative_total_error(itg_estimate(topology.routing, y, FAST_ITG).x_hat, x)
            for y, x in zip(series.loads, series.truth)
        ])
        assert len(points) == 1
        assert points[0].cell_errors == (points[0].mean_error,)
        assert points[0].mean_error == direct

    def test_reproducible_and_worker_independent(self, backbone_series):
        topology, series = backbone_series
        kwargs = dict(k_max=2, reps=3, seed=42, options=FAST_ITG)
        serial = missing_link_sweep(topology.routing, series.loads, series.truth, workers=1, **kwargs)
        threaded = missing_link_sweep(topology.routing, series.loads, series.truth, workers=3, **kwargs)
        assert serial == threaded
        assert [len(p.cell_errors) for p in serial] == [1, 3, 3]
        assert all(len(pattern) == 2 for pattern in serial[2].patterns)

    def test_only_edge_links_are_masked(self, backbone_series):
        topology, series = backbone_series
        points = missing_link_sweep(topology.routing, series.loads, series.truth, k_max=1, reps=4, seed=0,
                                    options=FAST_ITG)
        kinds = dict(zip(topology.routing.link_ids, topology.routing.link_kinds))
        for pattern in points[1].patterns:
            assert all(kinds[link] is LinkKind.EDGE for link in pattern)

    def test_progress_callback(self, backbone_series):
        topology, series = backbone_series
        calls = []
        missing_link_sweep(topology.routing, series.loads[0], series.truth[0], k_max=1, reps=2, seed=0,
                           options=FAST_ITG, progress_callback=lambda done, total: calls.append((done, total)))
        assert calls == [(1, 3), (2, 3), (3, 3)]

    def test_k_max_too_large(self, backbone_series):
        topology, series = backbone_series
        n_edge = eligible_links(topology.routing, series.loads).size
        assert n_edge == 8
        with pytest.raises(InvalidInputError):
            missing_link_sweep(topology.routing, series.loads, series.truth, k_max=n_edge)


class TestCompareAndPhiScan:
    def test_three_methods(self, star):
        series = generate_synthetic(SyntheticSpec(topology=star, steps=3, delta=0.3, seed=2))
        result = compare_methods(star.routing, series.loads, series.truth, methods=("itg", "stg", "ertg"),
                                 t_star=72)
        assert result.methods == ("itg", "stg", "ertg")
        assert all(len(result.snapshot_errors[m]) == 3 for m in result.methods)
        assert result.t_star == 3
        assert set(result.groups) == {"itg", "stg", "ertg"}

    def test_single_snapshot_single_method(self, star, star_truth, star_loads):
        result = compare_methods(star.routing, star_loads, star_truth, methods=["sg"])
        assert result.snapshot_errors == {"sg": [0.0]}
        assert result.all_converged

    def test_aliases_give_identical_columns(self, star):
        series = generate_synthetic(SyntheticSpec(topology=star, steps=2, delta=0.5, seed=9))
        result = compare_methods(star.routing, series.loads, series.truth, methods=["stg", "tomogravity"])
        assert result.snapshot_errors["stg"] == result.snapshot_errors["tomogravity"]

    def test_phi_scan(self, star):
        series = generate_synthetic(SyntheticSpec(topology=star, steps=2, delta=0.4, seed=4))
        points = phi_scan(star.routing, series.loads, None, [1e-4, 1e-3, 1e-1], series.truth)
        assert [p.phi for p in points] == [1e-4, 1e-3, 1e-1]
        assert all(p.mean_error >= 0 for p in points)

    def test_unknown_method(self, star, star_truth, star_loads):
        with pytest.raises(InvalidInputError):
            compare_methods(star.routing, star_loads, star_truth, methods=["gtg"])
