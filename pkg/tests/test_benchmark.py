"""
Benchmark-scale checks on the Abilene-like synthetic backbone

Run with ``pytest -m slow``.
"""

import numpy as np
import pytest

from estimators import ItgOptions
from evaluation import compare_methods, missing_link_sweep
from synthetic_traffic import SyntheticSpec, generate_synthetic

pytestmark = pytest.mark.slow

BENCH_ITG = ItgOptions(outer_tol=1e-9, max_outer_iters=100, inner_tol=1e-9)


@pytest.fixture(scope="module")
def abilene_series(abilene):
    spec = SyntheticSpec(topology=abilene, steps=48, delta=0.4, diurnal_amplitude=0.3, seed=2024)
    return generate_synthetic(spec)


def test_method_ordering(abilene, abilene_series):
    result = compare_methods(
        abilene.routing,
        abilene_series.loads,
        abilene_series.truth,
        methods=("itg", "stg", "ertg"),
        itg_options=BENCH_ITG,
        phi=1e-3,
    )
    itg, stg, ertg = (result.mean_errors[m] for m in ("itg", "stg", "ertg"))
    assert itg < stg
    assert abs(itg - ertg) <= 0.05 * ertg


def test_missing_link_trend_and_reproducibility(abilene, abilene_series):
    loads, truth = abilene_series.loads[:6], abilene_series.truth[:6]
    kwargs = dict(k_max=5, reps=3, seed=11, options=BENCH_ITG, workers=2)
    points = missing_link_sweep(abilene.routing, loads, truth, **kwargs)
    assert [p.k for p in points] == [0, 1, 2, 3, 4, 5]
    assert points[5].mean_error < 2 * points[0].mean_error
    again = missing_link_sweep(abilene.routing, loads, truth, **kwargs)
    assert [p.cell_errors for p in again] == [p.cell_errors for p in points]
    assert np.isfinite([p.mean_error for p in points]).all()
