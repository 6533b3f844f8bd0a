import json

import pytest

from itanet import bench
from itanet.bench import CostModel, analytic_match_cost, census_match_cost, fit_loglog, measure_scaling


def test_analytic_example():
    cm = CostModel(way=5, shot=1, queries=25, dim=64, frames=8)
    assert analytic_match_cost("explicit-dtw", cm) == 512_000
    assert analytic_match_cost("implicit", cm) == 122_880 + 64_000 == 186_880
    with pytest.raises(ValueError):
        analytic_match_cost("soft-dtw", cm)
    with pytest.raises(ValueError):
        CostModel(frames=0)


def test_doubling_frames():
    a, b = CostModel(frames=8), CostModel(frames=16)
    nk, q, c = a.supports, a.queries, a.dim
    pair = lambda cm: nk * q * c * cm.frames
    assert pair(b) == 2 * pair(a)
    assert analytic_match_cost("explicit-dtw", b) == 4 * analytic_match_cost("explicit-dtw", a)


def test_ratio_limits():
    for t in (4, 8, 16):
        # more queries alone: NK*T / (NK + T)
        cm = CostModel(frames=t, queries=10**12)
        ratio = analytic_match_cost("explicit-dtw", cm) / analytic_match_cost("implicit", cm)
        assert ratio == pytest.approx(cm.supports * t / (cm.supports + t), rel=1e-9)
        # supports and queries both growing: T
        cm = CostModel(frames=t, way=10**6, queries=10**12)
        ratio = analytic_match_cost("explicit-dtw", cm) / analytic_match_cost("implicit", cm)
        assert ratio == pytest.approx(t, rel=1e-4)


@pytest.mark.parametrize("frames", [2, 4, 8, 16])
def test_census_within_constant_factor(frames):
    cm = CostModel(way=3, shot=1, queries=4, dim=8, frames=frames)
    nk, q, c, t = cm.supports, cm.queries, cm.dim, frames
    imp = census_match_cost("implicit", cm)
    exp = census_match_cost("explicit-dtw", cm)
    # each term differs from its formula by a fixed factor, whatever T is
    assert imp["one_time"] == 2 * (nk + q) * c * t * t
    assert imp["pairwise"] == 3 * nk * q * c * t
    assert exp["total"] == 3 * analytic_match_cost("explicit-dtw", cm)
    for method, census in (("implicit", imp), ("explicit-dtw", exp)):
        assert 1 <= census["total"] / analytic_match_cost(method, cm) <= 4


def test_fit_loglog_recovers_power():
    sizes = [8, 16, 32, 64]
    slope, resid = fit_loglog(sizes, [3.0 * s ** 1.5 for s in sizes])
    assert slope == pytest.approx(1.5) and resid < 1e-12


def test_measure_scaling_validates_and_refuses_concurrency():
    with pytest.raises(ValueError):
        measure_scaling("dtw_pairwise", sizes=(8, 16, 32))
    with pytest.raises(ValueError):
        measure_scaling("dtw_pairwise", repetitions=3)
    with pytest.raises(ValueError):
        bench._stage_kernel("nope", CostModel())
    assert bench._RUN_LOCK.acquire(blocking=False)
    try:
        with pytest.raises(RuntimeError, match="already running"):
            measure_scaling("dtw_pairwise", sizes=(2, 3, 4, 5))
    finally:
        bench._RUN_LOCK.release()


def test_timer_meets_minimum_sample():
    median, inner = bench._time_kernel(lambda: None, repetitions=5, warmup=1)
    assert inner > 1 and median >= 0


def test_pairwise_slope_stable_across_runs():
    a = measure_scaling("implicit_pairwise")
    b = measure_scaling("implicit_pairwise")
    assert abs(a.slope - b.slope) <= 0.15
    assert all(ns * n >= bench.MIN_SAMPLE_NS for ns, n in zip(a.median_ns, a.inner_loops))


def test_write_reports(tmp_path):
    report = bench.ScalingReport("dtw_pairwise", [8, 16], [10.0, 40.0], 2.0, 0.0, 5, [1, 1])
    bench.write_reports([report], tmp_path)
    lines = (tmp_path / "scaling.csv").read_text().splitlines()
    assert lines[0] == "stage,size,median_ns,slope" and len(lines) == 3
    assert json.loads((tmp_path / "scaling.json").read_text())[0]["slope"] == 2.0
