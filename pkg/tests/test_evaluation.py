import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drstereo.evaluation import (BUCKET_LABELS, bucket_fractions, compute_metrics, corrupt_sim,
                                 trace_statistics)
from drstereo.rectifier import ModelConfig, init_params, run_iterations
from drstereo.synthtrain import SceneSpec, gen_scene
from drstereo.uec import UecGtConfig, metric_auc, metric_pue, uncertainty_gt

CFG = ModelConfig(channels=16, groups=4, max_disp=16, radius=1, hidden=8, total_itr=3)


def test_bucket_labels_and_edges():
    assert BUCKET_LABELS == ("<=1px", "(1px,3px]", "(3px,5px]", ">5px")
    out = bucket_fractions([0.5, 2, 4, 6])
    assert list(out.values()) == [0.25, 0.25, 0.25, 0.25]
    # edges belong to the lower bucket
    assert list(bucket_fractions([1.0, 3.0, 5.0, 5.0001]).values()) == [0.25, 0.25, 0.25, 0.25]
    assert list(bucket_fractions([-0.5, -2]).values()) == [0.5, 0.5, 0.0, 0.0]


def test_metrics_examples():
    gt = np.zeros((2, 4))
    r = compute_metrics(gt + 2.5, gt)
    assert (r.epe, r.bad1, r.bad2, r.bad3) == (2.5, 1.0, 1.0, 0.0)
    d = np.array([[0.0, 0.0, 0.0, 0.0], [4.0, 4.0, 4.0, 4.0]])
    r = compute_metrics(d, gt)
    assert r.epe == 2.0 and r.bad3 == 0.5
    r = compute_metrics(gt, gt)
    assert (r.epe, r.bad1, r.bad2, r.bad3) == (0.0, 0.0, 0.0, 0.0)
    assert r.error_buckets["<=1px"] == 1.0


def test_metrics_match_loop_oracle(rng):
    h, w = 5, 6
    gt = rng.uniform(0, 10, (h, w))
    gt[0, 0] = np.inf
    d = gt + rng.normal(0, 3, (h, w))
    d[0, 0] = 1.0
    u = rng.random((h, w))
    mask = rng.random((h, w)) < 0.8
    r = compute_metrics(d, gt, u, mask)
    errs, us, ugts = [], [], []
    for y in range(h):
        for x in range(w):
            if mask[y, x] and np.isfinite(gt[y, x]):
                errs.append(abs(d[y, x] - gt[y, x]))
    errs = np.array(errs)
    assert r.valid_pixels == errs.size
    assert r.epe == pytest.approx(errs.mean(), abs=1e-12)
    for k, val in ((1, r.bad1), (2, r.bad2), (3, r.bad3)):
        assert val == sum(e > k for e in errs) / errs.size
    m = mask & np.isfinite(gt)
    gt0 = np.where(m, gt, 0)
    assert r.auc == metric_auc(u, d, gt0, 3.0, m)
    assert r.pue == metric_pue(u, uncertainty_gt(d, gt0, UecGtConfig()), m)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 20), min_size=1, max_size=30))
def test_report_invariants(errors):
    e = np.array(errors)[None]
    r = compute_metrics(e, np.zeros_like(e), deltas=[e * 0.5])
    assert r.bad1 >= r.bad2 >= r.bad3
    assert abs(sum(r.error_buckets.values()) - 1) <= 1e-9
    assert abs(sum(r.update_buckets.values()) - 1) <= 1e-9


def test_metrics_errors():
    with pytest.raises(ValueError):
        compute_metrics(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        compute_metrics(np.zeros((2, 2)), np.full((2, 2), np.inf))


def test_trace_statistics_counts():
    pair, gt = gen_scene(SceneSpec(0, width=16, height=12, d_max=10.0))
    trace = run_iterations(pair, init_params(CFG, 0), CFG)
    stats = trace_statistics(trace, gt.values, gt.valid)
    assert stats["steps"] == 3
    assert abs(sum(stats["updates"].values()) - 1) <= 1e-9
    assert abs(sum(stats["errors"].values()) - 1) <= 1e-9


def _scene():
    return gen_scene(SceneSpec(1, width=24, height=16, layers=2, d_max=10.0))


def _epes(trace, gt):
    maps = [trace.d_udr.value] + [s.d.value for s in trace.steps]
    return [float(np.mean(np.abs(x.astype(np.float64) - gt.values)[gt.valid])) for x in maps]


def test_corrupt_sim_no_op_corruption():
    pair, gt = _scene()
    params = init_params(CFG, 1)
    clean = run_iterations(pair, params, CFG)
    # a one-pixel region rewritten with its own value leaves d0 untouched
    value = float(clean.d0.value[5, 7])
    result = corrupt_sim(pair, params, CFG, (5, 7, 6, 8), value, gt.values, gt.valid)
    assert result["udc_on"]["epe"] == _epes(clean, gt)
    off = run_iterations(pair, params, CFG.with_(udc=False))
    assert result["udc_off"]["epe"] == _epes(off, gt)


def test_corrupt_sim_zero_update_params():
    pair, gt = _scene()
    params = init_params(CFG, 2)
    for name in params.names("gru.") + params.names("dec."):
        params[name].value[...] = 0
    result = corrupt_sim(pair, params, CFG, (2, 3, 10, 12), 15.0, gt.values, gt.valid)
    for label in ("udc_on", "udc_off"):
        epe = result[label]["epe"]
        assert all(e == epe[0] for e in epe)
        assert result[label]["max_step"] == [0.0] * CFG.total_itr


def test_corrupt_sim_udc_bound_with_large_updates():
    pair, gt = _scene()
    params = init_params(CFG, 3)
    params["dec.w"].value *= 300
    result = corrupt_sim(pair, params, CFG, (0, 0, 8, 8), 14.0, gt.values, gt.valid)
    assert max(result["udc_on"]["max_step"]) < 1.5 * CFG.m
    assert max(result["udc_off"]["max_step"]) > 1.5 * CFG.m
    assert result["region"] == [0, 0, 8, 8]
    assert len(result["udc_on"]["epe"]) == CFG.total_itr + 1


def test_corrupt_sim_rejects_bad_region():
    pair, gt = _scene()
    params = init_params(CFG, 0)
    for region in [(4, 4, 4, 8), (0, 0, 17, 5), (-1, 0, 2, 2)]:
        with pytest.raises(ValueError):
            corrupt_sim(pair, params, CFG, region, 3.0, gt.values, gt.valid)
