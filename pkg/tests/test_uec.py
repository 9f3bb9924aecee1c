import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drstereo import gridcore as gc
from drstereo.gridcore import Node, ParamStore, grad_check, grad_check_params
from drstereo.uec import (UecGtConfig, estimate_uncertainty, init_uec_head, metric_auc,
                          metric_pue, uncertainty_gt)
from oracles import auc_oracle, pue_oracle

# logistic(-3) at 50 digits
SIGMOID_MINUS_3 = 0.0474258731775667809


def head(features, seed=0, scale=1.0):
    store = ParamStore(seed, dtype=np.float64)
    init_uec_head(store, features)
    rng = np.random.default_rng(seed)
    for _, node in store.items():
        node.value = rng.standard_normal(node.shape) * scale
    return store


def test_zero_weights_give_half():
    store = ParamStore(0, dtype=np.float64)
    init_uec_head(store, 6)
    for _, node in store.items():
        node.value[...] = 0
    u = estimate_uncertainty(Node(np.random.default_rng(0).standard_normal((6, 3, 4))), store)
    assert u.shape == (3, 4)
    assert np.all(u.value == 0.5)


def test_head_gradient_check_4x4(rng):
    store = head(12, seed=2, scale=0.5)
    x = rng.standard_normal((12, 4, 4))
    assert grad_check(lambda n: gc.sum_(estimate_uncertainty(n, store)), x, 1e-3) < 1e-4
    errs = grad_check_params(lambda st: gc.sum_(estimate_uncertainty(Node(x), st)), store,
                             store.names(), step=1e-6)
    assert max(errs.values()) < 1e-4


def test_duplicate_pixels_identical(rng):
    store = head(6, seed=4)
    v = rng.standard_normal(6)
    x = np.broadcast_to(v[:, None, None], (6, 2, 3)).copy()
    u = estimate_uncertainty(Node(x), store).value
    assert np.all(u == u[0, 0])


def test_channel_mismatch():
    with pytest.raises(gc.ShapeError):
        estimate_uncertainty(Node(np.zeros((5, 2, 2))), head(6))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=4, max_size=4))
def test_head_output_in_open_interval(values):
    store = head(4, seed=1, scale=0.3)
    x = np.asarray(values, dtype=np.float64)[:, None, None]
    u = estimate_uncertainty(Node(x), store).value
    assert np.all((u > 0) & (u < 1))


def test_uncertainty_gt_examples():
    cfg = UecGtConfig(1.5, 3.0, "literal")
    assert uncertainty_gt(np.array([2.0]), np.array([0.0]), cfg)[0] == 0.5
    assert abs(uncertainty_gt(np.array([0.0]), np.array([0.0]), cfg)[0] - SIGMOID_MINUS_3) < 1e-15
    hard = UecGtConfig(1.5, 3.0, "hard")
    assert uncertainty_gt(np.array([3.0]), np.array([0.0]), hard)[0] == 0
    assert uncertainty_gt(np.array([3.01]), np.array([0.0]), hard)[0] == 1


def test_literal_monotone_and_symmetric():
    e = np.linspace(0, 20, 401)
    u = uncertainty_gt(e, np.zeros_like(e))
    assert np.all(np.diff(u) >= 0)
    np.testing.assert_array_equal(u, uncertainty_gt(-e, np.zeros_like(e)))


def test_centered_limit_matches_hard():
    e = np.linspace(0, 10, 100001)
    e = e[np.abs(e - 3.0) > 0.01]
    soft = uncertainty_gt(e, np.zeros_like(e), UecGtConfig(1000, 3.0, "centered"))
    hard = uncertainty_gt(e, np.zeros_like(e), UecGtConfig(1000, 3.0, "hard"))
    assert np.max(np.abs(soft - hard)) < 1e-3


def test_config_validation():
    with pytest.raises(ValueError):
        UecGtConfig(a=0)
    with pytest.raises(ValueError):
        UecGtConfig(thr=-1)
    with pytest.raises(ValueError):
        UecGtConfig(mode="other")


def test_pue_examples(rng):
    ugt = rng.random((3, 4))
    assert metric_pue(ugt, ugt) == 0.0
    assert abs(metric_pue(ugt + 0.1, ugt) - 0.1) < 1e-12
    u = rng.random((3, 4))
    mask = rng.random((3, 4)) < 0.7
    mask[0, 0] = True
    assert abs(metric_pue(u, ugt, mask) - pue_oracle(u, ugt, mask)) <= 1e-12
    with pytest.raises(ValueError):
        metric_pue(u, ugt, np.zeros((3, 4), bool))


def test_auc_all_correct_is_zero(rng):
    gt = rng.uniform(0, 10, (4, 4))
    assert metric_auc(rng.random((4, 4)), gt + 0.5, gt) == 0.0


def test_auc_hand_computed():
    # rate 1/4 until the first removal at j=5, then 0: 4 full intervals plus one half
    d = np.array([[10.0, 0.0, 0.0, 0.0]])
    gt = np.zeros((1, 4))
    u = np.array([[0.9, 0.1, 0.2, 0.3]])
    assert metric_auc(u, d, gt, 3.0) == pytest.approx(0.05625, abs=1e-15)
    assert metric_auc(u, d, gt, 3.0) == auc_oracle(u, d, gt, 3.0)


def test_auc_constant_uncertainty_uses_row_major_ties():
    d = np.array([[0.0, 0.0], [9.0, 0.0]])
    gt = np.zeros((2, 2))
    u = np.full((2, 2), 0.5)
    got = metric_auc(u, d, gt)
    assert got == pytest.approx(auc_oracle(u, d, gt, 3.0), abs=1e-12)
    # the bad pixel is third in row-major order, so it stays until k = 3
    moved = metric_auc(u, np.array([[9.0, 0.0], [0.0, 0.0]]), gt)
    assert moved < got


def test_auc_random_matches_oracle(rng):
    for _ in range(50):
        h, w = rng.integers(1, 6, size=2)
        u = rng.integers(0, 4, size=(h, w)) / 4.0
        gt = rng.uniform(0, 8, (h, w))
        d = gt + rng.choice([0.0, 5.0], size=(h, w))
        mask = rng.random((h, w)) < 0.8
        mask.flat[0] = True
        assert abs(metric_auc(u, d, gt, 3.0, mask) - auc_oracle(u, d, gt, 3.0, mask)) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 8), st.booleans()), min_size=1, max_size=9))
def test_auc_invariant_under_monotone_transform(cells):
    u = np.array([c[0] / 8 for c in cells])[None]
    d = np.array([5.0 if c[1] else 0.0 for c in cells])[None]
    gt = np.zeros_like(d)
    base = metric_auc(u, d, gt)
    assert metric_auc(np.exp(3 * u) - 7, d, gt) == base
    assert metric_auc(u ** 3, d, gt) == base
