"""Finite-difference gradient checks for every parameter group and loss composite."""

from __future__ import annotations

import numpy as np

from . import gridcore as gc
from .gridcore import Node, grad_check, grad_check_params
from .loss import (DrLossConfig, loss_baseline, loss_init_udr, loss_udc, loss_uec, smooth_l1,
                   total_loss)
from .rectifier import PARAM_GROUPS, ModelConfig, init_params, run_iterations
from .synthtrain import SceneSpec, gen_scene
from .uec import uncertainty_gt

# small enough for thousands of forward passes, large enough to touch every op
CHECK_MODEL = ModelConfig(channels=16, groups=4, max_disp=6, variant="gwc", radius=1,
                          hidden=6, s=1.0, m=2.0, total_itr=2)
NETWORK_TOL = 1e-4
LOSS_TOL = 1e-3
NETWORK_STEP = 1e-6
LOSS_STEP = 1e-6


def _instance(seed: int, cfg: ModelConfig):
    pair, gt = gen_scene(SceneSpec(seed, width=7, height=5, layers=2, d_max=4.0))
    params = init_params(cfg, seed)
    # perturb biases away from zero so every bias gradient is exercised
    rng = np.random.default_rng(seed + 1)
    for name, node in params.items():
        if name.endswith(".b"):
            node.value = rng.uniform(-0.1, 0.1, size=node.shape).astype(node.dtype)
    return pair, gt, params


def check_param_group(group: str, seed: int, coords: int = 8) -> float:
    """Max relative error over sampled coordinates of one group's parameters."""
    cfg = CHECK_MODEL.with_(variant="cat") if group == "cat-projection" else CHECK_MODEL
    pair, gt, params = _instance(seed, cfg)
    frozen: dict = {}

    def objective(store):
        trace = run_iterations(pair, store, cfg, detach=False)
        loss, _ = total_loss(trace, gt.values, gt.valid, frozen=frozen)
        return loss

    names = params.names(PARAM_GROUPS[group])
    errs = grad_check_params(objective, params, names, step=NETWORK_STEP, max_coords=coords,
                             rng=np.random.default_rng(seed))
    return max(errs.values())


def _away_from_kinks(rng, shape, lo=0.05):
    """Residuals bounded away from 0 (abs kink) and +-1 (smooth-L1 branch switch)."""
    mag = rng.uniform(lo, 3.0, size=shape)
    near_one = np.abs(mag - 1.0) < lo
    mag[near_one] += 2 * lo
    return mag * rng.choice([-1.0, 1.0], size=shape)


def check_loss(name: str, seed: int) -> float:
    rng = np.random.default_rng(seed)
    shape = (4, 5)
    gt = rng.uniform(0, 8, size=shape)
    mask = rng.random(shape) < 0.8
    mask[0, 0] = True
    cfg = DrLossConfig()
    base = gt + _away_from_kinks(rng, shape)

    if name == "init_udr":
        other = gt + _away_from_kinks(rng, shape)
        w0 = np.exp(-cfg.alpha * np.abs(base - gt)) + cfg.beta
        w1 = np.exp(-cfg.alpha * np.abs(other - gt)) + cfg.beta
        frozen = {"w_init": w0, "w_udr": w1}

        def f(x: Node):
            a, b = loss_init_udr(x, x * 0.5 + gc.constant(other - 0.5 * base), gt, mask, cfg, frozen)
            return a + b
    elif name == "udc":
        shifts = [_away_from_kinks(rng, shape) for _ in range(3)]
        frozen = {}
        loss_udc([gc.constant(base + s) for s in shifts], gt, mask, cfg, frozen=frozen)

        def f(x: Node):
            return loss_udc([x + gc.constant(s) for s in shifts], gt, mask, cfg, frozen=frozen)
    elif name == "uec":
        targets = [rng.uniform(0.05, 0.95, size=shape) for _ in range(2)]
        base = rng.uniform(0.05, 0.95, size=shape)

        def f(x: Node):
            return loss_uec([x, x * x], targets, mask)
    elif name == "baseline":
        shifts = [_away_from_kinks(rng, shape) for _ in range(3)]

        def f(x: Node):
            return loss_baseline([x + gc.constant(s) for s in shifts], gt + base, mask, 0.9)
    elif name == "smooth_l1":
        base = _away_from_kinks(rng, shape)

        def f(x: Node):
            return gc.sum_(smooth_l1(x))
    else:
        raise KeyError(f"unknown loss composite {name!r}")
    return grad_check(f, base, step=LOSS_STEP)


LOSS_COMPOSITES = ("smooth_l1", "init_udr", "udc", "uec", "baseline")


def run_suite(seed: int = 0, instances: int = 20, coords: int = 8, log=None) -> dict:
    """Run every group and composite on ``instances`` seeded cases.

    Returns {"params": {group: max_err}, "losses": {name: max_err}, "pass": bool}.
    """
    out = {"params": {}, "losses": {}}
    for group in PARAM_GROUPS:
        worst = max(check_param_group(group, seed * 1000 + i, coords) for i in range(instances))
        out["params"][group] = worst
        if log:
            log(f"{group:16s} max rel err {worst:.3e} (tol {NETWORK_TOL:g})")
    for name in LOSS_COMPOSITES:
        worst = max(check_loss(name, seed * 1000 + i) for i in range(instances))
        out["losses"][name] = worst
        if log:
            log(f"loss:{name:11s} max rel err {worst:.3e} (tol {LOSS_TOL:g})")
    out["pass"] = (all(v < NETWORK_TOL for v in out["params"].values())
                   and all(v < LOSS_TOL for v in out["losses"].values()))
    return out
