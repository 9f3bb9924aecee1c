"""Disparity Rectification loss stack and the plain iterative baseline loss."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from . import gridcore as gc
from .gridcore import Node
from .uec import UecGtConfig, uncertainty_gt


@dataclass(frozen=True)
class DrLossConfig:
    alpha: float = 1 / 8
    beta: float = 1 / 10
    gamma: float = 0.9
    weight_form: str = "exp"
    c0: float = 6.0
    c1: float = 0.1

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.weight_form not in ("exp", "sigmoid"):
            raise ValueError(f"unknown weight form {self.weight_form!r}")


@dataclass
class LossReport:
    l_init: float
    l_udr: float
    l_udc: float
    l_uec: float
    l_total: float
    l_udc_steps: list = field(default_factory=list)
    l_uec_steps: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def dr_weight(e, cfg: DrLossConfig = DrLossConfig()) -> np.ndarray:
    """Rectification weight of an absolute error; a constant, never differentiated."""
    e = np.asarray(e.value if isinstance(e, Node) else e, dtype=np.float64)
    if cfg.weight_form == "exp":
        return np.exp(-cfg.alpha * e) + cfg.beta
    return expit(cfg.c0 - cfg.c1 * e) + cfg.beta


def _smooth_l1_fwd(v):
    a = np.abs(v)
    return np.where(a < 1, 0.5 * v * v, a - 0.5)


def _smooth_l1_grad(v, _):
    return np.where(np.abs(v) < 1, v, np.sign(v))


def smooth_l1(x: Node) -> Node:
    """0.5 x^2 for |x| < 1, |x| - 0.5 otherwise."""
    return gc.unary(x, _smooth_l1_fwd, _smooth_l1_grad, "smooth_l1")


def _mask(mask, shape):
    m = np.ones(shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if m.shape != tuple(shape):
        raise ValueError(f"mask shape {m.shape} does not match {tuple(shape)}")
    if not m.any():
        raise ValueError("mask selects no valid pixels")
    return m


def _masked_mean(x: Node, m: np.ndarray, weight=None) -> Node:
    w = m.astype(np.float64) / m.sum()
    if weight is not None:
        w = w * weight
    return gc.sum_(x * gc.constant(w, x.dtype))


def _residual(d: Node, gt) -> Node:
    return d - gc.constant(np.asarray(gt), d.dtype)


def _frozen(frozen, key, compute):
    """Look up a stop-gradient constant, computing and recording it on first use."""
    if frozen is None:
        return compute()
    if key not in frozen:
        frozen[key] = compute()
    return frozen[key]


def weighted_smooth_l1(d: Node, gt, mask, cfg: DrLossConfig, weight=None) -> Node:
    """Mean over valid pixels of w_DR * smooth-L1(d - gt).

    ``weight`` overrides the weights computed from the current residual.
    """
    m = _mask(mask, d.shape)
    r = _residual(d, np.where(m, gt, 0))
    w = dr_weight(np.abs(r.value), cfg) if weight is None else weight
    return _masked_mean(smooth_l1(r), m, w)


def loss_init_udr(d0: Node, d_udr: Node, gt, mask, cfg: DrLossConfig = DrLossConfig(),
                  frozen: dict | None = None):
    """Weighted smooth-L1 of the initial and the rectified disparity, each a scalar."""
    m = _mask(mask, d0.shape)
    gt0 = np.where(m, gt, 0)
    w0 = _frozen(frozen, "w_init", lambda: dr_weight(np.abs(d0.value - gt0), cfg))
    w1 = _frozen(frozen, "w_udr", lambda: dr_weight(np.abs(d_udr.value - gt0), cfg))
    return (weighted_smooth_l1(d0, gt, mask, cfg, w0),
            weighted_smooth_l1(d_udr, gt, mask, cfg, w1))


def loss_udc(ds, gt, mask, cfg: DrLossConfig = DrLossConfig(), per_step: list | None = None,
             frozen: dict | None = None) -> Node:
    """sum_i gamma^(T-i) * mean(w_DR * |d_i - gt|) for i = 1..T."""
    if not ds:
        raise ValueError("loss_udc needs at least one iteration")
    m = _mask(mask, ds[0].shape)
    gt = np.where(m, gt, 0)
    total_itr = len(ds)
    total = None
    for i, d in enumerate(ds, start=1):
        r = _residual(d, gt)
        w = _frozen(frozen, f"w_udc{i}", lambda: dr_weight(np.abs(r.value), cfg))
        w = w * cfg.gamma ** (total_itr - i)
        term = _masked_mean(gc.abs_(r), m, w)
        if per_step is not None:
            per_step.append(term.item())
        total = term if total is None else total + term
    return total


def loss_uec(us, u_gts, mask=None, per_step: list | None = None) -> Node:
    """Sum over iterations of mean smooth-L1(U - U_gt)."""
    if len(us) != len(u_gts):
        raise ValueError(f"got {len(us)} uncertainty maps but {len(u_gts)} targets")
    if not us:
        raise ValueError("loss_uec needs at least one iteration")
    total = None
    for u, ug in zip(us, u_gts):
        m = _mask(mask, u.shape)
        term = _masked_mean(smooth_l1(u - gc.constant(np.asarray(ug), u.dtype)), m)
        if per_step is not None:
            per_step.append(term.item())
        total = term if total is None else total + term
    return total


def loss_baseline(ds, gt, mask, gamma: float = 0.9) -> Node:
    """sum_i gamma^(T-i) * mean|d_i - gt| for i = 0..T, no rectification weights."""
    if not ds:
        raise ValueError("loss_baseline needs at least one disparity map")
    m = _mask(mask, ds[0].shape)
    gt = np.where(m, gt, 0)
    total_itr = len(ds) - 1
    total = None
    for i, d in enumerate(ds):
        term = _masked_mean(gc.abs_(_residual(d, gt)), m, gamma ** (total_itr - i))
        total = term if total is None else total + term
    return total


def total_loss(trace, gt, mask, cfg: DrLossConfig = DrLossConfig(),
               gt_cfg: UecGtConfig = UecGtConfig(), kind: str = "dr", frozen: dict | None = None):
    """Training objective over an iteration trace.

    ``kind="dr"``: L_init + L_UDR + L_UDC + sum L_UEC.
    ``kind="baseline"``: discounted L1 over (d_0, d_1..d_T) + sum L_UEC, so
    the uncertainty head is trained identically in both.
    ``frozen`` (a dict) pins every stop-gradient constant (rectification
    weights, uncertainty targets) to the values seen on its first use,
    which finite-difference checks need.
    Returns (scalar node, LossReport).
    """
    udc_steps, uec_steps = [], []
    ds = trace.disparities()
    us = trace.uncertainties()
    l_uec = None
    if us:
        u_gts = [_frozen(frozen, f"u_gt{i}", lambda d=d: uncertainty_gt(d.value, gt, gt_cfg))
                 for i, d in enumerate(ds, start=1)]
        l_uec = loss_uec(us, u_gts, mask, per_step=uec_steps)
    if kind == "dr":
        l_init, l_udr = loss_init_udr(trace.d0, trace.d_udr, gt, mask, cfg, frozen)
        parts = [l_init, l_udr]
        l_udc = loss_udc(ds, gt, mask, cfg, per_step=udc_steps, frozen=frozen) if ds else None
    elif kind == "baseline":
        l_init = loss_baseline([trace.d0] + ds, gt, mask, cfg.gamma)
        l_udr = None
        parts = [l_init]
        l_udc = None
    else:
        raise ValueError(f"unknown loss kind {kind!r}")
    for p in (l_udc, l_uec):
        if p is not None:
            parts.append(p)
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    val = lambda n: n.item() if n is not None else 0.0  # noqa: E731
    report = LossReport(val(l_init), val(l_udr), val(l_udc), val(l_uec), total.item(),
                        udc_steps, uec_steps)
    return total, report
