"""Uncertainty head over lookup features, uncertainty targets, and quality metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import gridcore as gc
from .gridcore import Node, ParamStore

GT_MODES = ("literal", "centered", "hard")


@dataclass(frozen=True)
class UecGtConfig:
    a: float = 1.5
    thr: float = 3.0
    mode: str = "literal"

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError("a must be positive")
        if self.thr < 0:
            raise ValueError("thr must be non-negative")
        if self.mode not in GT_MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {GT_MODES}")


def init_uec_head(store: ParamStore, features: int) -> None:
    for block in ("res1", "res2"):
        store.add(f"uec.{block}.w", (features, features))
        store.add(f"uec.{block}.b", (features,), init="zeros")
    store.add("uec.out.w", (1, features))
    store.add("uec.out.b", (1,), init="zeros")


def _residual(x: Node, w: Node, b: Node) -> Node:
    return x + gc.relu(gc.linear(x, w, b))


def estimate_uncertainty(feats: Node, params: ParamStore) -> Node:
    """sigmoid(linear(Res(Res(features)))) per pixel; returns (H, W) in (0, 1)."""
    width = params["uec.res1.w"].shape[1]
    if feats.shape[0] != width:
        raise gc.ShapeError(f"estimate_uncertainty: head expects {width} channels, got {feats.shape[0]}")
    x = _residual(feats, params["uec.res1.w"], params["uec.res1.b"])
    x = _residual(x, params["uec.res2.w"], params["uec.res2.b"])
    logit = gc.linear(x, params["uec.out.w"], params["uec.out.b"])
    return gc.reshape(gc.sigmoid(logit), logit.shape[1:])


def uncertainty_gt(d, gt, cfg: UecGtConfig = UecGtConfig()) -> np.ndarray:
    """Target uncertainty from the absolute disparity error.

    literal:  sigmoid(a * |e| - thr)
    centered: sigmoid(a * (|e| - thr))
    hard:     0 where |e| <= thr, else 1
    """
    d = d.value if isinstance(d, Node) else np.asarray(d)
    gt = gt.value if isinstance(gt, Node) else np.asarray(gt)
    err = np.abs(gt.astype(np.float64) - d.astype(np.float64))
    if cfg.mode == "literal":
        return expit(cfg.a * err - cfg.thr)
    if cfg.mode == "centered":
        return expit(cfg.a * (err - cfg.thr))
    return (err > cfg.thr).astype(np.float64)


def _valid(mask, shape) -> np.ndarray:
    m = np.ones(shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if m.shape != tuple(shape):
        raise ValueError(f"mask shape {m.shape} does not match {tuple(shape)}")
    if not m.any():
        raise ValueError("mask selects no valid pixels")
    return m


def metric_pue(u, u_gt, mask=None) -> float:
    """Per-pixel uncertainty error: mean |U - U_gt| over valid pixels."""
    u = np.asarray(u, dtype=np.float64)
    u_gt = np.asarray(u_gt, dtype=np.float64)
    if u.shape != u_gt.shape:
        raise ValueError(f"shape mismatch {u.shape} vs {u_gt.shape}")
    m = _valid(mask, u.shape)
    return float(np.mean(np.abs(u - u_gt)[m]))


SPARSIFICATION_FRACTIONS = np.linspace(0.0, 1.0, 21)


def sparsification_curve(u, d, gt, err_thr: float = 3.0, mask=None):
    """Bad-pixel rate of the retained pixels as the most uncertain are removed.

    Pixels are ordered by uncertainty descending, ties in row-major order.
    At fraction f the first floor(f * N) pixels are removed; an empty
    remainder has rate 0.  Returns (fractions, rates).
    """
    u = np.asarray(u, dtype=np.float64)
    m = _valid(mask, u.shape)
    err = np.abs(np.asarray(d, dtype=np.float64) - np.asarray(gt, dtype=np.float64))
    bad = (err[m] > err_thr).astype(np.float64)
    order = np.argsort(-u[m], kind="stable")
    bad_sorted = bad[order]
    n = bad_sorted.size
    # bad counts among the last n - k pixels
    tail = np.concatenate([np.cumsum(bad_sorted[::-1])[::-1], [0.0]])
    rates = []
    steps = len(SPARSIFICATION_FRACTIONS) - 1
    for j in range(steps + 1):
        k = j * n // steps
        remaining = n - k
        rates.append(tail[k] / remaining if remaining else 0.0)
    return SPARSIFICATION_FRACTIONS.copy(), np.asarray(rates)


def metric_auc(u, d, gt, err_thr: float = 3.0, mask=None) -> float:
    """Trapezoidal area under the sparsification curve on [0, 1]; lower is better."""
    f, r = sparsification_curve(u, d, gt, err_thr, mask)
    return float(np.sum((f[1:] - f[:-1]) * (r[1:] + r[:-1]) / 2))
