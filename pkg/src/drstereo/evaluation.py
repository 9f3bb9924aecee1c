"""Disparity metrics, long-tail bucket statistics, and the corrupted-initial-disparity scenario."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .gridcore import ParamStore
from .rectifier import ModelConfig, run_iterations
from .stereoio import ImagePair
from .uec import UecGtConfig, metric_auc, metric_pue, uncertainty_gt

BUCKET_LABELS = ("<=1px", "(1px,3px]", "(3px,5px]", ">5px")
BUCKET_EDGES = (1.0, 3.0, 5.0)


def bucket_fractions(values) -> dict:
    """Fractions of |values| falling in <=1, (1,3], (3,5], >5 pixels."""
    v = np.abs(np.asarray(values, dtype=np.float64)).ravel()
    if v.size == 0:
        raise ValueError("no values to bucket")
    lo1, lo3, lo5 = BUCKET_EDGES
    counts = (
        np.count_nonzero(v <= lo1),
        np.count_nonzero((v > lo1) & (v <= lo3)),
        np.count_nonzero((v > lo3) & (v <= lo5)),
        np.count_nonzero(v > lo5),
    )
    return {label: c / v.size for label, c in zip(BUCKET_LABELS, counts)}


@dataclass
class MetricsReport:
    epe: float
    bad1: float
    bad2: float
    bad3: float
    auc: float | None = None
    pue: float | None = None
    valid_pixels: int = 0
    error_buckets: dict = field(default_factory=dict)
    update_buckets: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def compute_metrics(d, gt, u=None, mask=None, thresholds=(1.0, 2.0, 3.0), deltas=None,
                    auc_err_thr: float = 3.0, gt_cfg: UecGtConfig = UecGtConfig()) -> MetricsReport:
    """EPE, bad-k rates and bucket tables over valid pixels.

    AUC and PUE are filled in when an uncertainty map ``u`` is given; the
    PUE target is ``uncertainty_gt`` under ``gt_cfg``.  ``deltas`` (a list
    of per-step update maps) adds the update bucket table.
    """
    d = np.asarray(d, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if d.shape != gt.shape:
        raise ValueError(f"prediction {d.shape} and ground truth {gt.shape} differ in shape")
    m = np.isfinite(gt) if mask is None else (np.asarray(mask, dtype=bool) & np.isfinite(gt))
    if not m.any():
        raise ValueError("no valid pixels")
    e = np.abs(d - np.where(m, gt, 0))[m]
    bad = {k: float(np.mean(e > k)) for k in thresholds}
    report = MetricsReport(
        epe=float(e.mean()),
        bad1=bad.get(1.0, float(np.mean(e > 1))),
        bad2=bad.get(2.0, float(np.mean(e > 2))),
        bad3=bad.get(3.0, float(np.mean(e > 3))),
        valid_pixels=int(m.sum()),
        error_buckets=bucket_fractions(e),
    )
    if u is not None:
        u = np.asarray(u, dtype=np.float64)
        gt_safe = np.where(m, gt, 0)
        report.auc = metric_auc(u, d, gt_safe, auc_err_thr, m)
        report.pue = metric_pue(u, uncertainty_gt(d, gt_safe, gt_cfg), m)
    if deltas is not None:
        report.update_buckets = bucket_fractions(np.concatenate([np.ravel(x) for x in deltas]))
    return report


def trace_statistics(trace, gt=None, mask=None) -> dict:
    """Update-magnitude and per-step error bucket tables for an iteration trace."""
    deltas = [s.delta.value for s in trace.steps]
    out = {"bucket_edges_px": list(BUCKET_EDGES), "steps": len(deltas)}
    out["updates"] = bucket_fractions(np.concatenate([x.ravel() for x in deltas])) if deltas else None
    if gt is not None:
        m = np.ones(np.shape(gt), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        maps = [trace.d0.value, trace.d_udr.value] + [s.d.value for s in trace.steps]
        errs = [np.abs(np.asarray(x, dtype=np.float64) - gt)[m] for x in maps]
        out["errors"] = bucket_fractions(np.concatenate(errs))
    return out


def _epe(d, gt, mask) -> float:
    return float(np.mean(np.abs(np.asarray(d, dtype=np.float64) - gt)[mask]))


def corrupt_sim(pair: ImagePair, params: ParamStore, cfg: ModelConfig, region, wrong_value: float,
                gt, mask=None) -> dict:
    """Overwrite a rectangle of the initial disparity and compare updates with and without UDC.

    ``region`` is (y0, x0, y1, x1), half-open.  Both runs start from the
    same corrupted initial map; the UDC-off run adds the raw decoder output.
    Returns per-iteration EPE (index 0 is the disparity entering the
    iterations) and the largest per-pixel step of each run.
    """
    h, w = pair.height, pair.width
    y0, x0, y1, x1 = (int(v) for v in region)
    if not (0 <= y0 < y1 <= h and 0 <= x0 < x1 <= w):
        raise ValueError(f"region {region} is empty or outside the {h}x{w} image")
    gt = np.asarray(gt, dtype=np.float64)
    m = np.isfinite(gt) if mask is None else np.asarray(mask, dtype=bool)
    gt = np.where(m, gt, 0)
    base = run_iterations(pair, params, cfg)
    d0 = base.d0.value.copy()
    d0[y0:y1, x0:x1] = wrong_value
    region_mask = np.zeros_like(m)
    region_mask[y0:y1, x0:x1] = True
    region_mask &= m
    out = {"region": [y0, x0, y1, x1], "wrong_value": float(wrong_value), "m": cfg.m,
           "total_itr": cfg.total_itr}
    for label, udc in (("udc_on", True), ("udc_off", False)):
        trace = run_iterations(pair, params, cfg.with_(udc=udc), d0_override=d0)
        maps = [trace.d_udr.value] + [s.d.value for s in trace.steps]
        steps = [np.abs(s.delta.value) for s in trace.steps]
        out[label] = {
            "epe": [_epe(x, gt, m) for x in maps],
            "epe_region": [_epe(x, gt, region_mask) for x in maps] if region_mask.any() else None,
            "max_step": [float(s.max()) for s in steps],
        }
    return out
