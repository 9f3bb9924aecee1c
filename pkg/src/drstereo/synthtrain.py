"""Synthetic layered stereo scenes and the training loop."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, TextIO

import numpy as np
from scipy.ndimage import gaussian_filter

from . import gridcore as gc
from .gridcore import ParamStore
from .loss import DrLossConfig, total_loss
from .rectifier import ModelConfig, init_params, run_iterations
from .stereoio import DisparityMap, ImagePair, save_checkpoint
from .uec import UecGtConfig


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    width: int = 64
    height: int = 64
    layers: int = 3
    d_max: float = 12.0
    d_min: float = 0.0
    slant: bool = True

    def __post_init__(self):
        if self.d_max >= self.width:
            raise ValueError(f"d_max {self.d_max} must be smaller than the width {self.width}")
        if self.layers < 1:
            raise ValueError("a scene needs at least one layer")
        if not 0 <= self.d_min <= self.d_max:
            raise ValueError("need 0 <= d_min <= d_max")


@dataclass
class Layer:
    base: float          # disparity at the top row
    slope: float         # disparity change per row
    shape: tuple         # ("full",) or ("ellipse", cy, cx, ry, rx) or ("rect", y0, x0, y1, x1)
    texture: np.ndarray  # (H, W + pad) sampled at right-view column u + pad
    pad: int

    def disparity(self, y):
        return self.base + self.slope * np.asarray(y, dtype=np.float64)

    def covers(self, y, x):
        """Layer membership at left-view coordinates (x may be fractional)."""
        y = np.asarray(y, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        kind = self.shape[0]
        if kind == "full":
            return np.ones(np.broadcast(y, x).shape, dtype=bool)
        if kind == "ellipse":
            _, cy, cx, ry, rx = self.shape
            return ((y - cy) / ry) ** 2 + ((x - cx) / rx) ** 2 <= 1.0
        _, y0, x0, y1, x1 = self.shape
        return (y >= y0) & (y <= y1) & (x >= x0) & (x <= x1)


def _texture(rng, h, w):
    """Smoothed multi-scale noise normalized to [0, 1]."""
    t = np.zeros((h, w))
    for sigma, amp in ((0.7, 0.5), (2.0, 1.0), (5.0, 0.8)):
        n = gaussian_filter(rng.standard_normal((h, w)), sigma, mode="wrap")
        t += amp * n / (n.std() + 1e-12)
    t -= t.min()
    return t / max(t.max(), 1e-12)


def _interp_row(row: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """Linear interpolation of a 1D row at fractional positions (clamped)."""
    n = row.shape[0]
    pos = np.clip(pos, 0, n - 1)
    i0 = np.minimum(np.floor(pos).astype(np.int64), max(n - 2, 0))
    i1 = np.minimum(i0 + 1, n - 1)
    f = pos - i0
    return (1 - f) * row[i0] + f * row[i1]


def make_layers(spec: SceneSpec) -> list[Layer]:
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    pad = int(math.ceil(spec.d_max)) + 2
    span = spec.d_max - spec.d_min
    # far-to-near: disparity bands increase with layer index
    edges = np.linspace(spec.d_min, spec.d_max, spec.layers + 1)
    layers = []
    for i in range(spec.layers):
        lo, hi = edges[i], edges[i + 1]
        if span == 0:
            base, slope = spec.d_min, 0.0
        elif spec.slant:
            top, bottom = rng.uniform(lo, hi, size=2)
            base, slope = top, (bottom - top) / max(h - 1, 1)
        else:
            base, slope = float(rng.uniform(lo, hi)), 0.0
        if i == 0:
            shape = ("full",)
        elif rng.random() < 0.5:
            cy, cx = rng.uniform(0.2 * h, 0.8 * h), rng.uniform(0.25 * w, 0.85 * w)
            shape = ("ellipse", cy, cx, rng.uniform(0.15, 0.35) * h, rng.uniform(0.15, 0.35) * w)
        else:
            y0, x0 = rng.uniform(0, 0.6 * h), rng.uniform(0.1 * w, 0.7 * w)
            shape = ("rect", y0, x0, y0 + rng.uniform(0.2, 0.45) * h, x0 + rng.uniform(0.2, 0.45) * w)
        layers.append(Layer(float(base), float(slope), shape, _texture(rng, h, w + pad), pad))
    return layers


def render_scene(layers: list[Layer], width: int, height: int):
    """Render (left, right, disparity, valid) from far-to-near layers.

    The right view shows, at column u, the nearest layer whose shape covers
    u + d(y).  The left view is the right view sampled at x - d(x) wherever
    that point is visible in both views; elsewhere it samples the layer's
    own texture.  Invalid pixels are occluded or fall outside the right view.
    """
    h, w = height, width
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    right = np.zeros((h, w))
    right_owner = np.full((h, w), -1)
    left_owner = np.full((h, w), -1)
    for k, layer in enumerate(layers):
        dy = layer.disparity(ys)
        hit_r = layer.covers(ys, xs + dy)
        right_owner[hit_r] = k
        left_owner[np.broadcast_to(layer.covers(ys, xs), (h, w))] = k
    for y in range(h):
        for k, layer in enumerate(layers):
            cols = right_owner[y] == k
            if cols.any():
                right[y, cols] = layer.texture[y, np.nonzero(cols)[0] + layer.pad]
    disp = np.zeros((h, w))
    left = np.zeros((h, w))
    valid = np.zeros((h, w), dtype=bool)
    for y in range(h):
        for k, layer in enumerate(layers):
            cols = np.nonzero(left_owner[y] == k)[0]
            if not cols.size:
                continue
            d = layer.disparity(y)
            disp[y, cols] = d
            u = cols - d
            in_view = u >= 0
            # visible in the right view iff no nearer layer covers the same scene point there
            seen = in_view.copy()
            for k2 in range(k + 1, len(layers)):
                other = layers[k2]
                seen &= ~other.covers(y, u + other.disparity(y))
            valid[y, cols] = seen
            own = _interp_row(layer.texture[y], u + layer.pad)
            warped = _interp_row(right[y], u)
            left[y, cols] = np.where(seen, warped, own)
    return left, right, disp, valid


def gen_scene(spec: SceneSpec):
    """Deterministic synthetic pair with dense ground truth.

    Returns (ImagePair, DisparityMap).
    """
    layers = make_layers(spec)
    left, right, disp, valid = render_scene(layers, spec.width, spec.height)
    pair = ImagePair(left[None].astype(np.float32), right[None].astype(np.float32))
    return pair, DisparityMap(disp.astype(np.float32), valid)


def warp_right_to_left(right: np.ndarray, disp: np.ndarray) -> np.ndarray:
    """left_hat(y, x) = right(y, x - d(y, x)) by linear interpolation."""
    right = np.asarray(right, dtype=np.float64)
    if right.ndim == 3:
        right = right[0]
    h, w = right.shape
    out = np.empty((h, w))
    xs = np.arange(w, dtype=np.float64)
    for y in range(h):
        out[y] = _interp_row(right[y], xs - disp[y])
    return out


@dataclass
class TrainConfig:
    steps: int = 2000
    batch: int = 1
    lr_max: float = 0.1
    warmup_frac: float = 0.3
    start_div: float = 25.0
    final_div: float = 1000.0
    momentum: float = 0.9
    clip: float = 1.0
    seed: int = 0
    width: int = 32
    height: int = 32
    layers: int = 3
    d_max: float = 12.0
    eval_every: int = 100
    eval_batch: int = 4
    checkpoint_every: int = 0
    loss_kind: str = "dr"
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: DrLossConfig = field(default_factory=DrLossConfig)
    uec_gt: UecGtConfig = field(default_factory=UecGtConfig)

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.lr_max < 0:
            raise ValueError("lr_max must be non-negative")
        if self.d_max >= self.model.max_disp:
            raise ValueError(f"scene d_max {self.d_max} must be below the volume range {self.model.max_disp}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        if "model" in d:
            d["model"] = ModelConfig(**d["model"])
        if "loss" in d:
            d["loss"] = DrLossConfig(**d["loss"])
        if "uec_gt" in d:
            d["uec_gt"] = UecGtConfig(**d["uec_gt"])
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def one_cycle_lr(step: int, cfg: TrainConfig) -> float:
    """Linear warmup lr_max/25 -> lr_max over the first 30%, then linear decay to lr_max/1000."""
    if not 0 <= step < cfg.steps:
        raise ValueError(f"step {step} outside [0, {cfg.steps})")
    lo, hi, end = cfg.lr_max / cfg.start_div, cfg.lr_max, cfg.lr_max / cfg.final_div
    peak = cfg.warmup_frac * cfg.steps
    last = cfg.steps - 1
    if step <= peak:
        return lo + (hi - lo) * (step / peak) if peak > 0 else hi
    if last <= peak:
        return hi
    return hi + (end - hi) * ((step - peak) / (last - peak))


def scene_seed(seed: int, step: int, index: int) -> int:
    """Counter-derived scene seed, independent of execution order."""
    return int(np.random.SeedSequence([seed, step, index]).generate_state(1, dtype=np.uint64)[0])


HELD_OUT_STEP = 2 ** 31


def held_out_batch(cfg: TrainConfig):
    return [gen_scene(SceneSpec(scene_seed(cfg.seed, HELD_OUT_STEP, i), cfg.width, cfg.height,
                                cfg.layers, cfg.d_max)) for i in range(cfg.eval_batch)]


def evaluate_epe(params: ParamStore, cfg: ModelConfig, batch) -> dict:
    """Mean end-point and >1px error of the final disparity over a batch."""
    errs = []
    for pair, gt in batch:
        trace = run_iterations(pair, params, cfg)
        e = np.abs(trace.final.value.astype(np.float64) - gt.values)[gt.valid]
        errs.append(e)
    e = np.concatenate(errs)
    return {"epe": float(e.mean()), "bad1": float((e > 1).mean())}


class MomentumSGD:
    def __init__(self, store: ParamStore, momentum: float = 0.9, clip: float = 1.0):
        self.store = store
        self.momentum = momentum
        self.clip = clip
        self.velocity = {n: np.zeros_like(p.value) for n, p in store.items()}

    def clip_grads(self) -> float:
        """Scale gradients so the global norm is at most ``clip``; returns the pre-clip norm."""
        norm = self.store.grad_norm()
        if norm > self.clip:
            scale = self.clip / (norm + 1e-12)
            for node in self.store.entries.values():
                if node._grad is not None:
                    node._grad = node._grad * np.asarray(scale, dtype=node.dtype)
        return norm

    def step(self, lr: float):
        for name, node in self.store.items():
            g = node._grad if node._grad is not None else np.zeros_like(node.value)
            v = self.velocity[name]
            v *= self.momentum
            v += g
            node.value = (node.value - np.asarray(lr, dtype=node.dtype) * v).astype(node.dtype)


class NonFiniteLossError(FloatingPointError):
    pass


def train(cfg: TrainConfig, params: ParamStore | None = None, stream: TextIO | None = None,
          checkpoint_dir=None, on_step: Callable | None = None):
    """Train with momentum SGD on freshly generated scenes.

    Emits one JSON line per step to ``stream`` (step, lr, losses, grad norm)
    and, every ``eval_every`` steps and at the end, the held-out EPE.
    Returns (params, list of metric records).
    """
    params = params if params is not None else init_params(cfg.model, cfg.seed)
    opt = MomentumSGD(params, cfg.momentum, cfg.clip)
    held = held_out_batch(cfg) if cfg.eval_every else None
    records = []

    def emit(rec):
        records.append(rec)
        if stream is not None:
            stream.write(json.dumps(rec) + "\n")

    for step in range(cfg.steps):
        lr = one_cycle_lr(step, cfg)
        params.zero_grad()
        reports = []
        for i in range(cfg.batch):
            pair, gt = gen_scene(SceneSpec(scene_seed(cfg.seed, step, i), cfg.width, cfg.height,
                                           cfg.layers, cfg.d_max))
            trace = run_iterations(pair, params, cfg.model)
            loss, report = total_loss(trace, gt.values, gt.valid, cfg.loss, cfg.uec_gt, cfg.loss_kind)
            _check_report(report, step)
            gc.backward(loss * (1.0 / cfg.batch))
            reports.append(report)
        norm = opt.clip_grads()
        opt.step(lr)
        rec = {"step": step, "lr": lr, "grad_norm": norm}
        for key in ("l_init", "l_udr", "l_udc", "l_uec", "l_total"):
            rec[key] = float(np.mean([getattr(r, key) for r in reports]))
        if held is not None and ((step + 1) % cfg.eval_every == 0 or step + 1 == cfg.steps):
            rec.update({f"heldout_{k}": v for k, v in evaluate_epe(params, cfg.model, held).items()})
        emit(rec)
        if checkpoint_dir is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(params, Path(checkpoint_dir) / f"step_{step + 1:06d}.drsk")
        if on_step is not None:
            on_step(step, params, rec)
    return params, records


def _check_report(report, step):
    for key in ("l_init", "l_udr", "l_udc", "l_uec", "l_total"):
        if not math.isfinite(getattr(report, key)):
            raise NonFiniteLossError(f"step {step}: non-finite loss term {key}={getattr(report, key)}")
