"""Disparity updates: one-shot rectification, the GRU update unit, conditioned steps, and the iteration driver."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import gridcore as gc
from .costvol import (LookupConfig, build_volume, encode, init_cat_projection, init_disparity,
                      init_encoder, lookup)
from .gridcore import Node, ParamStore
from .stereoio import ImagePair
from .uec import estimate_uncertainty, init_uec_head

DISP_ENCODING_CHANNELS = 3


@dataclass(frozen=True)
class UdrConfig:
    s: float = 1.0

    def __post_init__(self):
        if self.s <= 0:
            raise ValueError("UDR magnitude s must be positive")


@dataclass(frozen=True)
class UdcConfig:
    m: float = 2.0
    total_itr: int = 10

    def __post_init__(self):
        if self.m <= 0:
            raise ValueError("UDC modulation m must be positive")
        if self.total_itr < 0:
            raise ValueError("total_itr must be non-negative")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and update settings shared by training and inference."""

    channels: int = 16
    groups: int = 8
    max_disp: int = 32
    variant: str = "gwc"
    radius: int = 2
    temperature: float = 1.0
    hidden: int = 32
    s: float = 1.0
    m: float = 2.0
    total_itr: int = 10
    udr: bool = True
    udc: bool = True

    @property
    def lookup(self) -> LookupConfig:
        return LookupConfig(self.radius)

    @property
    def udr_cfg(self) -> UdrConfig:
        return UdrConfig(self.s)

    @property
    def udc_cfg(self) -> UdcConfig:
        return UdcConfig(self.m, self.total_itr)

    @property
    def effective_groups(self) -> int:
        return 1 if self.variant == "correlation" else self.groups

    @property
    def features(self) -> int:
        return self.lookup.feature_size(self.effective_groups)

    def with_(self, **kw) -> "ModelConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown ModelConfig keys: {sorted(unknown)}")
        return cls(**d)


def init_update_unit(store: ParamStore, features: int, hidden: int) -> None:
    cin = features + DISP_ENCODING_CHANNELS + hidden
    store.add("gru.zr.w", (2 * hidden, cin, 3, 3))
    store.add("gru.zr.b", (2 * hidden,), init="zeros")
    store.add("gru.q.w", (hidden, cin, 3, 3))
    store.add("gru.q.b", (hidden,), init="zeros")
    store.add("dec.w", (1, hidden))
    store.add("dec.b", (1,), init="zeros")


def init_params(cfg: ModelConfig, seed: int = 0) -> ParamStore:
    """Fresh parameter store for every learned component, in a fixed order."""
    store = ParamStore(seed)
    init_encoder(store, cfg.channels)
    if cfg.variant == "cat":
        init_cat_projection(store, cfg.channels, cfg.groups)
    init_uec_head(store, cfg.features)
    init_update_unit(store, cfg.features, cfg.hidden)
    return store


PARAM_GROUPS = {
    "encoder": "enc.",
    "cat-projection": "cat.",
    "uec-head": "uec.",
    "gru": "gru.",
    "decoder": "dec.",
}


def udr_step(d: Node, vol, params: ParamStore, cfg: UdrConfig, lookup_cfg: LookupConfig) -> Node:
    """d + s * (U(d - s) - U(d + s)); the step never exceeds s in magnitude."""
    u_minus = estimate_uncertainty(lookup(vol, d - cfg.s, lookup_cfg), params)
    u_plus = estimate_uncertainty(lookup(vol, d + cfg.s, lookup_cfg), params)
    return d + (u_minus - u_plus) * cfg.s


# x-gradient and y-gradient kernels for the disparity encoding (fixed, not learned)
_GRAD_KERNEL = np.zeros((2, 1, 3, 3))
_GRAD_KERNEL[0, 0, 1] = (-0.5, 0.0, 0.5)
_GRAD_KERNEL[1, 0, :, 1] = (-0.5, 0.0, 0.5)


def encode_disparity(d: Node, max_disp: int) -> Node:
    """(3, H, W): d / D and its central-difference spatial gradients."""
    d1 = gc.reshape(d, (1,) + d.shape)
    grads = gc.conv3x3(d1, gc.constant(_GRAD_KERNEL, d.dtype))
    return gc.concat([d1 * (1.0 / max_disp), grads], axis=0)


def update_unit(feats: Node, h: Node, d: Node, params: ParamStore, max_disp: int):
    """One convolutional GRU step followed by the disparity decoder.

    Returns (new hidden state, raw disparity update of shape (H, W)).
    """
    hidden = params["gru.q.w"].shape[0]
    cin = params["gru.q.w"].shape[1]
    if h.shape[0] != hidden or feats.shape[0] + DISP_ENCODING_CHANNELS + hidden != cin:
        raise gc.ShapeError(
            f"update_unit: parameters expect {cin} input channels, got "
            f"{feats.shape[0]} features + {DISP_ENCODING_CHANNELS} + {h.shape[0]} hidden")
    x = gc.concat([feats, encode_disparity(d, max_disp)], axis=0)
    zr = gc.sigmoid(gc.conv3x3(gc.concat([x, h], axis=0), params["gru.zr.w"], params["gru.zr.b"]))
    z, r = gc.split(zr, (hidden, hidden))
    q = gc.tanh(gc.conv3x3(gc.concat([x, r * h], axis=0), params["gru.q.w"], params["gru.q.b"]))
    h_new = (1.0 - z) * h + z * q
    raw = gc.linear(h_new, params["dec.w"], params["dec.b"])
    return h_new, gc.reshape(raw, d.shape)


def udc_step(d: Node, raw_delta: Node, u: Node, cfg: UdcConfig) -> Node:
    """d + m * tanh(raw / m) * (1 + 0.5 * U); |step| < 1.5 m."""
    return d + gc.tanh(raw_delta * (1.0 / cfg.m)) * (u * 0.5 + 1.0) * cfg.m


@dataclass
class IterationStep:
    d: Node          # disparity after this step
    delta: Node      # applied update, d_next - d_prev
    u: Node          # uncertainty of the disparity this step started from
    raw: Node        # decoder output before conditioning


@dataclass
class IterationTrace:
    d0: Node
    d_udr: Node
    steps: list = field(default_factory=list)
    u_final: Node | None = None    # uncertainty of the last disparity
    volume: object = None

    @property
    def final(self) -> Node:
        return self.steps[-1].d if self.steps else self.d_udr

    def disparities(self) -> list:
        return [s.d for s in self.steps]

    def uncertainties(self) -> list:
        """U(d_UDC^i) for i = 1..total_itr."""
        return [s.u for s in self.steps[1:]] + ([self.u_final] if self.u_final is not None else [])


def run_iterations(pair: ImagePair, params: ParamStore, cfg: ModelConfig,
                   d0_override=None, detach: bool = True) -> IterationTrace:
    """encode -> volume -> soft-argmin -> UDR once -> total_itr x (lookup, UEC, GRU, UDC).

    With ``cfg.udc`` off, the raw decoder output is added unmodulated.  With
    ``detach`` the disparity is cut from the graph before every lookup, so
    each step's loss trains only that step's update.  ``d0_override``
    replaces the soft-argmin initial disparity (used to corrupt it).
    """
    feats = encode(pair, params)
    vol = build_volume(feats, cfg.max_disp, cfg.variant, cfg.groups, params)
    d0 = init_disparity(vol, cfg.temperature)
    if d0_override is not None:
        d0 = gc.constant(np.asarray(d0_override), d0.dtype)
    lk = cfg.lookup
    if cfg.udr:
        base = gc.detach(d0) if detach else d0
        rect = udr_step(base, vol, params, cfg.udr_cfg, lk)
        d_udr = d0 + (rect - base) if detach else rect
    else:
        d_udr = d0
    trace = IterationTrace(d0, d_udr, volume=vol)
    h = gc.constant(np.zeros((cfg.hidden,) + d0.shape), d0.dtype)
    d = d_udr
    udc_cfg = cfg.udc_cfg
    for _ in range(cfg.total_itr):
        d_in = gc.detach(d) if detach else d
        g = lookup(vol, d_in, lk)
        u = estimate_uncertainty(g, params)
        h, raw = update_unit(g, h, d_in, params, cfg.max_disp)
        d_next = udc_step(d_in, raw, u, udc_cfg) if cfg.udc else d_in + raw
        delta = d_next - d_in
        trace.steps.append(IterationStep(d_next, delta, u, raw))
        d = d_next
    if cfg.total_itr:
        d_last = gc.detach(d) if detach else d
        trace.u_final = estimate_uncertainty(lookup(vol, d_last, lk), params)
    return trace
