"""Feature encoder, cost volumes, the two-level pyramid, and disparity lookup."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gridcore as gc
from .gridcore import Node, ParamStore
from .stereoio import ImagePair

VARIANTS = ("correlation", "gwc", "cat")


@dataclass
class FeatureMaps:
    left: Node   # (C, H, W)
    right: Node


@dataclass
class CostVolume:
    level0: Node  # (G, D, H, W)
    level1: Node  # (G, ceil(D/2), H, W)
    variant: str

    @property
    def groups(self) -> int:
        return self.level0.shape[0]

    @property
    def depth(self) -> int:
        return self.level0.shape[1]


@dataclass(frozen=True)
class LookupConfig:
    radius: int = 2

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("lookup radius must be >= 0")

    def feature_size(self, groups: int) -> int:
        return 2 * (2 * self.radius + 1) * groups


def init_encoder(store: ParamStore, channels: int = 16) -> None:
    store.add("enc.conv1.w", (channels, 1, 3, 3))
    store.add("enc.conv1.b", (channels,), init="zeros")
    store.add("enc.conv2.w", (channels, channels, 3, 3))
    store.add("enc.conv2.b", (channels,), init="zeros")


def init_cat_projection(store: ParamStore, channels: int, groups: int) -> None:
    store.add("cat.w", (groups, 2 * channels))
    store.add("cat.b", (groups,), init="zeros")


def _encode_one(img: Node, params: ParamStore) -> Node:
    x = gc.relu(gc.conv3x3(img, params["enc.conv1.w"], params["enc.conv1.b"]))
    return gc.conv3x3(x, params["enc.conv2.w"], params["enc.conv2.b"])


def encode(pair: ImagePair, params: ParamStore) -> FeatureMaps:
    """Two shared 3x3 conv layers (relu between) applied to both views."""
    dtype = params.dtype
    left = gc.constant(pair.left, dtype) if not isinstance(pair.left, Node) else pair.left
    right = gc.constant(pair.right, dtype) if not isinstance(pair.right, Node) else pair.right
    return FeatureMaps(_encode_one(left, params), _encode_one(right, params))


def build_volume(feats: FeatureMaps, depth: int, variant: str = "gwc", groups: int = 8,
                 params: ParamStore | None = None) -> CostVolume:
    """Cost volume over disparities 0..depth-1 plus its disparity-pooled level.

    Right features are shifted by d with zero fill beyond the left border.
    """
    if depth < 1:
        raise ValueError(f"disparity range must be >= 1, got {depth}")
    variant = variant.lower()
    c = feats.left.shape[0]
    if variant == "correlation":
        groups = 1
    if variant in ("correlation", "gwc"):
        if groups < 1 or c % groups:
            raise ValueError(f"{groups} groups do not divide {c} feature channels")
        prod = gc.repeat_disparity(feats.left, depth) * gc.shift_stack(feats.right, depth)
        level0 = gc.group_mean(prod, groups)
    elif variant == "cat":
        if params is None:
            raise ValueError("cat volume needs projection parameters")
        w = params["cat.w"]
        if w.shape != (groups, 2 * c):
            raise ValueError(f"cat projection {w.shape} does not match {groups} groups, {c} channels")
        # project([f_l; shift(f_r)]) == W_l f_l + shift(W_r f_r) + b
        wl = gc.take_columns(w, 0, c)
        wr = gc.take_columns(w, c, 2 * c)
        pl = gc.linear(feats.left, wl, params["cat.b"])
        pr = gc.linear(feats.right, wr)
        level0 = gc.repeat_disparity(pl, depth) + gc.shift_stack(pr, depth)
    else:
        raise ValueError(f"unknown volume variant {variant!r}; expected one of {VARIANTS}")
    return CostVolume(level0, gc.avg_pool_disparity(level0), variant)


def lookup(vol: CostVolume, d: Node, cfg: LookupConfig) -> Node:
    """Features G_f(d): both pyramid levels sampled in a window of radius r around d.

    Returns (2 * (2r + 1) * G, H, W): level-0 samples at d + i followed by
    level-1 samples at d/2 + i, for i = -r..r.
    """
    d = d if isinstance(d, Node) else gc.constant(d, vol.level0.dtype)
    if not np.all(np.isfinite(d.value)):
        raise gc.NonFiniteError("lookup: disparity map contains non-finite values")
    offsets = range(-cfg.radius, cfg.radius + 1)
    f0 = gc.gather_disparity(vol.level0, d, offsets)
    f1 = gc.gather_disparity(vol.level1, d * 0.5, offsets)
    return gc.concat([f0, f1], axis=0)


def init_disparity(vol: CostVolume, temperature: float = 1.0) -> Node:
    """Soft-argmin (softmax-weighted mean of disparities) of the group-averaged scores."""
    g_, depth, h, w = vol.level0.shape
    scores = gc.group_mean(vol.level0, 1) if g_ > 1 else vol.level0
    prob = gc.softmax(scores * (1.0 / temperature), axis=1)
    grid = np.broadcast_to(np.arange(depth, dtype=prob.dtype)[None, :, None, None], prob.shape)
    return gc.sum_(prob * gc.constant(grid.copy(), prob.dtype), axis=(0, 1))
