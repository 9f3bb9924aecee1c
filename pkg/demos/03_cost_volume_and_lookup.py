"""
Cost volumes and disparity lookup
=================================

Features from a two-layer encoder are compared across candidate
disparities. The group-wise volume keeps G similarity channels; a pooled
second level covers twice the range at half resolution. The lookup
samples both levels in a window around the current disparity.
"""

import numpy as np

from drstereo.costvol import LookupConfig, build_volume, encode, init_disparity, lookup
from drstereo.rectifier import ModelConfig, init_params
from drstereo.synthtrain import SceneSpec, gen_scene

cfg = ModelConfig(channels=16, groups=4, max_disp=16, radius=2)
params = init_params(cfg, seed=0)
pair, gt = gen_scene(SceneSpec(seed=4, width=48, height=32, d_max=12.0))

feats = encode(pair, params)
print("features", feats.left.shape)

for variant in ("correlation", "gwc"):
    vol = build_volume(feats, cfg.max_disp, variant, cfg.groups, params)
    print(f"{variant:12s} level0 {vol.level0.shape}  level1 {vol.level1.shape}")

vol = build_volume(feats, cfg.max_disp, "gwc", cfg.groups)
d0 = init_disparity(vol, temperature=1.0)
print("soft-argmin initial disparity: mean", float(d0.value.mean()),
      "EPE vs ground truth", float(np.abs(d0.value - gt.values)[gt.valid].mean()))

g = lookup(vol, d0, LookupConfig(cfg.radius))
print("lookup features", g.shape, "= 2 * (2r + 1) * G =", LookupConfig(cfg.radius).feature_size(cfg.groups))
