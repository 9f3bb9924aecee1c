"""
Synthetic scenes and a short training run
=========================================

Scenes are stacks of textured, vertically slanted layers. The right view
is rendered first; the left view samples it through the ground-truth
disparity wherever the point is visible in both, so re-warping is exact
on valid pixels. Training uses momentum SGD with a one-cycle schedule.
"""

import numpy as np

from drstereo.rectifier import ModelConfig, init_params
from drstereo.synthtrain import (SceneSpec, TrainConfig, evaluate_epe, gen_scene, held_out_batch,
                                 one_cycle_lr, train, warp_right_to_left)

pair, gt = gen_scene(SceneSpec(seed=5, width=48, height=32, layers=3, d_max=12.0))
rewarp = warp_right_to_left(pair.right, gt.values)
print("valid fraction", round(float(gt.valid.mean()), 3),
      " max re-warp error on valid pixels", float(np.abs(rewarp - pair.left[0])[gt.valid].max()))

cfg = TrainConfig(steps=800, width=32, height=32, d_max=12.0, eval_every=200, eval_batch=4, seed=7,
                  model=ModelConfig(max_disp=16, groups=4, radius=1, hidden=16, total_itr=4))
print("lr at start / peak / end:", one_cycle_lr(0, cfg), one_cycle_lr(240, cfg), one_cycle_lr(799, cfg))
untrained = evaluate_epe(init_params(cfg.model, cfg.seed), cfg.model, held_out_batch(cfg))
print(f"untrained held-out EPE {untrained['epe']:.3f}  >1px {untrained['bad1']:.3f}")


def show(step, params, rec):
    if "heldout_epe" in rec:
        print(f"step {step + 1:4d}  loss {rec['l_total']:.3f}  held-out EPE {rec['heldout_epe']:.3f}  "
              f">1px {rec['heldout_bad1']:.3f}")


params, records = train(cfg, on_step=show)
