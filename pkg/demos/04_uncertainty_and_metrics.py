"""
Uncertainty targets, PUE and sparsification AUC
===============================================

The uncertainty head is trained toward a sigmoid of the disparity error.
Two readings of the target are available: ``literal`` uses
sigmoid(a |e| - thr) and ``centered`` uses sigmoid(a (|e| - thr)), which
approaches the hard 0/1 label as ``a`` grows.
"""

import numpy as np

from drstereo.uec import UecGtConfig, metric_auc, metric_pue, sparsification_curve, uncertainty_gt

errors = np.array([0.0, 1.0, 2.0, 2.9, 3.1, 5.0])
zeros = np.zeros_like(errors)
for cfg in (UecGtConfig(1.5, 3.0, "literal"), UecGtConfig(1.5, 3.0, "centered"),
            UecGtConfig(1000.0, 3.0, "centered"), UecGtConfig(1.5, 3.0, "hard")):
    print(f"{cfg.mode:9s} a={cfg.a:<7g}", np.round(uncertainty_gt(errors, zeros, cfg), 4))

# an uncertainty map that ranks the wrong pixels first gives a low AUC
rng = np.random.default_rng(0)
gt = rng.uniform(0, 10, (16, 16))
bad = rng.random((16, 16)) < 0.2
d = gt + np.where(bad, 6.0, 0.3)
informative = np.where(bad, 0.9, 0.1) + rng.uniform(0, 0.05, bad.shape)
random_u = rng.random(bad.shape)
print("AUC informative", round(metric_auc(informative, d, gt), 4),
      " AUC random", round(metric_auc(random_u, d, gt), 4))

fractions, rates = sparsification_curve(informative, d, gt)
print("sparsification curve (first 6 points)", np.round(rates[:6], 3))

target = uncertainty_gt(d, gt)
print("PUE of the informative map", round(metric_pue(informative, target), 4))
