"""
The rectification-weighted loss
===============================

Each pixel's smooth-L1 (or L1) term is multiplied by exp(-alpha |e|) + beta,
computed from the current residual and held constant for the gradient.
Small errors get weights near 1 + beta, large ones fall toward beta.
"""

import numpy as np

from drstereo import gridcore as gc
from drstereo.gridcore import Node, backward
from drstereo.loss import DrLossConfig, dr_weight, loss_baseline, loss_init_udr, loss_udc

cfg = DrLossConfig()
e = np.array([0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 64.0])
print("exp weights    ", np.round(dr_weight(e, cfg), 4))
print("sigmoid weights", np.round(dr_weight(e, DrLossConfig(weight_form="sigmoid")), 4))

gt = np.zeros((1, 4))
d = Node(np.array([[0.5, 1.5, 4.0, 20.0]]))
l_init, _ = loss_init_udr(d, Node(d.value.copy()), gt, None, cfg)
backward(l_init)
print("init loss", round(l_init.item(), 4), " per-pixel gradient", np.round(d.grad, 4))

# the plain L1 gradient would be 0.25 per pixel; weights shift emphasis to small errors
steps = [Node(gt + 3.0), Node(gt + 1.0)]
print("discounted weighted L1 over two iterations", round(loss_udc(steps, gt, None, cfg).item(), 4))
print("baseline discounted L1", round(loss_baseline([Node(gt + 2.0), Node(gt + 1.0)], gt, None).item(), 4))
