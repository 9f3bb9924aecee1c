"""
Reverse-mode differentiation on dense grids
===========================================

Every learned piece of the stereo model is built from a small set of
numpy primitives that record a computation graph. Calling ``backward``
on a scalar fills in ``grad`` for each node, and ``grad_check`` compares
those gradients with central differences.
"""

import numpy as np

from drstereo import gridcore as gc
from drstereo.gridcore import Node, backward, grad_check

# a scalar function of a small grid: sum(tanh(x * w))
x = Node(np.array([[0.5, -1.0], [2.0, 0.1]]))
w = Node(np.array([[1.0, 2.0], [0.5, -3.0]]))
loss = gc.sum_(gc.tanh(x * w))
backward(loss)
print("loss", loss.item())
print("d loss / d x\n", x.grad)

# gradients accumulate: a second backward pass doubles them
backward(loss)
print("after a second backward\n", x.grad)

# linear interpolation along the disparity axis (the core of the lookup)
volume = np.arange(5.0)[None, :, None, None] * np.ones((1, 5, 1, 1))
print("gather at 1.5 ->", gc.gather_disparity(Node(volume), Node(np.array([[1.5]]))).item())

# finite-difference check of a 3x3 convolution
rng = np.random.default_rng(0)
kernel = gc.constant(rng.standard_normal((4, 2, 3, 3)))
err = grad_check(lambda n: gc.sum_(gc.tanh(gc.conv3x3(n, kernel))), rng.standard_normal((2, 5, 5)), 1e-6)
print(f"conv3x3 max relative gradient error {err:.2e}")

# shape mismatches name the primitive and both shapes
try:
    Node(np.zeros(2)) + Node(np.zeros(3))
except gc.ShapeError as exc:
    print("error:", exc)
