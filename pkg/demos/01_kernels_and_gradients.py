"""Walk through the 3D kernels: convolution, pooling, and their gradients.

The fast kernels lower onto im2col + matrix multiply; the naive loop
references exist purely to check them. Gradients are verified here against
central finite differences, the same oracle the test suite uses.
"""

import numpy as np

from deeprink.kernels import (
    conv3d,
    conv3d_grad,
    maxpool3d,
    maxpool3d_grad,
    naive_conv3d,
    naive_maxpool3d,
)

rng = np.random.default_rng(0)

print("== valid-padding shape arithmetic ==")
x = rng.normal(size=(1, 15, 32, 32))
kernels = rng.normal(size=(8, 1, 3, 3, 3))
out = conv3d(x, kernels, np.zeros(8))
print(f"input (1,15,32,32) * 8 kernels of 3x3x3 -> {out.shape}")

print("\n== fast kernel vs naive loop oracle ==")
x = rng.normal(size=(2, 4, 4, 4))
kernels = rng.normal(size=(3, 2, 2, 2, 2))
bias = rng.normal(size=3)
fast = conv3d(x, kernels, bias)
slow = naive_conv3d(x, kernels, bias)
print(f"max |fast - naive| = {np.max(np.abs(fast - slow)):.2e}  (tolerance 1e-12)")

pooled, argmax = maxpool3d(x, (2, 2, 2), (2, 2, 2))
ref_pooled, ref_argmax = naive_maxpool3d(x, (2, 2, 2), (2, 2, 2))
print(f"pooling values identical: {np.array_equal(pooled, ref_pooled)}, "
      f"argmax identical: {np.array_equal(argmax, ref_argmax)}")

print("\n== analytic conv gradient vs central differences ==")
upstream = rng.normal(size=fast.shape)
gx, gk, gb = conv3d_grad(upstream, x, kernels)
h = 1e-5
worst = 0.0
for idx in rng.integers(0, kernels.size, size=25):
    flat = kernels.reshape(-1)
    orig = flat[idx]
    flat[idx] = orig + h
    lp = np.sum(upstream * conv3d(x, kernels, bias))
    flat[idx] = orig - h
    lm = np.sum(upstream * conv3d(x, kernels, bias))
    flat[idx] = orig
    numeric = (lp - lm) / (2 * h)
    analytic = gk.reshape(-1)[idx]
    worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8))
print(f"25 sampled kernel weights: worst relative error {worst:.2e}")

print("\n== pooling gradient routes mass to the argmax ==")
grad = maxpool3d_grad(upstream[:, :2, :2, :2] * 0 + 1.0, argmax, x.shape)
print(f"sum(upstream)=8.0, sum(routed grad)={grad.sum():.1f} "
      f"(non-overlapping windows conserve mass)")
nonzero = np.count_nonzero(grad)
print(f"{nonzero} input cells received gradient, one per pooled window")
