"""Scalar grid-search oracle for the single-outlier calibration example.

Reservoir: 999 evenly spaced values in [-1, 1] plus one 10.0. Arithmetic
mirrors the f32 quantize-dequantize path; the loss is summed in float64.
"""
import numpy as np


def loss(x, alpha, bits):
    x = x.astype(np.float32)
    alpha = np.float32(alpha)
    top = 2 ** (bits - 1) - 1
    s = np.float32(top) / alpha
    q = np.clip(np.round(np.clip(x, -alpha, alpha) * s), -top, top).astype(np.float32)
    d = (q / s).astype(np.float64) - x.astype(np.float64)
    return (d * d).sum()


grid = [np.float32(0.2) + np.float32(0.8) * np.float32(i) / np.float32(79) for i in range(79)]
grid.append(np.float32(1.0))
x = np.append((-1.0 + 2.0 * np.arange(999) / 998.0).astype(np.float32), np.float32(10.0))
for bits in (8, 4):
    losses = [loss(x, np.float32(r) * np.float32(10.0), bits) for r in grid]
    best = max(i for i in range(len(grid)) if losses[i] == min(losses))
    print(bits, repr(float(grid[best])), repr(losses[best]), repr(losses[-1]))
