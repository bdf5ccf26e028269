"""NumPy implementation of the wave-equation stencil step.

The compiled extension (pgasrt._stencil_core) evaluates the identical
per-element expression tree in the identical order, so the two backends
produce bit-identical fields. Keep the operation order here in sync with
the extension: first-difference term assigned, higher offsets added in
ascending order, axis sums folded x, y, z.
"""

from __future__ import annotations

import numpy as np


def step(cur_p: np.ndarray, prev: np.ndarray, out: np.ndarray,
         coeffs, scale: float) -> None:
    """One explicit update: out <- 2*cur - prev + scale * laplacian(cur).

    cur_p is padded by h ghost cells in y and z (zeros at the physical
    boundary); its x extent already carries the exchanged halo planes.
    prev and out are unpadded in y/z: shape (lx + 2h, ny, nz). Only the x
    interior [h, h+lx) of out is written.
    """
    h = len(coeffs) - 1
    lx = out.shape[0] - 2 * h
    ny, nz = out.shape[1], out.shape[2]

    a0 = cur_p[h:h + lx, h:h + ny, h:h + nz]

    def shifted(axis, o):
        if axis == 0:
            return cur_p[h - o:h + lx - o, h:h + ny, h:h + nz], \
                   cur_p[h + o:h + lx + o, h:h + ny, h:h + nz]
        if axis == 1:
            return cur_p[h:h + lx, h - o:h + ny - o, h:h + nz], \
                   cur_p[h:h + lx, h + o:h + ny + o, h:h + nz]
        return cur_p[h:h + lx, h:h + ny, h - o:h + nz - o], \
               cur_p[h:h + lx, h:h + ny, h + o:h + nz + o]

    axis_sums = []
    for axis in range(3):
        minus, plus = shifted(axis, 1)
        s = coeffs[1] * (minus + plus)
        for o in range(2, h + 1):
            minus, plus = shifted(axis, o)
            s = s + coeffs[o] * (minus + plus)
        axis_sums.append(s)

    lap = (3.0 * coeffs[0]) * a0
    lap = lap + axis_sums[0]
    lap = lap + axis_sums[1]
    lap = lap + axis_sums[2]
    out[h:h + lx, :, :] = (2.0 * a0 - prev[h:h + lx, :, :]) + scale * lap
