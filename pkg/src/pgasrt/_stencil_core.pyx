# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled wave-equation stencil step.

Mirrors pgasrt.apps._stencil_py.step exactly: same signature, same
per-element operation order, so fields stay bit-identical across backends.
Built with -ffp-contract=off to keep the compiler from fusing the
multiply-adds the numpy version evaluates separately.
"""


def step(double[:, :, ::1] cur_p, double[:, :, ::1] prev,
         double[:, :, ::1] out, double[::1] coeffs, double scale):
    cdef Py_ssize_t h = coeffs.shape[0] - 1
    cdef Py_ssize_t lx = out.shape[0] - 2 * h
    cdef Py_ssize_t ny = out.shape[1]
    cdef Py_ssize_t nz = out.shape[2]
    cdef Py_ssize_t i, j, k, o, jj, kk
    cdef double a0, sx, sy, sz, lap
    cdef double c0x3 = 3.0 * coeffs[0]
    with nogil:
        for i in range(h, h + lx):
            for j in range(ny):
                jj = j + h
                for k in range(nz):
                    kk = k + h
                    a0 = cur_p[i, jj, kk]
                    sx = coeffs[1] * (cur_p[i - 1, jj, kk] + cur_p[i + 1, jj, kk])
                    sy = coeffs[1] * (cur_p[i, jj - 1, kk] + cur_p[i, jj + 1, kk])
                    sz = coeffs[1] * (cur_p[i, jj, kk - 1] + cur_p[i, jj, kk + 1])
                    for o in range(2, h + 1):
                        sx = sx + coeffs[o] * (cur_p[i - o, jj, kk] + cur_p[i + o, jj, kk])
                    for o in range(2, h + 1):
                        sy = sy + coeffs[o] * (cur_p[i, jj - o, kk] + cur_p[i, jj + o, kk])
                    for o in range(2, h + 1):
                        sz = sz + coeffs[o] * (cur_p[i, jj, kk - o] + cur_p[i, jj, kk + o])
                    lap = c0x3 * a0
                    lap = lap + sx
                    lap = lap + sy
                    lap = lap + sz
                    out[i, j, k] = (2.0 * a0 - prev[i, j, k]) + scale * lap
