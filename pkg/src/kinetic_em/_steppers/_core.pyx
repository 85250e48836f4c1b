# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled stepping kernel; see _numpy.py for the operation-order contract."""

from libc.math cimport erf

KIND_ZERO = 0
KIND_CONSTANT = 1
KIND_LINEAR_FRICTION = 2
KIND_SIGN_VELOCITY = 3


def step_closed_form(const double[:, :, ::1] dW, const double[:, :, ::1] dI,
                     double[:, ::1] x, double[:, ::1] v,
                     double h, int kind, const double[::1] params,
                     x_rec=None, v_rec=None, Py_ssize_t stride=0):
    cdef Py_ssize_t steps = dW.shape[0]
    cdef Py_ssize_t m = dW.shape[1]
    cdef Py_ssize_t d = dW.shape[2]
    cdef Py_ssize_t k, j, i, r = 0
    cdef double hh2 = 0.5 * h * h
    cdef double g = params[0]
    cdef double c, xn
    cdef double[:, :, ::1] xr
    cdef double[:, :, ::1] vr
    cdef bint record = stride > 0
    if record:
        xr = x_rec
        vr = v_rec
    with nogil:
        for k in range(steps):
            for j in range(m):
                for i in range(d):
                    if kind == 0:
                        xn = (x[j, i] + h * v[j, i]) + dI[k, j, i]
                        v[j, i] = v[j, i] + dW[k, j, i]
                    else:
                        if kind == 3:
                            c = erf(g * v[j, i])
                        elif kind == 2:
                            c = -g * v[j, i]
                        else:
                            c = params[i]
                        xn = ((x[j, i] + h * v[j, i]) + hh2 * c) + dI[k, j, i]
                        v[j, i] = (v[j, i] + h * c) + dW[k, j, i]
                    x[j, i] = xn
            if record and (k + 1) % stride == 0:
                for j in range(m):
                    for i in range(d):
                        xr[r, j, i] = x[j, i]
                        vr[r, j, i] = v[j, i]
                r += 1
