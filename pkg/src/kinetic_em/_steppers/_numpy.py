"""Pure-NumPy stepping kernel; mirrors the compiled core operation for operation.

The update order per element is fixed so that both backends round
identically:

    c     = drift(v_k)                      (depends on kind)
    x_k+1 = ((x_k + h*v_k) + (h*h/2)*c) + dI_k
    v_k+1 = (v_k + h*c) + dW_k

The compiled backend uses libm's erf while this one uses scipy's (Cephes);
those may differ in the last bit, so cross-backend agreement for the sign
kind is to ~1 ulp per step, not bitwise.
"""

import numpy as np
from scipy.special import erf

KIND_ZERO = 0
KIND_CONSTANT = 1
KIND_LINEAR_FRICTION = 2
KIND_SIGN_VELOCITY = 3


def step_closed_form(dW, dI, x, v, h, kind, params, x_rec=None, v_rec=None, stride=0):
    """March paths in place through all steps of dW/dI, shape (steps, M, d).

    Records the state after step k+1 into slot (k+1)//stride - 1 whenever
    stride divides k+1.
    """
    steps = dW.shape[0]
    hh2 = 0.5 * h * h
    r = 0
    for k in range(steps):
        if kind == KIND_ZERO:
            xn = (x + h * v) + dI[k]
            vn = v + dW[k]
        else:
            if kind == KIND_SIGN_VELOCITY:
                c = erf(params[0] * v)
            elif kind == KIND_LINEAR_FRICTION:
                c = -params[0] * v
            else:
                c = params
            xn = ((x + h * v) + hh2 * c) + dI[k]
            vn = (v + h * c) + dW[k]
        x[...] = xn
        v[...] = vn
        if stride and (k + 1) % stride == 0:
            x_rec[r] = x
            v_rec[r] = v
            r += 1
