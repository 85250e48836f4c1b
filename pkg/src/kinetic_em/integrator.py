"""The tamed, transport-shifted Euler scheme and its reference solvers.

Grid update over a step of size h, driven by the augmented increments
(dW, dI) of a shared path:

    V_{k+1} = V_k + B + dW,        B = int_0^h b_n(x_k + s v_k, v_k) ds,
    X_{k+1} = X_k + h V_k + A + dI, A = int_0^h (h - r) b_n(x_k + r v_k, v_k) dr.

The drift is evaluated along the free flow from the step start (the
transport shift); dI realizes the integral of (W_s - W_step start) so the
X-component is the exact time integral of V modulo sub-step quadrature, and
A is the matching iterated drift integral.  Dropping A would change the
scheme: the whole point of the shifted construction is that the X-update
stays exact to the order the velocity update supports.

For drift kinds whose mollification depends on v only (every closed-form
catalog entry) the integrand is constant in s, so B = h*b_n(v) and
A = h^2/2 * b_n(v) exactly and the stepping backend skips the quadrature.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, TextIO

import mpmath
import numpy as np

from . import _steppers
from ._rng import ROLE_OU_RESIDUAL, normal_words, stream_key
from .drifts import (
    CLOSED_FORM_KINDS,
    MollifiedDrift,
    mollify,
    mollify_evaluate_arrays,
)
from .errors import ConfigError, DomainError
from .kernel import PhaseState, as_phase_state
from .paths import AugmentedPath, GridSpec

__all__ = [
    "SchemeConfig",
    "Trajectory",
    "SubstepIntegrals",
    "substep_integrals",
    "integrate",
    "step_block",
    "exact_linear_solve",
    "exact_linear_block",
    "reference_solve",
    "trajectory_to_csv",
    "ou_step_coefficients",
]

Initial = PhaseState | tuple | Callable[[np.random.Generator], tuple]


@dataclass(frozen=True)
class SchemeConfig:
    """Scheme parameters: grid level, taming exponent, sub-step quadrature, initial state.

    `initial` is a PhaseState (or (x, v) pair) for a deterministic start, or
    a callable rng -> (x, v) sampling the initial law; None means the origin.
    """

    grid: GridSpec
    theta: float = 0.5
    quad_order: int = 8
    initial: Initial | None = None

    def __post_init__(self):
        if not (self.theta > 0 and math.isfinite(self.theta)):
            raise ConfigError(f"taming exponent must be positive, got {self.theta}")
        if not (isinstance(self.quad_order, (int, np.integer)) and self.quad_order >= 1):
            raise ConfigError(f"quad_order must be a positive integer, got {self.quad_order}")
        object.__setattr__(self, "quad_order", int(self.quad_order))


@dataclass(frozen=True)
class Trajectory:
    """Scheme states at grid times, with the provenance needed to reproduce them."""

    times: np.ndarray
    x: np.ndarray
    v: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        x = np.asarray(self.x, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if x.ndim != 2 or v.shape != x.shape or t.shape != (x.shape[0],):
            raise ConfigError(
                f"inconsistent trajectory shapes: times {t.shape}, x {x.shape}, v {v.shape}"
            )
        for name, arr in (("times", t), ("x", x), ("v", v)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.times.size

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def state(self, k: int) -> PhaseState:
        return PhaseState(self.x[k], self.v[k])

    @property
    def final(self) -> PhaseState:
        return self.state(len(self) - 1)


@dataclass(frozen=True)
class SubstepIntegrals:
    """Drift integrals over one step: B (velocity update) and A (iterated, position update)."""

    B: np.ndarray
    A: np.ndarray


def _legendre_rule(h: float, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights on [0, h]; weights sum to h."""
    y, w = np.polynomial.legendre.leggauss(order)
    return (y + 1.0) * (0.5 * h), w * (0.5 * h)


def substep_integrals(md: MollifiedDrift, z, h: float, quad_order: int = 8) -> SubstepIntegrals:
    """Quadrature of the shifted drift over one step from the frozen state z.

    B integrates s -> b_n(x + s v, v) over [0, h]; A integrates the same
    values against the weight (h - s), the order-exchanged form of the
    iterated integral.
    """
    if not h > 0:
        raise DomainError(f"step size must be positive, got {h}")
    if quad_order < 1:
        raise ConfigError(f"quad_order must be >= 1, got {quad_order}")
    zz = as_phase_state(z)
    nodes, weights = _legendre_rule(h, quad_order)
    vals = mollify_evaluate_arrays(
        md, zz.x[None, :] + nodes[:, None] * zz.v[None, :],
        np.broadcast_to(zz.v, (quad_order, zz.d)).copy(),
    )
    b = weights @ vals
    a = (weights * (h - nodes)) @ vals
    return SubstepIntegrals(B=b, A=a)


def closed_form_code(md: MollifiedDrift, d: int) -> tuple[int, np.ndarray] | None:
    """Backend kind code and parameter vector, or None for quadrature kinds."""
    kind = md.base.kind
    if kind not in CLOSED_FORM_KINDS:
        return None
    if kind == "zero":
        return _steppers.KIND_ZERO, np.zeros(1)
    if kind == "constant":
        c = np.asarray(md.base.constant, dtype=np.float64)
        if c.size == 1:
            c = np.full(d, c[0])
        elif c.size != d:
            raise DomainError(f"constant drift has length {c.size}, dimension is {d}")
        return _steppers.KIND_CONSTANT, c
    if kind == "linear_friction":
        return _steppers.KIND_LINEAR_FRICTION, np.array([md.base.gamma])
    scale = float(md.n) ** md.theta / math.sqrt(2.0)
    return _steppers.KIND_SIGN_VELOCITY, np.array([scale])


def step_block(
    md: MollifiedDrift,
    h: float,
    dW: np.ndarray,
    dI: np.ndarray,
    x: np.ndarray,
    v: np.ndarray,
    quad_order: int = 8,
    record_stride: int = 0,
) -> tuple[np.ndarray, np.ndarray] | None:
    """March a block of paths in place; the Monte Carlo hot loop.

    dW, dI have shape (steps, M, d) and x, v shape (M, d).  With
    record_stride = s > 0 the state after every s-th step is stored and the
    pair of arrays (steps//s, M, d) is returned.

    Closed-form drift kinds run in the selected stepping backend; kinds that
    need quadrature take the generic NumPy route with Gauss-Legendre in the
    shift variable.
    """
    steps, m, d = dW.shape
    if record_stride and steps % record_stride:
        raise ConfigError(f"record stride {record_stride} must divide the step count {steps}")
    x_rec = v_rec = None
    if record_stride:
        slots = steps // record_stride
        x_rec = np.empty((slots, m, d))
        v_rec = np.empty((slots, m, d))
    code = closed_form_code(md, d)
    if code is not None:
        kind, params = code
        _steppers.step_closed_form(
            dW, dI, x, v, h, kind, params, x_rec, v_rec, record_stride
        )
        return (x_rec, v_rec) if record_stride else None
    nodes, weights = _legendre_rule(h, quad_order)
    w_a = weights * (h - nodes)
    r = 0
    vb = np.empty((quad_order, m, d))
    for k in range(steps):
        vb[:] = v[None, :, :]
        vals = mollify_evaluate_arrays(md, x[None, :, :] + nodes[:, None, None] * v, vb)
        b = np.tensordot(weights, vals, axes=1)
        a = np.tensordot(w_a, vals, axes=1)
        xn = ((x + h * v) + a) + dI[k]
        vn = (v + b) + dW[k]
        x[...] = xn
        v[...] = vn
        if record_stride and (k + 1) % record_stride == 0:
            x_rec[r] = x
            v_rec[r] = v
            r += 1
    return (x_rec, v_rec) if record_stride else None


def resolve_initial(initial: Initial | None, d: int,
                    rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Materialize the initial (x0, v0) pair as length-d arrays."""
    if initial is None:
        return np.zeros(d), np.zeros(d)
    if callable(initial):
        if rng is None:
            raise ConfigError("a sampled initial law needs an explicit generator")
        initial = initial(rng)
    zz = as_phase_state(initial)
    if zz.d != d:
        raise ConfigError(f"initial state has dimension {zz.d}, grid has {d}")
    return zz.x.copy(), zz.v.copy()


def integrate(
    config: SchemeConfig,
    md: MollifiedDrift,
    path: AugmentedPath,
    initial_rng: np.random.Generator | None = None,
) -> Trajectory:
    """Run the scheme over one augmented path; states at every grid point."""
    if config.grid != path.grid:
        raise ConfigError(
            f"scheme grid {config.grid} does not match path grid {path.grid}"
        )
    g = config.grid
    x0, v0 = resolve_initial(config.initial, g.d, initial_rng)
    x = x0[None, :].copy()
    v = v0[None, :].copy()
    steps = g.num_steps
    rec = step_block(
        md, g.h,
        np.ascontiguousarray(path.dW[:, None, :]),
        np.ascontiguousarray(path.dI[:, None, :]),
        x, v, quad_order=config.quad_order, record_stride=1,
    )
    xs = np.vstack([x0[None, :], rec[0][:, 0, :]])
    vs = np.vstack([v0[None, :], rec[1][:, 0, :]])
    return Trajectory(
        times=g.times(), x=xs, v=vs,
        provenance={
            "n": g.n, "horizon": g.horizon, "seed": path.seed,
            "stream_id": path.stream_id, "drift": md.base.drift_id,
            "theta": config.theta, "quad_order": config.quad_order,
            "mollification_n": md.n,
        },
    )


@functools.lru_cache(maxsize=256)
def ou_step_coefficients(gamma: float, h: float):
    """Exact one-step quantities for dX = V dt, dV = -gamma V dt + dW.

    Returns (a, c1, C, L, Q):
      a  = exp(-gamma h), the velocity decay;
      c1 = (1 - a)/gamma, the position load on V_k;
      C  = 2x2 matrix with E[(N_V, N_X) | dW, dI] = C @ (dW, dI);
      L  = Cholesky factor of the conditional residual covariance;
      Q  = unconditional covariance of (N_V, N_X), for validation.

    The entries suffer catastrophic cancellation for small gamma*h in double
    precision, so everything is evaluated with mpmath at 60 digits and cast
    once.  gamma = 0 degenerates to free flow: N = (dW, dI) exactly.
    """
    if gamma < 0:
        raise DomainError(f"friction must be >= 0, got {gamma}")
    if not h > 0:
        raise DomainError(f"step size must be positive, got {h}")
    if gamma == 0.0:
        return 1.0, h, np.eye(2), np.zeros((2, 2)), np.array(
            [[h, h * h / 2.0], [h * h / 2.0, h**3 / 3.0]]
        )
    with mpmath.workdps(60):
        g = mpmath.mpf(gamma)
        hh = mpmath.mpf(h)
        e = mpmath.e**(-g * hh)
        e2 = mpmath.e**(-2 * g * hh)
        c1 = (1 - e) / g
        qvv = (1 - e2) / (2 * g)
        qvx = (c1 - qvv) / g
        qxx = (hh - 2 * c1 + qvv) / g**2
        c3 = (1 - e * (1 + g * hh)) / g**2
        c2 = (hh - c1) / g
        c4 = (hh**2 / 2 - c3) / g
        kmat = mpmath.matrix([[c1, c3], [c2, c4]])
        det = hh**4 / 12
        sinv = mpmath.matrix([[hh**3 / 3, -hh**2 / 2], [-hh**2 / 2, hh]]) / det
        cmat = kmat * sinv
        q = mpmath.matrix([[qvv, qvx], [qvx, qxx]])
        r = q - cmat * kmat.T
        r00 = max(r[0, 0], mpmath.mpf(0))
        l00 = mpmath.sqrt(r00)
        l10 = r[1, 0] / l00 if l00 > 0 else mpmath.mpf(0)
        l11 = mpmath.sqrt(max(r[1, 1] - l10**2, mpmath.mpf(0)))
        a_f = float(e)
        c1_f = float(c1)
        c_f = np.array([[float(cmat[0, 0]), float(cmat[0, 1])],
                        [float(cmat[1, 0]), float(cmat[1, 1])]])
        l_f = np.array([[float(l00), 0.0], [float(l10), float(l11)]])
        q_f = np.array([[float(q[0, 0]), float(q[0, 1])],
                        [float(q[1, 0]), float(q[1, 1])]])
    return a_f, c1_f, c_f, l_f, q_f


def exact_linear_block(
    gamma: float,
    h: float,
    dW: np.ndarray,
    dI: np.ndarray,
    zeta: np.ndarray,
    x: np.ndarray,
    v: np.ndarray,
    record_stride: int = 0,
) -> tuple[np.ndarray, np.ndarray] | None:
    """Exact strong solution of the linear-friction system over a block of paths.

    Coupled to the augmented increments: per step the exact update noise is
    its conditional mean given (dW, dI) plus a residual built from the unit
    normals `zeta` of shape (steps, M, d, 2).  Driven by the same path this
    is the coupled ground truth for strong-error runs.
    """
    steps, m, d = dW.shape
    a, c1, cmat, lmat, _ = ou_step_coefficients(gamma, h)
    x_rec = v_rec = None
    if record_stride:
        if steps % record_stride:
            raise ConfigError(
                f"record stride {record_stride} must divide the step count {steps}"
            )
        slots = steps // record_stride
        x_rec = np.empty((slots, m, d))
        v_rec = np.empty((slots, m, d))
    r = 0
    for k in range(steps):
        nv = cmat[0, 0] * dW[k] + cmat[0, 1] * dI[k] \
            + lmat[0, 0] * zeta[k, :, :, 0]
        nx = cmat[1, 0] * dW[k] + cmat[1, 1] * dI[k] \
            + lmat[1, 0] * zeta[k, :, :, 0] + lmat[1, 1] * zeta[k, :, :, 1]
        xn = (x + c1 * v) + nx
        vn = a * v + nv
        x[...] = xn
        v[...] = vn
        if record_stride and (k + 1) % record_stride == 0:
            x_rec[r] = x
            v_rec[r] = v
            r += 1
    return (x_rec, v_rec) if record_stride else None


def exact_linear_solve(
    gamma: float,
    initial: Initial | None,
    path: AugmentedPath,
    residual_index: int | None = None,
) -> Trajectory:
    """Exact trajectory of the linear-friction system on the path's grid.

    The conditional residual normals come from a dedicated stream derived
    from the path's seed and `residual_index` (default: the path's stream
    index), so the solution is a deterministic function of the path identity.
    """
    g = path.grid
    x0, v0 = resolve_initial(initial, g.d)
    steps = g.num_steps
    if residual_index is None:
        residual_index = path.stream_id & ((1 << 40) - 1)
    zeta = normal_words(
        path.seed, stream_key(ROLE_OU_RESIDUAL, residual_index), 2 * steps * g.d
    ).reshape(steps, 1, g.d, 2)
    x = x0[None, :].copy()
    v = v0[None, :].copy()
    rec = exact_linear_block(
        gamma, g.h,
        np.ascontiguousarray(path.dW[:, None, :]),
        np.ascontiguousarray(path.dI[:, None, :]),
        zeta, x, v, record_stride=1,
    )
    xs = np.vstack([x0[None, :], rec[0][:, 0, :]])
    vs = np.vstack([v0[None, :], rec[1][:, 0, :]])
    return Trajectory(
        times=g.times(), x=xs, v=vs,
        provenance={
            "n": g.n, "horizon": g.horizon, "seed": path.seed,
            "stream_id": path.stream_id, "drift": f"exact_linear(gamma={gamma!r})",
        },
    )


def reference_solve(drift, theta: float, n_ref: int, path: AugmentedPath,
                    quad_order: int = 8, initial: Initial | None = None) -> Trajectory:
    """The same scheme at resolution n_ref with matching mollification.

    A surrogate for the exact solution when none is available in closed
    form; documented as a reference, not ground truth.
    """
    if path.grid.n != n_ref:
        raise ConfigError(f"reference path has n={path.grid.n}, expected n_ref={n_ref}")
    config = SchemeConfig(grid=path.grid, theta=theta, quad_order=quad_order, initial=initial)
    md = mollify(drift, n_ref, theta, d=path.grid.d)
    return integrate(config, md, path)


def trajectory_to_csv(traj: Trajectory, fh: TextIO) -> None:
    """Write t, x_1..x_d, v_1..v_d rows with provenance comment lines."""
    for key in sorted(traj.provenance):
        fh.write(f"# {key}={traj.provenance[key]}\n")
    d = traj.d
    cols = ["t"] + [f"x_{i+1}" for i in range(d)] + [f"v_{i+1}" for i in range(d)]
    fh.write(",".join(cols) + "\n")
    for k in range(len(traj)):
        row = [repr(float(traj.times[k]))]
        row += [repr(float(traj.x[k, i])) for i in range(d)]
        row += [repr(float(traj.v[k, i])) for i in range(d)]
        fh.write(",".join(row) + "\n")
