import io
import math

import numpy as np
import pytest

from kinetic_em import _steppers
from kinetic_em.drifts import (
    TabulatedField,
    constant_drift,
    linear_friction,
    mollify,
    mollify_evaluate_arrays,
    oscillatory_singular,
    sign_velocity,
    tabulated_drift,
    zero_drift,
)
from kinetic_em.errors import ConfigError, DomainError
from kinetic_em.integrator import (
    SchemeConfig,
    closed_form_code,
    exact_linear_block,
    exact_linear_solve,
    integrate,
    ou_step_coefficients,
    reference_solve,
    resolve_initial,
    step_block,
    substep_integrals,
    trajectory_to_csv,
)
from kinetic_em.paths import (
    GridSpec,
    prefix_integrals,
    sample_increment_block,
    sample_path,
)


def test_substep_integrals_affine_analytic():
    # affine tabulated field: every stage (bilinear, Gauss-Hermite,
    # Gauss-Legendre) is exact, so the result must match the hand integral
    c0, c1, c2 = 0.4, 1.3, -0.8
    xs = np.linspace(-6, 6, 13)
    vs = np.linspace(-6, 6, 13)
    vals = c0 + c1 * xs[:, None] + c2 * vs[None, :]
    md = mollify(tabulated_drift(TabulatedField(xs, vs, vals)), 16, 0.5)
    x, v, h = 0.3, 0.9, 1.0 / 16
    out = substep_integrals(md, ([x], [v]), h)
    base = c0 + c1 * x + c2 * v
    b_expect = h * base + c1 * v * h**2 / 2
    a_expect = h**2 / 2 * base + c1 * v * h**3 / 6
    assert out.B[0] == pytest.approx(b_expect, abs=1e-12)
    assert out.A[0] == pytest.approx(a_expect, abs=1e-12)


def test_substep_integrals_dense_oracle():
    md = mollify(oscillatory_singular(), 4, 0.5)
    x0, v0, h = np.array([0.3]), np.array([0.9]), 1.0 / 16
    s = np.linspace(0.0, h, 20001)
    vals = mollify_evaluate_arrays(
        md, x0[None, :] + s[:, None] * v0[None, :],
        np.broadcast_to(v0, (s.size, 1)).copy(),
    )[:, 0]
    out = substep_integrals(md, (x0, v0), h)
    assert abs(out.B[0] - np.trapezoid(vals, s)) <= 1e-4
    assert abs(out.A[0] - np.trapezoid((h - s) * vals, s)) <= 1e-4


def test_substep_integrals_frozen_velocity_kinds_are_exact():
    # drifts that depend on v only are constant along the shifted sub-step
    md = mollify(sign_velocity(), 16, 0.5)
    h = 1.0 / 32
    out = substep_integrals(md, ([0.0], [0.4]), h)
    bval = mollify_evaluate_arrays(md, np.zeros((1, 1)), np.full((1, 1), 0.4))[0, 0]
    assert out.B[0] == pytest.approx(h * bval, rel=1e-14)
    assert out.A[0] == pytest.approx(h**2 / 2 * bval, rel=1e-14)


def test_substep_integrals_validation():
    md = mollify(zero_drift(), 4, 0.5)
    with pytest.raises(DomainError):
        substep_integrals(md, ([0.0], [0.0]), 0.0)
    with pytest.raises(ConfigError):
        substep_integrals(md, ([0.0], [0.0]), 0.5, quad_order=0)


def test_closed_form_code_mapping():
    assert closed_form_code(mollify(zero_drift(), 4, 0.5), 1)[0] == _steppers.KIND_ZERO
    kind, params = closed_form_code(mollify(constant_drift(2.0), 4, 0.5, d=3), 3)
    assert kind == _steppers.KIND_CONSTANT
    assert np.array_equal(params, [2.0, 2.0, 2.0])
    kind, params = closed_form_code(mollify(linear_friction(0.25), 4, 0.5), 1)
    assert kind == _steppers.KIND_LINEAR_FRICTION and params[0] == 0.25
    kind, params = closed_form_code(mollify(sign_velocity(), 16, 0.5), 1)
    assert kind == _steppers.KIND_SIGN_VELOCITY
    assert params[0] == pytest.approx(16.0**0.5 / math.sqrt(2.0))
    assert closed_form_code(mollify(oscillatory_singular(), 4, 0.5), 1) is None
    with pytest.raises(DomainError):
        closed_form_code(mollify(constant_drift([1.0, 2.0]), 4, 0.5, d=2), 3)


def test_backend_parity():
    backends = _steppers.available_backends()
    if len(backends) < 2:
        pytest.skip("only one stepper backend built")
    g = GridSpec(n=32, horizon=1.0, d=2)
    dw, di = sample_increment_block(g, 7, range(16))
    cases = [
        (_steppers.KIND_ZERO, np.zeros(1), 0.0),
        (_steppers.KIND_CONSTANT, np.array([0.5, -0.25]), 0.0),
        (_steppers.KIND_LINEAR_FRICTION, np.array([1.0]), 0.0),
        (_steppers.KIND_SIGN_VELOCITY, np.array([4.0]), 1e-12),
    ]
    for kind, params, tol in cases:
        outs = []
        for fn in backends.values():
            x = np.zeros((16, 2))
            v = np.full((16, 2), 0.3)
            fn(dw, di, x, v, g.h, kind, params)
            outs.append((x, v))
        gap = max(
            np.max(np.abs(outs[0][0] - outs[1][0])),
            np.max(np.abs(outs[0][1] - outs[1][1])),
        )
        if tol == 0.0:
            assert gap == 0.0
        else:
            assert gap <= tol


def test_free_flow_reproduces_prefix_integrals():
    for n, d in ((4, 1), (16, 2)):
        g = GridSpec(n=n, horizon=1.0, d=d)
        p = sample_path(g, 3, 5)
        traj = integrate(SchemeConfig(grid=g), mollify(zero_drift(), n, 0.5, d=d), p)
        w, i = prefix_integrals(p.dW, p.dI, g.h)
        t = g.times()[:, None]
        assert np.max(np.abs(traj.v - w)) <= 1e-11
        assert np.max(np.abs(traj.x - i)) <= 1e-11
        # nonzero start just translates the flow
        init = ([1.0] * d, [-0.5] * d)
        traj2 = integrate(
            SchemeConfig(grid=g, initial=init), mollify(zero_drift(), n, 0.5, d=d), p
        )
        assert np.max(np.abs(traj2.v - (w - 0.5))) <= 1e-11
        assert np.max(np.abs(traj2.x - (i + 1.0 - 0.5 * t))) <= 1e-11


def test_constant_drift_closed_form():
    g = GridSpec(n=16, horizon=1.0, d=1)
    p = sample_path(g, 9, 2)
    c = 0.75
    traj = integrate(
        SchemeConfig(grid=g, initial=([0.2], [-0.4])),
        mollify(constant_drift(c), 16, 0.5), p,
    )
    w, i = prefix_integrals(p.dW, p.dI, g.h)
    t = g.times()[:, None]
    assert np.max(np.abs(traj.v - (-0.4 + c * t + w))) <= 1e-10
    assert np.max(np.abs(traj.x - (0.2 - 0.4 * t + c * t**2 / 2 + i))) <= 1e-10


def test_exact_linear_zero_friction_is_free_flow():
    g = GridSpec(n=32, horizon=1.0, d=1)
    p = sample_path(g, 5, 1)
    exact = exact_linear_solve(0.0, None, p)
    w, i = prefix_integrals(p.dW, p.dI, g.h)
    assert np.max(np.abs(exact.v - w)) <= 1e-12
    assert np.max(np.abs(exact.x - i)) <= 1e-12


def test_exact_linear_velocity_variance():
    gamma, m = 1.0, 40000
    g = GridSpec(n=32, horizon=1.0, d=1)
    dw, di = sample_increment_block(g, 21, range(m))
    zeta = np.random.default_rng(4).standard_normal((g.num_steps, m, 1, 2))
    x = np.zeros((m, 1))
    v = np.zeros((m, 1))
    exact_linear_block(gamma, g.h, dw, di, zeta, x, v)
    target = (1.0 - math.exp(-2.0 * gamma)) / (2.0 * gamma)
    tol = 4.0 * target * math.sqrt(2.0 / m)
    assert abs(v[:, 0].var() - target) <= tol


def test_ou_step_coefficients_identity():
    h = 1.0 / 64
    s = np.array([[h, h**2 / 2], [h**2 / 2, h**3 / 3]])
    for gamma in (1e-8, 1e-3, 1.0, 10.0):
        a, c1, cmat, lmat, q = ou_step_coefficients(gamma, h)
        assert a == pytest.approx(math.exp(-gamma * h), rel=1e-15)
        assert c1 == pytest.approx(-math.expm1(-gamma * h) / gamma, rel=1e-13)
        recon = cmat @ s @ cmat.T + lmat @ lmat.T
        # the identity holds exactly upstream; only the final float64
        # rounding of the coefficients survives
        assert np.max(np.abs(recon - q)) <= 4 * np.finfo(float).eps * np.max(q)
    a, c1, cmat, lmat, q = ou_step_coefficients(0.0, h)
    assert a == 1.0 and c1 == h
    assert np.array_equal(cmat, np.eye(2)) and np.all(lmat == 0.0)
    assert np.array_equal(q, s)
    with pytest.raises(DomainError):
        ou_step_coefficients(-1.0, h)
    with pytest.raises(DomainError):
        ou_step_coefficients(1.0, 0.0)


def test_step_block_matches_integrate():
    g = GridSpec(n=16, horizon=1.0, d=1)
    p = sample_path(g, 13, 4)
    md = mollify(sign_velocity(), 16, 0.5)
    traj = integrate(SchemeConfig(grid=g, initial=([0.0], [1.0])), md, p)
    x = np.zeros((1, 1))
    v = np.ones((1, 1))
    rec = step_block(md, g.h, p.dW[:, None, :], p.dI[:, None, :], x, v, record_stride=1)
    assert np.array_equal(rec[0][:, 0, :], traj.x[1:])
    assert np.array_equal(rec[1][:, 0, :], traj.v[1:])
    with pytest.raises(ConfigError):
        step_block(md, g.h, p.dW[:, None, :], p.dI[:, None, :], x, v, record_stride=3)


def test_reference_solve_matches_integrate():
    g = GridSpec(n=64, horizon=1.0, d=1)
    p = sample_path(g, 2, 0)
    ref = reference_solve(sign_velocity(), 0.5, 64, p)
    md = mollify(sign_velocity(), 64, 0.5)
    direct = integrate(SchemeConfig(grid=g), md, p)
    assert np.array_equal(ref.x, direct.x) and np.array_equal(ref.v, direct.v)
    with pytest.raises(ConfigError):
        reference_solve(sign_velocity(), 0.5, 128, p)


def test_trajectory_csv_roundtrip():
    g = GridSpec(n=8, horizon=1.0, d=2)
    p = sample_path(g, 1, 1)
    traj = integrate(SchemeConfig(grid=g), mollify(zero_drift(), 8, 0.5, d=2), p)
    buf = io.StringIO()
    trajectory_to_csv(traj, buf)
    lines = [l for l in buf.getvalue().splitlines() if not l.startswith("#")]
    assert lines[0] == "t,x_1,x_2,v_1,v_2"
    data = np.loadtxt(io.StringIO("\n".join(lines[1:])), delimiter=",")
    assert np.array_equal(data[:, 0], traj.times)
    assert np.array_equal(data[:, 1:3], traj.x)
    assert np.array_equal(data[:, 3:5], traj.v)


def test_resolve_initial():
    x, v = resolve_initial(None, 3)
    assert np.all(x == 0.0) and np.all(v == 0.0) and x.shape == (3,)
    x, v = resolve_initial(([1.0], [2.0]), 1)
    assert x[0] == 1.0 and v[0] == 2.0
    with pytest.raises(ConfigError):
        resolve_initial(([1.0], [2.0]), 2)
    law = lambda rng: (rng.normal(size=1), rng.normal(size=1))
    with pytest.raises(ConfigError):
        resolve_initial(law, 1)
    x, v = resolve_initial(law, 1, np.random.default_rng(0))
    assert x.shape == (1,) and v.shape == (1,)


def test_scheme_config_validation():
    g = GridSpec(n=8, horizon=1.0, d=1)
    with pytest.raises(ConfigError):
        SchemeConfig(grid=g, theta=0.0)
    with pytest.raises(ConfigError):
        SchemeConfig(grid=g, theta=math.inf)
    with pytest.raises(ConfigError):
        SchemeConfig(grid=g, quad_order=0)


def test_integrate_grid_mismatch_and_decoupled_mollification():
    g = GridSpec(n=8, horizon=1.0, d=1)
    p = sample_path(g, 0, 0)
    other = GridSpec(n=16, horizon=1.0, d=1)
    with pytest.raises(ConfigError):
        integrate(SchemeConfig(grid=other), mollify(zero_drift(), 16, 0.5), p)
    # the mollification level is an independent knob; both are recorded
    md = mollify(sign_velocity(), 16, 0.5)
    traj = integrate(SchemeConfig(grid=g), md, p)
    assert traj.provenance["n"] == 8
    assert traj.provenance["mollification_n"] == 16
