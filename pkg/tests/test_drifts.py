import io
import math

import numpy as np
import pytest

from kinetic_em.drifts import (
    DriftSpec,
    TabulatedField,
    admissibility_bound,
    constant_drift,
    drift_from_name,
    evaluate,
    evaluate_arrays,
    linear_friction,
    load_tabulated,
    mollifier_density,
    mollify,
    mollify_evaluate,
    mollify_evaluate_arrays,
    mollify_quadrature_error,
    oscillatory_singular,
    save_tabulated,
    sign_velocity,
    tabulated_drift,
    zero_drift,
)
from kinetic_em.errors import ConfigError, DomainError, ExtrapolationError


def test_catalog_ids_and_sup_norms():
    assert zero_drift().drift_id == "zero"
    assert zero_drift().sup_norm() == 0.0
    c = constant_drift([1.0, -2.5])
    assert c.sup_norm() == 2.5
    assert "constant" in c.drift_id
    assert sign_velocity().sup_norm() == 1.0
    assert oscillatory_singular().sup_norm() == 1.0
    assert linear_friction(2.0).sup_norm() is None
    assert linear_friction(2.0).drift_id == "linear_friction(gamma=2.0)"


def test_evaluate_pointwise_values():
    s = sign_velocity()
    assert evaluate(s, ([0.0], [-2.0]))[0] == -1.0
    assert evaluate(s, ([0.0], [3.0]))[0] == 1.0
    assert evaluate(s, ([0.0], [0.0]))[0] == 0.0
    lf = linear_friction(0.5)
    assert evaluate(lf, ([1.0], [4.0]))[0] == -2.0
    osc = oscillatory_singular(kappa=3.0, beta=0.25)
    # sin(3 * 0.5) > 0, so the sign factor is +1
    assert evaluate(osc, ([0.5], [0.7]))[0] == pytest.approx(0.7**0.25, rel=1e-14)
    vals = evaluate_arrays(osc, np.zeros((50, 1)), np.linspace(-3, 3, 50)[:, None])
    assert np.all(np.abs(vals) <= 1.0)


def test_constant_broadcasts_over_dimensions():
    c = constant_drift(1.5)
    out = evaluate_arrays(c, np.zeros((4, 3)), np.zeros((4, 3)))
    assert out.shape == (4, 3)
    assert np.all(out == 1.5)


def _normal_cdf_split(t, nodes=200, cutoff=12.0):
    # integral of the standard normal density on each side of t, by
    # Gauss-Legendre on the two smooth pieces
    y, w = np.polynomial.legendre.leggauss(nodes)

    def piece(a, b):
        z = 0.5 * (b - a) * y + 0.5 * (a + b)
        return 0.5 * (b - a) * np.sum(w * np.exp(-0.5 * z * z)) / math.sqrt(2 * math.pi)

    return piece(-cutoff, t), piece(t, cutoff)


def test_mollified_sign_matches_quadrature_oracle():
    # closed form route vs an independent numeric convolution of sign(v)
    md = mollify(sign_velocity(), 16, 0.5)
    sigma_v = md.sigma_v
    for v in (-0.9, -0.3, -0.01, 0.0, 0.02, 0.4, 1.0):
        lo, hi = _normal_cdf_split(v / sigma_v)
        oracle = lo - hi
        val = float(mollify_evaluate(md, ([0.0], [v]))[0])
        assert abs(val - oracle) <= 1e-10


def test_mollified_sign_limits():
    md = mollify(sign_velocity(), 64, 0.5)
    assert mollify_evaluate(md, ([0.0], [0.0]))[0] == 0.0
    assert mollify_evaluate(md, ([0.0], [5.0]))[0] == pytest.approx(1.0, abs=1e-12)
    assert mollify_evaluate(md, ([0.0], [-5.0]))[0] == pytest.approx(-1.0, abs=1e-12)


def test_mollification_is_exact_for_linear_and_constant():
    md = mollify(linear_friction(0.7), 8, 0.5)
    v = np.linspace(-2, 2, 11)[:, None]
    assert np.array_equal(mollify_evaluate_arrays(md, 0 * v, v), -0.7 * v)
    mc = mollify(constant_drift([0.3, -1.0]), 8, 0.5, d=2)
    out = mollify_evaluate_arrays(mc, np.zeros((5, 2)), np.ones((5, 2)))
    assert np.array_equal(out, np.tile([0.3, -1.0], (5, 1)))
    mz = mollify(zero_drift(), 8, 0.5)
    assert np.all(mollify_evaluate_arrays(mz, np.zeros((3, 1)), np.ones((3, 1))) == 0.0)


def test_tabulated_affine_quadrature_route_matches_closed_form():
    # a tabulated copy of -0.7 v goes through the generic quadrature path;
    # bilinear interpolation and Gauss-Hermite are both exact on affine fields
    xs = np.linspace(-6, 6, 25)
    vs = np.linspace(-6, 6, 25)
    vals = np.broadcast_to(-0.7 * vs, (25, 25))
    md_tab = mollify(tabulated_drift(TabulatedField(xs, vs, vals)), 16, 0.5)
    md_lin = mollify(linear_friction(0.7), 16, 0.5)
    pts = np.linspace(-1, 1, 9)[:, None]
    a = mollify_evaluate_arrays(md_tab, pts, pts[::-1])
    b = mollify_evaluate_arrays(md_lin, pts, pts[::-1])
    assert np.max(np.abs(a - b)) <= 1e-12


def test_quadrature_error_diagnostic():
    md = mollify(sign_velocity(), 16, 0.5)
    assert mollify_quadrature_error(md, ([0.0], [0.1])) == 0.0
    osc = mollify(oscillatory_singular(), 16, 0.5)
    err = mollify_quadrature_error(osc, ([0.2], [0.1]))
    assert np.isfinite(err) and err >= 0.0


def test_mollifier_density_mass_and_scaling():
    n, theta = 4, 0.5
    sx, sv = float(n) ** -1.5, float(n) ** -0.5
    xg = np.linspace(-8 * sx, 8 * sx, 801)
    vg = np.linspace(-8 * sv, 8 * sv, 801)
    dens = np.array([[mollifier_density(n, theta, ([x], [v])) for v in vg] for x in xg])
    mass = np.trapezoid(np.trapezoid(dens, vg, axis=1), xg)
    assert mass == pytest.approx(1.0, abs=1e-8)
    # parabolic scaling: phi_n(z) = n^{4 theta} phi_1(n^{3 theta} x, n^theta v)
    for x, v in ((0.01, 0.2), (-0.02, -0.5)):
        lhs = mollifier_density(n, theta, ([x], [v]))
        rhs = n ** (4 * theta) * mollifier_density(1, theta, ([x / sx], [v / sv]))
        assert lhs == pytest.approx(rhs, rel=1e-12)


def test_admissibility_bound_and_rejection():
    s = sign_velocity()
    assert admissibility_bound(s, 1) == pytest.approx(0.8)
    assert admissibility_bound(s, 2) == pytest.approx(0.4)
    assert admissibility_bound(zero_drift(), 1) is None
    mollify(s, 16, 0.5)
    with pytest.raises(ConfigError):
        mollify(s, 16, 0.8)
    with pytest.raises(ConfigError):
        mollify(s, 16, 0.5, d=2)
    # unlabeled drifts accept any positive exponent
    mollify(linear_friction(), 16, 5.0)
    with pytest.raises(ConfigError):
        mollify(s, 0, 0.5)
    with pytest.raises(ConfigError):
        mollify(s, 16, -0.1)


def test_tabulated_bilinear_is_exact_on_affine():
    xs = np.linspace(-2, 2, 9)
    vs = np.linspace(-1, 3, 7)
    vals = 0.5 + 1.5 * xs[:, None] - 2.0 * vs[None, :]
    tab = TabulatedField(xs, vs, vals)
    rng = np.random.default_rng(3)
    xq = rng.uniform(-2, 2, size=40)
    vq = rng.uniform(-1, 3, size=40)
    out = tab.interpolate(xq, vq)
    assert np.max(np.abs(out - (0.5 + 1.5 * xq - 2.0 * vq))) <= 1e-13


def test_tabulated_extrapolation_raises():
    tab = TabulatedField([0.0, 1.0], [0.0, 1.0], np.zeros((2, 2)))
    with pytest.raises(ExtrapolationError):
        tab.interpolate(np.array([1.5]), np.array([0.5]))
    with pytest.raises(ExtrapolationError):
        tab.interpolate(np.array([0.5]), np.array([-0.1]))


def test_tabulated_validation():
    with pytest.raises(ConfigError):
        TabulatedField([0.0], [0.0, 1.0], np.zeros((1, 2)))
    with pytest.raises(ConfigError):
        TabulatedField([0.0, 1.0, 0.5], [0.0, 1.0], np.zeros((3, 2)))
    with pytest.raises(ConfigError):
        TabulatedField([0.0, 1.0], [0.0, 1.0], np.zeros((3, 2)))
    with pytest.raises(DomainError):
        TabulatedField([0.0, 1.0], [0.0, 1.0], np.full((2, 2), np.nan))


def test_tabulated_csv_roundtrip_is_bitwise():
    rng = np.random.default_rng(11)
    tab = TabulatedField(
        np.sort(rng.uniform(-3, 3, 6)),
        np.sort(rng.uniform(-3, 3, 5)),
        rng.normal(size=(6, 5)),
    )
    buf = io.StringIO()
    save_tabulated(tab, buf)
    buf.seek(0)
    back = load_tabulated(buf)
    assert np.array_equal(back.x, tab.x)
    assert np.array_equal(back.v, tab.v)
    assert np.array_equal(back.values, tab.values)


def test_load_tabulated_rejects_malformed_input():
    with pytest.raises(ConfigError):
        load_tabulated(io.StringIO("wrong,header\n"))
    good = io.StringIO()
    save_tabulated(TabulatedField([0.0, 1.0], [0.0, 1.0], np.zeros((2, 2))), good)
    truncated = "".join(good.getvalue().splitlines(keepends=True)[:-1])
    with pytest.raises(ConfigError):
        load_tabulated(io.StringIO(truncated))


def test_drift_from_name():
    assert drift_from_name("zero").kind == "zero"
    assert drift_from_name("constant", c=2.5).sup_norm() == 2.5
    assert drift_from_name("linear_friction", gamma=3.0).gamma == 3.0
    assert drift_from_name("oscillatory_singular", kappa=5.0).kappa == 5.0
    with pytest.raises(ConfigError):
        drift_from_name("brownian_banana")
    with pytest.raises(ConfigError):
        drift_from_name("tabulated")


def test_drift_from_name_tabulated(tmp_path):
    path = tmp_path / "field.csv"
    tab = TabulatedField([0.0, 1.0], [0.0, 1.0], [[0.0, 1.0], [2.0, 3.0]])
    with open(path, "w", encoding="utf-8") as fh:
        save_tabulated(tab, fh)
    spec = drift_from_name("tabulated", table_path=str(path))
    assert spec.kind == "tabulated"
    assert spec.table.interpolate(np.array([0.5]), np.array([0.5]))[0] == 1.5


def test_constant_drift_rejects_nonfinite():
    with pytest.raises(DomainError):
        constant_drift([1.0, math.inf])
