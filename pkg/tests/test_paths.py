import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinetic_em.errors import ConfigError, DomainError
from kinetic_em.paths import (
    AugmentedPath,
    GridSpec,
    coarsen,
    coarsen_block,
    increment_identity_report,
    integrate_path,
    load_path,
    prefix_integrals,
    sample_increment_block,
    sample_path,
    save_path,
)


def test_grid_spec_basics():
    g = GridSpec(n=8, horizon=1.0, d=2)
    assert g.h == 0.125
    assert g.num_steps == 8
    assert np.allclose(g.times(), np.arange(9) / 8.0)
    g2 = GridSpec(n=4, horizon=0.5)
    assert g2.num_steps == 2


def test_grid_spec_rejects_fractional_steps():
    with pytest.raises(ConfigError):
        GridSpec(n=3, horizon=0.5)
    with pytest.raises(ConfigError):
        GridSpec(n=0)
    with pytest.raises(ConfigError):
        GridSpec(n=4, d=0)


def test_sample_path_deterministic():
    g = GridSpec(n=16, d=2)
    a = sample_path(g, seed=123, stream_id=7)
    b = sample_path(g, seed=123, stream_id=7)
    assert np.array_equal(a.dW, b.dW) and np.array_equal(a.dI, b.dI)
    c = sample_path(g, seed=123, stream_id=8)
    assert not np.array_equal(a.dW, c.dW)


def test_path_arrays_immutable():
    p = sample_path(GridSpec(n=4), seed=0)
    with pytest.raises(ValueError):
        p.dW[0, 0] = 1.0


def test_increment_moments_match_closed_form():
    # Var dW = h, Var dI = h^3/3, Cov = h^2/2 within 3 standard errors
    g = GridSpec(n=16, horizon=1.0)
    dw, di = sample_increment_block(g, seed=42, stream_ids=range(4000))
    h = g.h
    m = dw.size
    vw, vi = dw.var(), di.var()
    cov = (dw * di).mean() - dw.mean() * di.mean()
    assert abs(vw - h) < 3 * h * math.sqrt(2.0 / m)
    assert abs(vi - h**3 / 3) < 3 * (h**3 / 3) * math.sqrt(2.0 / m)
    se_cov = math.sqrt((h * h**3 / 3 + (h**2 / 2) ** 2) / m)
    assert abs(cov - h**2 / 2) < 3 * se_cov


def test_integral_increment_against_riemann_oracle():
    # independent construction: I_h from a dense Euler sum of the Brownian path
    rng = np.random.default_rng(3)
    sub, m, h = 4096, 4000, 0.5
    dt = h / sub
    steps = rng.normal(scale=math.sqrt(dt), size=(m, sub))
    w = np.cumsum(steps, axis=1)
    w_end = w[:, -1]
    i_end = (np.concatenate([np.zeros((m, 1)), w[:, :-1]], axis=1)).sum(axis=1) * dt
    cov = np.cov(np.stack([w_end, i_end]))
    assert abs(cov[0, 0] - h) < 4 * h * math.sqrt(2.0 / m)
    assert abs(cov[1, 1] - h**3 / 3) < 4 * (h**3 / 3) * math.sqrt(3.0 / m) + h**3 / sub
    assert abs(cov[0, 1] - h**2 / 2) < 4 * math.sqrt((h * h**3 / 3 + h**4 / 4) / m)


def test_integrate_path_matches_cumsum_oracle():
    p = sample_path(GridSpec(n=64, d=2), seed=5)
    w, i = integrate_path(p)
    assert np.all(w[0] == 0.0) and np.all(i[0] == 0.0)
    w_ref = np.vstack([np.zeros(2), np.cumsum(p.dW, axis=0)])
    h = p.grid.h
    i_ref = np.vstack([np.zeros(2), np.cumsum(p.dI + h * w_ref[:-1], axis=0)])
    assert np.allclose(w, w_ref, atol=1e-12)
    assert np.allclose(i, i_ref, atol=1e-12)


def test_prefix_integrals_agrees_with_integrate_path():
    p = sample_path(GridSpec(n=32), seed=9)
    w1, i1 = integrate_path(p)
    w2, i2 = prefix_integrals(p.dW, p.dI, p.grid.h)
    assert np.allclose(w1, w2, atol=1e-12) and np.allclose(i1, i2, atol=1e-12)


def test_coarsen_preserves_shared_time_integrals():
    p = sample_path(GridSpec(n=64, d=2), seed=11)
    c = coarsen(p, 8)
    assert c.grid.n == 8
    wf, ifine = integrate_path(p)
    wc, icoarse = integrate_path(c)
    assert np.allclose(wf[::8], wc, atol=1e-12)
    assert np.allclose(ifine[::8], icoarse, atol=1e-12)


def test_coarsen_chain_matches_single_step():
    p = sample_path(GridSpec(n=32), seed=2)
    a = coarsen(coarsen(p, 2), 4)
    b = coarsen(p, 8)
    assert np.allclose(a.dW, b.dW, atol=1e-13)
    assert np.allclose(a.dI, b.dI, atol=1e-13)


def test_coarsen_validation():
    p = sample_path(GridSpec(n=12), seed=0)
    assert coarsen(p, 1) is p
    with pytest.raises(ConfigError):
        coarsen(p, 5)
    with pytest.raises(ConfigError):
        coarsen(p, 0)
    with pytest.raises(ConfigError):
        coarsen(sample_path(GridSpec(n=6, horizon=2.0), seed=0), 4)  # 4 divides 12 steps, not n=6


@settings(max_examples=25, deadline=None)
@given(
    log_n=st.integers(min_value=2, max_value=6),
    log_f=st.integers(min_value=0, max_value=3),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_coarsen_consistency_property(log_n, log_f, seed):
    n = 2**log_n
    factor = 2 ** min(log_f, log_n)
    p = sample_path(GridSpec(n=n), seed=seed)
    c = coarsen(p, factor)
    wf, ifine = integrate_path(p)
    wc, icoarse = integrate_path(c)
    assert np.allclose(wf[::factor], wc, atol=1e-12)
    assert np.allclose(ifine[::factor], icoarse, atol=1e-12)


def test_coarsen_block_matches_path_coarsen():
    g = GridSpec(n=16, d=1)
    dw, di = sample_increment_block(g, seed=7, stream_ids=range(5))
    dwc, dic = coarsen_block(dw, di, 4, g.h)
    for j in range(5):
        p = AugmentedPath(grid=g, dW=dw[:, j], dI=di[:, j], seed=7, stream_id=j)
        c = coarsen(p, 4)
        assert np.array_equal(dwc[:, j], c.dW)
        assert np.array_equal(dic[:, j], c.dI)


def test_sample_increment_block_layout_matches_sample_path():
    g = GridSpec(n=8, d=3)
    dw, di = sample_increment_block(g, seed=21, stream_ids=[5, 9])
    for col, sid in enumerate((5, 9)):
        p = sample_path(g, seed=21, stream_id=sid)
        assert np.array_equal(dw[:, col], p.dW)
        assert np.array_equal(di[:, col], p.dI)


def test_increment_identity_renewal():
    rep = increment_identity_report(GridSpec(n=16), s_index=5, t_index=13, samples=20000)
    assert rep.max_cov_sigmas() < 4.0
    assert rep.max_cross_sigmas() < 4.0
    assert rep.cov_expected[0, 0, 0] == pytest.approx(rep.t - rep.s)


def test_increment_identity_validation():
    g = GridSpec(n=16)
    with pytest.raises(ConfigError):
        increment_identity_report(g, 5, 13, samples=50)
    with pytest.raises(DomainError):
        increment_identity_report(g, 13, 5, samples=200)
    with pytest.raises(DomainError):
        increment_identity_report(g, 0, 99, samples=200)


def test_dump_roundtrip_bitwise():
    p = sample_path(GridSpec(n=16, horizon=2.0, d=2), seed=77, stream_id=3)
    buf = io.BytesIO()
    save_path(p, buf)
    buf.seek(0)
    q = load_path(buf)
    assert q.grid == p.grid
    assert q.seed == p.seed and q.stream_id == p.stream_id
    assert np.array_equal(q.dW, p.dW) and np.array_equal(q.dI, p.dI)


def test_dump_rejects_garbage():
    buf = io.BytesIO(b"not a path dump at all")
    with pytest.raises((ConfigError, DomainError, ValueError)):
        load_path(buf)
    p = sample_path(GridSpec(n=4), seed=0)
    buf = io.BytesIO()
    save_path(p, buf)
    truncated = io.BytesIO(buf.getvalue()[:-9])
    with pytest.raises((ConfigError, DomainError, ValueError)):
        load_path(truncated)
