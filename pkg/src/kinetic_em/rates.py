"""Strong and weak error estimation, rate regression, and scheme diagnostics.

Monte Carlo runs are sample-parallel: every sample owns a counter-based
stream keyed by its global index, per-sample statistics are written into
arrays indexed the same way, and all reductions happen single-threaded
afterwards.  Reports are therefore bitwise reproducible for a given
(config, seed) no matter how many worker threads or what chunk size the
caller picks.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence, TextIO

import numpy as np

from ._rng import (
    ROLE_BOOTSTRAP,
    ROLE_DEMO,
    ROLE_OU_RESIDUAL,
    ROLE_STRONG,
    ROLE_TV,
    ROLE_WEAK_LEVEL,
    ROLE_WEAK_REF,
    make_generator,
    normal_words,
    stream_key,
)
from .drifts import DriftSpec, mollify
from .errors import ConfigError, ConfigWarning, DomainError, KineticEmError
from .integrator import exact_linear_block, resolve_initial, step_block
from .paths import GridSpec, coarsen_block, sample_increment_block

# Below this, a level's error estimate counts as an exact reproduction
# rather than a converging quantity; no slope is fitted through it.
EXACT_TOL = 1e-11

_LOG2E_LN = math.log(2.0)


def resolve_threads(threads: int | None = None) -> int:
    """Worker thread count; None falls back to KINETIC_EM_THREADS, then 1."""
    if threads is None:
        raw = os.environ.get("KINETIC_EM_THREADS", "").strip()
        if raw:
            try:
                threads = int(raw)
            except ValueError:
                raise ConfigError(
                    f"KINETIC_EM_THREADS must be an integer, got {raw!r}"
                ) from None
        else:
            threads = 1
    threads = int(threads)
    if threads < 1:
        raise ConfigError(f"thread count must be >= 1, got {threads}")
    return threads


def _chunk_ranges(total: int, chunk: int) -> list[tuple[int, int]]:
    if chunk < 1:
        raise ConfigError(f"chunk size must be >= 1, got {chunk}")
    return [(lo, min(lo + chunk, total)) for lo in range(0, total, chunk)]


def _run_chunks(ranges, threads: int, worker) -> None:
    """Run worker(lo, hi) over index ranges, optionally on a thread pool.

    Workers only write to disjoint slices of preallocated arrays, so the
    execution order is irrelevant to the result.
    """
    if threads <= 1 or len(ranges) <= 1:
        for lo, hi in ranges:
            worker(lo, hi)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(worker, lo, hi) for lo, hi in ranges]
        for fut in futures:
            fut.result()


def _check_levels(levels) -> tuple[int, ...]:
    out = tuple(int(n) for n in levels)
    if not out:
        raise ConfigError("need at least one level")
    if any(n < 1 for n in out):
        raise ConfigError(f"levels must be positive integers, got {out}")
    if any(b <= a for a, b in zip(out, out[1:])):
        raise ConfigError(f"levels must be strictly increasing, got {out}")
    return out


@dataclass(frozen=True)
class RateReport:
    """Error estimates over resolution levels with a fitted decay exponent.

    `slope` is the positive decay rate (error ~ n**-slope) and always comes
    with `slope_se`; both are NaN when no fit was possible and meaningless
    when `exact` is set (the errors are reproductions at floating-point
    scale, not a converging sequence).
    """

    levels: tuple[int, ...]
    errors: tuple[float, ...]
    errors_se: tuple[float, ...]
    slope: float
    slope_se: float
    exact: bool = False
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        levels = _check_levels(self.levels)
        errors = tuple(float(e) for e in self.errors)
        ses = tuple(float(s) for s in self.errors_se)
        if len(errors) != len(levels) or len(ses) != len(levels):
            raise ConfigError("levels, errors and errors_se must have equal length")
        if not self.exact and any(e <= 0.0 for e in errors):
            raise DomainError(f"non-exact error estimates must be positive, got {errors}")
        if any(s < 0.0 for s in ses):
            raise DomainError(f"standard errors must be nonnegative, got {ses}")
        if math.isnan(self.slope) != math.isnan(self.slope_se):
            raise ConfigError("slope and slope_se must be reported together")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "errors", errors)
        object.__setattr__(self, "errors_se", ses)
        object.__setattr__(self, "metadata", dict(self.metadata))

    @property
    def error_pairs(self) -> tuple[tuple[float, float], ...]:
        return tuple(zip(self.errors, self.errors_se))

    @property
    def slope_label(self) -> str:
        if self.exact:
            return "exact"
        if math.isnan(self.slope):
            return "unfitted"
        return f"{self.slope:.4f} +/- {self.slope_se:.4f}"


def fit_rate(levels, errors, errors_se=None) -> tuple[float, float]:
    """Fit error ~ c * n**-slope in log2-log2 coordinates.

    With standard errors the fit is weighted least squares, the weights
    propagated through the log transform (sigma_log2 = se / (err * ln 2)) and
    the returned uncertainty is the WLS parameter error.  Without them (or
    with any nonpositive se) it is ordinary least squares with a
    residual-based uncertainty.  Returns the positive decay exponent.
    """
    lv = _check_levels(levels)
    er = np.asarray(errors, dtype=np.float64)
    if er.shape != (len(lv),):
        raise ConfigError(f"expected {len(lv)} errors, got shape {er.shape}")
    if len(lv) < 3:
        raise ConfigError(f"rate fitting needs at least 3 levels, got {len(lv)}")
    if np.any(~np.isfinite(er)) or np.any(er <= 0.0):
        raise DomainError(f"rate fitting needs positive finite errors, got {er}")
    x = np.log2(np.asarray(lv, dtype=np.float64))
    y = np.log2(er)
    if errors_se is not None:
        se = np.asarray(errors_se, dtype=np.float64)
        if se.shape != er.shape:
            raise ConfigError("errors and errors_se must have the same length")
        if np.all(se > 0.0):
            sigma = se / (er * _LOG2E_LN)
            w = 1.0 / sigma**2
            s0 = w.sum()
            sx = (w * x).sum()
            sy = (w * y).sum()
            sxx = (w * x * x).sum()
            sxy = (w * x * y).sum()
            delta = s0 * sxx - sx * sx
            slope = (s0 * sxy - sx * sy) / delta
            return -slope, math.sqrt(s0 / delta)
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ yc) / sxx
    resid = yc - slope * xc
    var = float(resid @ resid) / (len(lv) - 2) / sxx
    return -slope, math.sqrt(max(var, 0.0))


def _fit_or_nan(levels, errors, ses, exact: bool) -> tuple[float, float]:
    if exact or len(levels) < 3:
        return math.nan, math.nan
    return fit_rate(levels, errors, ses)


# ---------------------------------------------------------------------------
# Test functions for weak error / total variation lower bounds


@dataclass(frozen=True)
class TestFunctionSet:
    """Named observables f(x, v) -> scalar per sample, each with sup norm <= 1.

    The boundedness makes any |E f(Z_ref) - E f(Z_n)| a valid lower bound for
    the total variation distance between the two laws.  Callables take
    (samples, d) position and velocity arrays and return a (samples,) array.
    """

    names: tuple[str, ...]
    funcs: tuple[Callable[[np.ndarray, np.ndarray], np.ndarray], ...]

    def __post_init__(self):
        names = tuple(str(s) for s in self.names)
        funcs = tuple(self.funcs)
        if not names or len(names) != len(funcs):
            raise ConfigError("names and funcs must be nonempty and of equal length")
        if len(set(names)) != len(names):
            raise ConfigError(f"test function names must be unique, got {names}")
        if not all(callable(f) for f in funcs):
            raise ConfigError("every test function must be callable")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "funcs", funcs)

    def __len__(self) -> int:
        return len(self.names)


def default_test_functions(d: int = 1) -> TestFunctionSet:
    """Eight bounded smooth observables mixing odd and even symmetry."""
    if d < 1:
        raise ConfigError(f"dimension must be >= 1, got {d}")

    def sin_v1(x, v):
        return np.sin(v[:, 0])

    def cos_v1(x, v):
        return np.cos(v[:, 0])

    def sin_x1(x, v):
        return np.sin(x[:, 0])

    def cos_x1(x, v):
        return np.cos(x[:, 0])

    def sin_x1_plus_v1(x, v):
        return np.sin(x[:, 0] + v[:, 0])

    def gauss_bump(x, v):
        return np.exp(-(x * x).sum(axis=1) - (v * v).sum(axis=1))

    def hermite_x1(x, v):
        return x[:, 0] * np.exp(-0.5 * x[:, 0] ** 2)

    def hermite_v1(x, v):
        return v[:, 0] * np.exp(-0.5 * v[:, 0] ** 2)

    return TestFunctionSet(
        names=("sin_v1", "cos_v1", "sin_x1", "cos_x1", "sin_x1_plus_v1",
               "gauss_bump", "hermite_x1", "hermite_v1"),
        funcs=(sin_v1, cos_v1, sin_x1, cos_x1, sin_x1_plus_v1,
               gauss_bump, hermite_x1, hermite_v1),
    )


def probe_sup_norm(fset: TestFunctionSet, d: int = 1, probes: int = 4096,
                   radius: float = 6.0, seed: int = 0) -> float:
    """Largest |f| over random probe points; checks the <= 1 bound."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-radius, radius, size=(probes, d))
    v = rng.uniform(-radius, radius, size=(probes, d))
    x[0] = 0.0
    v[0] = 0.0
    best = 0.0
    for f in fset.funcs:
        best = max(best, float(np.max(np.abs(np.asarray(f(x, v))))))
    return best


# ---------------------------------------------------------------------------
# Strong error


def _assert_coupling(dw_f, di_f, dw_c, di_c, factor: int, h_fine: float) -> None:
    """Verify coarse and fine prefix (W, I) agree at shared grid times."""
    wf = np.cumsum(dw_f, axis=0)
    wc = np.cumsum(dw_c, axis=0)
    if not np.allclose(wf[factor - 1::factor], wc, rtol=1e-10, atol=1e-10):
        raise KineticEmError("coupling violated: coarse W prefix drifts from fine")
    wf_prev = np.concatenate([np.zeros_like(dw_f[:1]), wf[:-1]], axis=0)
    wc_prev = np.concatenate([np.zeros_like(dw_c[:1]), wc[:-1]], axis=0)
    h_coarse = h_fine * factor
    i_f = np.cumsum(di_f + h_fine * wf_prev, axis=0)
    i_c = np.cumsum(di_c + h_coarse * wc_prev, axis=0)
    if not np.allclose(i_f[factor - 1::factor], i_c, rtol=1e-10, atol=1e-10):
        raise KineticEmError("coupling violated: coarse I prefix drifts from fine")


def _lm_norm(values: np.ndarray, m: float, axis=None) -> np.ndarray:
    return np.mean(values**m, axis=axis) ** (1.0 / m)


def strong_error(
    drift: DriftSpec,
    theta: float,
    levels,
    n_ref: int,
    m: float = 2.0,
    samples: int = 1000,
    seed: int = 0,
    *,
    d: int = 1,
    horizon: float = 1.0,
    reference: str = "self",
    initial=None,
    quad_order: int = 8,
    threads: int | None = 1,
    chunk: int = 256,
    bootstrap: int = 200,
) -> RateReport:
    """Pathwise L^m error of the scheme against a reference on the same noise.

    Per sample one fine increment set is drawn at n_ref; the reference is
    either the scheme at n_ref with its own mollification ("self") or, for
    zero / linear-friction drifts, the exact solution stepped with the exact
    per-step Gaussian transition on the fine grid ("exact").  Every coarse
    level reuses the same path through increment aggregation, the per-sample
    error is the sup over the level's grid times of the phase-space distance,
    and the L^m norm over samples gets a bootstrap standard error.
    """
    levels = _check_levels(levels)
    n_ref = int(n_ref)
    for n in levels:
        if n_ref % n:
            raise ConfigError(f"n_ref={n_ref} is not divisible by level n={n}")
    if not m >= 1.0:
        raise ConfigError(f"moment order must satisfy m >= 1, got {m}")
    if drift.p_label is not None:
        m_max = min(drift.p_label) - 1.0
        if m > m_max:
            raise ConfigError(
                f"moment order {m} exceeds min(p)-1 = {m_max} for drift {drift.drift_id}"
            )
    if samples < 100:
        raise ConfigError(f"insufficient samples: need at least 100, got {samples}")
    if bootstrap < 2:
        raise ConfigError(f"bootstrap resamples must be >= 2, got {bootstrap}")
    if reference not in ("self", "exact"):
        raise ConfigError(f"reference must be 'self' or 'exact', got {reference!r}")
    gamma = None
    if reference == "exact":
        if drift.kind == "linear_friction":
            gamma = float(drift.gamma)
        elif drift.kind == "zero":
            gamma = 0.0
        else:
            raise ConfigError(
                f"exact reference needs a zero or linear_friction drift, got {drift.kind}"
            )
    threads = resolve_threads(threads)

    grid_ref = GridSpec(n=n_ref, horizon=horizon, d=d)
    k_ref = grid_ref.num_steps
    grids = [GridSpec(n=n, horizon=horizon, d=d) for n in levels]
    k_lcm = GridSpec(n=math.lcm(*levels), horizon=horizon, d=d).num_steps
    stride = k_ref // k_lcm
    md_ref = None if reference == "exact" else mollify(drift, n_ref, theta, d=d)
    md_levels = [mollify(drift, n, theta, d=d) for n in levels]
    # shared-time slots of the recorded reference for each level's grid
    selectors = [np.arange(1, g.num_steps + 1) * (k_lcm // g.num_steps) - 1 for g in grids]
    x0, v0 = resolve_initial(initial, d)

    errs = np.empty((samples, len(levels)))

    def worker(lo: int, hi: int) -> None:
        mc = hi - lo
        streams = [stream_key(ROLE_STRONG, s) for s in range(lo, hi)]
        dw, di = sample_increment_block(grid_ref, seed, streams)
        x = np.broadcast_to(x0, (mc, d)).copy()
        v = np.broadcast_to(v0, (mc, d)).copy()
        if reference == "exact":
            zeta = np.empty((k_ref, mc, d, 2))
            for j, s in enumerate(range(lo, hi)):
                words = normal_words(seed, stream_key(ROLE_OU_RESIDUAL, s), 2 * k_ref * d)
                zeta[:, j] = words.reshape(k_ref, d, 2)
            rx, rv = exact_linear_block(gamma, grid_ref.h, dw, di, zeta, x, v,
                                        record_stride=stride)
        else:
            rx, rv = step_block(md_ref, grid_ref.h, dw, di, x, v, quad_order,
                                record_stride=stride)
        for li, grid in enumerate(grids):
            factor = k_ref // grid.num_steps
            dwc, dic = coarsen_block(dw, di, factor, grid_ref.h)
            if lo == 0:
                _assert_coupling(dw[:, :1], di[:, :1], dwc[:, :1], dic[:, :1],
                                 factor, grid_ref.h)
            x = np.broadcast_to(x0, (mc, d)).copy()
            v = np.broadcast_to(v0, (mc, d)).copy()
            lx, lv = step_block(md_levels[li], grid.h, dwc, dic, x, v, quad_order,
                                record_stride=1)
            sel = selectors[li]
            dx = lx - rx[sel]
            dv = lv - rv[sel]
            dist = np.sqrt((dx * dx).sum(axis=2) + (dv * dv).sum(axis=2))
            errs[lo:hi, li] = dist.max(axis=0)

    _run_chunks(_chunk_ranges(samples, chunk), threads, worker)

    estimates = []
    ses = []
    for li in range(len(levels)):
        e = errs[:, li]
        estimates.append(float(_lm_norm(e, m)))
        gen = make_generator(seed, stream_key(ROLE_BOOTSTRAP, li))
        idx = gen.integers(0, samples, size=(bootstrap, samples))
        resampled = _lm_norm(e[idx], m, axis=1)
        ses.append(float(resampled.std(ddof=1)))
    exact = max(estimates) < EXACT_TOL
    slope, slope_se = _fit_or_nan(levels, estimates, ses, exact)
    return RateReport(
        levels=levels,
        errors=tuple(estimates),
        errors_se=tuple(ses),
        slope=slope,
        slope_se=slope_se,
        exact=exact,
        metadata={
            "experiment": "strong_error",
            "drift": drift.drift_id,
            "theta": theta,
            "m": m,
            "samples": samples,
            "seed": seed,
            "n_ref": n_ref,
            "reference": reference,
            "d": d,
            "horizon": horizon,
            "initial": [list(map(float, x0)), list(map(float, v0))],
            "bootstrap": bootstrap,
        },
    )


# ---------------------------------------------------------------------------
# Weak error


@dataclass(frozen=True)
class WeakObservation:
    """One (time, level, test function) cell of a weak error run."""

    t: float
    level: int
    name: str
    mean_ref: float
    se_ref: float
    mean_level: float
    se_level: float
    err: float
    se: float


@dataclass(frozen=True)
class WeakErrorReport:
    """Per-time rate reports plus the full test-function detail table."""

    reports: tuple[RateReport, ...]
    observations: tuple[WeakObservation, ...]
    tv_sq_proxy: tuple[float, ...]
    t_eval: tuple[float, ...]

    @property
    def primary(self) -> RateReport:
        return self.reports[-1]


def _time_steps(grid: GridSpec, t_eval) -> list[int]:
    ks = []
    for t in t_eval:
        k = int(round(float(t) / grid.h))
        if not 0 < k <= grid.num_steps or abs(k * grid.h - t) > 1e-9:
            raise ConfigError(f"time {t} is not a grid point at n={grid.n}")
        ks.append(k)
    return ks


def _mean_and_se(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = values.mean(axis=0)
    sd = values.std(axis=0, ddof=1)
    return mu, sd / math.sqrt(values.shape[0])


def weak_error(
    drift: DriftSpec,
    theta: float,
    levels,
    n_ref: int,
    fset: TestFunctionSet | None = None,
    t_eval: Sequence[float] = (1.0,),
    samples: int = 100_000,
    seed: int = 0,
    *,
    ref_samples: int | None = None,
    d: int = 1,
    horizon: float = 1.0,
    initial=None,
    quad_order: int = 8,
    threads: int | None = 1,
    chunk: int = 512,
) -> WeakErrorReport:
    """Law-level error |E f(Z_ref_t) - E f(Z_n_t)| over test functions.

    Reference and level runs use independent streams (no coupling: this is a
    statement about laws).  Per time the aggregate error is the max over the
    test set, its standard error the two-sample one at the argmax, and the
    rate is fitted across levels.  tv_sq_proxy integrates the squared
    aggregate over [0, max(t_eval)] with the integrand pinned to zero at
    t=0 (both runs share the initial state), a biased lower-bound proxy for
    the time-integrated squared total variation distance.
    """
    levels = _check_levels(levels)
    n_ref = int(n_ref)
    for n in levels:
        if n_ref % n:
            raise ConfigError(f"n_ref={n_ref} is not divisible by level n={n}")
    if samples < 100:
        raise ConfigError(f"insufficient samples: need at least 100, got {samples}")
    ref_samples = 4 * samples if ref_samples is None else int(ref_samples)
    if ref_samples < 100:
        raise ConfigError(f"insufficient reference samples, got {ref_samples}")
    t_eval = tuple(float(t) for t in t_eval)
    if not t_eval or any(b <= a for a, b in zip(t_eval, t_eval[1:])):
        raise ConfigError(f"evaluation times must be strictly increasing, got {t_eval}")
    if fset is None:
        fset = default_test_functions(d)
    threads = resolve_threads(threads)

    grid_ref = GridSpec(n=n_ref, horizon=horizon, d=d)
    grids = [GridSpec(n=n, horizon=horizon, d=d) for n in levels]
    ks_ref = _time_steps(grid_ref, t_eval)
    ks_lvl = [_time_steps(g, t_eval) for g in grids]
    md_ref = mollify(drift, n_ref, theta, d=d)
    md_levels = [mollify(drift, n, theta, d=d) for n in levels]
    x0, v0 = resolve_initial(initial, d)
    n_t, n_f = len(t_eval), len(fset)

    def run(md, grid, role, tag, count, out):
        ks = _time_steps(grid, t_eval)
        stride = math.gcd(*ks)

        def worker(lo: int, hi: int) -> None:
            mc = hi - lo
            streams = [stream_key(role, s, level=tag) for s in range(lo, hi)]
            dw, di = sample_increment_block(grid, seed, streams)
            x = np.broadcast_to(x0, (mc, d)).copy()
            v = np.broadcast_to(v0, (mc, d)).copy()
            rec_x, rec_v = step_block(md, grid.h, dw, di, x, v, quad_order,
                                      record_stride=stride)
            for ti, k in enumerate(ks):
                slot = k // stride - 1
                xs, vs = rec_x[slot], rec_v[slot]
                for fi, f in enumerate(fset.funcs):
                    out[lo:hi, ti, fi] = f(xs, vs)

        _run_chunks(_chunk_ranges(count, chunk), threads, worker)

    vals_ref = np.empty((ref_samples, n_t, n_f))
    run(md_ref, grid_ref, ROLE_WEAK_REF, 0, ref_samples, vals_ref)
    mu_ref, se_ref = _mean_and_se(vals_ref)
    del vals_ref

    errs = np.empty((n_t, len(levels), n_f))
    errs_se = np.empty_like(errs)
    observations = []
    for li, (n, grid, md) in enumerate(zip(levels, grids, md_levels)):
        vals = np.empty((samples, n_t, n_f))
        run(md, grid, ROLE_WEAK_LEVEL, li, samples, vals)
        mu, se = _mean_and_se(vals)
        del vals
        errs[:, li, :] = np.abs(mu_ref - mu)
        errs_se[:, li, :] = np.hypot(se_ref, se)
        for ti, t in enumerate(t_eval):
            for fi, name in enumerate(fset.names):
                observations.append(WeakObservation(
                    t=t, level=n, name=name,
                    mean_ref=float(mu_ref[ti, fi]), se_ref=float(se_ref[ti, fi]),
                    mean_level=float(mu[ti, fi]), se_level=float(se[ti, fi]),
                    err=float(errs[ti, li, fi]), se=float(errs_se[ti, li, fi]),
                ))

    arg = errs.argmax(axis=2)
    ti_ix, li_ix = np.ogrid[:n_t, :len(levels)]
    agg = errs[ti_ix, li_ix, arg]
    agg_se = errs_se[ti_ix, li_ix, arg]

    base_meta = {
        "experiment": "weak_error",
        "drift": drift.drift_id,
        "theta": theta,
        "samples": samples,
        "ref_samples": ref_samples,
        "seed": seed,
        "n_ref": n_ref,
        "d": d,
        "horizon": horizon,
        "initial": [list(map(float, x0)), list(map(float, v0))],
        "test_functions": list(fset.names),
    }
    reports = []
    for ti, t in enumerate(t_eval):
        level_errs = agg[ti]
        exact = float(level_errs.max()) < EXACT_TOL
        slope, slope_se = _fit_or_nan(levels, level_errs, agg_se[ti], exact)
        reports.append(RateReport(
            levels=levels,
            errors=tuple(float(e) for e in level_errs),
            errors_se=tuple(float(s) for s in agg_se[ti]),
            slope=slope,
            slope_se=slope_se,
            exact=exact,
            metadata=dict(base_meta, t=t),
        ))

    knots = np.concatenate([[0.0], np.asarray(t_eval)])
    proxy = []
    for li in range(len(levels)):
        sq = np.concatenate([[0.0], agg[:, li] ** 2])
        proxy.append(float(np.sum(0.5 * (sq[1:] + sq[:-1]) * np.diff(knots))))

    return WeakErrorReport(
        reports=tuple(reports),
        observations=tuple(observations),
        tv_sq_proxy=tuple(proxy),
        t_eval=t_eval,
    )


# ---------------------------------------------------------------------------
# Taming demonstration


def sin_first(arr: np.ndarray) -> np.ndarray:
    """Default demo observable: sine of the first coordinate."""
    return np.sin(arr[:, 0])


@dataclass(frozen=True)
class TamingDemoReport:
    """Paired rates showing the gain of the transport-shift correction.

    `uncorrected` tracks E|f(I_T) - f(I_s)| with s the last grid point below
    T (decay ~ n^-1); `shifted` tracks E|f(I_T) - f(I_s + (T-s) W_s)| where
    the known transport of the Brownian position is added back (~ n^-3/2).
    gap_means / gap_ses cover the per-level paired difference
    (uncorrected sample - shifted sample), positive when the shift helps.
    """

    uncorrected: RateReport
    shifted: RateReport
    gap_means: tuple[float, ...]
    gap_ses: tuple[float, ...]
    horizon: float


def taming_demo(
    levels,
    samples: int = 100_000,
    f: Callable[[np.ndarray], np.ndarray] | None = None,
    seed: int = 0,
    *,
    horizon: float = 47.0 / 48.0,
    d: int = 1,
) -> TamingDemoReport:
    """Estimate the two freezing errors of the Brownian running integral.

    Everything is sampled exactly from the joint Gaussian law of
    (W_s, I_s, I_T); no scheme runs.  The target time should be off-grid for
    every level: levels where it falls on the grid make both errors exactly
    zero and are dropped with a warning.
    """
    levels = _check_levels(levels)
    if samples < 100:
        raise ConfigError(f"insufficient samples: need at least 100, got {samples}")
    if f is None:
        f = sin_first
    t_final = float(horizon)
    if t_final <= 0.0:
        raise ConfigError(f"horizon must be positive, got {horizon}")

    kept = []
    dropped = []
    for li, n in enumerate(levels):
        if abs(n * t_final - round(n * t_final)) < 1e-9:
            dropped.append(n)
        else:
            kept.append((li, n))
    if dropped:
        warnings.warn(
            f"target time {t_final} lies on the grid of levels {dropped}; "
            "the comparison degenerates there and those levels are dropped",
            ConfigWarning,
            stacklevel=2,
        )
    if not kept:
        raise ConfigError(f"every level has {t_final} on its grid; nothing to compare")

    coeff_b = 1.0 / math.sqrt(12.0)
    est_i, se_i, est_j, se_j = [], [], [], []
    gap_means, gap_ses = [], []
    s_times, deltas = [], []
    for li, n in kept:
        k = math.floor(n * t_final)
        s = k / n
        delta = t_final - s
        words = normal_words(seed, stream_key(ROLE_DEMO, 0, level=li),
                             4 * samples * d).reshape(samples, d, 4)
        za, zb, zc, zd = (words[..., j] for j in range(4))
        w_s = math.sqrt(s) * za
        i_s = s**1.5 * (0.5 * za + coeff_b * zb)
        di_tail = delta**1.5 * (0.5 * zc + coeff_b * zd)
        i_t = i_s + delta * w_s + di_tail
        f_t = np.asarray(f(i_t), dtype=np.float64)
        ivals = np.abs(f_t - f(i_s))
        jvals = np.abs(f_t - f(i_s + delta * w_s))
        gaps = ivals - jvals
        rt = math.sqrt(samples)
        est_i.append(float(ivals.mean()))
        se_i.append(float(ivals.std(ddof=1)) / rt)
        est_j.append(float(jvals.mean()))
        se_j.append(float(jvals.std(ddof=1)) / rt)
        gap_means.append(float(gaps.mean()))
        gap_ses.append(float(gaps.std(ddof=1)) / rt)
        s_times.append(s)
        deltas.append(delta)

    kept_levels = tuple(n for _, n in kept)
    meta = {
        "experiment": "taming_demo",
        "samples": samples,
        "seed": seed,
        "horizon": t_final,
        "d": d,
        "observable": getattr(f, "__name__", repr(f)),
        "s_times": s_times,
        "deltas": deltas,
        "dropped_levels": dropped,
    }
    exact_i = max(est_i) < EXACT_TOL
    slope_i, slope_i_se = _fit_or_nan(kept_levels, est_i, se_i, exact_i)
    exact_j = max(est_j) < EXACT_TOL
    slope_j, slope_j_se = _fit_or_nan(kept_levels, est_j, se_j, exact_j)
    return TamingDemoReport(
        uncorrected=RateReport(
            levels=kept_levels, errors=tuple(est_i), errors_se=tuple(se_i),
            slope=slope_i, slope_se=slope_i_se, exact=exact_i,
            metadata=dict(meta, comparison="uncorrected"),
        ),
        shifted=RateReport(
            levels=kept_levels, errors=tuple(est_j), errors_se=tuple(se_j),
            slope=slope_j, slope_se=slope_j_se, exact=exact_j,
            metadata=dict(meta, comparison="shifted"),
        ),
        gap_means=tuple(gap_means),
        gap_ses=tuple(gap_ses),
        horizon=t_final,
    )


# ---------------------------------------------------------------------------
# Total variation histogram proxy


@dataclass(frozen=True)
class TvProxyReport:
    """Histogram L1/2 distance between scheme laws at two resolutions.

    Biased (binning loses mass differences inside cells and Monte Carlo noise
    adds spurious ones); `diagnostic` repeats the estimate at twice the bin
    count and `noise_floor` is the expected estimate for identical laws.
    """

    estimate: float
    diagnostic: float
    noise_floor: float
    bins: int
    metadata: dict


def _hist_freq(x, v, edges_x, edges_v) -> np.ndarray:
    counts, _, _ = np.histogram2d(
        np.clip(x, edges_x[0], edges_x[-1]),
        np.clip(v, edges_v[0], edges_v[-1]),
        bins=[edges_x, edges_v],
    )
    return counts / x.size


def tv_proxy(
    drift: DriftSpec,
    theta: float,
    n: int,
    n_ref: int,
    t: float = 1.0,
    bins: int = 24,
    samples: int = 20_000,
    seed: int = 0,
    *,
    d: int = 1,
    initial=None,
    quad_order: int = 8,
    threads: int | None = 1,
    chunk: int = 4096,
    radius_sds: float = 4.0,
) -> TvProxyReport:
    """Biased total variation estimate between the laws at n and n_ref.

    Both resolutions are simulated to time t on independent streams, the
    final states are histogrammed on a shared grid spanning the pooled mean
    +/- radius_sds standard deviations per axis (tails clipped into the edge
    bins), and half the L1 distance of the bin frequencies is reported.
    """
    if d != 1:
        raise DomainError("the histogram proxy is restricted to d=1 (cost)")
    n, n_ref = int(n), int(n_ref)
    if bins < 8:
        raise ConfigError(f"need at least 8 bins per axis, got {bins}")
    if samples < 8 * bins * bins:
        raise ConfigError(
            f"need samples >= 8*bins^2 = {8 * bins * bins} for a stable histogram, "
            f"got {samples}"
        )
    threads = resolve_threads(threads)
    grid_n = GridSpec(n=n, horizon=t, d=d)
    grid_ref = GridSpec(n=n_ref, horizon=t, d=d)
    x0, v0 = resolve_initial(initial, d)

    finals = {}
    for tag, grid, md in (
        (0, grid_n, mollify(drift, n, theta, d=d)),
        (1, grid_ref, mollify(drift, n_ref, theta, d=d)),
    ):
        fx = np.empty(samples)
        fv = np.empty(samples)

        def worker(lo: int, hi: int, grid=grid, md=md, tag=tag, fx=fx, fv=fv) -> None:
            mc = hi - lo
            streams = [stream_key(ROLE_TV, s, level=tag) for s in range(lo, hi)]
            dw, di = sample_increment_block(grid, seed, streams)
            x = np.broadcast_to(x0, (mc, d)).copy()
            v = np.broadcast_to(v0, (mc, d)).copy()
            step_block(md, grid.h, dw, di, x, v, quad_order)
            fx[lo:hi] = x[:, 0]
            fv[lo:hi] = v[:, 0]

        _run_chunks(_chunk_ranges(samples, chunk), threads, worker)
        finals[tag] = (fx, fv)

    pool_x = np.concatenate([finals[0][0], finals[1][0]])
    pool_v = np.concatenate([finals[0][1], finals[1][1]])
    spans = []
    for pool in (pool_x, pool_v):
        center = float(pool.mean())
        sd = float(pool.std())
        half = max(radius_sds * sd, 1e-12)
        spans.append((center - half, center + half))

    def estimate_at(nb: int) -> float:
        ex = np.linspace(spans[0][0], spans[0][1], nb + 1)
        ev = np.linspace(spans[1][0], spans[1][1], nb + 1)
        p = _hist_freq(*finals[0], ex, ev)
        q = _hist_freq(*finals[1], ex, ev)
        return float(0.5 * np.abs(p - q).sum())

    ex = np.linspace(spans[0][0], spans[0][1], bins + 1)
    ev = np.linspace(spans[1][0], spans[1][1], bins + 1)
    p = _hist_freq(*finals[0], ex, ev)
    q = _hist_freq(*finals[1], ex, ev)
    estimate = float(0.5 * np.abs(p - q).sum())
    pooled = 0.5 * (p + q)
    # E|p_i - q_i| under equal laws: half-normal with the two-sample variance
    noise = 0.5 * math.sqrt(2.0 / math.pi) * np.sqrt(
        pooled * (1.0 - pooled) * (2.0 / samples)
    ).sum()

    return TvProxyReport(
        estimate=estimate,
        diagnostic=estimate_at(2 * bins),
        noise_floor=float(noise),
        bins=bins,
        metadata={
            "experiment": "tv_proxy",
            "drift": drift.drift_id,
            "theta": theta,
            "n": n,
            "n_ref": n_ref,
            "t": t,
            "samples": samples,
            "seed": seed,
            "d": d,
            "initial": [list(map(float, x0)), list(map(float, v0))],
            "spans": spans,
            "radius_sds": radius_sds,
        },
    )


# ---------------------------------------------------------------------------
# Report serialization


def rate_report_to_csv(report: RateReport, fh: TextIO) -> None:
    """Write one row per level: n, error, se."""
    fh.write("n,error,se\n")
    for n, err, se in zip(report.levels, report.errors, report.errors_se):
        fh.write(f"{n},{err!r},{se!r}\n")


def rate_report_summary(report: RateReport) -> dict:
    """JSON-ready summary: slope with uncertainty plus the level table."""
    return {
        "exact": report.exact,
        "slope": None if math.isnan(report.slope) else report.slope,
        "slope_se": None if math.isnan(report.slope_se) else report.slope_se,
        "slope_label": report.slope_label,
        "levels": list(report.levels),
        "errors": list(report.errors),
        "errors_se": list(report.errors_se),
        "metadata": report.metadata,
    }
