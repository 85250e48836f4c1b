"""Exact joint sampling of Brownian increments and their running time integrals.

A path at resolution n on [0, T] stores, per step of size h = 1/n and per
dimension, the pair (dW, dI): the Brownian increment and the integral of
(W_s - W_{step start}) over the step.  Per dimension the pair is centered
Gaussian with covariance [[h, h^2/2], [h^2/2, h^3/3]], realized exactly from
two unit normals as

    dW = sqrt(h) * a,      dI = h^(3/2) * (a/2 + b/sqrt(12)),

an exact Cholesky-type factorization since (1/2)^2 + (1/sqrt(12))^2 = 1/3.
Fine paths aggregate to coarse ones describing the same trajectory, which is
what couples integrators across resolutions.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

from ._rng import (
    ROLE_INCREMENT_CHECK,
    make_generator,
    normal_words,
    stream_key,
)
from .errors import ConfigError, DomainError
from .kernel import KernelCovariance

__all__ = [
    "GridSpec",
    "AugmentedPath",
    "sample_path",
    "integrate_path",
    "coarsen",
    "increment_identity_report",
    "IncrementIdentityReport",
    "save_path",
    "load_path",
]

_DI_B_COEFF = 1.0 / math.sqrt(12.0)


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid with n steps per unit time on [0, horizon], dimension d.

    Grid points are t_k = k * h with h = 1/n; the total step count
    n * horizon must be a whole number.
    """

    n: int
    horizon: float = 1.0
    d: int = 1

    def __post_init__(self):
        if not (isinstance(self.n, (int, np.integer)) and self.n >= 1):
            raise ConfigError(f"steps per unit time must be a positive integer, got {self.n}")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ConfigError(f"horizon must be positive and finite, got {self.horizon}")
        if not (isinstance(self.d, (int, np.integer)) and self.d >= 1):
            raise ConfigError(f"dimension must be a positive integer, got {self.d}")
        steps = self.n * self.horizon
        if abs(steps - round(steps)) > 1e-9:
            raise ConfigError(
                f"n * horizon = {steps} is not a whole number of steps"
            )
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "d", int(self.d))

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def num_steps(self) -> int:
        return int(round(self.n * self.horizon))

    def times(self) -> np.ndarray:
        """Grid times t_k = k * h, k = 0..num_steps."""
        return np.arange(self.num_steps + 1) * self.h


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class AugmentedPath:
    """Sampled increments (dW, dI) on a grid, plus the stream that produced them.

    Immutable after creation; a coarsened path keeps the (seed, stream_id) of
    the fine path it derives from.
    """

    grid: GridSpec
    dW: np.ndarray
    dI: np.ndarray
    seed: int
    stream_id: int

    def __post_init__(self):
        shape = (self.grid.num_steps, self.grid.d)
        dw = np.asarray(self.dW, dtype=np.float64)
        di = np.asarray(self.dI, dtype=np.float64)
        if dw.shape != shape or di.shape != shape:
            raise ConfigError(
                f"increment arrays must have shape {shape}, got {dw.shape} and {di.shape}"
            )
        if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(di))):
            raise DomainError("increments contain non-finite values")
        object.__setattr__(self, "dW", _freeze(dw))
        object.__setattr__(self, "dI", _freeze(di))


def _increments_from_normals(xi: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Map unit normals with trailing axis (a, b) to (dW, dI)."""
    a = xi[..., 0]
    b = xi[..., 1]
    dw = math.sqrt(h) * a
    di = h**1.5 * (0.5 * a + _DI_B_COEFF * b)
    return dw, di


def sample_path(grid: GridSpec, seed: int = 0, stream_id: int = 0) -> AugmentedPath:
    """Sample an augmented path; identical (seed, stream_id) give identical output.

    Per step k and dimension i the two unit normals consume the Philox words
    at counter addresses 2*(k*d + i) and 2*(k*d + i) + 1 of the stream, so
    every draw is addressable by (seed, stream_id, step, dim).
    """
    k, d = grid.num_steps, grid.d
    xi = normal_words(seed, stream_id, 2 * k * d).reshape(k, d, 2)
    dw, di = _increments_from_normals(xi, grid.h)
    return AugmentedPath(grid=grid, dW=dw, dI=di, seed=seed, stream_id=stream_id)


def sample_increment_block(
    grid: GridSpec, seed: int, stream_ids: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Sample increments for many streams at once, shapes (steps, len(streams), d).

    Each stream is generated exactly as in sample_path; the block layout just
    suits vectorized stepping.  Output is a pure function of (grid, seed,
    stream_ids) regardless of caller threading.
    """
    k, d = grid.num_steps, grid.d
    m = len(stream_ids)
    dw = np.empty((k, m, d))
    di = np.empty((k, m, d))
    for j, sid in enumerate(stream_ids):
        xi = normal_words(seed, int(sid), 2 * k * d).reshape(k, d, 2)
        dw[:, j, :], di[:, j, :] = _increments_from_normals(xi, grid.h)
    return dw, di


def integrate_path(path: AugmentedPath) -> tuple[np.ndarray, np.ndarray]:
    """Reconstruct (W, I) at grid points, I_t = int_0^t W_s ds; starts at (0, 0).

    The recursion W_{k+1} = W_k + dW_k, I_{k+1} = I_k + h W_k + dI_k is an
    exact identity, not a discretization; sums are compensated (Kahan) so the
    exactness survives 2^14-step grids at 1e-12 tolerances.

    Returns
    -------
    (W, I) : ndarrays of shape (num_steps + 1, d)
    """
    k, d = path.grid.num_steps, path.grid.d
    h = path.grid.h
    w = np.zeros((k + 1, d))
    iarr = np.zeros((k + 1, d))
    cw = np.zeros(d)
    ci = np.zeros(d)
    for step in range(k):
        # Kahan update per component keeps accumulation error at O(eps).
        yw = path.dW[step] - cw
        tw = w[step] + yw
        cw = (tw - w[step]) - yw
        w[step + 1] = tw
        term = h * w[step] + path.dI[step]
        yi = term - ci
        ti = iarr[step] + yi
        ci = (ti - iarr[step]) - yi
        iarr[step + 1] = ti
    return w, iarr


def prefix_integrals(dw: np.ndarray, di: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized (W, I) at grid points for blocks shaped (..., steps, d)."""
    k = dw.shape[-2]
    shape = dw.shape[:-2] + (k + 1,) + dw.shape[-1:]
    w = np.zeros(shape)
    iarr = np.zeros(shape)
    np.cumsum(dw, axis=-2, out=w[..., 1:, :])
    np.cumsum(di + h * w[..., :-1, :], axis=-2, out=iarr[..., 1:, :])
    return w, iarr


def coarsen(path: AugmentedPath, factor: int) -> AugmentedPath:
    """Aggregate a fine path to resolution n/factor describing the same trajectory.

    Per coarse step the Brownian increment is the block sum of fine ones, and
    the integral increment also collects the drift of each fine substep start
    relative to the coarse step start:

        dI_coarse = sum_j [ dI_j + h_fine * (W at substep j - W at block start) ].

    `factor` must divide both the step count and n.
    """
    if not (isinstance(factor, (int, np.integer)) and factor >= 1):
        raise ConfigError(f"coarsening factor must be a positive integer, got {factor}")
    factor = int(factor)
    if factor == 1:
        return path
    k, d = path.grid.num_steps, path.grid.d
    if k % factor or path.grid.n % factor:
        raise ConfigError(
            f"factor {factor} must divide the step count {k} and the resolution {path.grid.n}"
        )
    dw_c, di_c = coarsen_block(path.dW, path.dI, factor, path.grid.h)
    grid_c = GridSpec(n=path.grid.n // factor, horizon=path.grid.horizon, d=d)
    return AugmentedPath(grid=grid_c, dW=dw_c, dI=di_c, seed=path.seed, stream_id=path.stream_id)


def coarsen_block(dw: np.ndarray, di: np.ndarray, factor: int,
                  h_fine: float) -> tuple[np.ndarray, np.ndarray]:
    """coarsen() on raw increment blocks of shape (steps, M, d)."""
    if factor == 1:
        return dw, di
    k = dw.shape[0]
    if k % factor:
        raise ConfigError(f"factor {factor} must divide the step count {k}")
    kc = k // factor
    dw_r = dw.reshape(kc, factor, *dw.shape[1:])
    di_r = di.reshape(kc, factor, *di.shape[1:])
    inner = np.cumsum(dw_r, axis=1)
    excl = np.empty_like(inner)
    excl[:, 0] = 0.0
    excl[:, 1:] = inner[:, :-1]
    return dw_r.sum(axis=1), (di_r + h_fine * excl).sum(axis=1)


@dataclass(frozen=True)
class IncrementIdentityReport:
    """Empirical check that (W, I) increments renew under the transport shift.

    D = (W_t - W_s, I_t - I_s - (t - s) W_s) should be distributed as the
    kernel pair at time t - s and be uncorrelated with (W_s, I_s).  All
    matrices are per-dimension 2x2 blocks in (increment, integral) order,
    stacked along the first axis; `*_se` hold matching standard errors.
    """

    s: float
    t: float
    samples: int
    cov: np.ndarray
    cov_se: np.ndarray
    cov_expected: np.ndarray
    cross: np.ndarray
    cross_se: np.ndarray

    def max_cov_sigmas(self) -> float:
        return float(np.max(np.abs(self.cov - self.cov_expected) / self.cov_se))

    def max_cross_sigmas(self) -> float:
        return float(np.max(np.abs(self.cross) / self.cross_se))


def increment_identity_report(
    grid: GridSpec,
    s_index: int,
    t_index: int,
    samples: int,
    seed: int = 0,
    chunk: int = 8192,
) -> IncrementIdentityReport:
    """Monte Carlo report for the renewal identity between grid indices s and t."""
    if samples < 100:
        raise ConfigError(f"need at least 100 samples, got {samples}")
    k = grid.num_steps
    if not 0 <= s_index < t_index <= k:
        raise DomainError(
            f"indices must satisfy 0 <= s < t <= {k}, got s={s_index}, t={t_index}"
        )
    h = grid.h
    dt = (t_index - s_index) * h
    d = grid.d
    # Per sample and dimension collect (D_W, D_I, W_s, I_s).
    feats = np.empty((samples, d, 4))
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        sids = [stream_key(ROLE_INCREMENT_CHECK, i) for i in range(done, done + m)]
        dw = np.empty((m, t_index, d))
        di = np.empty((m, t_index, d))
        for j, sid in enumerate(sids):
            xi = normal_words(seed, sid, 2 * t_index * d).reshape(t_index, d, 2)
            dw[j], di[j] = _increments_from_normals(xi, h)
        w, iarr = prefix_integrals(dw, di, h)
        ws, is_ = w[:, s_index, :], iarr[:, s_index, :]
        wt, it = w[:, t_index, :], iarr[:, t_index, :]
        feats[done : done + m, :, 0] = wt - ws
        feats[done : done + m, :, 1] = it - (is_ + dt * ws)
        feats[done : done + m, :, 2] = ws
        feats[done : done + m, :, 3] = is_
        done += m
    cov = np.empty((d, 2, 2))
    cov_se = np.empty((d, 2, 2))
    cross = np.empty((d, 2, 2))
    cross_se = np.empty((d, 2, 2))
    centered = feats - feats.mean(axis=0)
    for i in range(d):
        for a in range(2):
            for b in range(2):
                prod = centered[:, i, a] * centered[:, i, b]
                cov[i, a, b] = prod.mean()
                cov_se[i, a, b] = prod.std(ddof=1) / math.sqrt(samples)
                prod = centered[:, i, a] * centered[:, i, 2 + b]
                cross[i, a, b] = prod.mean()
                cross_se[i, a, b] = prod.std(ddof=1) / math.sqrt(samples)
    expected = np.broadcast_to(KernelCovariance(dt).matrix, (d, 2, 2)).copy()
    return IncrementIdentityReport(
        s=s_index * h,
        t=t_index * h,
        samples=samples,
        cov=cov,
        cov_se=cov_se,
        cov_expected=expected,
        cross=cross,
        cross_se=cross_se,
    )


_MAGIC = b"KEMPATH1"
_HEADER = struct.Struct("<8sIIQdQQ")  # magic, version, d, n, T, seed, stream_id
_VERSION = 1


def save_path(path: AugmentedPath, fh: BinaryIO) -> None:
    """Write the binary dump: fixed little-endian header, then increments.

    Body layout is step-major, dimension-minor: for each step k and dimension
    i the pair (dW[k, i], dI[k, i]) as IEEE-754 doubles.
    """
    g = path.grid
    fh.write(_HEADER.pack(_MAGIC, _VERSION, g.d, g.n, g.horizon, path.seed, path.stream_id))
    body = np.empty((g.num_steps, g.d, 2))
    body[:, :, 0] = path.dW
    body[:, :, 1] = path.dI
    fh.write(body.astype("<f8").tobytes())


def load_path(fh: BinaryIO) -> AugmentedPath:
    """Read a dump written by save_path."""
    raw = fh.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise ConfigError("truncated path file header")
    magic, version, d, n, horizon, seed, stream_id = _HEADER.unpack(raw)
    if magic != _MAGIC:
        raise ConfigError(f"bad path file magic {magic!r}")
    if version != _VERSION:
        raise ConfigError(f"unsupported path file version {version}")
    grid = GridSpec(n=int(n), horizon=float(horizon), d=int(d))
    count = grid.num_steps * grid.d * 2
    body = np.frombuffer(fh.read(count * 8), dtype="<f8")
    if body.size != count:
        raise ConfigError("truncated path file body")
    body = body.reshape(grid.num_steps, grid.d, 2)
    return AugmentedPath(
        grid=grid,
        dW=body[:, :, 0].copy(),
        dI=body[:, :, 1].copy(),
        seed=int(seed),
        stream_id=int(stream_id),
    )
