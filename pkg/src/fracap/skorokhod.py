"""Skorokhod integrals of path functionals phi(t, X(t)) sigma(t) against fBm.

For H > 1/2 the divergence is computed as the pathwise (left-point Young)
integral minus H(2H-1) times the trace of the Malliavin derivative:

    delta(u 1_[0,T]) = sum_i u(t_i) dB_i - H(2H-1) sum_i sum_{j<i} D^{(j)} u(t_i) <1_cell_j, 1_cell_i>

where D^{(j)} is the derivative with respect to the noise on cell j.  The
cell inner products are exact (gamma(i-j) dt^{2H}), so for the fOU
model the discrete divergence has mean zero at every step size.  The
derivative of the solution is

    D_s X(t) = sigma(s) exp(-theta int_s^t (1 - d2 b0(u, X(u))) du),

with the inner integral taken by the trapezoid rule along the simulated
path.  Noise on cell j first reaches the state at t_{j+1}, so the kernel
is sampled at the corner (s, t) = (t_{j+1}, t_i).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numba import njit

from .errors import DimensionUnsupported, KernelMismatch, WindowOffGrid
from .fbm import FbmEnsemble, TimeGrid, fgn_autocovariance
from .sde import FD_STEP, DriftSpec, PathEnsemble

__all__ = [
    "PathFunctional",
    "MalliavinKernel",
    "SkorokhodResult",
    "functional",
    "malliavin_kernel",
    "noise_kernel",
    "noise_paths",
    "young_integral",
    "trace_rows",
    "skorokhod_integral",
    "skorokhod_wrt_X",
]

TRACE_RTOL = 1e-10


@dataclass(frozen=True)
class PathFunctional:
    """phi(t, x) with its x-derivative (central difference when ``dphi`` is None)."""

    phi: Callable
    dphi: Optional[Callable] = None
    name: str = "phi"
    deterministic: bool = False

    def __call__(self, t, x):
        return np.asarray(self.phi(t, x), dtype=float) + 0.0 * x

    def d2(self, t, x):
        if self.deterministic:
            return np.zeros_like(np.asarray(x, dtype=float))
        if self.dphi is not None:
            return np.asarray(self.dphi(t, x), dtype=float) + 0.0 * x
        return (self.phi(t, x + FD_STEP) - self.phi(t, x - FD_STEP)) / (2.0 * FD_STEP)

    def scaled(self, a: float) -> "PathFunctional":
        return PathFunctional(lambda t, x: a * self.phi(t, x),
                              None if self.dphi is None else (lambda t, x: a * self.dphi(t, x)),
                              f"{a}*{self.name}", self.deterministic)

    def __add__(self, other: "PathFunctional") -> "PathFunctional":
        return PathFunctional(lambda t, x: self(t, x) + other(t, x),
                              lambda t, x: self.d2(t, x) + other.d2(t, x),
                              f"{self.name}+{other.name}", self.deterministic and other.deterministic)


def functional(name: str, drift: Optional[DriftSpec] = None) -> PathFunctional:
    """Catalog functionals: identity, residual (x - b0), arctan, sin, cos_time, zero."""
    if name == "identity":
        return PathFunctional(lambda t, x: x, lambda t, x: np.ones_like(x), "identity")
    if name == "residual":
        if drift is None:
            raise ValueError("residual functional needs a drift")
        return PathFunctional(lambda t, x: x - drift.b0(t, x), lambda t, x: 1.0 - drift.d2b0(t, x), "residual")
    if name == "arctan":
        return PathFunctional(lambda t, x: np.arctan(x), lambda t, x: 1.0 / (1.0 + x * x), "arctan")
    if name == "sin":
        return PathFunctional(lambda t, x: np.sin(x), lambda t, x: np.cos(x), "sin")
    if name == "cos_time":
        return PathFunctional(lambda t, x: np.cos(t) + 0.0 * x, None, "cos_time", deterministic=True)
    if name == "zero":
        return PathFunctional(lambda t, x: 0.0 * x, None, "zero", deterministic=True)
    raise KeyError(f"unknown functional {name!r}")


CATALOG_FUNCTIONALS = ("residual", "identity", "arctan", "sin", "cos_time")


@dataclass(frozen=True)
class MalliavinKernel:
    """Lower-triangular D_s X(t) on a grid, stored implicitly.

    ``log_decay[r, k]`` is theta * int_{t_k}^{t_{k+1}} (1 - d2 b0) for
    replicate r, so D_{t_j} X(t_i) = sigma[j] * exp(-sum_{k=j}^{i-1} log_decay[r, k])
    for s_start <= j <= i, and 0 otherwise.
    """

    grid: TimeGrid
    theta_used: float
    log_decay: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)
    s_start: int = 0
    bound_rate: float = 0.0  # theta_lower * m_lower
    sigma_sup: float = 1.0

    @property
    def replicates(self) -> int:
        return self.log_decay.shape[0]

    def value(self, s: float, t: float) -> np.ndarray:
        j, i = self.grid.index_of(s), self.grid.index_of(t)
        if j > i or j < self.s_start:
            return np.zeros(self.replicates)
        return self.sigma[j] * np.exp(-np.sum(self.log_decay[:, j:i], axis=1))

    def dense(self, window=None) -> np.ndarray:
        """Array D[r, i, j] = D_{t_j} X(t_i) over ``window`` (small grids only)."""
        lo, hi = (0, self.grid.n_points) if window is None else (
            self.grid.index_of(window[0]), self.grid.index_of(window[1]) + 1)
        G = np.concatenate([np.zeros((self.replicates, 1)), np.cumsum(self.log_decay, axis=1)], axis=1)[:, lo:hi]
        diff = G[:, :, None] - G[:, None, :]
        idx = np.arange(lo, hi)
        mask = (idx[None, :] <= idx[:, None]) & (idx[None, :] >= self.s_start)
        with np.errstate(over="ignore"):
            out = np.where(mask, self.sigma[lo:hi][None, None, :] * np.exp(-np.where(mask, diff, 0.0)), 0.0)
        return out

    def bound_check(self, rtol: float = 1e-12) -> dict:
        """Check |D_s X(t)| e^{rate (t-s)} <= sup|sigma| over every grid pair s <= t.

        Uses a running maximum over s of log sigma(s) + C(s) - C(t) with
        C the cumulative sum of (log_decay - rate dt), so all O(n^2) pairs
        are covered in O(n) per replicate.
        """
        dt = self.grid.dt
        c = np.concatenate([np.zeros((self.replicates, 1)),
                            np.cumsum(self.log_decay - self.bound_rate * dt, axis=1)], axis=1)
        with np.errstate(divide="ignore"):
            logsig = np.log(np.abs(self.sigma))
        a = logsig[None, :] + c
        a[:, : self.s_start] = -np.inf
        run = np.maximum.accumulate(a, axis=1)
        worst = np.max(run[:, self.s_start:] - c[:, self.s_start:], axis=1)
        ratio = np.exp(worst) / self.sigma_sup
        ok = ratio <= 1.0 + rtol
        return {"max_ratio": float(ratio.max()), "fraction_ok": float(np.mean(ok)), "ok": bool(np.all(ok))}


def malliavin_kernel(paths: PathEnsemble, theta_used: float, s_start: int = 0) -> MalliavinKernel:
    """Malliavin derivative of the simulated solution of a DriftSpec model.

    ``s_start`` is the first grid index whose noise is treated as random;
    the default 0 covers the whole simulated history, including burn-in.
    """
    drift = paths.drift
    if drift is None:
        raise ValueError("malliavin_kernel needs a DriftSpec ensemble")
    if paths.states.shape[2] != 1:
        raise DimensionUnsupported("Malliavin kernel is implemented for d = 1 only")
    grid = paths.grid
    t = grid.times + paths.time_offset
    d2 = drift.d2b0(t[None, :], paths.x)
    integrand = 1.0 - d2
    log_decay = theta_used * 0.5 * grid.dt * (integrand[:, 1:] + integrand[:, :-1])
    sigma = drift.sigma_at(t)
    rate = min(drift.theta_lower, theta_used) * drift.m_lower
    return MalliavinKernel(grid=grid, theta_used=float(theta_used), log_decay=log_decay,
                           sigma=sigma, s_start=s_start, bound_rate=rate,
                           sigma_sup=float(drift.sigma_sup))


def noise_kernel(grid: TimeGrid, replicates: int, sigma: float = 1.0) -> MalliavinKernel:
    """Kernel of X = sigma B (B anchored at 0): D_s X(t) = sigma 1_[0,t](s)."""
    return MalliavinKernel(grid=grid, theta_used=0.0, log_decay=np.zeros((replicates, grid.n_points - 1)),
                           sigma=np.full(grid.n_points, float(sigma)), s_start=grid.index_of_zero,
                           bound_rate=0.0, sigma_sup=abs(float(sigma)))


def noise_paths(ensemble: FbmEnsemble, sigma: float = 1.0) -> PathEnsemble:
    """The driving noise itself as a (model-free) path ensemble X = sigma B."""
    return PathEnsemble(grid=ensemble.grid, model=None, states=sigma * ensemble.paths[:, :, :1],
                        driving=ensemble, drift=None)


def young_integral(y, x, grid: TimeGrid, window) -> np.ndarray:
    """Left-point Riemann-Stieltjes sum sum_k y(t_k) (x(t_{k+1}) - x(t_k)) over ``window``.

    ``y`` and ``x`` have shape (..., n_points); leading axes are replicates.
    """
    i, j = _window_indices(grid, window)
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    return np.sum(y[..., i:j] * np.diff(x[..., i : j + 1], axis=-1), axis=-1)


def _window_indices(grid: TimeGrid, window):
    try:
        i, j = grid.index_of(window[0]), grid.index_of(window[1])
    except Exception as exc:
        raise WindowOffGrid(f"window {window} is not on the grid") from exc
    if j < i:
        raise WindowOffGrid("window end precedes start")
    return i, j


@njit(cache=True)
def _trace_rows_kernel(w, q, sig, gam, s_start, i_lo, i_hi, rtol):
    # lag-major sweep over contiguous slices so the row loop vectorizes;
    # each row still accumulates its terms in increasing lag order
    reps = w.shape[0]
    m = i_hi - i_lo
    out = np.zeros((reps, m))
    nk = gam.shape[0]
    sig_sup = 0.0
    for j in range(sig.shape[0]):
        a = abs(sig[j])
        if a > sig_sup:
            sig_sup = a
    e = np.empty(m)
    acc = np.empty(m)
    kmax = min(i_hi - 1 - s_start, nk - 1)
    for r in range(reps):
        qr = q[r]
        qmax = 0.0
        for k in range(1, qr.shape[0]):
            if qr[k] > qmax:
                qmax = qr[k]
        # tail after lag k is at most sig_sup * e * gam[k+1] / (1 - qmax)
        tail_factor = sig_sup / (1.0 - qmax) if qmax < 1.0 else np.inf
        e[:] = 1.0
        acc[:] = 0.0
        for k in range(1, kmax + 1):
            g = gam[k]
            a0 = max(0, s_start + k - i_lo)
            start = i_lo + a0 - k + 1
            cnt = m - a0
            ee = e[a0:]
            aa = acc[a0:]
            ss = sig[start : start + cnt]
            qq = qr[start : start + cnt]
            for a in range(cnt):
                aa[a] += g * ss[a] * ee[a]
                ee[a] *= qq[a]
            if (k & 7) == 0 and k < kmax and tail_factor < np.inf:
                bound = tail_factor * gam[k + 1]
                done = True
                for a in range(cnt):
                    if bound * ee[a] > rtol * abs(aa[a]):
                        done = False
                        break
                if done:
                    break
        wr = w[r]
        for a in range(m):
            out[r, a] = wr[i_lo + a] * acc[a]
    return out


def trace_rows(weights: np.ndarray, kernel: MalliavinKernel, i_lo: int, i_hi: int,
               hurst: float, theta_scale: Optional[np.ndarray] = None, rtol: float = TRACE_RTOL) -> np.ndarray:
    """Row contributions of the trace for t-cells i_lo..i_hi-1.

    Row i equals weights[:, i] * sum_{s_start <= j < i} gamma(i-j) dt^{2H} / alpha * D_{t_{j+1}} X(t_i),
    so summing rows over a window gives iint D_s u_t |t-s|^{2H-2} ds dt.
    ``theta_scale[r]`` rescales the kernel's theta per replicate (the
    log-decay is linear in theta).  The band is truncated once the certified
    geometric tail falls below ``rtol`` times the accumulated row.
    """
    grid = kernel.grid
    alpha = hurst * (2.0 * hurst - 1.0)
    n = grid.n_points
    gam = fgn_autocovariance(np.arange(n), hurst) * grid.dt ** (2.0 * hurst) / alpha
    logd = kernel.log_decay if theta_scale is None else kernel.log_decay * np.asarray(theta_scale)[:, None]
    # q[r, j] = exp(-log_decay[r, j - 1]): factor moving the source from t_j back to t_{j-1}
    q = np.empty((kernel.replicates, n))
    q[:, 0] = 1.0
    q[:, 1:] = np.exp(-logd)
    return _trace_rows_kernel(np.ascontiguousarray(weights, dtype=float), q,
                              np.ascontiguousarray(kernel.sigma, dtype=float), gam,
                              int(kernel.s_start), int(i_lo), int(i_hi), float(rtol))


@dataclass(frozen=True)
class SkorokhodResult:
    """Per-replicate Young integral, Malliavin trace and Skorokhod value."""

    young_integral: np.ndarray
    trace_correction: np.ndarray
    alpha_H: float

    @property
    def skorokhod_value(self) -> np.ndarray:
        return self.young_integral - self.alpha_H * self.trace_correction

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["replicate", "young", "trace", "value"])
            for r, (y, t, v) in enumerate(zip(self.young_integral, self.trace_correction, self.skorokhod_value)):
                w.writerow([r, repr(float(y)), repr(float(t)), repr(float(v))])
        return path


def _check_pairing(paths: PathEnsemble, kernel: MalliavinKernel):
    if kernel.grid != paths.grid or kernel.replicates != paths.replicates:
        raise KernelMismatch("kernel and paths must share grid and replicates")


def _integrand_samples(phi: PathFunctional, paths: PathEnsemble, kernel: MalliavinKernel):
    t = paths.grid.times + paths.time_offset
    x = paths.states[:, :, 0]
    u = phi(t[None, :], x) * kernel.sigma[None, :]
    w = kernel.sigma[None, :] * phi.d2(t[None, :], x)
    return u, w


def skorokhod_integral(phi: PathFunctional, paths: PathEnsemble, kernel: MalliavinKernel,
                       window, theta_scale=None) -> SkorokhodResult:
    """Skorokhod integral of u_t = phi(t, X_t) sigma(t) against B over ``window``.

    Young part: left-point sum of u against the driving path.  Trace part:
    iint D_s u_t |t-s|^{2H-2} with D_s u_t = sigma(t) d2 phi(t, X_t) D_s X(t).
    """
    _check_pairing(paths, kernel)
    hurst = paths.driving.hurst
    i, j = _window_indices(paths.grid, window)
    u, w = _integrand_samples(phi, paths, kernel)
    young = young_integral(u, paths.driving.paths[:, :, 0], paths.grid, window)
    if phi.deterministic:
        trace = np.zeros(paths.replicates)
    else:
        trace = trace_rows(w, kernel, i, j, hurst, theta_scale).sum(axis=1)
    return SkorokhodResult(young, trace, hurst * (2.0 * hurst - 1.0))


def lebesgue_integral(f: np.ndarray, grid: TimeGrid, window) -> np.ndarray:
    """Trapezoid integral of sampled f (..., n) over ``window``."""
    i, j = _window_indices(grid, window)
    seg = f[..., i : j + 1]
    return grid.dt * (np.sum(seg, axis=-1) - 0.5 * (seg[..., 0] + seg[..., -1]))


def skorokhod_wrt_X(phi: PathFunctional, paths: PathEnsemble, kernel: MalliavinKernel,
                    theta_used: float, window) -> np.ndarray:
    """int phi(s, X(s)) delta X(s) = -theta int phi (X - b0) ds + int phi sigma delta B."""
    drift = paths.drift
    if drift is None:
        raise ValueError("needs a DriftSpec ensemble")
    t = paths.grid.times + paths.time_offset
    x = paths.x
    lebesgue = lebesgue_integral(phi(t[None, :], x) * (x - drift.b0(t[None, :], x)), paths.grid, window)
    return -theta_used * lebesgue + skorokhod_integral(phi, paths, kernel, window).skorokhod_value
