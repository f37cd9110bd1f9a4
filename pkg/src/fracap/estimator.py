"""Drift-parameter estimation from a single observed path, plus ergodic averages.

The estimator is the least-squares form

    theta_hat_T = - int_0^T (X - b0(s, X)) delta X(s) / int_0^T (X - b0(s, X))^2 ds,

which, after substituting the equation, is theta - U_T / V_T.  Two modes:
oracle (uses the true theta in the Malliavin kernel of U_T) and
fixed point (data only: the trace term is evaluated at the current iterate).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .almost_periodic import SampledSignal, spectrum_scan
from .errors import DegenerateVT
from .fbm import TimeGrid
from .sde import PathEnsemble
from .skorokhod import (
    MalliavinKernel,
    functional,
    lebesgue_integral,
    malliavin_kernel,
    skorokhod_integral,
    trace_rows,
    young_integral,
)

__all__ = [
    "EstimatorResult",
    "ConsistencySeries",
    "BirkhoffSeries",
    "MeanValueEstimate",
    "v_T",
    "u_T",
    "estimate_oracle",
    "estimate_fixed_point",
    "oracle_ladder",
    "fixed_point_ladder",
    "naive_least_squares",
    "consistency_series",
    "loglog_slope",
    "birkhoff_average",
    "ensemble_period_average",
    "mean_value_ap",
]

VT_FLOOR = 1e-12
THETA_FLOOR = 1e-2
ORACLE = "oracle"
FIXED_POINT = "fixed_point"


@dataclass(frozen=True)
class EstimatorResult:
    """Per-replicate estimates at one horizon."""

    theta_hat: np.ndarray
    u_T: np.ndarray
    v_T: np.ndarray
    horizon_T: float
    mode: str
    fixed_point_iterations: np.ndarray
    converged: np.ndarray
    history: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def all_converged(self) -> bool:
        return bool(np.all(self.converged))

    def abs_error(self, theta: float) -> np.ndarray:
        return np.abs(self.theta_hat - theta)


def _residual(paths: PathEnsemble):
    t = paths.grid.times + paths.time_offset
    return paths.x - paths.drift.b0(t[None, :], paths.x)


def _horizon_window(paths: PathEnsemble, T: float):
    return (0.0, paths.grid.times[paths.grid.index_of(T)])


def v_T(paths: PathEnsemble, window) -> np.ndarray:
    """Trapezoid time average of (X - b0(s, X))^2 over ``window``."""
    r = _residual(paths)
    return lebesgue_integral(r * r, paths.grid, window) / (window[1] - window[0])


def u_T(paths: PathEnsemble, kernel: MalliavinKernel, window) -> np.ndarray:
    """(1/T) times the Skorokhod integral of (X - b0) sigma against B over ``window``."""
    phi = functional("residual", paths.drift)
    return skorokhod_integral(phi, paths, kernel, window).skorokhod_value / (window[1] - window[0])


def _check_vt(v):
    if np.any(~(v > VT_FLOOR)):
        raise DegenerateVT(f"V_T below {VT_FLOOR} on {int(np.sum(~(v > VT_FLOOR)))} replicates")


def estimate_oracle(paths: PathEnsemble, theta_true: float, window, kernel: Optional[MalliavinKernel] = None
                    ) -> EstimatorResult:
    """theta_true - U_T / V_T per replicate, the kernel built with ``theta_true``."""
    kernel = kernel if kernel is not None else malliavin_kernel(paths, theta_true)
    v = v_T(paths, window)
    _check_vt(v)
    u = u_T(paths, kernel, window)
    R = paths.replicates
    return EstimatorResult(theta_true - u / v, u, v, float(window[1] - window[0]), ORACLE,
                           np.zeros(R, dtype=int), np.ones(R, dtype=bool))


class _LadderParts:
    """Prefix sums shared by every horizon of a nested-window ladder."""

    def __init__(self, paths: PathEnsemble, horizons: Sequence[float]):
        grid = paths.grid
        self.paths = paths
        self.grid = grid
        self.hurst = paths.driving.hurst
        self.alpha = self.hurst * (2.0 * self.hurst - 1.0)
        self.i0 = grid.index_of(0.0)
        self.ends = [grid.index_of(T) for T in horizons]
        if any(b <= a for a, b in zip([self.i0] + self.ends[:-1], self.ends)):
            raise ValueError("horizons must be strictly increasing and positive")
        self.Ts = np.array([(e - self.i0) * grid.dt for e in self.ends])
        drift = paths.drift
        t = grid.times + paths.time_offset
        x = paths.x
        self.resid = x - drift.b0(t[None, :], x)
        self.sigma = drift.sigma_at(t)
        self.dphi = 1.0 - drift.d2b0(t[None, :], x)
        self.weights = self.sigma[None, :] * self.dphi
        stop = self.ends[-1]
        dB = np.diff(paths.driving.paths[:, self.i0 : stop + 1, 0], axis=1)
        dX = np.diff(x[:, self.i0 : stop + 1], axis=1)
        u = self.resid[:, self.i0 : stop] * self.sigma[None, self.i0 : stop]
        self.young_B = self._prefix(u * dB)
        self.young_X = self._prefix(self.resid[:, self.i0 : stop] * dX)
        sq = self.resid[:, self.i0 : stop + 1] ** 2
        cum = np.concatenate([np.zeros((sq.shape[0], 1)), np.cumsum(0.5 * (sq[:, 1:] + sq[:, :-1]), axis=1)], axis=1)
        self.vt = np.stack([cum[:, e - self.i0] * grid.dt / T for e, T in zip(self.ends, self.Ts)], axis=1)
        _check_vt(self.vt)

    def _prefix(self, per_step):
        c = np.cumsum(per_step, axis=1)
        return np.stack([c[:, e - self.i0 - 1] for e in self.ends], axis=1)

    def trace_prefix(self, kernel: MalliavinKernel, stop: int, theta_scale=None, replicates=None):
        w = self.weights if replicates is None else self.weights[replicates]
        rows = trace_rows(w, kernel, self.i0, stop, self.hurst, theta_scale)
        return np.cumsum(rows, axis=1)


def oracle_ladder(paths: PathEnsemble, theta_true: float, horizons: Sequence[float],
                  kernel: Optional[MalliavinKernel] = None) -> list:
    """Oracle estimates on nested windows [0, T] sharing one trace pass."""
    parts = _LadderParts(paths, horizons)
    kernel = kernel if kernel is not None else malliavin_kernel(paths, theta_true)
    tr = parts.trace_prefix(kernel, parts.ends[-1])
    out = []
    R = paths.replicates
    for h, (e, T) in enumerate(zip(parts.ends, parts.Ts)):
        trace = tr[:, e - parts.i0 - 1]
        u = (parts.young_B[:, h] - parts.alpha * trace) / T
        v = parts.vt[:, h]
        out.append(EstimatorResult(theta_true - u / v, u, v, float(T), ORACLE,
                                   np.zeros(R, dtype=int), np.ones(R, dtype=bool)))
    return out


def _fixed_point_one(parts: _LadderParts, base: MalliavinKernel, h: int, theta_init, max_iter, tol):
    e, T = parts.ends[h], parts.Ts[h]
    R = parts.paths.replicates
    theta = np.broadcast_to(np.asarray(theta_init, dtype=float), (R,)).copy()
    history = np.full((max_iter + 1, R), np.nan)
    history[0] = theta
    iters = np.zeros(R, dtype=int)
    converged = np.zeros(R, dtype=bool)
    young = parts.young_X[:, h]
    denom = T * parts.vt[:, h]
    active = np.arange(R)
    for k in range(1, max_iter + 1):
        if active.size == 0:
            break
        sub = replace(base, log_decay=base.log_decay[active])
        scale = np.maximum(theta[active], THETA_FLOOR)
        trace = parts.trace_prefix(sub, e, scale, active)[:, -1]
        new = -(young[active] - parts.alpha * trace) / denom[active]
        step = np.abs(new - theta[active])
        theta[active] = new
        history[k, active] = new
        iters[active] = k
        done = step < tol
        converged[active[done]] = True
        active = active[~done]
    return theta, iters, converged, history


def naive_least_squares(paths: PathEnsemble, window) -> np.ndarray:
    """-int (X - b0) dX / int (X - b0)^2 ds with the pathwise (Young) integral; no trace correction."""
    r = _residual(paths)
    T = window[1] - window[0]
    return -young_integral(r, paths.x, paths.grid, window) / (T * v_T(paths, window))


def fixed_point_ladder(paths: PathEnsemble, horizons: Sequence[float], theta_init=None,
                       max_iter: int = 50, tol: float = 1e-6) -> list:
    """Data-only estimates on nested windows; see :func:`estimate_fixed_point`."""
    parts = _LadderParts(paths, horizons)
    base = malliavin_kernel(paths, 1.0)
    out = []
    for h, T in enumerate(parts.Ts):
        init = -parts.young_X[:, h] / (T * parts.vt[:, h]) if theta_init is None else theta_init
        theta, iters, conv, hist = _fixed_point_one(parts, base, h, init, max_iter, tol)
        v = parts.vt[:, h]
        kernel_scale = np.maximum(theta, THETA_FLOOR)
        tr = parts.trace_prefix(base, parts.ends[h], kernel_scale)[:, -1]
        u = (parts.young_B[:, h] - parts.alpha * tr) / T
        out.append(EstimatorResult(theta, u, v, float(T), FIXED_POINT, iters, conv, hist))
    return out


def estimate_fixed_point(paths: PathEnsemble, theta_init=None, window=None,
                         max_iter: int = 50, tol: float = 1e-6) -> EstimatorResult:
    """Data-only estimate: iterate theta -> -[int (X-b0) dX - alpha trace(theta)] / (T V_T).

    The trace uses the Malliavin kernel built at the current iterate (the
    kernel's log-decay is linear in theta, so one template is rescaled per
    replicate).  Iterates are floored at THETA_FLOOR inside the kernel.
    Replicates that do not move by less than ``tol`` within ``max_iter``
    steps return their last iterate with ``converged`` False.  ``u_T`` is
    reported at the final iterate.  ``theta_init`` defaults to the naive
    least-squares value (trace term dropped), which uses no knowledge of theta.
    """
    if window is None or window[0] != 0.0:
        raise ValueError("fixed-point estimation uses windows [0, T]")
    return fixed_point_ladder(paths, [window[1]], theta_init, max_iter, tol)[0]


def loglog_slope(x, y) -> float:
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


@dataclass
class ConsistencySeries:
    """Ladder statistics over a common replicate set."""

    horizons: list
    median_abs_error: list
    median_theta: list
    iqr_theta: list
    mean_u2: list
    mean_v: list
    slope: float
    theta_true: float
    hurst: float
    mode: str
    slope_target: float = field(init=False)

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.horizons, self.horizons[1:])):
            raise ValueError("horizons must be strictly increasing")
        self.slope_target = 2.0 * self.hurst - 2.0

    @property
    def slope_pass(self) -> bool:
        return abs(self.slope - self.slope_target) <= 0.3

    @property
    def monotone_pass(self) -> bool:
        m = self.median_abs_error
        return all(b < a for a, b in zip(m, m[1:]))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["T", "median_abs_error", "median_theta", "iqr_theta", "mean_u2", "mean_v"])
            for row in zip(self.horizons, self.median_abs_error, self.median_theta, self.iqr_theta,
                           self.mean_u2, self.mean_v):
                w.writerow([repr(float(v)) for v in row])
        return path

    def to_json(self) -> str:
        return json.dumps({
            "mode": self.mode, "hurst": self.hurst, "theta_true": self.theta_true,
            "horizons": self.horizons, "median_abs_error": self.median_abs_error,
            "median_theta": self.median_theta, "iqr_theta": self.iqr_theta,
            "mean_u2": self.mean_u2, "mean_v": self.mean_v,
            "slope": self.slope, "slope_target": self.slope_target,
            "slope_pass": self.slope_pass, "monotone_pass": self.monotone_pass,
        }, indent=2)


def consistency_series(results: Sequence[EstimatorResult], theta_true: float, hurst: float) -> ConsistencySeries:
    hs = [r.horizon_T for r in results]
    q = [np.percentile(r.theta_hat, [25, 75]) for r in results]
    mu2 = [float(np.mean(r.u_T ** 2)) for r in results]
    return ConsistencySeries(
        horizons=hs,
        median_abs_error=[float(np.median(r.abs_error(theta_true))) for r in results],
        median_theta=[float(np.median(r.theta_hat)) for r in results],
        iqr_theta=[float(b - a) for a, b in q],
        mean_u2=mu2,
        mean_v=[float(np.mean(r.v_T)) for r in results],
        slope=loglog_slope(hs, mu2) if len(hs) > 1 else float("nan"),
        theta_true=float(theta_true), hurst=float(hurst), mode=results[0].mode,
    )


YFunc = Union[Callable, np.ndarray]


def _pathwise(paths: PathEnsemble, Y: YFunc) -> np.ndarray:
    if callable(Y):
        t = paths.grid.times + paths.time_offset
        return np.broadcast_to(np.asarray(Y(t[None, :], paths.x), dtype=float), paths.x.shape)
    Y = np.asarray(Y, dtype=float)
    if Y.shape != paths.x.shape:
        raise ValueError("Y must match the ensemble shape (replicates, n_points)")
    return Y


def residual_square(paths: PathEnsemble) -> np.ndarray:
    """(X - b0(t, X))^2 sampled along every path."""
    return _residual(paths) ** 2


@dataclass
class BirkhoffSeries:
    horizons: np.ndarray
    averages: np.ndarray  # (replicates, horizons)

    @property
    def mean(self) -> np.ndarray:
        return self.averages.mean(axis=0)

    @property
    def variance(self) -> np.ndarray:
        return self.averages.var(axis=0, ddof=1)


def birkhoff_average(paths: PathEnsemble, Y: YFunc, horizons: Sequence[float]) -> BirkhoffSeries:
    """Per-replicate (1/t) int_0^t Y(s) ds for each t in ``horizons`` (trapezoid rule)."""
    y = _pathwise(paths, Y)
    grid = paths.grid
    i0 = grid.index_of(0.0)
    ends = [grid.index_of(t) for t in horizons]
    seg = y[:, i0 : max(ends) + 1]
    cum = np.concatenate([np.zeros((y.shape[0], 1)), np.cumsum(0.5 * (seg[:, 1:] + seg[:, :-1]), axis=1)], axis=1)
    avg = np.stack([cum[:, e - i0] / (e - i0) for e in ends], axis=1)
    return BirkhoffSeries(np.array([(e - i0) * grid.dt for e in ends]), avg)


def ensemble_period_average(paths: PathEnsemble, Y: YFunc, period: float, start: float = 0.0) -> tuple:
    """(1/period) int_start^{start+period} E Y(s) ds with E the replicate mean; returns (value, standard error)."""
    y = _pathwise(paths, Y)
    per = lebesgue_integral(y, paths.grid, (start, start + period)) / period
    return float(per.mean()), float(per.std(ddof=1) / math.sqrt(per.size))


@dataclass
class MeanValueEstimate:
    horizons: list
    ensemble_means: list
    limit: float
    relative_change: float
    positivity: float
    spectrum_frequencies: list


def mean_value_ap(paths: PathEnsemble, Y: YFunc, horizons: Sequence[float],
                  lambda_grid: Optional[np.ndarray] = None) -> MeanValueEstimate:
    """Long-horizon mean value of the mean function m_Y(t) = E Y(t).

    The estimate at each horizon is the replicate mean of the Birkhoff
    averages; the limit is the last one and ``relative_change`` compares the
    last two horizons.  ``positivity`` is sum |M(m_Y e^{i lam .})|^2 over the
    spectrum found in ``lambda_grid`` (default: [-4, 4] at resolution
    pi / (2 horizon)), a lower bound for M(m_Y^2).
    """
    series = birkhoff_average(paths, Y, horizons)
    means = [float(m) for m in series.mean]
    rel = abs(means[-1] - means[-2]) / abs(means[-2]) if len(means) > 1 else float("nan")
    y = _pathwise(paths, Y)
    grid = paths.grid
    i0 = grid.index_of(0.0)
    iend = grid.index_of(horizons[-1])
    mu = SampledSignal(TimeGrid(0.0, grid.dt, iend - i0 + 1), y[:, i0 : iend + 1].mean(axis=0))
    horizon = float(series.horizons[-1])
    if lambda_grid is None:
        step = math.pi / (2.0 * horizon)
        lambda_grid = np.arange(-4.0, 4.0 + step / 2, step)
    spec = spectrum_scan(mu, lambda_grid, horizon=horizon)
    pos = float(sum(abs(c) ** 2 for c in spec.coefficients))
    return MeanValueEstimate(list(map(float, series.horizons)), means, means[-1], float(rel), pos,
                             [float(f) for f in spec.frequencies])
