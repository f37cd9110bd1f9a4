"""Almost-periodicity diagnostics for sampled functions and simulated processes.

Deterministic side: Bohr means and coefficients, spectrum scans with a
Parseval check, and epsilon-almost-period scans with relative-density
statistics.  Stochastic side: the L2 distance between a solution and its
translate (Wiener-shifted) and the plain time-shift distance on the same
path.

Coefficient convention: ``bohr_coefficient(f, lam) = M(f(t) e^{+i lam t})``.
With it, a component ``a e^{-i lam t}`` of f is reported at frequency lam,
and real signals have conjugate-symmetric spectra.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.signal import czt

from .errors import EmptyOverlap, HorizonExceedsGrid
from .fbm import TimeGrid
from .sde import PathEnsemble, translate_solution

__all__ = [
    "SampledSignal",
    "APReport",
    "SpectrumEstimate",
    "bohr_mean",
    "bohr_coefficient",
    "spectrum_scan",
    "epsilon_almost_periods",
    "theta_ap_deviation",
    "plain_ap_deviation",
    "deviation_profile",
]

_BLOCK = 1 << 21  # complex samples per vectorized block


@dataclass(frozen=True)
class SampledSignal:
    """A function sampled on a uniform grid; values are (n,) or (n, d)."""

    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape[0] != self.grid.n_points:
            raise ValueError("values do not match the grid")
        if not np.all(np.isfinite(v)):
            raise ValueError("signal has non-finite samples")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, f: Callable, grid: TimeGrid) -> "SampledSignal":
        return cls(grid, np.asarray(f(grid.times)))

    @classmethod
    def from_csv(cls, path, column: str = "value") -> "SampledSignal":
        """Read a two-column CSV (t, value); t must be uniformly spaced."""
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        t = np.array([float(r["t"]) for r in rows])
        v = np.array([complex(r[column].replace(" ", "")) for r in rows])
        if np.all(v.imag == 0):
            v = v.real
        dt = float(np.median(np.diff(t)))
        if not np.allclose(np.diff(t), dt, rtol=1e-6, atol=1e-12):
            raise ValueError("CSV times are not uniformly spaced")
        return cls(TimeGrid(float(t[0]), dt, t.size), v)

    @property
    def origin(self) -> float:
        """Start of mean windows: 0 when the grid contains it, else the grid start."""
        return 0.0 if self.grid.t_start <= 0.0 <= self.grid.t_end else self.grid.t_start


def _mean_weights(grid: TimeGrid, origin: float, horizon: float):
    """Slice and trapezoid weights for (1/horizon) int_origin^{origin+horizon}."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    i0 = grid.nearest_index(origin)
    span = horizon / grid.dt
    k = int(math.floor(span + 1e-9))
    frac = span - k
    if frac < 1e-9:
        frac = 0.0
    last = i0 + k + (1 if frac > 0 else 0)
    if last >= grid.n_points:
        raise HorizonExceedsGrid(f"horizon {horizon} exceeds the grid span from {origin}")
    w = np.ones(last - i0 + 1)
    if frac > 0:
        # trapezoid up to i0+k, then a partial cell with linearly interpolated endpoint
        w[0] = 0.5
        w[k] = 0.5 + frac - 0.5 * frac * frac
        w[k + 1] = 0.5 * frac * frac
    else:
        w[0] = w[-1] = 0.5
    return slice(i0, last + 1), w * grid.dt / horizon


def bohr_mean(f: SampledSignal, horizon: float) -> complex:
    """Trapezoid time average of f over [origin, origin + horizon]."""
    sl, w = _mean_weights(f.grid, f.origin, horizon)
    out = np.tensordot(w, f.values[sl], axes=(0, 0))
    return complex(out) if np.ndim(out) == 0 else out


def _coefficients(f: SampledSignal, lams: np.ndarray, horizon: float, taper: bool = False) -> np.ndarray:
    sl, w = _mean_weights(f.grid, f.origin, horizon)
    t = f.grid.times[sl]
    if taper:
        # Hann window normalized to unit mass: leakage decays like |dlam|^-3
        h = np.sin(np.pi * np.arange(t.size) / (t.size - 1)) ** 2
        w = w * h / np.sum(w * h)
    fw = (w * f.values[sl]) if f.values.ndim == 1 else (w * np.linalg.norm(f.values[sl], axis=1))
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    if lams.size > 16:
        dl = np.diff(lams)
        if np.allclose(dl, dl[0], rtol=1e-9, atol=0.0) and dl[0] > 0:
            dt = f.grid.dt
            raw = czt(fw.astype(complex), m=lams.size, w=np.exp(1j * dl[0] * dt), a=np.exp(-1j * lams[0] * dt))
            return raw * np.exp(1j * lams * t[0])
    out = np.empty(lams.size, dtype=complex)
    step = max(1, _BLOCK // t.size)
    for a in range(0, lams.size, step):
        out[a : a + step] = np.exp(1j * np.outer(lams[a : a + step], t)) @ fw
    return out


def bohr_coefficient(f: SampledSignal, lam: float, horizon: float) -> complex:
    """M(f e^{i lam t}) over the finite horizon (scalar signals)."""
    return complex(_coefficients(f, np.array([lam]), horizon)[0])


@dataclass
class SpectrumEstimate:
    frequencies: list
    coefficients: list
    parseval_defect: float
    mean_square: float = 0.0
    threshold: float = 0.0

    def to_json(self) -> str:
        return json.dumps({
            "frequencies": [float(x) for x in self.frequencies],
            "coefficients": [[float(c.real), float(c.imag)] for c in self.coefficients],
            "parseval_defect": float(self.parseval_defect),
            "mean_square": float(self.mean_square),
            "threshold": float(self.threshold),
        }, indent=2)


def spectrum_scan(f: SampledSignal, lambda_grid: Sequence[float], amplitude_threshold: float | None = None,
                  horizon: float | None = None, xtol: float = 1e-9) -> SpectrumEstimate:
    """Locate Bohr frequencies: grid local maxima of |c| above threshold, then golden-section refinement.

    Detection uses a Hann-tapered mean so that finite-horizon sidelobes of a
    strong frequency do not pass the threshold; refinement and the reported
    coefficients use the plain trapezoid mean.  Frequencies closer than
    about 4 pi / horizon are not separated.

    ``amplitude_threshold`` defaults to 0.05 sqrt(M(|f|^2)); ``horizon``
    defaults to the whole grid span after the origin.
    """
    if horizon is None:
        horizon = (f.grid.n_points - 1 - f.grid.nearest_index(f.origin)) * f.grid.dt
    ms = float(np.real(bohr_mean(SampledSignal(f.grid, np.abs(f.values) ** 2), horizon)))
    if amplitude_threshold is None:
        amplitude_threshold = 0.05 * math.sqrt(ms)
    lam = np.sort(np.asarray(lambda_grid, dtype=float))
    if lam.size == 0 or ms == 0.0:
        return SpectrumEstimate([], [], ms, ms, amplitude_threshold)
    mag = np.abs(_coefficients(f, lam, horizon, taper=True))
    padded = np.concatenate([[-np.inf], mag, [-np.inf]])
    peaks = np.nonzero((mag > amplitude_threshold) & (mag >= padded[:-2]) & (mag > padded[2:]))[0]
    freqs, coefs = [], []
    for k in peaks:
        lo = lam[k - 1] if k > 0 else lam[k]
        hi = lam[k + 1] if k + 1 < lam.size else lam[k]
        if hi > lo:
            res = minimize_scalar(lambda x: -abs(_coefficients(f, np.array([x]), horizon)[0]),
                                  bracket=None, bounds=(lo, hi), method="bounded",
                                  options={"xatol": xtol})
            best = float(res.x)
        else:
            best = float(lam[k])
        c = complex(_coefficients(f, np.array([best]), horizon)[0])
        if abs(c) > amplitude_threshold and not any(abs(best - q) < 1e-6 for q in freqs):
            freqs.append(best)
            coefs.append(c)
    defect = ms - float(sum(abs(c) ** 2 for c in coefs))
    return SpectrumEstimate(freqs, coefs, defect, ms, float(amplitude_threshold))


@dataclass
class APReport:
    epsilon: float
    candidate_periods: list
    max_gap: float
    relatively_dense_at_l: float
    scan_range: tuple

    def to_json(self) -> str:
        d = asdict(self)
        d["scan_range"] = list(self.scan_range)
        d["relatively_dense_at_l"] = None if math.isinf(self.relatively_dense_at_l) else self.relatively_dense_at_l
        return json.dumps(d, indent=2)


def epsilon_almost_periods(f: SampledSignal, epsilon: float, tau_grid: Sequence[float]) -> APReport:
    """All tau in ``tau_grid`` with sup_t |f(t + tau) - f(t)| <= epsilon on the overlap window.

    ``relatively_dense_at_l`` is the largest distance between consecutive
    candidates or from a scan end to the nearest candidate (so every
    subinterval of the scan range of that length meets the set); it is
    infinite when no candidate is found.
    """
    taus = np.sort(np.asarray(tau_grid, dtype=float))
    if taus.size == 0:
        raise ValueError("empty tau grid")
    n = f.grid.n_points
    v = f.values if f.values.ndim == 2 else f.values[:, None]
    accepted = []
    for tau in taus:
        k = f.grid.steps_of(tau)
        if abs(k) >= n:
            raise EmptyOverlap(f"no overlap for tau={tau}")
        a, b = (v[k:], v[: n - k]) if k >= 0 else (v[: n + k], v[-k:])
        if np.max(np.linalg.norm(a - b, axis=1)) <= epsilon:
            accepted.append(float(tau))
    lo, hi = float(taus[0]), float(taus[-1])
    if not accepted:
        return APReport(float(epsilon), [], math.inf, math.inf, (lo, hi))
    gaps = np.diff(accepted)
    max_gap = float(gaps.max()) if gaps.size else 0.0
    ell = max(max_gap, accepted[0] - lo, hi - accepted[-1])
    return APReport(float(epsilon), accepted, max_gap, float(ell), (lo, hi))


def _probe_indices(grid: TimeGrid, probe_times) -> np.ndarray:
    return np.array([grid.index_of(t) for t in probe_times], dtype=int)


def deviation_profile(a: PathEnsemble | np.ndarray, b: PathEnsemble | np.ndarray, idx_a, idx_b=None):
    """Mean squared distance across replicates at paired indices, with its MC standard error."""
    xa = a.states if isinstance(a, PathEnsemble) else a
    xb = b.states if isinstance(b, PathEnsemble) else b
    idx_b = idx_a if idx_b is None else idx_b
    sq = np.sum((xa[:, idx_a, :] - xb[:, idx_b, :]) ** 2, axis=2)
    msd = sq.mean(axis=0)
    se = sq.std(axis=0, ddof=1) / math.sqrt(sq.shape[0]) if sq.shape[0] > 1 else np.zeros_like(msd)
    return msd, se


def theta_ap_deviation(base: PathEnsemble, tau: float, probe_times, return_profile: bool = False):
    """max over probes of sqrt(mean_r |T_tau X(t) - X(t)|^2), T_tau the Wiener-shifted translate."""
    translated = translate_solution(base, tau)
    idx = _probe_indices(base.grid, probe_times)
    msd, se = deviation_profile(translated, base, idx)
    value = float(np.sqrt(msd.max()))
    return (value, msd, se) if return_profile else value


def plain_ap_deviation(base: PathEnsemble, tau: float, probe_times, return_profile: bool = False):
    """max over probes of sqrt(mean_r |X(t + tau) - X(t)|^2) on the same path."""
    grid = base.grid
    idx = _probe_indices(grid, probe_times)
    k = grid.steps_of(tau)
    if np.any(idx + k >= grid.n_points) or np.any(idx + k < 0):
        raise HorizonExceedsGrid("t + tau leaves the simulated grid")
    msd, se = deviation_profile(base, base, idx + k, idx)
    value = float(np.sqrt(msd.max()))
    return (value, msd, se) if return_profile else value
