"""Two-sided fractional Brownian motion on a uniform grid.

Paths are produced from fractional Gaussian noise generated by circulant
embedding (Davies-Harte), cumulated from the left end of the grid and then
re-anchored so that B(0) = 0.  Every path value is rounded to the dyadic
lattice ``2**-36``; as long as |B| stays below ``2**16`` the difference of any
two stored values is exact in float64, which makes the Wiener shift
``B(t) - B(-tau)`` and its increment invariance hold bit for bit.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import linalg

from .errors import (
    CirculantNotPSD,
    InvalidHurst,
    ShiftOutOfRange,
    TauOffGrid,
)

__all__ = [
    "TimeGrid",
    "FbmEnsemble",
    "validate_hurst",
    "fgn_autocovariance",
    "fbm_covariance",
    "circulant_eigenvalues",
    "sample_ensemble",
    "wiener_shift_path",
    "replicate_rng",
    "write_csv",
    "write_binary",
    "read_binary",
]

log = logging.getLogger(__name__)

QUANTUM = 2.0 ** -36
MAX_ABS_VALUE = 2.0 ** 16
EIGEN_CLAMP_RTOL = 1e-8
ALIGN_TOL = 1e-9

BINARY_MAGIC = b"FRACAPB\x00"
BINARY_VERSION = 1
# magic, version, H, t_start, dt, n_points, index_of_zero, dim, replicates, seed
_HEADER = struct.Struct("<8sIdddqqIqQ")


def validate_hurst(h: float, allow_reference: bool = False) -> float:
    """Return ``h`` as a float after checking 1/2 < h < 1.

    ``allow_reference=True`` additionally admits h = 0.5 (Brownian reference
    mode, used only for cross-checks).
    """
    h = float(h)
    if allow_reference and h == 0.5:
        return h
    if not 0.5 < h < 1.0:
        raise InvalidHurst(
            f"Hurst index must lie in (1/2, 1), got {h}"
            + ("" if allow_reference else " (pass allow_reference=True for H = 0.5)")
        )
    return h


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = t_start + k * dt, k = 0..n_points-1.

    When the grid spans 0, ``t_start`` must be an integer multiple of ``dt``
    and the grid point at ``index_of_zero`` is exactly 0.
    """

    t_start: float
    dt: float
    n_points: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_points < 1:
            raise ValueError("n_points must be positive")
        if self.spans_zero:
            k = -self.t_start / self.dt
            if abs(k - round(k)) > ALIGN_TOL * max(1.0, abs(k)):
                raise ValueError("t_start must be an integer multiple of dt when the grid spans 0")

    @classmethod
    def from_bounds(cls, t_start: float, t_end: float, dt: float) -> "TimeGrid":
        """Grid covering [t_start, t_end]; both ends are snapped to multiples of dt."""
        k0 = int(round(t_start / dt))
        k1 = int(round(t_end / dt))
        if k1 <= k0:
            raise ValueError("t_end must exceed t_start")
        return cls(k0 * dt, dt, k1 - k0 + 1)

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @property
    def spans_zero(self) -> bool:
        return self.t_start <= 0.0 <= self.t_start + (self.n_points - 1) * self.dt + ALIGN_TOL * self.dt

    @property
    def index_of_zero(self) -> Optional[int]:
        if not self.spans_zero:
            return None
        return int(round(-self.t_start / self.dt))

    @property
    def times(self) -> np.ndarray:
        i0 = self.index_of_zero
        if i0 is not None:
            return (np.arange(self.n_points) - i0) * self.dt
        return self.t_start + np.arange(self.n_points) * self.dt

    def steps_of(self, tau: float) -> int:
        """Number of grid steps in ``tau``; raises TauOffGrid if not aligned."""
        k = tau / self.dt
        kr = int(round(k))
        if abs(k - kr) > ALIGN_TOL * max(1.0, abs(k)):
            raise TauOffGrid(f"tau={tau} is not a multiple of dt={self.dt}")
        return kr

    def index_of(self, t: float) -> int:
        """Grid index of time ``t``; raises TauOffGrid if ``t`` is not a grid point."""
        k = (t - self.t_start) / self.dt
        kr = int(round(k))
        if abs(k - kr) > ALIGN_TOL * max(1.0, abs(k)) or not 0 <= kr < self.n_points:
            raise TauOffGrid(f"t={t} is not a point of the grid")
        return kr

    def nearest_index(self, t: float) -> int:
        return int(np.clip(round((t - self.t_start) / self.dt), 0, self.n_points - 1))

    def shifted(self, tau: float) -> "TimeGrid":
        return TimeGrid(self.t_start + self.steps_of(tau) * self.dt, self.dt, self.n_points)


@dataclass(frozen=True)
class FbmEnsemble:
    """Discretized two-sided fBm paths, ``paths[replicate, k, j] = B_j(t_k)``."""

    grid: TimeGrid
    hurst: float
    paths: np.ndarray = field(repr=False)
    seed: int = 0
    method: str = "circulant"

    def __post_init__(self):
        if self.paths.ndim != 3 or self.paths.shape[1] != self.grid.n_points:
            raise ValueError("paths must have shape (replicates, n_points, dim)")
        self.paths.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.paths.shape[2]

    @property
    def replicate_count(self) -> int:
        return self.paths.shape[0]

    def increments(self) -> np.ndarray:
        return np.diff(self.paths, axis=1)


def fgn_autocovariance(k, h: float):
    """Autocovariance of unit-spacing fractional Gaussian noise at lag ``k``.

    gamma(k) = (|k+1|^{2H} - 2|k|^{2H} + |k-1|^{2H}) / 2.  Works elementwise
    on arrays; multiply by dt^{2H} for a grid of spacing dt.
    """
    k = np.abs(np.asarray(k, dtype=float))
    two_h = 2.0 * h
    out = 0.5 * (np.abs(k + 1.0) ** two_h - 2.0 * k ** two_h + np.abs(k - 1.0) ** two_h)
    return out if out.ndim else float(out)


def fbm_covariance(s, t, h: float):
    """Cov(B(s), B(t)) = (|s|^{2H} + |t|^{2H} - |t-s|^{2H}) / 2."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    two_h = 2.0 * h
    out = 0.5 * (np.abs(s) ** two_h + np.abs(t) ** two_h - np.abs(t - s) ** two_h)
    return out if out.ndim else float(out)


def circulant_eigenvalues(n: int, h: float) -> np.ndarray:
    """Eigenvalues of the 2n circulant embedding of n unit-spacing fGn values.

    Slightly negative eigenvalues (down to -1e-8 * max) are clamped to 0;
    anything below raises CirculantNotPSD.
    """
    gamma = fgn_autocovariance(np.arange(n + 1), h)
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    lam = np.fft.fft(row).real
    floor = -EIGEN_CLAMP_RTOL * lam.max()
    if lam.min() < floor:
        raise CirculantNotPSD(f"min eigenvalue {lam.min():.3e} below {floor:.3e}")
    return np.clip(lam, 0.0, None)


def replicate_rng(seed: int, replicate: int, dim_index: int = 0, stream: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by (seed, replicate, dim, stream)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(replicate), int(dim_index), int(stream)))
    return np.random.Generator(np.random.Philox(ss))


def _fgn_circulant(lam: np.ndarray, n: int, seed: int, replicates: int, dim: int) -> np.ndarray:
    m = lam.size
    scale = np.sqrt(lam / m)
    out = np.empty((replicates, n, dim))
    for r in range(replicates):
        for j in range(dim):
            z = replicate_rng(seed, r, j).standard_normal((2, m))
            w = np.fft.fft(scale * (z[0] + 1j * z[1]))
            out[r, :, j] = w.real[:n]
    return out


def _fgn_cholesky(n: int, h: float, seed: int, replicates: int, dim: int) -> np.ndarray:
    cov = linalg.toeplitz(fgn_autocovariance(np.arange(n), h))
    chol = linalg.cholesky(cov, lower=True)
    out = np.empty((replicates, n, dim))
    for r in range(replicates):
        for j in range(dim):
            z = replicate_rng(seed, r, j).standard_normal(n)
            out[r, :, j] = chol @ z
    return out


def _quantize(values: np.ndarray) -> np.ndarray:
    if np.max(np.abs(values), initial=0.0) >= MAX_ABS_VALUE / 2:
        raise OverflowError("path magnitude too large for exact dyadic storage")
    return np.round(values / QUANTUM) * QUANTUM


def sample_ensemble(
    grid: TimeGrid,
    hurst: float,
    dim: int = 1,
    replicates: int = 1,
    seed: int = 0,
    method: str = "auto",
    allow_reference: bool = False,
) -> FbmEnsemble:
    """Draw ``replicates`` independent d-dimensional fBm paths on ``grid``.

    Args:
        grid: uniform grid; must contain t = 0.
        hurst: Hurst index in (1/2, 1); 0.5 with ``allow_reference``.
        dim: number of independent components.
        replicates: number of paths.
        seed: master seed. Replicate r, component j always uses the stream
            keyed by (seed, r, j), so results do not depend on generation order.
        method: "auto" (circulant, Cholesky fallback), "circulant" or "cholesky".

    Returns:
        FbmEnsemble with B(0) = 0 exactly.
    """
    h = validate_hurst(hurst, allow_reference)
    if grid.index_of_zero is None:
        raise ValueError("grid must span t = 0")
    if replicates < 1 or dim < 1:
        raise ValueError("replicates and dim must be positive")
    n = grid.n_points - 1
    if n == 0:
        fgn = np.zeros((replicates, 0, dim))
        used = "circulant"
    elif method in ("auto", "circulant"):
        try:
            lam = circulant_eigenvalues(n, h)
            fgn = _fgn_circulant(lam, n, seed, replicates, dim)
            used = "circulant"
        except CirculantNotPSD:
            if method == "circulant":
                raise
            log.warning("circulant embedding not PSD for n=%d, H=%g; using Cholesky", n, h)
            fgn = _fgn_cholesky(n, h, seed, replicates, dim)
            used = "cholesky"
    elif method == "cholesky":
        fgn = _fgn_cholesky(n, h, seed, replicates, dim)
        used = "cholesky"
    else:
        raise ValueError(f"unknown method {method!r}")

    fgn *= grid.dt ** h
    paths = np.zeros((replicates, grid.n_points, dim))
    np.cumsum(fgn, axis=1, out=paths[:, 1:, :])
    i0 = grid.index_of_zero
    paths -= paths[:, i0 : i0 + 1, :]
    paths = _quantize(paths)
    paths[:, i0, :] = 0.0
    return FbmEnsemble(grid=grid, hurst=h, paths=paths, seed=int(seed), method=used)


def wiener_shift_path(ensemble: FbmEnsemble, tau: float, replicate: Optional[int] = None):
    """Path of theta_{-tau} omega, evaluated as t -> B(t + tau, theta_{-tau} omega).

    The returned array is indexed by the input grid: entry k holds
    B(t_k, omega) - B(-tau, omega), the value of the shifted path at time
    t_k + tau (so it lives on ``grid.shifted(tau)``).  No resampling is
    involved; with the dyadic storage of paths the identity is exact.

    Returns ``(values, shifted_grid)``; ``values`` has shape (n_points, dim)
    for a single replicate, else (replicates, n_points, dim).
    """
    grid = ensemble.grid
    k = grid.steps_of(tau)
    idx = grid.index_of_zero - k
    if not 0 <= idx < grid.n_points:
        raise ShiftOutOfRange(f"-tau={-tau} lies outside the grid [{grid.t_start}, {grid.t_end}]")
    paths = ensemble.paths if replicate is None else ensemble.paths[replicate]
    anchor = paths[..., idx : idx + 1, :]
    return paths - anchor, grid.shifted(tau)


def shift_ensemble(ensemble: FbmEnsemble, tau: float) -> FbmEnsemble:
    """Wiener shift of every replicate, re-expressed as an ensemble on the shifted grid."""
    values, g = wiener_shift_path(ensemble, tau)
    return FbmEnsemble(grid=g, hurst=ensemble.hurst, paths=np.ascontiguousarray(values),
                       seed=ensemble.seed, method=ensemble.method)


def write_csv(ensemble: FbmEnsemble, path) -> Path:
    """Long-format CSV with columns t, replicate, dim, value."""
    path = Path(path)
    t = ensemble.grid.times
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "replicate", "dim", "value"])
        for r in range(ensemble.replicate_count):
            for j in range(ensemble.dim):
                col = ensemble.paths[r, :, j]
                w.writerows((repr(float(tk)), r, j, repr(float(v))) for tk, v in zip(t, col))
    return path


def write_binary(ensemble: FbmEnsemble, path) -> Path:
    """Compact binary dump: fixed little-endian header then float64 values.

    Header fields in order: magic ``FRACAPB\\0``, uint32 version, float64 H,
    float64 t_start, float64 dt, int64 n_points, int64 index_of_zero,
    uint32 dim, int64 replicates, uint64 seed.  Values follow in
    (replicate, point, dim) order.
    """
    path = Path(path)
    g = ensemble.grid
    header = _HEADER.pack(BINARY_MAGIC, BINARY_VERSION, ensemble.hurst, g.t_start, g.dt,
                          g.n_points, g.index_of_zero, ensemble.dim, ensemble.replicate_count,
                          ensemble.seed & 0xFFFFFFFFFFFFFFFF)
    with path.open("wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(ensemble.paths, dtype="<f8").tobytes())
    return path


def read_binary(path) -> FbmEnsemble:
    raw = Path(path).read_bytes()
    magic, version, h, t_start, dt, n_points, _i0, dim, reps, seed = _HEADER.unpack_from(raw)
    if magic != BINARY_MAGIC or version != BINARY_VERSION:
        raise ValueError("not a fracap binary path file")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(reps, n_points, dim)
    return FbmEnsemble(grid=TimeGrid(t_start, dt, n_points), hurst=h,
                       paths=data.astype(float), seed=int(seed))
