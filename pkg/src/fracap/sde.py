"""Semilinear SDEs dX = (A X + b(t, X)) dt + sigma(t) dB driven by fBm.

Integration uses the exponential Euler scheme

    X_{k+1} = e^{A dt} X_k + Phi(dt) b(t_k, X_k) + sigma(t_k) (B(t_{k+1}) - B(t_k)),
    Phi(dt) = int_0^dt e^{A s} ds,

which is exact for the linear part.  The two-sided solution on R is
approximated by starting from 0 at -T0 with T0 = burn_in_multiplier / m_S.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np
from scipy import linalg

from .errors import (
    AssumptionViolated,
    ContractionViolated,
    DimensionUnsupported,
    ShiftOutOfRange,
    StepDiverged,
)
from .fbm import FbmEnsemble, TimeGrid, replicate_rng, sample_ensemble, wiener_shift_path

__all__ = [
    "Periodicity",
    "SemilinearModel",
    "DriftSpec",
    "PathEnsemble",
    "MODEL_NAMES",
    "drift_spec",
    "custom_drift",
    "contraction_ratio",
    "integrate",
    "integrate_two_sided",
    "translate_solution",
]

OVERFLOW_GUARD = 1e12
FD_STEP = 1e-6
BOUND_MARGIN = 0.02  # relative widening of probe-estimated derivative bounds


@dataclass(frozen=True)
class Periodicity:
    kind: str = "almost_periodic"  # almost_periodic | periodic | autonomous
    period: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("almost_periodic", "periodic", "autonomous"):
            raise ValueError(f"unknown periodicity kind {self.kind!r}")
        if self.kind == "periodic" and not (self.period and self.period > 0):
            raise ValueError("periodic models need a positive period")


AUTONOMOUS = Periodicity("autonomous")


@dataclass(frozen=True)
class SemilinearModel:
    """The triple (A, b, sigma) with its structural constants.

    ``b(t, x)`` receives a float time and states of shape (replicates, d) and
    returns the same shape; ``sigma(t)`` returns a (d, d) matrix.
    """

    A: np.ndarray
    b: Callable[[float, np.ndarray], np.ndarray]
    sigma: Callable[[float], np.ndarray]
    c_S: float
    m_S: float
    c_b: float
    m_b: float
    periodicity: Periodicity = field(default_factory=Periodicity)
    name: str = "model"

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.A, dtype=float))
        if a.shape[0] != a.shape[1]:
            raise ValueError("A must be square")
        object.__setattr__(self, "A", a)
        if self.c_S <= 0 or self.m_S <= 0:
            raise ValueError("c_S and m_S must be positive")
        if self.c_b < 0 or self.m_b < 0:
            raise ValueError("c_b and m_b must be non-negative")

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def check_assumptions(self, n_probes: int = 10_000, seed: int = 0,
                          t_range=(-200.0, 200.0), rtol: float = 1e-9) -> dict:
        """Probe-based check of the semigroup bound, Lipschitz/growth bounds and bounded sigma."""
        rng = np.random.default_rng(seed)
        d = self.dim
        ts = np.linspace(0.0, 50.0 / self.m_S, 501)
        sg = np.array([np.linalg.norm(linalg.expm(self.A * t), 2) for t in ts])
        semigroup_ok = bool(np.all(sg <= self.c_S * np.exp(-self.m_S * ts) * (1 + rtol) + 1e-300))

        tp = rng.uniform(*t_range, n_probes)
        x = rng.normal(0.0, 10.0, (n_probes, d))
        y = x + rng.normal(0.0, 1.0, (n_probes, d)) * rng.choice([1e-3, 1.0, 10.0], (n_probes, 1))
        bx = np.empty_like(x)
        by = np.empty_like(y)
        # group probes sharing a time to keep b's calling convention (scalar t)
        for i in range(n_probes):
            bx[i] = self.b(tp[i], x[i : i + 1])[0]
            by[i] = self.b(tp[i], y[i : i + 1])[0]
        nx = np.linalg.norm(x, axis=1)
        lip = np.linalg.norm(bx - by, axis=1) <= self.c_b * np.linalg.norm(x - y, axis=1) * (1 + rtol) + 1e-12
        growth = np.linalg.norm(bx, axis=1) <= self.m_b * (1 + nx) * (1 + rtol) + 1e-12
        sig = np.array([np.linalg.norm(self.sigma(t), 2) for t in tp[:1000]])
        report = {
            "semigroup_bound": semigroup_ok,
            "lipschitz": bool(np.all(lip)),
            "linear_growth": bool(np.all(growth)),
            "sigma_bounded": bool(np.all(np.isfinite(sig))),
            "sigma_sup": float(np.max(sig)) if sig.size else 0.0,
        }
        report["ok"] = all(v for k, v in report.items() if k != "sigma_sup")
        return report


@dataclass(frozen=True)
class DriftSpec:
    """dX = -theta (X - b0(t, X)) dt + sigma(t) dB, the d = 1 estimation model.

    ``b0(t, x)`` and ``db0(t, x)`` (its x-derivative) must broadcast over
    arrays.  Without ``db0`` a central difference with step 1e-6 is used.
    """

    theta: float
    b0: Callable
    m_lower: float
    m_upper: float
    kind: str = "custom"
    db0: Optional[Callable] = None
    sigma: Union[float, Callable] = 1.0
    growth: float = 1.0  # |b0(t, x)| <= growth * (1 + |x|)
    lipschitz: Optional[float] = None  # sup |d2 b0|; defaults to max(1 - m_lower, m_upper)
    theta_lower: Optional[float] = None
    periodicity: Periodicity = field(default_factory=Periodicity)
    sigma_sup: Optional[float] = None

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        if not (0.0 < self.m_lower <= 1.0 and 0.0 <= self.m_upper < 1.0):
            raise ValueError("need 0 < m_lower <= 1 and 0 <= m_upper < 1")
        tl = self.theta if self.theta_lower is None else self.theta_lower
        if not 0 < tl <= self.theta:
            raise ValueError("need 0 < theta_lower <= theta")
        object.__setattr__(self, "theta_lower", float(tl))
        if self.lipschitz is None:
            object.__setattr__(self, "lipschitz", max(1.0 - self.m_lower, self.m_upper))
        if self.sigma_sup is None:
            probe = np.linspace(-100.0, 100.0, 4001)
            object.__setattr__(self, "sigma_sup", float(np.max(np.abs(self.sigma_at(probe)))))

    def sigma_at(self, t):
        if callable(self.sigma):
            return np.broadcast_to(np.asarray(self.sigma(t), dtype=float), np.shape(t)) * 1.0
        return np.full(np.shape(t), float(self.sigma))

    def d2b0(self, t, x):
        if self.db0 is not None:
            return np.broadcast_to(np.asarray(self.db0(t, x), dtype=float), np.broadcast(t, x).shape) * 1.0
        return (self.b0(t, x + FD_STEP) - self.b0(t, x - FD_STEP)) / (2.0 * FD_STEP)

    def with_theta(self, theta: float) -> "DriftSpec":
        return replace(self, theta=float(theta), theta_lower=None)

    def check_derivative_bounds(self, n_probes: int = 10_000, seed: int = 0,
                                t_range=(0.0, 1000.0)) -> dict:
        """Probe -m_upper <= d2 b0 <= 1 - m_lower, and analytic vs finite-difference agreement."""
        rng = np.random.default_rng(seed)
        t = rng.uniform(*t_range, n_probes)
        x = rng.normal(0.0, 5.0, n_probes) * rng.choice([0.1, 1.0, 10.0], n_probes)
        d = self.d2b0(t, x)
        fd = (self.b0(t, x + FD_STEP) - self.b0(t, x - FD_STEP)) / (2.0 * FD_STEP)
        tol = 1e-9
        out = {
            "lower": bool(np.all(d >= -self.m_upper - tol)),
            "upper": bool(np.all(d <= 1.0 - self.m_lower + tol)),
            "fd_agreement": float(np.max(np.abs(d - fd))),
            "d2_min": float(d.min()),
            "d2_max": float(d.max()),
        }
        out["ok"] = out["lower"] and out["upper"] and out["fd_agreement"] < 1e-6
        return out

    def to_model(self) -> SemilinearModel:
        th = self.theta
        b0 = self.b0

        def b(t, x):
            return th * b0(t, x)

        def sigma(t):
            return np.array([[float(self.sigma_at(t))]])

        return SemilinearModel(
            A=np.array([[-th]]), b=b, sigma=sigma, c_S=1.0, m_S=th,
            c_b=th * self.lipschitz, m_b=th * self.growth,
            periodicity=self.periodicity, name=self.kind,
        )


_SQRT2 = math.sqrt(2.0)


def _ex1(t, x):
    return 0.25 * (np.cos(t) + np.sin(_SQRT2 * t)) * x


def _ex1_d(t, x):
    return 0.25 * (np.cos(t) + np.sin(_SQRT2 * t)) + 0.0 * x


def _ex2(t, x):
    return 0.25 * (np.sin(t) + np.cos(_SQRT2 * t)) * np.arctan(x)


def _ex2_d(t, x):
    return 0.25 * (np.sin(t) + np.cos(_SQRT2 * t)) / (1.0 + x * x)


def _ex3(t, x):
    return 0.125 * (np.cos(t) + np.sin(_SQRT2 * t)) * x + 0.125 * (np.sin(t) + np.cos(_SQRT2 * t)) * np.arctan(x)


def _ex3_d(t, x):
    return 0.125 * (np.cos(t) + np.sin(_SQRT2 * t)) + 0.125 * (np.sin(t) + np.cos(_SQRT2 * t)) / (1.0 + x * x)


def _ex4(t, x):
    return 0.5 * np.cos(t) * x


def _ex4_d(t, x):
    return 0.5 * np.cos(t) + 0.0 * x


def _zero(t, x):
    return 0.0 * x


# name -> (b0, d2 b0, m_lower, m_upper, growth, lipschitz, periodicity)
_CATALOG = {
    "example1": (_ex1, _ex1_d, 0.5, 0.5, 0.5, 0.5, Periodicity("almost_periodic")),
    "example2": (_ex2, _ex2_d, 0.5, 0.5, math.pi / 4, 0.5, Periodicity("almost_periodic")),
    "example3": (_ex3, _ex3_d, 0.5, 0.5, math.pi / 8, 0.5, Periodicity("almost_periodic")),
    "example4": (_ex4, _ex4_d, 0.5, 0.5, 0.5, 0.5, Periodicity("periodic", 2 * math.pi)),
    "fou": (_zero, _zero, 1.0, 0.0, 0.0, 0.0, AUTONOMOUS),
}
MODEL_NAMES = tuple(_CATALOG) + ("custom",)


def drift_spec(name: str, theta: float = 1.0, sigma: Union[float, Callable] = 1.0) -> DriftSpec:
    """Catalog drift: ``example1`` .. ``example4`` or ``fou``."""
    try:
        b0, db0, ml, mu, growth, lip, per = _CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; known: {sorted(_CATALOG)}") from None
    return DriftSpec(theta=theta, b0=b0, db0=db0, m_lower=ml, m_upper=mu, kind=name,
                     sigma=sigma, growth=growth, lipschitz=lip, periodicity=per)


_EXPR_NAMESPACE = {k: getattr(np, k) for k in (
    "sin", "cos", "tan", "arctan", "tanh", "exp", "log", "sqrt", "abs", "pi", "sinh", "cosh")}


def custom_drift(expr: str, theta: float = 1.0, sigma: float = 1.0,
                 m_lower: Optional[float] = None, m_upper: Optional[float] = None,
                 derivative: Optional[str] = None, growth: Optional[float] = None,
                 period: Optional[float] = None, n_probes: int = 10_000, seed: int = 0) -> DriftSpec:
    """DriftSpec from expression strings in ``t`` and ``x`` (numpy functions allowed).

    Missing bounds are estimated from probes and widened by BOUND_MARGIN;
    supplied bounds are checked when the model is integrated.
    """
    code = compile(expr, "<b0>", "eval")
    dcode = compile(derivative, "<db0>", "eval") if derivative else None

    def b0(t, x):
        return np.asarray(eval(code, {"__builtins__": {}}, dict(_EXPR_NAMESPACE, t=t, x=x)), dtype=float) + 0.0 * x

    db0 = None
    if dcode is not None:
        def db0(t, x):
            return np.asarray(eval(dcode, {"__builtins__": {}}, dict(_EXPR_NAMESPACE, t=t, x=x)), dtype=float) + 0.0 * x

    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, 1000.0, n_probes)
    x = rng.normal(0.0, 5.0, n_probes) * rng.choice([0.1, 1.0, 10.0], n_probes)
    d = db0(t, x) if db0 else (b0(t, x + FD_STEP) - b0(t, x - FD_STEP)) / (2 * FD_STEP)
    # sampled extremes underestimate the true ones; widen by a margin
    pad = BOUND_MARGIN * max(float(np.max(np.abs(d))), 1e-3)
    if m_lower is None:
        m_lower = 1.0 - float(np.max(d)) - pad
    if m_upper is None:
        m_upper = max(0.0, -float(np.min(d)) + pad)
    if growth is None:
        growth = float(np.max(np.abs(b0(t, x)) / (1.0 + np.abs(x)))) * (1.0 + BOUND_MARGIN)
    lip = float(np.max(np.abs(d))) + pad
    if lip >= 1.0:
        # contraction ratio of theta * b0 against the semigroup e^{-theta t} is sup|d2 b0|
        raise ContractionViolated(f"custom drift {expr!r}: contraction ratio {lip:.4g} >= 1")
    per = Periodicity("periodic", period) if period else Periodicity("almost_periodic")
    spec = DriftSpec(theta=theta, b0=b0, db0=db0, m_lower=m_lower, m_upper=m_upper,
                     kind="custom", sigma=sigma, growth=growth,
                     lipschitz=lip, periodicity=per)
    return spec


def contraction_ratio(model) -> float:
    """c_S * c_b / m_S; long-horizon claims need this below 1."""
    if isinstance(model, DriftSpec):
        model = model.to_model()
    return model.c_S * model.c_b / model.m_S


@dataclass(frozen=True)
class PathEnsemble:
    """Solution trajectories ``states[replicate, k, j] = X_j(t_k)``.

    ``time_offset`` is added to grid times when evaluating coefficients; it
    is nonzero only for translated ensembles.
    """

    grid: TimeGrid
    model: Optional[SemilinearModel]
    states: np.ndarray = field(repr=False)
    driving: FbmEnsemble = field(repr=False)
    burn_in: float = 0.0
    drift: Optional[DriftSpec] = None
    time_offset: float = 0.0

    def __post_init__(self):
        self.states.setflags(write=False)

    @property
    def replicates(self) -> int:
        return self.states.shape[0]

    @property
    def x(self) -> np.ndarray:
        """Scalar view (replicates, n_points) for d = 1 ensembles."""
        if self.states.shape[2] != 1:
            raise DimensionUnsupported("scalar view needs d = 1")
        return self.states[:, :, 0]

    def at(self, t: float) -> np.ndarray:
        return self.states[:, self.grid.index_of(t), :]

    def moment_bound(self) -> float:
        return float(np.max(np.mean(np.sum(self.states ** 2, axis=2), axis=0)))

    def export_csv(self, path):
        """Long-format CSV with columns t, replicate, component, value."""
        import csv
        t = self.grid.times
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "replicate", "component", "value"])
            for r in range(self.replicates):
                for j in range(self.states.shape[2]):
                    w.writerows((repr(float(tk)), r, j, repr(float(v)))
                                for tk, v in zip(t, self.states[r, :, j]))
        return path


def _phi_matrix(a: np.ndarray, dt: float):
    d = a.shape[0]
    aug = np.zeros((2 * d, 2 * d))
    aug[:d, :d] = a
    aug[:d, d:] = np.eye(d)
    e = linalg.expm(aug * dt)
    return e[:d, :d], e[:d, d:]


def integrate(model, driving: FbmEnsemble, x_init=None, time_offset: float = 0.0,
              drift: Optional[DriftSpec] = None, burn_in: float = 0.0) -> PathEnsemble:
    """Exponential Euler integration along every driving path.

    Args:
        model: SemilinearModel or DriftSpec.
        driving: fBm ensemble; its grid is the integration grid.
        x_init: state at the first grid point, shape (d,) or (replicates, d);
            default 0.
        time_offset: coefficients are evaluated at grid time + offset.

    Raises:
        StepDiverged: a state exceeded the overflow guard.
    """
    if isinstance(model, DriftSpec):
        drift = model
        model = model.to_model()
    grid = driving.grid
    d = model.dim
    if driving.dim != d:
        raise ValueError(f"driving dimension {driving.dim} != model dimension {d}")
    reps, n = driving.replicate_count, grid.n_points
    expa, phi = _phi_matrix(model.A, grid.dt)
    times = grid.times + time_offset
    dB = driving.increments()
    x = np.zeros((reps, d))
    if x_init is not None:
        x[:] = np.asarray(x_init, dtype=float)
    states = np.empty((reps, n, d))
    states[:, 0] = x
    scalar = d == 1
    if scalar:
        ea, ph = float(expa[0, 0]), float(phi[0, 0])
    for k in range(n - 1):
        t = times[k]
        if scalar:
            x = ea * x + ph * model.b(t, x) + float(model.sigma(t)[0, 0]) * dB[:, k]
        else:
            x = x @ expa.T + model.b(t, x) @ phi.T + dB[:, k] @ np.asarray(model.sigma(t)).T
        if not np.all(np.abs(x) < OVERFLOW_GUARD):
            raise StepDiverged(f"state exceeded {OVERFLOW_GUARD:g} at t={t + grid.dt:g}")
        states[:, k + 1] = x
    return PathEnsemble(grid=grid, model=model, states=states, driving=driving,
                        burn_in=burn_in, drift=drift, time_offset=time_offset)


def integrate_two_sided(model, hurst: float, T: float, dt: float, burn_in_multiplier: float = 40.0,
                        replicates: int = 1, seed: int = 0, check: bool = True,
                        method: str = "auto") -> PathEnsemble:
    """Approximate the bounded two-sided solution on [0, T] by burn-in from -T0.

    T0 = burn_in_multiplier / m_S (rounded up to the grid); the state at -T0 is 0.

    Raises:
        ContractionViolated: c_S c_b / m_S >= 1.
        AssumptionViolated: a probe check of the structural assumptions failed.
    """
    drift = model if isinstance(model, DriftSpec) else None
    sm = drift.to_model() if drift else model
    ratio = contraction_ratio(sm)
    if ratio >= 1.0:
        raise ContractionViolated(f"contraction ratio {ratio:.4g} >= 1 for model {sm.name!r}")
    if check:
        rep = sm.check_assumptions(n_probes=2000)
        if drift is not None:
            db = drift.check_derivative_bounds(n_probes=2000)
            if not db["ok"]:
                raise AssumptionViolated(f"derivative bounds violated: {db}")
        if not rep["ok"]:
            raise AssumptionViolated(f"structural assumptions violated: {rep}")
    k0 = int(math.ceil(burn_in_multiplier / sm.m_S / dt - 1e-9))
    k1 = int(round(T / dt))
    grid = TimeGrid(-k0 * dt, dt, k0 + k1 + 1)
    driving = sample_ensemble(grid, hurst, dim=sm.dim, replicates=replicates, seed=seed, method=method)
    return integrate(sm, driving, x_init=None, drift=drift, burn_in=k0 * dt)


def translate_solution(ensemble: PathEnsemble, tau: float) -> PathEnsemble:
    """The translated process t -> X(t + tau, theta_{-tau} omega) on the same grid.

    The driving path theta_{-tau} omega has exactly the increments of omega
    (time-shifted by tau), so the translated process is the solution with
    coefficients evaluated at t + tau, driven by the Wiener-shifted path.
    Replicate r of the output is paired with replicate r of the input.
    """
    grid = ensemble.grid
    grid.steps_of(tau)
    if tau == 0:
        return ensemble
    try:
        values, _ = wiener_shift_path(ensemble.driving, tau)
        driving = FbmEnsemble(grid=grid, hurst=ensemble.driving.hurst, paths=np.ascontiguousarray(values),
                              seed=ensemble.driving.seed, method=ensemble.driving.method)
    except ShiftOutOfRange:
        # -tau outside the simulated window: the shifted path differs from the
        # stored one by a per-replicate constant, so the increments coincide
        driving = ensemble.driving
    return integrate(ensemble.model, driving, x_init=ensemble.states[:, 0, :], time_offset=ensemble.time_offset + tau,
                     drift=ensemble.drift, burn_in=ensemble.burn_in)
