"""The eleven acceptance suites, their prerequisites and a runner.

Each suite returns a :class:`SuiteOutcome`; :func:`run_acceptance` adds the
prerequisites of every requested suite, runs them in order and reports a
suite as ``blocked`` (never ``pass``) when a prerequisite did not pass.
"""

from __future__ import annotations

import json
import math
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .almost_periodic import (
    SampledSignal,
    deviation_profile,
    plain_ap_deviation,
    spectrum_scan,
    theta_ap_deviation,
)
from .estimator import (
    birkhoff_average,
    consistency_series,
    ensemble_period_average,
    fixed_point_ladder,
    mean_value_ap,
    oracle_ladder,
    residual_square,
)
from .fbm import FbmEnsemble, TimeGrid, fbm_covariance, sample_ensemble, shift_ensemble, wiener_shift_path
from .sde import drift_spec, integrate_two_sided, translate_solution
from .skorokhod import (
    CATALOG_FUNCTIONALS,
    functional,
    malliavin_kernel,
    noise_kernel,
    noise_paths,
    skorokhod_integral,
)
from .wiener import integrand, quad_second_moment, wiener_integral_mc

__all__ = ["SuiteOutcome", "SuiteResult", "SUITES", "PREREQUISITES", "run_acceptance", "with_prerequisites"]

DEFAULT_SEED = 20240607
CATALOG_DRIFTS = ("example1", "example2", "example3", "example4")


@dataclass
class SuiteOutcome:
    passed: bool
    details: dict = field(default_factory=dict)


@dataclass
class SuiteResult:
    suite: int
    title: str
    status: str  # pass | fail | blocked | error | not-run
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{self.status.upper():7s}] {self.suite:2d} {self.title}: {_brief(self.details)}"


def _brief(d: dict) -> str:
    parts = []
    for k, v in d.items():
        if isinstance(v, float):
            parts.append(f"{k}={v:.4g}")
        elif isinstance(v, (bool, int, str)):
            parts.append(f"{k}={v}")
    return ", ".join(parts)


def suite_fbm_exactness(seed: int) -> SuiteOutcome:
    """Empirical covariance of 1e4 paths vs the fBm covariance on 10 probe times, within 4 SE."""
    details = {}
    ok = True
    grid = TimeGrid(0.0, 0.01, 101)
    idx = np.arange(10, 101, 10)
    t = grid.times[idx]
    for h in (0.6, 0.75):
        ens = sample_ensemble(grid, h, replicates=10_000, seed=seed)
        x = ens.paths[:, idx, 0]
        prod = x[:, :, None] * x[:, None, :]
        emp = prod.mean(axis=0)
        se = prod.std(axis=0, ddof=1) / math.sqrt(x.shape[0])
        exact = fbm_covariance(t[:, None], t[None, :], h)
        z = np.abs(emp - exact) / se
        iu = np.triu_indices(10)
        worst = float(z[iu].max())
        details[f"max_z_H{h}"] = worst
        ok &= worst < 4.0
    return SuiteOutcome(bool(ok), details)


_ISOMETRY_FIXTURES = (("one", ()), ("linear", ()), ("exp_decay", ()), ("sign_flip", (0.5,)), ("cosine", ()))


def suite_wiener_isometry(seed: int) -> SuiteOutcome:
    """Five integrands: MC |z| < 4 at 1e4 replicates; cell quadrature vs independent quadrature within 1e-4."""
    hurst = 0.7
    grid = TimeGrid(0.0, 0.001, 1001)
    ens = sample_ensemble(grid, hurst, replicates=10_000, seed=seed + 2)
    details = {}
    ok = True
    for name, bps in _ISOMETRY_FIXTURES:
        h = integrand(name)
        rep = wiener_integral_mc(h, ens, (0.0, 1.0))
        ref = quad_second_moment(h, (0.0, 1.0), hurst, bps)
        rel = abs(rep.analytic_second_moment / ref - 1.0)
        details[f"z_{name}"] = float(rep.z_score)
        details[f"rel_{name}"] = float(rel)
        ok &= abs(rep.z_score) < 4.0 and rel < 1e-4
    return SuiteOutcome(bool(ok), details)


def suite_wiener_shift(seed: int) -> SuiteOutcome:
    """Wiener shift on grid-aligned tau: value identity, increment invariance and group law, bit for bit."""
    grid = TimeGrid(-20.0, 0.05, 801)
    ens = sample_ensemble(grid, 0.7, replicates=50, seed=seed + 3)
    ok = True
    taus = (0.05, 1.0, 3.5, 7.25, 10.0, -2.0, -6.5)
    checked = 0
    for tau in taus:
        vals, g = wiener_shift_path(ens, tau)
        k = grid.steps_of(tau)
        anchor = ens.paths[:, grid.index_of_zero - k, :]
        ok &= bool(np.array_equal(vals, ens.paths - anchor[:, None, :]))
        ok &= bool(np.array_equal(np.diff(vals, axis=1), np.diff(ens.paths, axis=1)))
        ok &= bool(np.all(vals[:, g.index_of_zero, :] == 0.0))
        checked += 3
    for t1, t2 in ((1.0, 2.5), (3.5, -2.0), (-1.25, -3.0)):
        once = shift_ensemble(ens, t1 + t2)
        twice = shift_ensemble(shift_ensemble(ens, t1), t2)
        ok &= bool(np.array_equal(once.paths, twice.paths))
        ok &= once.grid.index_of_zero == twice.grid.index_of_zero
        checked += 2
    return SuiteOutcome(bool(ok), {"identities_checked": checked, "bitwise": bool(ok)})


def _translation_check(paths, tau, probes):
    tr = translate_solution(paths, tau)
    idx = np.array([paths.grid.index_of(t) for t in probes])
    msd, se = deviation_profile(tr, paths, idx)
    var = np.var(paths.x[:, idx], axis=0, ddof=1)
    return msd, se, var


def suite_theta_periodic(seed: int) -> SuiteOutcome:
    """Example 4, tau = 2 pi: max probe d2^2 <= 1e-3 Var + 4 SE."""
    dt = 2 * math.pi / 128
    paths = integrate_two_sided(drift_spec("example4", theta=1.0), 0.7, T=40.0, dt=dt,
                                burn_in_multiplier=40.0, replicates=10_000, seed=seed + 4)
    k_end = paths.grid.n_points - 1 - paths.grid.index_of_zero
    probes = [k * dt for k in np.linspace(0, k_end, 10).round().astype(int)]
    msd, se, var = _translation_check(paths, 2 * math.pi, probes)
    ok = bool(np.all(msd <= 1e-3 * var + 4 * se))
    return SuiteOutcome(ok, {"max_d2_sq": float(msd.max()), "min_var": float(var.min())})


def suite_fou_dichotomy(seed: int) -> SuiteOutcome:
    """fOU, tau = 50: theta deviation <= 0.01 plain deviation; plain^2 within 10% of 2 Var."""
    paths = integrate_two_sided(drift_spec("fou", theta=1.0), 0.7, T=60.0, dt=0.05,
                                burn_in_multiplier=40.0, replicates=10_000, seed=seed + 5)
    probes = [0.0, 2.0, 4.0, 6.0, 8.0, 10.0]
    theta_dev = theta_ap_deviation(paths, 50.0, probes)
    plain_dev = plain_ap_deviation(paths, 50.0, probes)
    idx = [paths.grid.index_of(t) for t in probes]
    var = float(np.mean(np.var(paths.x[:, idx], axis=0, ddof=1)))
    rel = abs(plain_dev ** 2 - 2 * var) / (2 * var)
    ok = theta_dev <= 0.01 * plain_dev and rel <= 0.10
    return SuiteOutcome(bool(ok), {"theta_dev": theta_dev, "plain_dev": plain_dev, "var": var,
                                   "plain_sq_rel_to_2var": float(rel)})


def _bdb_errors(seed: int):
    fine = TimeGrid(0.0, 0.005, 201)
    ens = sample_ensemble(fine, 0.7, replicates=1000, seed=seed + 6)
    out = {}
    for step in (4, 2, 1):
        g = TimeGrid(0.0, 0.005 * step, (fine.n_points - 1) // step + 1)
        sub = FbmEnsemble(grid=g, hurst=0.7, paths=np.ascontiguousarray(ens.paths[:, ::step, :]), seed=ens.seed)
        res = skorokhod_integral(functional("identity"), noise_paths(sub), noise_kernel(g, sub.replicate_count),
                                 (0.0, 1.0))
        bT = sub.paths[:, -1, 0]
        out[g.dt] = np.abs(res.skorokhod_value - (0.5 * bT ** 2 - 0.5))
    return out


def suite_skorokhod(seed: int) -> SuiteOutcome:
    """Deterministic integrands have zero trace; B dB error shrinks with dt; catalog means within 4 SE."""
    details = {}
    ok = True
    errs = _bdb_errors(seed)
    means = [float(errs[dt].mean()) for dt in sorted(errs, reverse=True)]
    for dt, m in zip(sorted(errs, reverse=True), means):
        details[f"bdb_mean_abs_err_dt{dt:g}"] = m
    ok &= all(b < a for a, b in zip(means, means[1:]))
    worst_z = 0.0
    zero_trace = True
    for name in ("example4", "example1", "fou"):
        d = drift_spec(name, theta=1.0)
        paths = integrate_two_sided(d, 0.7, T=20.0, dt=0.05, replicates=10_000, seed=seed + 7)
        kernel = malliavin_kernel(paths, 1.0)
        for fname in CATALOG_FUNCTIONALS + ("zero",):
            res = skorokhod_integral(functional(fname, d), paths, kernel, (0.0, 20.0))
            v = res.skorokhod_value
            if functional(fname, d).deterministic:
                zero_trace &= bool(np.all(res.trace_correction == 0.0)) and bool(np.array_equal(v, res.young_integral))
            if np.all(v == 0.0):
                continue
            z = abs(v.mean()) / (v.std(ddof=1) / math.sqrt(v.size))
            worst_z = max(worst_z, float(z))
    details["deterministic_trace_zero"] = zero_trace
    details["max_abs_z_mean"] = worst_z
    ok &= zero_trace and worst_z < 4.0
    return SuiteOutcome(bool(ok), details)


def suite_malliavin_bound(seed: int) -> SuiteOutcome:
    """|D_s X(t)| e^{theta m (t-s)} <= sup|sigma| at every grid pair, all replicates, four catalog drifts."""
    details = {}
    ok = True
    for name in CATALOG_DRIFTS:
        paths = integrate_two_sided(drift_spec(name, theta=1.0), 0.7, T=100.0, dt=0.05,
                                    replicates=200, seed=seed + 8)
        chk = malliavin_kernel(paths, 1.0).bound_check()
        details[f"{name}_fraction_ok"] = chk["fraction_ok"]
        ok &= chk["ok"]
    return SuiteOutcome(bool(ok), details)


LADDER = (50.0, 200.0, 800.0)


def suite_u_rate(seed: int) -> SuiteOutcome:
    """Slope of log mean U_T^2 over T in {50, 200, 800} within 0.3 of 2H - 2 (example 4, 500 replicates)."""
    details = {}
    ok = True
    for h in (0.6, 0.7, 0.8):
        paths = integrate_two_sided(drift_spec("example4", theta=1.0), h, T=800.0, dt=0.05,
                                    replicates=500, seed=seed + 9)
        s = consistency_series(oracle_ladder(paths, 1.0, LADDER), 1.0, h)
        details[f"slope_H{h}"] = s.slope
        details[f"target_H{h}"] = s.slope_target
        ok &= s.slope_pass
    return SuiteOutcome(bool(ok), details)


def suite_consistency(seed: int) -> SuiteOutcome:
    """Median |theta_hat - 1| strictly decreasing and < 0.05 at T = 800; fixed point within one IQR of oracle."""
    details = {}
    ok = True
    for name in ("example4", "example1"):
        paths = integrate_two_sided(drift_spec(name, theta=1.0), 0.7, T=800.0, dt=0.05,
                                    replicates=500, seed=seed + 10)
        oracle = oracle_ladder(paths, 1.0, LADDER)
        s = consistency_series(oracle, 1.0, 0.7)
        fp = fixed_point_ladder(paths, LADDER)
        agree = True
        for o, f in zip(oracle, fp):
            q25, q75 = np.percentile(o.theta_hat, [25, 75])
            agree &= float(np.median(np.abs(f.theta_hat - o.theta_hat))) < q75 - q25
        details[f"{name}_median_err_T800"] = s.median_abs_error[-1]
        details[f"{name}_monotone"] = s.monotone_pass
        details[f"{name}_fp_agrees"] = bool(agree)
        details[f"{name}_fp_converged"] = all(f.all_converged for f in fp)
        ok &= s.monotone_pass and s.median_abs_error[-1] < 0.05 and agree
    return SuiteOutcome(bool(ok), details)


def suite_ergodic(seed: int) -> SuiteOutcome:
    """Birkhoff averages: example 4 within 5% of the period average; example 1 stable within 5% on [1e3, 2e3]."""
    details = {}
    dt = 2 * math.pi / 128
    period = 2 * math.pi
    d4 = drift_spec("example4", theta=1.0)
    ref_paths = integrate_two_sided(d4, 0.7, T=period, dt=dt, replicates=10_000, seed=seed + 11)
    ref, ref_se = ensemble_period_average(ref_paths, residual_square(ref_paths), period)
    long_paths = integrate_two_sided(d4, 0.7, T=400 * math.pi, dt=dt, replicates=500, seed=seed + 12)
    b = birkhoff_average(long_paths, residual_square(long_paths), [400 * math.pi])
    rel = np.abs(b.averages[:, 0] - ref) / ref
    details["ex4_period_average"] = ref
    details["ex4_median_rel_err"] = float(np.median(rel))
    details["ex4_ensemble_mean_rel_err"] = float(abs(b.averages[:, 0].mean() - ref) / ref)
    ok4 = float(np.median(rel)) < 0.05 and ref > 4 * ref_se
    d1 = drift_spec("example1", theta=1.0)
    p1 = integrate_two_sided(d1, 0.7, T=2000.0, dt=0.05, replicates=200, seed=seed + 13)
    mv = mean_value_ap(p1, residual_square(p1), [1000.0, 2000.0])
    se1 = float(birkhoff_average(p1, residual_square(p1), [2000.0]).averages.std(ddof=1) / math.sqrt(200))
    details["ex1_limit"] = mv.limit
    details["ex1_rel_change"] = mv.relative_change
    details["ex1_positivity"] = mv.positivity
    ok1 = mv.relative_change < 0.05 and mv.limit > 4 * se1 and mv.positivity > 0
    return SuiteOutcome(bool(ok4 and ok1), details)


def suite_parseval(seed: int) -> SuiteOutcome:
    """cos t + cos(sqrt 2 t): frequencies {+-1, +-sqrt 2} within 1e-3, Parseval defect < 1e-2."""
    grid = TimeGrid(0.0, 0.01, 120_001)
    f = SampledSignal.from_function(lambda t: np.cos(t) + np.cos(math.sqrt(2) * t), grid)
    spec = spectrum_scan(f, np.arange(-3.0, 3.0, 0.002), horizon=1000.0)
    target = np.array([-math.sqrt(2), -1.0, 1.0, math.sqrt(2)])
    found = np.sort(np.array(spec.frequencies))
    ok = found.size == 4 and float(np.max(np.abs(found - target))) < 1e-3
    err = float(np.max(np.abs(found - target))) if found.size == 4 else float("inf")
    ok = ok and -1e-2 < spec.parseval_defect < 1e-2
    return SuiteOutcome(bool(ok), {"n_frequencies": int(found.size), "max_freq_err": err,
                                   "parseval_defect": float(spec.parseval_defect)})


SUITES: dict = {
    1: ("fBm exactness", suite_fbm_exactness),
    2: ("Wiener isometry", suite_wiener_isometry),
    3: ("Wiener-shift identity", suite_wiener_shift),
    4: ("theta-periodic solution", suite_theta_periodic),
    5: ("fOU dichotomy", suite_fou_dichotomy),
    6: ("Skorokhod fixtures", suite_skorokhod),
    7: ("Malliavin bound", suite_malliavin_bound),
    8: ("U_T decay rate", suite_u_rate),
    9: ("Consistency", suite_consistency),
    10: ("Ergodic mean values", suite_ergodic),
    11: ("Parseval", suite_parseval),
}

PREREQUISITES = {1: (), 2: (1,), 3: (1,), 4: (1, 3), 5: (1, 3), 6: (1,), 7: (1,), 8: (6, 7), 9: (6, 7),
                 10: (4,), 11: ()}


def with_prerequisites(ids) -> list:
    need = set()
    stack = list(ids)
    while stack:
        s = stack.pop()
        if s not in need:
            need.add(s)
            stack.extend(PREREQUISITES[s])
    return sorted(need)


def run_one(suite: int, seed: int) -> SuiteResult:
    title, fn = SUITES[suite]
    t0 = time.perf_counter()
    try:
        out = fn(seed)
        status, details = ("pass" if out.passed else "fail"), out.details
    except Exception as exc:  # a crashing suite is reported, never counted as a pass
        status, details = "error", {"error": repr(exc), "traceback": traceback.format_exc()}
    return SuiteResult(suite, title, status, details, round(time.perf_counter() - t0, 2))


def run_acceptance(ids, seed: int = DEFAULT_SEED, out_dir: Optional[Path] = None,
                   on_result: Optional[Callable] = None, manifest=None) -> dict:
    """Run ``ids`` plus their prerequisites; returns {suite: SuiteResult}."""
    order = with_prerequisites(ids)
    results = {s: SuiteResult(s, SUITES[s][0], "not-run") for s in order}
    if manifest is not None:
        for s in order:
            manifest.set(f"suite_{s}", "not-run")
    for s in order:
        blocked = [p for p in PREREQUISITES[s] if results[p].status != "pass"]
        if blocked:
            results[s] = SuiteResult(s, SUITES[s][0], "blocked", {"blocked_by": ",".join(map(str, blocked))})
        else:
            results[s] = run_one(s, seed)
        if on_result is not None:
            on_result(results[s])
        if manifest is not None and out_dir is not None:
            manifest.set(f"suite_{s}", results[s].status)
            manifest.write(out_dir)
    if out_dir is not None:
        payload = {str(s): {"title": r.title, "status": r.status, "seconds": r.seconds,
                            "details": {k: v for k, v in r.details.items() if k != "traceback"}}
                   for s, r in results.items()}
        (Path(out_dir) / "acceptance.json").write_text(json.dumps(payload, indent=2, sort_keys=True, default=float))
    return results
