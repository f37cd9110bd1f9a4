"""Configuration, reproducible runs, manifests and plots.

Config files are plain text, one ``key = value`` per line, ``#`` starts a
comment.  Lists are comma separated.  Recognized keys and defaults are in
:data:`DEFAULTS`.  The environment variables ``FRACAP_SEED`` and
``FRACAP_OUTPUT_DIR`` override ``seed`` and ``output_dir``.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .almost_periodic import plain_ap_deviation, theta_ap_deviation
from .errors import ConfigInvalid
from .estimator import consistency_series, fixed_point_ladder, oracle_ladder
from .fbm import validate_hurst, write_binary
from .sde import MODEL_NAMES, custom_drift, drift_spec, integrate_two_sided

__all__ = [
    "DEFAULTS",
    "ExperimentConfig",
    "RunManifest",
    "load_config",
    "build_drift",
    "simulate_paths",
    "run_simulate",
    "run_estimate",
    "run_experiment",
    "sha256_file",
]

log = logging.getLogger(__name__)

ENV_SEED = "FRACAP_SEED"
ENV_OUTPUT = "FRACAP_OUTPUT_DIR"
NOT_RUN = "not-run"

DEFAULTS = {
    "model": "example4",
    "theta": "1.0",
    "sigma": "1.0",
    "hurst": "0.7",
    "allow_reference": "false",
    "dt": "0.05",
    "T": "800",
    "burn_in_multiplier": "40",
    "replicates": "500",
    "seed": "20240607",
    "horizons": "50, 200, 800",
    "output_dir": "fracap_out",
    "mode": "both",
    "suites": "all",
    "custom_b0": "",
    "custom_db0": "",
    "custom_period": "",
    "fp_tol": "1e-6",
    "fp_max_iter": "50",
    "taus": "auto",
    "probe_count": "8",
    "write_csv": "true",
}

_MODES = ("oracle", "fixed_point", "both")


def _as_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _as_floats(s: str) -> list:
    return [float(p) for p in s.split(",") if p.strip()]


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated run configuration (see module docstring for the file format)."""

    model: str
    theta: float
    sigma: float
    hurst: float
    allow_reference: bool
    dt: float
    T: float
    burn_in_multiplier: float
    replicates: int
    seed: int
    horizons: tuple
    output_dir: str
    mode: str
    suites: tuple
    custom_b0: str = ""
    custom_db0: str = ""
    custom_period: Optional[float] = None
    fp_tol: float = 1e-6
    fp_max_iter: int = 50
    taus: Optional[tuple] = None
    probe_count: int = 8
    write_csv: bool = True

    @classmethod
    def from_mapping(cls, raw: dict, env: Optional[dict] = None) -> "ExperimentConfig":
        """Parse and validate; unknown keys and bad values raise ConfigInvalid with per-field messages."""
        env = os.environ if env is None else env
        merged = dict(DEFAULTS)
        errors = {}
        for k, v in raw.items():
            if k not in DEFAULTS:
                errors[k] = "unknown key"
            else:
                merged[k] = str(v).strip()
        if env.get(ENV_SEED):
            merged["seed"] = env[ENV_SEED]
        if env.get(ENV_OUTPUT):
            merged["output_dir"] = env[ENV_OUTPUT]

        vals = {}

        def conv(key, fn):
            try:
                vals[key] = fn(merged[key])
            except (ValueError, TypeError) as exc:
                errors[key] = f"cannot parse {merged[key]!r}: {exc}"

        for key in ("theta", "sigma", "hurst", "dt", "T", "burn_in_multiplier", "fp_tol"):
            conv(key, float)
        for key in ("replicates", "seed", "fp_max_iter", "probe_count"):
            conv(key, int)
        for key in ("allow_reference", "write_csv"):
            conv(key, _as_bool)
        conv("horizons", lambda s: tuple(_as_floats(s)))
        conv("custom_period", lambda s: float(s) if s else None)
        conv("taus", lambda s: None if s.lower() == "auto" else tuple(_as_floats(s)))
        conv("suites", lambda s: tuple(range(1, 12)) if s.lower() == "all" else tuple(int(p) for p in s.split(",") if p.strip()))
        vals["model"] = merged["model"]
        vals["mode"] = merged["mode"]
        vals["output_dir"] = merged["output_dir"]
        vals["custom_b0"] = merged["custom_b0"]
        vals["custom_db0"] = merged["custom_db0"]

        if vals["model"] not in MODEL_NAMES:
            errors["model"] = f"unknown model; choose from {list(MODEL_NAMES)}"
        elif vals["model"] == "custom" and not vals["custom_b0"]:
            errors["custom_b0"] = "required for model = custom"
        if vals["mode"] not in _MODES:
            errors["mode"] = f"choose from {list(_MODES)}"
        if "dt" in vals and not vals["dt"] > 0:
            errors["dt"] = "must be positive"
        if "T" in vals and "dt" in vals and vals["dt"] > 0:
            k = vals["T"] / vals["dt"]
            if not vals["T"] > 0 or abs(k - round(k)) > 1e-9 * max(1.0, k):
                errors["T"] = "must be a positive multiple of dt"
        if "hurst" in vals and "allow_reference" in vals:
            try:
                validate_hurst(vals["hurst"], vals["allow_reference"])
            except ValueError as exc:
                errors["hurst"] = str(exc)
        if "replicates" in vals and vals["replicates"] < 1:
            errors["replicates"] = "must be positive"
        if "theta" in vals and not vals["theta"] > 0:
            errors["theta"] = "must be positive"
        if "burn_in_multiplier" in vals and not vals["burn_in_multiplier"] > 0:
            errors["burn_in_multiplier"] = "must be positive"
        if "horizons" in vals and "T" in vals and "dt" in vals and vals["dt"] > 0:
            hs = vals["horizons"]
            if not hs or any(b <= a for a, b in zip(hs, hs[1:])) or hs[0] <= 0 or hs[-1] > vals["T"] + 1e-9:
                errors["horizons"] = "must be strictly increasing within (0, T]"
            elif any(abs(h / vals["dt"] - round(h / vals["dt"])) > 1e-9 * h / vals["dt"] for h in hs):
                errors["horizons"] = "must be multiples of dt"
        if "suites" in vals and any(not 1 <= s <= 11 for s in vals["suites"]):
            errors["suites"] = "suite ids are 1..11"
        if errors:
            raise ConfigInvalid(errors)
        return cls(**vals)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        """sha256 of the canonical config, excluding the output location."""
        d = self.to_dict()
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True, default=str).encode()).hexdigest()


def parse_config_text(text: str) -> dict:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                       comment_prefixes=("#",), delimiters=("=",))
    parser.optionxform = str
    parser.read_string("[config]\n" + text)
    return dict(parser["config"])


def load_config(path=None, overrides: Optional[dict] = None, env: Optional[dict] = None) -> ExperimentConfig:
    raw = parse_config_text(Path(path).read_text()) if path else {}
    raw.update(overrides or {})
    return ExperimentConfig.from_mapping(raw, env)


def build_drift(cfg: ExperimentConfig):
    """DriftSpec for the configured model (custom drifts are screened for contraction first)."""
    if cfg.model == "custom":
        return custom_drift(cfg.custom_b0, theta=cfg.theta, sigma=cfg.sigma,
                            derivative=cfg.custom_db0 or None, period=cfg.custom_period)
    return drift_spec(cfg.model, theta=cfg.theta, sigma=cfg.sigma)


def simulate_paths(cfg: ExperimentConfig, replicates: Optional[int] = None, seed: Optional[int] = None):
    drift = build_drift(cfg)
    return integrate_two_sided(drift, cfg.hurst, T=cfg.T, dt=cfg.dt,
                               burn_in_multiplier=cfg.burn_in_multiplier,
                               replicates=cfg.replicates if replicates is None else replicates,
                               seed=cfg.seed if seed is None else seed)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Record of one run; written after every suite so interrupted runs stay honest."""

    config_hash: str
    toolkit_version: str = __version__
    wall_clock_seconds: float = 0.0
    suites: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)
    status: str = "running"
    _start: float = field(default_factory=time.perf_counter, repr=False)

    def set(self, suite: str, status: str):
        self.suites[suite] = status

    def inventory(self, out_dir: Path, names):
        for name in sorted(names):
            self.files[name] = sha256_file(out_dir / name)

    def write(self, out_dir: Path) -> Path:
        self.wall_clock_seconds = round(time.perf_counter() - self._start, 3)
        d = {k: v for k, v in asdict(self).items() if not k.startswith("_")}
        path = Path(out_dir) / "manifest.json"
        path.write_text(json.dumps(d, indent=2, sort_keys=True))
        return path

    @property
    def all_passed(self) -> bool:
        return bool(self.suites) and all(v == "pass" for v in self.suites.values())


def _prepare(cfg: ExperimentConfig, suites) -> tuple:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest(cfg.config_hash())
    for s in suites:
        man.set(s, NOT_RUN)
    man.write(out)
    return out, man


def _guarded(man: RunManifest, out: Path, name: str, fn):
    """Run one stage; record pass/fail/error; on interrupt leave it not-run and re-raise."""
    try:
        ok = fn()
    except KeyboardInterrupt:
        man.status = "interrupted"
        man.write(out)
        raise
    except Exception as exc:
        man.set(name, "error")
        man.status = "error"
        man.write(out)
        raise
    man.set(name, "pass" if ok is not False else "fail")
    man.write(out)
    return ok


def run_simulate(cfg: ExperimentConfig):
    """Simulate the configured model; write paths (CSV), driving noise (binary) and a manifest."""
    drift = build_drift(cfg)  # refuses contraction-violating custom drifts before any compute
    out, man = _prepare(cfg, ["simulate"])
    written = []
    state = {}

    def stage():
        paths = simulate_paths(cfg)
        state["paths"] = paths
        write_binary(paths.driving, out / "driving.bin")
        written.append("driving.bin")
        if cfg.write_csv:
            paths.export_csv(out / "paths.csv")
            written.append("paths.csv")
        return bool(np.all(np.isfinite(paths.states)))

    _guarded(man, out, "simulate", stage)
    man.inventory(out, written)
    man.status = "complete"
    man.write(out)
    return state["paths"], man


def _write_estimates(path: Path, ladders: dict):
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "T", "replicate", "theta_hat", "u_T", "v_T", "iterations", "converged"])
        for mode, results in ladders.items():
            for r in results:
                for i in range(r.theta_hat.size):
                    w.writerow([mode, repr(float(r.horizon_T)), i, repr(float(r.theta_hat[i])),
                                repr(float(r.u_T[i])), repr(float(r.v_T[i])),
                                int(r.fixed_point_iterations[i]), int(bool(r.converged[i]))])


def _estimate(cfg: ExperimentConfig, paths) -> dict:
    ladders = {}
    if cfg.mode in ("oracle", "both"):
        ladders["oracle"] = oracle_ladder(paths, cfg.theta, cfg.horizons)
    if cfg.mode in ("fixed_point", "both"):
        ladders["fixed_point"] = fixed_point_ladder(paths, cfg.horizons, None, cfg.fp_max_iter, cfg.fp_tol)
    return ladders


def _agreement(ladders: dict) -> Optional[dict]:
    if not {"oracle", "fixed_point"} <= set(ladders):
        return None
    out = []
    for o, f in zip(ladders["oracle"], ladders["fixed_point"]):
        q25, q75 = np.percentile(o.theta_hat, [25, 75])
        diff = float(np.median(np.abs(f.theta_hat - o.theta_hat)))
        out.append({"T": o.horizon_T, "median_abs_difference": diff, "oracle_iqr": float(q75 - q25),
                    "within_iqr": diff < float(q75 - q25)})
    return {"per_horizon": out, "pass": all(d["within_iqr"] for d in out)}


def run_estimate(cfg: ExperimentConfig):
    """Simulate and estimate over the horizon ladder; write per-replicate estimates and series."""
    out, man = _prepare(cfg, ["simulate", "estimate"])
    state = {}
    _guarded(man, out, "simulate", lambda: state.setdefault("paths", simulate_paths(cfg)) is not None)

    def stage():
        ladders = _estimate(cfg, state["paths"])
        state["ladders"] = ladders
        _write_estimates(out / "estimates.csv", ladders)
        series = {m: consistency_series(r, cfg.theta, cfg.hurst) for m, r in ladders.items()}
        summary = {m: json.loads(s.to_json()) for m, s in series.items()}
        summary["agreement"] = _agreement(ladders)
        (out / "estimates_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
        return True

    _guarded(man, out, "estimate", stage)
    man.inventory(out, ["estimates.csv", "estimates_summary.json"])
    man.status = "complete"
    man.write(out)
    return state["ladders"], man


def deviation_taus(cfg: ExperimentConfig, drift) -> list:
    """Translation lags for the deviation bars, snapped to the grid."""
    if cfg.taus is not None:
        taus = list(cfg.taus)
    elif drift.periodicity.kind == "periodic":
        taus = [drift.periodicity.period, 2 * drift.periodicity.period]
    else:
        taus = [10.0, 50.0]
    snapped = [round(t / cfg.dt) * cfg.dt for t in taus]
    return [t for t in snapped if 0 < t < cfg.T]


def probe_times(cfg: ExperimentConfig, tau_max: float) -> list:
    k_max = int(round((cfg.T - tau_max) / cfg.dt))
    ks = np.unique(np.linspace(0, k_max, cfg.probe_count).round().astype(int))
    return [k * cfg.dt for k in ks]


def _svg(fig, path: Path):
    import matplotlib

    matplotlib.rcParams["svg.hashsalt"] = "fracap"
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})


def make_plots(out: Path, series: dict, ladders: dict, deviations: list) -> list:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = []
    fig, ax = plt.subplots(figsize=(6, 4))
    first = next(iter(ladders.values()))
    positions = np.arange(len(first))
    width = 0.35 if len(ladders) > 1 else 0.6
    for j, (mode, res) in enumerate(ladders.items()):
        ax.boxplot([r.theta_hat for r in res], positions=positions + (j - (len(ladders) - 1) / 2) * width,
                   widths=width * 0.9, showfliers=False, manage_ticks=False)
    ax.set_xticks(positions, [f"{r.horizon_T:g}" for r in first])
    ax.axhline(next(iter(series.values())).theta_true, color="k", lw=0.8, ls="--")
    ax.set_xlabel("T")
    ax.set_ylabel("theta estimate")
    ax.set_title(" / ".join(ladders))
    _svg(fig, out / "theta_boxes.svg")
    plt.close(fig)
    names.append("theta_boxes.svg")

    fig, ax = plt.subplots(figsize=(6, 4))
    for mode, s in series.items():
        T = np.array(s.horizons)
        ax.loglog(T, s.mean_u2, "o", label=f"{mode}: slope {s.slope:.3f}")
        c = np.polyfit(np.log(T), np.log(s.mean_u2), 1)
        ax.loglog(T, np.exp(np.polyval(c, np.log(T))), "-", lw=0.8)
    s0 = next(iter(series.values()))
    ref = np.array(s0.horizons)
    ax.loglog(ref, s0.mean_u2[0] * (ref / ref[0]) ** s0.slope_target, "k--", lw=0.8,
              label=f"reference slope {s0.slope_target:.2f}")
    ax.set_xlabel("T")
    ax.set_ylabel("mean U_T^2")
    ax.legend()
    _svg(fig, out / "u2_loglog.svg")
    plt.close(fig)
    names.append("u2_loglog.svg")

    if deviations:
        fig, ax = plt.subplots(figsize=(6, 4))
        x = np.arange(len(deviations))
        ax.bar(x - 0.2, [d["theta_deviation"] for d in deviations], 0.4, label="Wiener-shifted translate")
        ax.bar(x + 0.2, [d["plain_deviation"] for d in deviations], 0.4, label="plain time shift")
        ax.set_xticks(x, [f"{d['tau']:.4g}" for d in deviations])
        ax.set_xlabel("tau")
        ax.set_ylabel("max probe L2 distance")
        ax.legend()
        _svg(fig, out / "ap_deviation.svg")
        plt.close(fig)
        names.append("ap_deviation.svg")
    return names


def run_experiment(cfg: ExperimentConfig):
    """Simulate, estimate over the ladder, compute translation deviations, write CSV/JSON/SVG."""
    stages = ["simulate", "estimate", "ap_deviation", "plots"]
    out, man = _prepare(cfg, stages)
    drift = build_drift(cfg)
    state = {}
    written = []

    _guarded(man, out, "simulate", lambda: state.setdefault("paths", simulate_paths(cfg)) is not None)

    def estimate():
        ladders = _estimate(cfg, state["paths"])
        state["ladders"] = ladders
        state["series"] = {m: consistency_series(r, cfg.theta, cfg.hurst) for m, r in ladders.items()}
        _write_estimates(out / "estimates.csv", ladders)
        written.append("estimates.csv")
        for m, s in state["series"].items():
            s.to_csv(out / f"consistency_{m}.csv")
            written.append(f"consistency_{m}.csv")
        return True

    _guarded(man, out, "estimate", estimate)

    def deviations():
        paths = state["paths"]
        devs = []
        for tau in deviation_taus(cfg, drift):
            probes = probe_times(cfg, tau)
            var = float(np.max(np.var(paths.x[:, [paths.grid.index_of(t) for t in probes]], axis=0)))
            devs.append({"tau": tau, "theta_deviation": theta_ap_deviation(paths, tau, probes),
                         "plain_deviation": plain_ap_deviation(paths, tau, probes),
                         "variance": var})
        state["deviations"] = devs
        return True

    _guarded(man, out, "ap_deviation", deviations)

    def plots():
        written.extend(make_plots(out, state["series"], state["ladders"], state["deviations"]))
        return True

    _guarded(man, out, "plots", plots)

    summary = {
        "config_hash": man.config_hash,
        "model": cfg.model,
        "hurst": cfg.hurst,
        "theta_true": cfg.theta,
        "replicates": cfg.replicates,
        "series": {m: json.loads(s.to_json()) for m, s in state["series"].items()},
        "agreement": _agreement(state["ladders"]),
        "ap_deviation": state["deviations"],
    }
    first = next(iter(state["series"].values()))
    summary["slope"] = first.slope
    summary["slope_target"] = first.slope_target
    summary["pass"] = {
        "slope": first.slope_pass,
        "monotone": first.monotone_pass,
        "median_error_below_0.05": first.median_abs_error[-1] < 0.05,
        "mode_agreement": None if summary["agreement"] is None else summary["agreement"]["pass"],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=float))
    written.append("summary.json")
    man.inventory(out, written)
    man.status = "complete"
    man.write(out)
    return summary, man
