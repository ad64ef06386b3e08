"""Execute a validated :class:`ExperimentConfig` and write its artifacts.

Every experiment writes one CSV per curve (or table) plus ``manifest.json``.
CSV contents are a pure function of the config; the manifest also holds
wall-clock time and library versions, so only it varies between reruns.
"""

from __future__ import annotations

import csv
import json
import math
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy
from scipy.stats import norm

from .applications import (
    TRANSFORMS,
    QuantileTask,
    SaaTask,
    check_loss,
    estimate_cdf,
    estimate_quantile,
    quadratic_loss,
    saa_minimize,
)
from .config import ExperimentConfig, model_domain
from .control_variates import ControlVariateSet, uniform_cv_rate_check
from .diagnostics import diagnose, residual_envelope_check
from .features import DimensionSchedule, make_basis
from .linalg import FlopCounter
from .population import PopulationModel
from .risk import (
    replication_seeds,
    run_replications,
    single_response_rate_check,
    worst_case_rate_check,
    write_rate_csv,
)
from .surrogate import (
    ResponseFamily,
    draw_design,
    oscillatory_family,
    polynomial_family,
    span_family,
    step_family,
)

__version__ = "0.1.0"


class RunError(RuntimeError):
    """A run failed; ``stage`` names the step that raised."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"{stage}: {message}")

    def to_dict(self) -> dict:
        return {"status": "error", "stage": self.stage, "error": str(self).split(": ", 1)[1]}


@dataclass
class RunManifest:
    config_hash: str
    experiment: str
    seeds: dict
    oracle: dict
    flops: dict
    wall_clock_seconds: float
    files: list[str]
    summary: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    versions: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "status": "ok", "config_hash": self.config_hash, "experiment": self.experiment,
            "seeds": self.seeds, "oracle": self.oracle, "flops": self.flops,
            "wall_clock_seconds": self.wall_clock_seconds, "files": self.files,
            "summary": self.summary, "config": self.config, "versions": self.versions,
        }


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9e}"
    return str(v)


def write_table(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def build_feature_map(spec: dict, model: dict):
    return make_basis(spec["kind"], spec.get("degree"), model_domain(model), spec["intercept"], spec.get("knots"))


def build_schedule(spec: dict) -> DimensionSchedule:
    return DimensionSchedule(spec["rule"], int(spec.get("value", 1)), float(spec.get("exponent", 0.5)))


def build_family(spec: dict, model: dict, feature_map=None) -> ResponseFamily:
    kind = spec["kind"]
    axis = int(spec.get("axis", 0))
    if kind == "polynomial":
        default = max(abs(model["lower"][axis]), abs(model["upper"][axis])) \
            if model["distribution"] == "uniform" else math.inf
        return polynomial_family(spec["powers"], float(spec.get("box_bound", default)), axis)
    if kind == "step":
        return step_family(spec["thresholds"], axis, len(model["lower"]))
    if kind == "oscillatory":
        return oscillatory_family(spec["frequencies"], spec.get("phases", 0.0), axis)
    if feature_map is None:
        raise ValueError("span family needs a fixed basis")
    rng = np.random.default_rng(int(spec["coefficient_seed"]))
    return span_family(feature_map, rng.standard_normal((feature_map.dimension, int(spec["members"]))))


def _controls(config: ExperimentConfig, model: PopulationModel, n: int) -> ControlVariateSet:
    if config.basis is not None:
        return ControlVariateSet.from_features(build_feature_map(config.basis, config.model), model)
    if config.schedule is not None:
        fmap = build_schedule(config.schedule).feature_map(n, config.schedule["kind"], model.domain, False)
        return ControlVariateSet.from_features(fmap, model)
    return ControlVariateSet.empty(model.domain)


def _seeds(config: ExperimentConfig) -> dict:
    R = config.replications
    return {str(n): replication_seeds(config.seed, k, R) for k, n in enumerate(config.n_grid)}


class _Run:
    def __init__(self, config: ExperimentConfig, out: Path):
        self.config = config
        self.out = out
        self.model = config.population_model()
        self.counter = FlopCounter()
        self.oracle: dict = {}
        self.files: list[str] = []
        self.summary: dict = {}

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def single_rate(self):
        c = self.config
        fmap = build_feature_map(c.basis, c.model)
        family = build_family(c.family, c.model, fmap)
        res = single_response_rate_check(self.model, fmap, family, c.n_grid, c.replications, c.seed,
                                         c.threads, counter=self.counter, oracle_records=self.oracle)
        write_rate_csv(self.path("single_rate.csv"), [res.curve])
        write_table(self.path("single_rate_ratios.csv"), ("n", "ratio"), zip(res.curve.n, res.ratios))
        self.summary = {"slope": res.curve.slope, "ratios": res.ratios.tolist(),
                        "leverage_weighted_error": res.leverage_weighted_error}

    def worst_case_rate(self):
        c = self.config
        if c.basis is not None:
            fmap = build_feature_map(c.basis, c.model)
            kind, intercept = c.basis["kind"], c.basis["intercept"]
        else:
            fmap = build_schedule(c.schedule)
            kind, intercept = c.schedule["kind"], c.schedule["intercept"]
        family = build_family(c.family, c.model, fmap if c.basis is not None else None)
        curve = worst_case_rate_check(self.model, fmap, family, c.n_grid, c.replications, c.seed,
                                      c.threads, kind, intercept, counter=self.counter,
                                      oracle_records=self.oracle)
        write_rate_csv(self.path("worst_case_rate.csv"), [curve])
        self.summary = {"slope": curve.slope, "log_adjusted_slope": curve.log_adjusted_slope,
                        "annotations": list(curve.annotations)}

    def cv_rate(self):
        c = self.config
        if c.basis is not None:
            fmap = build_feature_map(c.basis, c.model)
            controls = ControlVariateSet.from_features(fmap, self.model)
            kind = c.basis["kind"]
        else:
            fmap, controls, kind = None, build_schedule(c.schedule), c.schedule["kind"]
        family = build_family(c.family, c.model, fmap)
        curves = uniform_cv_rate_check(self.model, controls, family, c.n_grid, c.replications, c.seed,
                                       c.threads, kind, counter=self.counter, oracle_records=self.oracle)
        write_rate_csv(self.path("cv_rate.csv"), list(curves.values()), estimator_column=True)
        self.summary = {f"{k}_slope": v.slope for k, v in curves.items()}

    def _truth_quantile(self, spec) -> tuple[float | None, object]:
        if spec["transform"] != "identity":
            return None, None
        m = self.model
        if m.distribution == "uniform":
            lo, hi = m.lower[0], m.upper[0]
            return lo + spec["level"] * (hi - lo), lambda y: np.clip((y - lo) / (hi - lo), 0.0, 1.0)
        mu, sd = m.lower[0], m.upper[0]
        return float(norm.ppf(spec["level"], mu, sd)), lambda y: norm.cdf(y, mu, sd)

    def quantile(self):
        c, spec = self.config, self.config.quantile
        q_true, cdf_true = self._truth_quantile(spec)
        task = QuantileTask(TRANSFORMS[spec["transform"]], spec["level"], spec["y_grid"], cdf_true)
        rows, summary, last = [], [], None
        for k, n in enumerate(c.n_grid):
            controls = _controls(c, self.model, n)
            fmap = controls.augmented_map()

            def one(s, n=n, fmap=fmap):
                cdf = estimate_cdf(task, draw_design(self.model, fmap, n, s), method=spec["method"])
                return (cdf, estimate_quantile(task, cdf)), cdf.counter

            seeds = replication_seeds(c.seed, k, c.replications)
            results = run_replications(one, seeds, c.threads)
            errs = []
            for r, (s, ((cdf, q), cnt)) in enumerate(zip(seeds, results)):
                self.counter.counts.update(cnt.counts)
                self.counter.flops.update(cnt.flops)
                err = abs(q.value - q_true) if q_true is not None else math.nan
                sup = float(np.max(np.abs(cdf.corrected - cdf.truth))) if cdf.truth is not None else math.nan
                valid = bool(np.all(np.diff(cdf.corrected) >= 0) and cdf.corrected.min() >= 0
                             and cdf.corrected.max() <= 1)
                rows.append((n, r, s, q.value, err, q.saturated, sup, valid))
                errs.append(err)
            errs = np.asarray(errs)
            bound = task.grid_step + 3 * math.sqrt(math.log(n) / n)
            se = float(errs.std(ddof=1) / math.sqrt(len(errs))) if len(errs) > 1 else 0.0
            summary.append((n, controls.dimension, float(errs.mean()), se, c.replications, bound))
            last = results[0][0][0]
        write_table(self.path("quantile.csv"), ("n", "d", "mean_abs_error", "stderr", "replications", "bound"),
                    summary)
        write_table(self.path("quantile_replicates.csv"),
                    ("n", "replicate", "seed", "quantile", "abs_error", "saturated", "cdf_sup_error",
                     "cdf_valid"), rows)
        truth = last.truth if last.truth is not None else np.full(len(last.y), math.nan)
        write_table(self.path("cdf.csv"), ("y", "raw", "corrected", "truth"),
                    zip(last.y, last.raw, last.corrected, truth))
        self.summary = {"true_quantile": q_true, "mean_abs_error": [r[2] for r in summary],
                        "bound": [r[5] for r in summary], "all_cdfs_valid": all(r[7] for r in rows)}

    def _saa_task(self) -> SaaTask:
        spec, m = self.config.saa, self.model
        if spec["objective"] == "quadratic":
            f, ref = quadratic_loss, m.lower[0] if m.distribution == "gaussian" else 0.5 * (m.lower[0] + m.upper[0])
        else:
            tau = spec["tau"]
            f = check_loss(tau)
            ref = float(norm.ppf(tau, m.lower[0], m.upper[0])) if m.distribution == "gaussian" \
                else m.lower[0] + tau * (m.upper[0] - m.lower[0])
        return SaaTask(f, spec["theta_grid"], spec.get("minimizer", ref))

    def saa(self):
        c, spec = self.config, self.config.saa
        task = self._saa_task()
        rows, summary, last = [], [], None
        for k, n in enumerate(c.n_grid):
            fmap = _controls(c, self.model, n).augmented_map()

            def one(s, n=n, fmap=fmap):
                res = saa_minimize(task, draw_design(self.model, fmap, n, s), method=spec["method"])
                return res, res.counter

            seeds = replication_seeds(c.seed, k, c.replications)
            results = run_replications(one, seeds, c.threads)
            errs = []
            for r, (s, (res, cnt)) in enumerate(zip(seeds, results)):
                self.counter.counts.update(cnt.counts)
                self.counter.flops.update(cnt.flops)
                err = abs(res.theta_hat - task.minimizer)
                rows.append((n, r, s, res.theta_hat, err, len(res.excluded)))
                errs.append(err)
            summary.append((n, float(np.mean(errs)), c.replications))
            last = results[0][0]
        write_table(self.path("saa.csv"), ("theta", "objective", "stderr"),
                    zip(task.theta_grid, last.objective, last.stderr))
        write_table(self.path("saa_minimizers.csv"), ("n", "mean_abs_error", "replications"), summary)
        write_table(self.path("saa_replicates.csv"),
                    ("n", "replicate", "seed", "theta_hat", "abs_error", "excluded"), rows)
        self.summary = {"minimizer": task.minimizer, "mean_abs_error": [r[1] for r in summary]}

    def diagnose(self):
        c = self.config
        fmap = build_feature_map(c.basis, c.model)
        family = build_family(c.family, c.model, fmap)
        reports = []
        for k, n in enumerate(c.n_grid):
            rep = diagnose(self.model, fmap, family, n, seed=c.seed + k)
            ok, margin = residual_envelope_check(rep)
            d = rep.to_dict()
            d.update({"envelope_ok": ok, "envelope_margin": margin})
            reports.append(d)
        self.oracle = {f"d={fmap.dimension}": {k[7:]: v for k, v in reports[0].items() if k.startswith("oracle.")}}
        keys = [k for k in reports[0] if not k.startswith("oracle.")]
        write_table(self.path("diagnostics.csv"), keys, ([r[k] for k in keys] for r in reports))
        self.summary = {"reports": reports}


STAGES = {
    "single-rate": "single_rate", "worst-case-rate": "worst_case_rate", "cv-rate": "cv_rate",
    "quantile": "quantile", "saa": "saa", "diagnose": "diagnose",
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def run(config: ExperimentConfig, output_dir=None) -> RunManifest:
    """Run the experiment and write its CSVs and ``manifest.json``.

    Failures are re-raised as :class:`RunError` naming the stage.
    """
    out = Path(output_dir if output_dir is not None else config.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise RunError("output", str(exc)) from exc
    job = _Run(config, out)
    stage = STAGES[config.experiment]
    t0 = time.perf_counter()
    try:
        getattr(job, stage)()
    except Exception as exc:
        raise RunError(config.experiment, f"{type(exc).__name__}: {exc}") from exc
    manifest = RunManifest(
        config_hash=config.digest(), experiment=config.experiment, seeds=_seeds(config),
        oracle=job.oracle, flops=job.counter.as_dict(), wall_clock_seconds=time.perf_counter() - t0,
        files=list(job.files), summary=job.summary, config=config.to_dict(),
        versions={"artifact": __version__, "python": platform.python_version(),
                  "numpy": np.__version__, "scipy": scipy.__version__},
    )
    with open(out / "manifest.json", "w") as fh:
        json.dump(_jsonable(manifest.to_dict()), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
