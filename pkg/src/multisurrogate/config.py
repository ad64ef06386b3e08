"""Experiment configuration: YAML grammar, validation and serialization.

One experiment per file.  Top-level keys::

    experiment:   single-rate | worst-case-rate | cv-rate | quantile | saa | diagnose
    seed:         master seed (default 0)
    replications: R (default 100)
    n_grid:       list of sample sizes, or {start, stop, factor} (default 2^8 .. 2^13, x2)
    threads:      replication worker threads (default 1)
    output_dir:   where CSVs and the manifest go (default "output")
    model:        {distribution: uniform|gaussian, lower, upper, quadrature_order, mc_samples, mc_seed}
    basis:        {kind, degree, knots, intercept, dimension}
    schedule:     {rule: constant|power, value, exponent, kind, intercept}
    family:       {kind: polynomial|step|oscillatory|span, ...}
    quantile:     {level, y_grid, transform, method}
    saa:          {objective, tau, theta_grid, method, minimizer}
    assumptions:  {vc_class: bool}

``basis`` and ``schedule`` are mutually exclusive.  For ``cv-rate``,
``quantile`` and ``saa`` they describe the controls, which never carry
an intercept.  Grids (``y_grid``, ``theta_grid``, ``thresholds``) accept a
list or ``{start, stop, num}``.
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass, field

import numpy as np
import yaml

from .applications import TRANSFORMS
from .features import Box, DimensionSchedule, make_basis
from .population import PopulationModel

EXPERIMENTS = ("single-rate", "worst-case-rate", "cv-rate", "quantile", "saa", "diagnose")
CONTROL_EXPERIMENTS = ("cv-rate", "quantile", "saa")
DEFAULT_N_GRID = (256, 512, 1024, 2048, 4096, 8192)
DEFAULT_R = 100

TOP_KEYS = {"experiment", "seed", "replications", "n_grid", "threads", "output_dir", "model",
            "basis", "schedule", "family", "quantile", "saa", "assumptions"}
MODEL_KEYS = {"distribution", "lower", "upper", "quadrature_order", "mc_samples", "mc_seed"}
BASIS_KEYS = {"kind", "degree", "knots", "intercept", "dimension"}
SCHEDULE_KEYS = {"rule", "value", "exponent", "kind", "intercept"}
FAMILY_KEYS = {
    "polynomial": {"kind", "powers", "box_bound", "axis"},
    "step": {"kind", "thresholds", "axis"},
    "oscillatory": {"kind", "frequencies", "phases", "axis"},
    "span": {"kind", "members", "coefficient_seed"},
}
QUANTILE_KEYS = {"level", "y_grid", "transform", "method"}
SAA_KEYS = {"objective", "tau", "theta_grid", "method", "minimizer"}
ASSUMPTION_KEYS = {"vc_class"}


class ConfigError(ValueError):
    """Validation failed; ``errors`` lists every problem found."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class ExperimentConfig:
    experiment: str
    model: dict
    family: dict | None = None
    basis: dict | None = None
    schedule: dict | None = None
    n_grid: tuple[int, ...] = DEFAULT_N_GRID
    replications: int = DEFAULT_R
    seed: int = 0
    threads: int = 1
    output_dir: str = "output"
    quantile: dict | None = None
    saa: dict | None = None
    assumptions: dict = field(default_factory=lambda: {"vc_class": True})

    def to_dict(self) -> dict:
        out = {"experiment": self.experiment, "seed": self.seed, "replications": self.replications,
               "n_grid": list(self.n_grid), "threads": self.threads, "output_dir": self.output_dir,
               "model": copy.deepcopy(self.model), "assumptions": dict(self.assumptions)}
        for key in ("basis", "schedule", "family", "quantile", "saa"):
            val = getattr(self, key)
            if val is not None:
                out[key] = copy.deepcopy(val)
        return out

    def digest(self) -> str:
        """SHA-256 of the canonical serialization, excluding run-location keys."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("threads")
        return hashlib.sha256(serialize_dict(d).encode()).hexdigest()

    def population_model(self) -> PopulationModel:
        return PopulationModel(**self.model)


def serialize_dict(d: dict) -> str:
    return yaml.safe_dump(d, sort_keys=True, default_flow_style=None)


def serialize(config: ExperimentConfig) -> str:
    return serialize_dict(config.to_dict())


def _grid(spec, name: str, errors: list[str], integer: bool = False):
    if isinstance(spec, dict):
        unknown = set(spec) - ({"start", "stop", "factor"} if integer else {"start", "stop", "num"})
        if unknown:
            errors.append(f"{name}: unknown key(s) {sorted(unknown)}")
            return None
        try:
            if integer:
                start, stop, factor = int(spec["start"]), int(spec["stop"]), int(spec.get("factor", 2))
                if start < 1 or factor < 2:
                    raise ValueError("start >= 1 and factor >= 2 required")
                vals = []
                v = start
                while v <= stop:
                    vals.append(v)
                    v *= factor
                return vals
            return [float(v) for v in np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"]))]
        except (KeyError, TypeError, ValueError) as exc:
            errors.append(f"{name}: invalid grid spec ({exc})")
            return None
    if isinstance(spec, (list, tuple)):
        try:
            return [int(v) if integer else float(v) for v in spec]
        except (TypeError, ValueError):
            errors.append(f"{name}: entries must be numbers")
            return None
    errors.append(f"{name}: expected a list or a grid mapping")
    return None


def _unknown(section: dict, allowed: set, name: str, errors: list[str]) -> None:
    for key in sorted(set(section) - allowed):
        errors.append(f"unknown key {key!r} in {name}")


def _section(raw: dict, key: str, errors: list[str]) -> dict | None:
    val = raw.get(key)
    if val is None:
        return None
    if not isinstance(val, dict):
        errors.append(f"{key}: expected a mapping")
        return None
    return dict(val)


def _check_int(val, name: str, errors: list[str], minimum: int) -> int | None:
    if isinstance(val, bool) or not isinstance(val, (int, np.integer)) or val < minimum:
        errors.append(f"{name} must be an integer >= {minimum}, got {val!r}")
        return None
    return int(val)


def _model(raw: dict | None, errors: list[str]) -> dict:
    spec = {"distribution": "uniform", "lower": [0.0], "upper": [1.0]}
    if raw is None:
        return spec
    _unknown(raw, MODEL_KEYS, "model", errors)
    spec.update({k: v for k, v in raw.items() if k in MODEL_KEYS})
    for key in ("lower", "upper"):
        spec[key] = [float(v) for v in np.atleast_1d(spec[key])]
    try:
        PopulationModel(**spec)
    except (TypeError, ValueError) as exc:
        errors.append(f"model: {exc}")
    return spec


def model_domain(model: dict) -> Box:
    if model.get("distribution") == "uniform":
        return Box(tuple(model["lower"]), tuple(model["upper"]))
    p = len(model["lower"])
    return Box((-np.inf,) * p, (np.inf,) * p)


def _basis(raw: dict, model: dict, errors: list[str], controls: bool) -> dict:
    _unknown(raw, BASIS_KEYS, "basis", errors)
    spec = {"kind": raw.get("kind"), "intercept": bool(raw.get("intercept", not controls))}
    for key in ("degree", "knots", "dimension"):
        if key in raw:
            spec[key] = raw[key]
    if controls and spec["intercept"]:
        errors.append("basis: control sets must not include the intercept")
    if model.get("distribution") != "uniform" and spec["kind"] in ("legendre", "fourier"):
        errors.append(f"basis: {spec['kind']} basis needs a bounded (uniform) model")
        return spec
    try:
        fmap = make_basis(spec["kind"], spec.get("degree"), model_domain(model), spec["intercept"],
                          spec.get("knots"))
    except (TypeError, ValueError) as exc:
        errors.append(f"basis: {exc}")
        return spec
    if "dimension" in spec and spec["dimension"] != fmap.dimension:
        errors.append(f"basis: dimension {spec['dimension']} inconsistent with the basis spec "
                      f"(which has dimension {fmap.dimension})")
    return spec


def _schedule(raw: dict, errors: list[str], controls: bool) -> dict:
    _unknown(raw, SCHEDULE_KEYS, "schedule", errors)
    spec = {"rule": raw.get("rule", "constant"), "kind": raw.get("kind", "legendre"),
            "intercept": bool(raw.get("intercept", not controls))}
    if "value" in raw:
        spec["value"] = raw["value"]
    if "exponent" in raw:
        spec["exponent"] = raw["exponent"]
    if controls and spec["intercept"]:
        errors.append("schedule: control sets must not include the intercept")
    if spec["kind"] not in ("legendre", "monomial", "fourier"):
        errors.append(f"schedule: kind must be legendre, monomial or fourier, got {spec['kind']!r}")
    try:
        DimensionSchedule(spec["rule"], int(spec.get("value", 1)), float(spec.get("exponent", 0.5)))
    except (TypeError, ValueError) as exc:
        errors.append(f"schedule: {exc}")
    return spec


def _family(raw: dict, errors: list[str]) -> dict:
    kind = raw.get("kind")
    if kind not in FAMILY_KEYS:
        errors.append(f"family: kind must be one of {sorted(FAMILY_KEYS)}, got {kind!r}")
        return raw
    _unknown(raw, FAMILY_KEYS[kind], "family", errors)
    spec = dict(raw)
    if kind == "polynomial":
        if not spec.get("powers"):
            errors.append("family: polynomial family needs 'powers'")
    elif kind == "step":
        th = _grid(spec.get("thresholds"), "family.thresholds", errors)
        if th is not None:
            spec["thresholds"] = th
    elif kind == "oscillatory":
        if not spec.get("frequencies"):
            errors.append("family: oscillatory family needs 'frequencies'")
    elif kind == "span":
        spec.setdefault("members", 5)
        spec.setdefault("coefficient_seed", 0)
        _check_int(spec["members"], "family.members", errors, 1)
    return spec


def _task(raw: dict, keys: set, name: str, grid_key: str, errors: list[str]) -> dict:
    _unknown(raw, keys, name, errors)
    spec = dict(raw)
    spec.setdefault("method", "cv")
    if spec["method"] not in ("vanilla", "cv"):
        errors.append(f"{name}: method must be vanilla or cv")
    grid = _grid(spec.get(grid_key), f"{name}.{grid_key}", errors)
    if grid is not None:
        spec[grid_key] = grid
    return spec


def from_dict(raw) -> ExperimentConfig:
    """Validate a parsed mapping; raise :class:`ConfigError` listing every problem."""
    errors: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a mapping"])
    _unknown(raw, TOP_KEYS, "config", errors)
    experiment = raw.get("experiment")
    if experiment is None:
        errors.append("missing required field 'experiment'")
    elif experiment not in EXPERIMENTS:
        errors.append(f"experiment must be one of {EXPERIMENTS}, got {experiment!r}")
    controls = experiment in CONTROL_EXPERIMENTS

    seed = _check_int(raw.get("seed", 0), "seed", errors, 0)
    R = _check_int(raw.get("replications", DEFAULT_R), "replications", errors, 1)
    threads = _check_int(raw.get("threads", 1), "threads", errors, 1)
    n_grid = _grid(raw.get("n_grid", list(DEFAULT_N_GRID)), "n_grid", errors, integer=True)
    if n_grid is not None:
        if not n_grid or any(n < 1 for n in n_grid) or any(b <= a for a, b in zip(n_grid, n_grid[1:])):
            errors.append("n_grid must be nonempty, positive and strictly increasing")
        elif experiment in ("single-rate", "worst-case-rate", "cv-rate") and len(n_grid) < 2:
            errors.append(f"{experiment} needs at least two n_grid values to fit a slope")
    output_dir = str(raw.get("output_dir", "output"))

    model = _model(_section(raw, "model", errors), errors)
    basis = _section(raw, "basis", errors)
    schedule = _section(raw, "schedule", errors)
    if basis is not None and schedule is not None:
        errors.append("basis and schedule are mutually exclusive")
    if basis is not None:
        basis = _basis(basis, model, errors, controls)
    if schedule is not None:
        schedule = _schedule(schedule, errors, controls)
    needs_features = experiment in ("single-rate", "worst-case-rate", "cv-rate", "diagnose")
    if needs_features and basis is None and schedule is None:
        errors.append(f"{experiment} needs a 'basis' or 'schedule'")
    if experiment in ("single-rate", "diagnose") and schedule is not None:
        errors.append(f"{experiment} needs a fixed 'basis', not a schedule")

    family = _section(raw, "family", errors)
    if family is not None:
        family = _family(family, errors)
    elif experiment in ("single-rate", "worst-case-rate", "cv-rate", "diagnose"):
        errors.append(f"missing required field 'family' for {experiment}")
    if experiment == "single-rate" and family is not None:
        size = {"polynomial": "powers", "step": "thresholds", "oscillatory": "frequencies"}.get(family.get("kind"))
        count = family.get("members") if family.get("kind") == "span" else len(family.get(size) or [])
        if count != 1:
            errors.append("single-rate needs a family with exactly one member")

    quantile = _section(raw, "quantile", errors)
    saa = _section(raw, "saa", errors)
    if experiment == "quantile":
        if quantile is None:
            errors.append("missing required field 'quantile'")
        else:
            quantile = _task(quantile, QUANTILE_KEYS, "quantile", "y_grid", errors)
            quantile.setdefault("transform", "identity")
            lvl = quantile.get("level")
            if not isinstance(lvl, (int, float)) or not 0 < lvl < 1:
                errors.append("quantile.level must lie in (0, 1)")
            y = quantile.get("y_grid")
            if isinstance(y, list) and (not y or any(b <= a for a, b in zip(y, y[1:]))):
                errors.append("quantile.y_grid must be nonempty and strictly increasing")
            if quantile["transform"] not in TRANSFORMS:
                errors.append(f"quantile.transform must be one of {sorted(TRANSFORMS)}")
    elif quantile is not None:
        errors.append("'quantile' section is only valid for quantile experiments")
    if experiment == "saa":
        if saa is None:
            errors.append("missing required field 'saa'")
        else:
            saa = _task(saa, SAA_KEYS, "saa", "theta_grid", errors)
            saa.setdefault("objective", "quadratic")
            if saa["objective"] not in ("quadratic", "check"):
                errors.append("saa.objective must be quadratic or check")
            if saa["objective"] == "check":
                tau = saa.setdefault("tau", 0.5)
                if not isinstance(tau, (int, float)) or not 0 < tau < 1:
                    errors.append("saa.tau must lie in (0, 1)")
            if isinstance(saa.get("theta_grid"), list) and not saa["theta_grid"]:
                errors.append("saa.theta_grid is empty")
    elif saa is not None:
        errors.append("'saa' section is only valid for saa experiments")

    assumptions = _section(raw, "assumptions", errors) or {}
    _unknown(assumptions, ASSUMPTION_KEYS, "assumptions", errors)
    assumptions = {"vc_class": bool(assumptions.get("vc_class", True))}

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(experiment, model, family, basis, schedule, tuple(n_grid), R, seed,
                            threads, output_dir, quantile, saa, assumptions)


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"malformed YAML: {exc}"]) from exc
    return from_dict(raw)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())
