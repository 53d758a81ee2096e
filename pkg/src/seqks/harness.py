"""Experiment configs, detector construction, calibration and benchmarking.

An experiment is a YAML file::

    seed: 7
    replicates: 100
    calibration: {method: monte-carlo, horizon: 1000, target: 1.0, reps: 100}
    scenarios:
      - id: mixture
        bins: 2048
        mu: 1000
        horizon: 1000
        changepoint: [100, 600]
        pre: {mixture: [[0.5, -2, 1], [0.5, 2, 1]]}
        post: {shift: {component: 1, delta: 0.4}}
    detectors:
      - {id: KS, type: ks, window: 50}
      - {id: KS*, type: ks, window: 50, calibration: {method: bound}}

Densities are given as ``mixture`` (weight, mean, sd triples, binned over
``support``), ``spectrum`` (a CSV path relative to the config file),
``shift`` (the pre-change mixture with one component's mean moved), ``mix``
(``weight * pre + (1 - weight) * anomaly``) or ``source`` (a point source
whose rate sets the mixing weight).
"""

from __future__ import annotations

import copy
import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import yaml

from .baselines import (EFGaussianDetector, EFPoissonDetector, GLRGaussianDetector,
                        GLRPoissonDetector, PooledKSDetector)
from .calibration import FalseAlarmBudget, threshold_for_target, threshold_from_bound
from .ks_core import RawWindowedKSDetector, WindowedKSDetector
from .simulation import (Density, Scenario, SourceSpec, average_detection_delay,
                         gaussian_mixture_density, make_rng, mix_densities, null_paths,
                         run_scenario, source_post_density)
from .spectrum_io import read_spectrum


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending field."""


DETECTOR_TYPES = {
    "ks": WindowedKSDetector,
    "ks-raw": RawWindowedKSDetector,
    "pks": PooledKSDetector,
    "ef-poisson": EFPoissonDetector,
    "glr-poisson": GLRPoissonDetector,
    "ef-gaussian": EFGaussianDetector,
    "glr-gaussian": GLRGaussianDetector,
}
_KS_TYPES = ("ks", "ks-raw")


@dataclass(frozen=True)
class CalibrationSpec:
    method: str = "monte-carlo"
    horizon: int = 1000
    target: float = 1.0
    reps: int = 100

    def __post_init__(self):
        if self.method not in ("bound", "monte-carlo"):
            raise ConfigError(f"calibration.method: expected 'bound' or 'monte-carlo', got {self.method!r}")
        if not isinstance(self.horizon, int) or self.horizon < 1:
            raise ConfigError(f"calibration.horizon: expected a positive integer, got {self.horizon!r}")
        if not (isinstance(self.target, (int, float)) and self.target > 0):
            raise ConfigError(f"calibration.target: expected a positive number, got {self.target!r}")
        if not isinstance(self.reps, int) or self.reps < 1:
            raise ConfigError(f"calibration.reps: expected a positive integer, got {self.reps!r}")


@dataclass(frozen=True)
class DetectorSpec:
    id: str
    type: str
    params: dict
    calibration: CalibrationSpec


@dataclass(frozen=True)
class ScenarioSpec:
    id: str
    scenario: Scenario
    changepoint: tuple | None  # inclusive (lo, hi) range, or None for no change
    sigma: float | None  # noise scale for the Gaussian-mean detectors


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    replicates: int
    calibration: CalibrationSpec
    scenarios: tuple
    detectors: tuple
    output: str | None = None
    n_jobs: int = 1
    censoring: str = "horizon"


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"{where}.{key}: missing required field")
    return d[key]


def _calibration(raw, where: str, base: CalibrationSpec | None = None) -> CalibrationSpec:
    if raw is None:
        return base or CalibrationSpec()
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping")
    known = {f.name for f in fields(CalibrationSpec)}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"{where}.{sorted(extra)[0]}: unknown field")
    merged = asdict(base) if base else {}
    merged.update(raw)
    try:
        return CalibrationSpec(**merged)
    except ConfigError as exc:
        raise ConfigError(str(exc).replace("calibration.", f"{where}.", 1)) from None


def _density(raw, where: str, sc: dict, base_dir: Path, pre: Density | None = None) -> Density:
    if not isinstance(raw, dict) or len(raw) != 1:
        raise ConfigError(f"{where}: expected exactly one of mixture/spectrum/shift/mix/source")
    (kind, body), = raw.items()
    bins = sc.get("bins")
    support = tuple(sc.get("support", (-8.0, 8.0)))
    if kind == "mixture":
        if not isinstance(bins, int) or bins < 2:
            raise ConfigError(f"{where}: mixture densities need an integer 'bins' >= 2 on the scenario")
        try:
            return gaussian_mixture_density([tuple(c) for c in body], bins, support)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}.mixture: {exc}") from None
    if kind == "spectrum":
        path = base_dir / str(body)
        if not path.is_file():
            raise ConfigError(f"{where}.spectrum: file not found: {path}")
        try:
            return read_spectrum(path, sc.get("winsorize_at"))[1]
        except ValueError as exc:
            raise ConfigError(f"{where}.spectrum: {exc}") from None
    if pre is None:
        raise ConfigError(f"{where}: '{kind}' is only valid for the post-change density")
    if kind == "shift":
        if pre.mixture is None:
            raise ConfigError(f"{where}.shift: pre-change density is not a mixture")
        comps = [list(c) for c in pre.mixture.components]
        k = _require(body, "component", f"{where}.shift")
        if not isinstance(k, int) or not 0 <= k < len(comps):
            raise ConfigError(f"{where}.shift.component: index out of range: {k!r}")
        comps[k][1] += float(body.get("delta", 0.0))
        comps[k][2] *= float(body.get("scale", 1.0))
        return gaussian_mixture_density([tuple(c) for c in comps], pre.bin_count, pre.support)
    if kind == "mix":
        anomaly = _density(_require(body, "anomaly", f"{where}.mix"), f"{where}.mix.anomaly",
                           sc, base_dir)
        return mix_densities(pre, anomaly, float(_require(body, "weight", f"{where}.mix")))
    if kind == "source":
        anomaly = _density(_require(body, "anomaly", f"{where}.source"), f"{where}.source.anomaly",
                           sc, base_dir)
        try:
            spec = SourceSpec(float(_require(body, "strength_mCi", f"{where}.source")),
                              float(_require(body, "distance_m", f"{where}.source")),
                              float(body.get("background_rate", sc.get("mu"))), anomaly)
        except ValueError as exc:
            raise ConfigError(f"{where}.source: {exc}") from None
        return source_post_density(pre, spec)
    raise ConfigError(f"{where}.{kind}: unknown density kind")


def _scenario(raw: dict, where: str, base_dir: Path) -> ScenarioSpec:
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping")
    sid = str(_require(raw, "id", where))
    mu = _require(raw, "mu", where)
    if not isinstance(mu, (int, float)) or mu <= 0:
        raise ConfigError(f"{where}.mu: expected a positive number, got {mu!r}")
    horizon = raw.get("horizon", 1000)
    if not isinstance(horizon, int) or horizon < 1:
        raise ConfigError(f"{where}.horizon: expected a positive integer, got {horizon!r}")
    pre = _density(_require(raw, "pre", where), f"{where}.pre", raw, base_dir)
    post = _density(raw.get("post", raw["pre"]), f"{where}.post", raw, base_dir, pre=pre)
    cp = raw.get("changepoint")
    if cp is not None:
        cp = (cp, cp) if isinstance(cp, int) else tuple(cp)
        if len(cp) != 2 or not all(isinstance(v, int) for v in cp) or not 0 <= cp[0] <= cp[1] < horizon:
            raise ConfigError(f"{where}.changepoint: expected an int or [lo, hi] within [0, horizon)")
    try:
        scenario = Scenario(pre, post, float(mu), horizon, None, raw.get("mode", "binned"),
                            bool(raw.get("fixed_count", False)))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    sigma = raw.get("sigma")
    if sigma is None and pre.mixture is not None and len(pre.mixture.components) == 1:
        sigma = pre.mixture.components[0][2]
    return ScenarioSpec(sid, scenario, cp, sigma)


def _detector(raw: dict, where: str, cal: CalibrationSpec) -> DetectorSpec:
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping")
    dtype = _require(raw, "type", where)
    if dtype not in DETECTOR_TYPES:
        raise ConfigError(f"{where}.type: unknown detector type {dtype!r}; "
                          f"expected one of {sorted(DETECTOR_TYPES)}")
    params = {k: v for k, v in raw.items() if k not in ("id", "type", "calibration")}
    allowed = set(DETECTOR_TYPES[dtype]().get_params()) - {"reference", "threshold", "rate",
                                                           "horizon", "alpha", "halt_on_alarm"}
    for k in params:
        if k not in allowed:
            raise ConfigError(f"{where}.{k}: not a parameter of detector type {dtype!r}")
    dcal = _calibration(raw.get("calibration"), f"{where}.calibration", cal)
    if dcal.method == "bound" and dtype not in _KS_TYPES:
        raise ConfigError(f"{where}.calibration.method: the bound only applies to KS detectors")
    return DetectorSpec(str(raw.get("id", dtype)), dtype, params, dcal)


def parse_config(raw: dict, base_dir=".") -> ExperimentConfig:
    base_dir = Path(base_dir)
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a mapping at the top level")
    seed = _require(raw, "seed", "config")
    if not isinstance(seed, int) or seed < 0 or seed >= 2**64:
        raise ConfigError(f"config.seed: expected an unsigned 64-bit integer, got {seed!r}")
    reps = raw.get("replicates", 100)
    if not isinstance(reps, int) or reps < 1:
        raise ConfigError(f"config.replicates: expected a positive integer, got {reps!r}")
    cal = _calibration(raw.get("calibration"), "config.calibration")
    scen_raw = raw.get("scenarios", [raw["scenario"]] if "scenario" in raw else [])
    scenarios = tuple(_scenario(s, f"config.scenarios[{i}]", base_dir)
                      for i, s in enumerate(scen_raw))
    det_raw = _require(raw, "detectors", "config")
    if not isinstance(det_raw, list) or not det_raw:
        raise ConfigError("config.detectors: expected a non-empty list")
    detectors = tuple(_detector(d, f"config.detectors[{i}]", cal) for i, d in enumerate(det_raw))
    ids = [d.id for d in detectors]
    if len(set(ids)) != len(ids):
        raise ConfigError("config.detectors: detector ids must be unique")
    censoring = raw.get("censoring", "horizon")
    if censoring not in ("horizon", "exclude"):
        raise ConfigError(f"config.censoring: expected 'horizon' or 'exclude', got {censoring!r}")
    n_jobs = raw.get("n_jobs", 1)
    if not isinstance(n_jobs, int) or n_jobs < 1:
        raise ConfigError(f"config.n_jobs: expected a positive integer, got {n_jobs!r}")
    return ExperimentConfig(seed, reps, cal, scenarios, detectors, raw.get("output"), n_jobs,
                            censoring)


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    """Load a YAML experiment file; ``seed`` overrides the file's seed."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config: invalid YAML: {exc}") from None
    if isinstance(raw, dict) and seed is not None:
        raw = dict(raw, seed=seed)
    return parse_config(raw, path.parent)


def build_detector(spec: DetectorSpec, sc: ScenarioSpec, threshold=None):
    """Unfitted-then-fitted detector for scenario ``sc`` with the given threshold."""
    cls = DETECTOR_TYPES[spec.type]
    params = dict(spec.params)
    s = sc.scenario
    if spec.type in ("ks", "pks"):
        params["reference"] = s.pre.cdf
    elif spec.type == "ks-raw":
        if s.pre.mixture is None:
            raise ConfigError(f"detector {spec.id!r}: ks-raw needs a mixture pre-change density")
        params["reference"] = s.pre.mixture
    elif spec.type in ("ef-poisson", "glr-poisson"):
        params["reference"] = s.pre
        params["rate"] = s.mu
    else:
        if "sigma" not in params:
            if sc.sigma is None:
                raise ConfigError(f"detector {spec.id!r}: set sigma on the detector or scenario")
            params["sigma"] = sc.sigma
        params.setdefault("n_per_step", max(1, int(round(s.mu))))
    if spec.type in _KS_TYPES and spec.calibration.method == "bound":
        params["horizon"] = spec.calibration.horizon
        params["alpha"] = spec.calibration.target
    det = cls(**params, threshold=threshold)
    if threshold is None and spec.calibration.method == "monte-carlo":
        det.set_params(threshold=math.inf)
    return det.fit()


@dataclass(frozen=True)
class Threshold:
    detector_id: str
    value: float
    method: str
    horizon: int
    target: float
    reps: int | None

    @property
    def label(self) -> str:
        return "conservative (KS*)" if self.method == "bound" else "monte-carlo"


def calibrate(cfg: ExperimentConfig, sc: ScenarioSpec | None, seed=None) -> dict:
    """Thresholds for every detector on scenario ``sc``.

    Monte-Carlo detectors sharing calibration settings are calibrated on the
    same null streams. Returns ``{detector_id: Threshold}``.
    """
    seed = np.random.SeedSequence(cfg.seed) if seed is None else seed
    out = {}
    groups: dict = {}
    for spec in cfg.detectors:
        c = spec.calibration
        if c.method == "bound":
            if spec.type not in _KS_TYPES:
                raise ConfigError(f"detector {spec.id!r}: the bound only applies to KS detectors")
            window = spec.params.get("window", 50)
            try:
                value = threshold_from_bound(FalseAlarmBudget(c.horizon, window, c.target))
            except ValueError as exc:
                raise ConfigError(f"detector {spec.id!r}: {exc}") from None
            out[spec.id] = Threshold(spec.id, value, "bound", c.horizon, c.target, None)
        else:
            groups.setdefault((c.horizon, c.reps), []).append(spec)
    if groups and sc is None:
        raise ConfigError("config.scenarios: monte-carlo calibration needs a scenario")
    for (horizon, reps), specs in sorted(groups.items()):
        dets = {s.id: build_detector(s, sc) for s in specs}
        sub = np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key + (horizon, reps))
        paths = null_paths(sc.scenario.null(horizon), dets, horizon, reps, sub, cfg.n_jobs)
        for s in specs:
            value = threshold_for_target(paths[s.id], s.calibration.target,
                                         strict=dets[s.id].strict_alarm)
            out[s.id] = Threshold(s.id, value, "monte-carlo", horizon, s.calibration.target, reps)
    return {s.id: out[s.id] for s in cfg.detectors}


RESULT_FIELDS = ("scenario_id", "detector_id", "mean_delay", "detection_fraction",
                 "false_alarms_per_T", "threshold", "reps", "seed", "calibration",
                 "censored", "censoring", "params")


@dataclass(frozen=True)
class ResultRow:
    scenario_id: str
    detector_id: str
    mean_delay: float
    detection_fraction: float
    false_alarms_per_T: float
    threshold: float
    reps: int
    seed: int
    calibration: str
    censored: int
    censoring: str
    params: str  # JSON of the detector's configured parameters


class ResultsTable:
    """Benchmark output: one row per (scenario, detector)."""

    def __init__(self, rows=()):
        self.rows = list(rows)

    def __eq__(self, other):
        return isinstance(other, ResultsTable) and _rows_equal(self.rows, other.rows)

    def get(self, scenario_id: str, detector_id: str) -> ResultRow:
        for r in self.rows:
            if r.scenario_id == scenario_id and r.detector_id == detector_id:
                return r
        raise KeyError((scenario_id, detector_id))

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RESULT_FIELDS)
            for r in self.rows:
                w.writerow([repr(v) if isinstance(v, float) else v
                            for v in (getattr(r, f) for f in RESULT_FIELDS)])

    @classmethod
    def from_csv(cls, path) -> "ResultsTable":
        types = {f.name: f.type for f in fields(ResultRow)}
        conv = {"float": float, "int": int, "str": str}
        rows = []
        with Path(path).open(newline="", encoding="utf-8") as fh:
            for rec in csv.DictReader(fh):
                rows.append(ResultRow(**{k: conv[types[k]](rec[k]) for k in RESULT_FIELDS}))
        return cls(rows)

    def format(self) -> str:
        """Mean delays with scenarios as rows and detectors as columns.

        A trailing ``+`` marks cells where some runs were censored.
        """
        scen = list(dict.fromkeys(r.scenario_id for r in self.rows))
        dets = list(dict.fromkeys(r.detector_id for r in self.rows))
        cells = {(r.scenario_id, r.detector_id):
                 f"{r.mean_delay:.1f}{'+' if r.censored else ''}" for r in self.rows}
        width = max([len(s) for s in scen] + [8])
        colw = [max(len(d), 8) for d in dets]
        lines = [" ".join([f"{'scenario':<{width}}"] + [f"{d:>{w}}" for d, w in zip(dets, colw)])]
        for s in scen:
            lines.append(" ".join([f"{s:<{width}}"] +
                                  [f"{cells.get((s, d), '-'):>{w}}" for d, w in zip(dets, colw)]))
        return "\n".join(lines)


def _rows_equal(a, b) -> bool:
    if len(a) != len(b):
        return False
    for x, y in zip(a, b):
        for f in RESULT_FIELDS:
            u, v = getattr(x, f), getattr(y, f)
            if isinstance(u, float) and math.isnan(u) and math.isnan(v):
                continue
            if u != v:
                return False
    return True


def _replicate(args):
    sc, dets, ss = args
    rng = make_rng(ss)
    v = None
    if sc.changepoint is not None:
        lo, hi = sc.changepoint
        v = int(rng.integers(lo, hi + 1))
    return run_scenario(sc.scenario.with_changepoint(v), dets, rng)


def run_replicates(sc: ScenarioSpec, dets: dict, reps: int, seed, n_jobs: int = 1) -> list:
    """One dict of DelayRecords per replicate, each replicate on its own substream."""
    jobs = [(sc, dets, ss) for ss in seed.spawn(reps)]
    if n_jobs == 1:
        out = []
        for i, job in enumerate(jobs):
            try:
                out.append(_replicate(job))
            except Exception as exc:
                raise RuntimeError(f"scenario {sc.id!r} replicate {i} "
                                   f"(seed {job[2].entropy}, spawn key {job[2].spawn_key}): "
                                   f"{exc}") from exc
        return out
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(_replicate, jobs))


def benchmark(cfg: ExperimentConfig, thresholds: dict | None = None) -> ResultsTable:
    """Calibrate (unless ``thresholds`` is given) and run every scenario.

    ``thresholds`` may map scenario ids to ``{detector_id: Threshold}``.
    """
    if not cfg.scenarios:
        raise ConfigError("config.scenarios: benchmark needs at least one scenario")
    root = np.random.SeedSequence(cfg.seed)
    rows = []
    for k, (sc, ss) in enumerate(zip(cfg.scenarios, root.spawn(len(cfg.scenarios)))):
        cal_ss, run_ss = ss.spawn(2)
        th = (thresholds or {}).get(sc.id) or calibrate(cfg, sc, cal_ss)
        dets = {d.id: build_detector(d, sc, th[d.id].value) for d in cfg.detectors}
        recs = run_replicates(sc, dets, cfg.replicates, run_ss, cfg.n_jobs)
        for d in cfg.detectors:
            summ = average_detection_delay([r[d.id] for r in recs], cfg.censoring)
            t = th[d.id]
            rows.append(ResultRow(
                scenario_id=sc.id,
                detector_id=d.id,
                mean_delay=summ.mean_delay,
                detection_fraction=summ.detection_fraction,
                false_alarms_per_T=summ.false_alarm_rate * t.horizon,
                threshold=t.value,
                reps=cfg.replicates,
                seed=cfg.seed,
                calibration=t.label,
                censored=summ.n_censored,
                censoring=summ.policy,
                params=json.dumps({"type": d.type, **d.params}, sort_keys=True),
            ))
    return ResultsTable(rows)


def delays(cfg: ExperimentConfig, sc: ScenarioSpec, thresholds: dict, seed=None) -> dict:
    """Per-replicate DelayRecords for every detector (used by tests and ad-hoc studies)."""
    dets = {d.id: build_detector(d, sc, thresholds[d.id].value) for d in cfg.detectors}
    seed = np.random.SeedSequence(cfg.seed) if seed is None else seed
    recs = run_replicates(sc, dets, cfg.replicates, seed, cfg.n_jobs)
    return {d.id: [r[d.id] for r in recs] for d in cfg.detectors}


def with_overrides(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    new = copy.copy(cfg)
    for k, v in changes.items():
        object.__setattr__(new, k, v)
    return new
