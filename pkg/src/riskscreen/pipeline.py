"""Configuration-driven pipeline: sources -> cohort -> models -> reports.

Stages are independently re-runnable against the same configuration and
share artifacts through the output directory (cohort snapshot, model JSONs,
report CSVs). A full run finishes by writing a manifest that lists every
emitted file with its content digest; identical inputs and configuration
reproduce identical digests.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import calibrate
from . import utility as util
from .features import FeatureSpec, parse_spec, race_aware_spec, race_unaware_spec
from .ingest import (
    Cohort,
    CohortCriteria,
    HarmonizationMap,
    OutcomeDefinition,
    build_cohort,
    cohort_from_csv,
    cohort_to_csv,
    harmonize_cycles,
    load_csv,
    write_provenance,
)
from .model import RiskModel, fit_risk_model
from .synthetic import infer_cycle
from .tables import RawTable
from .utility import RewardSpec
from .xport import load_xport

log = logging.getLogger(__name__)

STAGES = ("ingest", "fit", "report", "sweep")


class ConfigError(ValueError):
    """One or more configuration problems; ``errors`` lists them all."""

    def __init__(self, errors: list[str]):
        super().__init__("invalid configuration:\n- " + "\n- ".join(errors))
        self.errors = errors


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class DataSource:
    path: Path
    kind: str  # "xport" | "csv"
    cycle: str | None = None
    schema: dict | None = None


@dataclass
class CalibrationParams:
    bins: int = calibrate.DEFAULT_BINS
    bandwidth: float = calibrate.DEFAULT_BANDWIDTH
    score_range: tuple = calibrate.DEFAULT_RANGE
    grid_points: int = calibrate.DEFAULT_GRID_POINTS


@dataclass
class SubgroupParams:
    age_edges: tuple = (18.0, 30.0, 40.0, 50.0, 60.0, 70.0)
    bmi_edges: tuple = (18.5, 25.0, 30.0, 35.0, 50.0)
    min_weighted_n: float = 50.0


@dataclass
class RunConfig:
    data_sources: list
    output_dir: Path
    cohort: CohortCriteria = field(default_factory=CohortCriteria)
    outcome: OutcomeDefinition = field(default_factory=OutcomeDefinition)
    models: list = field(default_factory=list)  # (FeatureSpec, ridge) pairs
    model_a: str = "race_aware"
    model_b: str = "race_unaware"
    reward: RewardSpec = field(default_factory=lambda: RewardSpec(70.0, 100.0))
    sweep_rewards: tuple = util.DEFAULT_SWEEP
    capacity_fraction: float | None = None
    calibration: CalibrationParams = field(default_factory=CalibrationParams)
    risk_bins: int = 50
    subgroup: SubgroupParams = field(default_factory=SubgroupParams)
    weighted: bool = True
    seed: int = 0


@dataclass
class RunArtifacts:
    output_dir: Path
    manifest_path: Path
    files: dict


# ---------------------------------------------------------------------------
# Configuration parsing

_TOP_KEYS = {
    "data_sources", "output_dir", "cohort", "outcome", "models", "comparison",
    "reward", "dollars_per_util", "sweep_rewards", "capacity_fraction",
    "calibration", "risk_bins", "subgroup", "weighted", "seed",
}
_COHORT_KEYS = {"age_min", "age_max", "bmi_min", "bmi_max", "exclude_pregnant"}
_OUTCOME_KEYS = {"use_diagnosis", "use_a1c", "a1c_threshold", "use_fpg",
                 "fpg_threshold"}
_SOURCE_KEYS = {"path", "kind", "cycle", "schema"}
_CALIBRATION_KEYS = {"bins", "bandwidth", "score_range", "grid_points"}
_SUBGROUP_KEYS = {"age_edges", "bmi_edges", "min_weighted_n"}
_COMPARISON_KEYS = {"model_a", "model_b"}


def default_model_specs() -> list[FeatureSpec]:
    return [race_unaware_spec(), race_aware_spec()]


def validate_config(raw, base_dir=None) -> RunConfig:
    """Parse and validate configuration text (YAML/JSON) or a mapping.

    Problems are aggregated and raised together as :class:`ConfigError`.
    Relative paths resolve against ``base_dir``.
    """
    if isinstance(raw, str):
        data = yaml.safe_load(raw)
    else:
        data = raw
    if not isinstance(data, dict):
        raise ConfigError(["configuration must be a mapping"])
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    errors: list[str] = []

    for key in sorted(set(data) - _TOP_KEYS):
        errors.append(f"unknown key: {key}")

    sources = _parse_sources(data, base_dir, errors)
    cohort = _parse_section(
        data.get("cohort", {}), _COHORT_KEYS, "cohort", CohortCriteria, errors
    )
    outcome = _parse_section(
        data.get("outcome", {}), _OUTCOME_KEYS, "outcome", OutcomeDefinition, errors
    )
    models = _parse_models(data, errors)
    model_a, model_b = _parse_comparison(data, models, errors)
    reward = _parse_reward(data, errors)
    sweep = _parse_sweep(data, errors)
    calibration = _parse_section(
        _tupled(data.get("calibration", {}), "score_range"),
        _CALIBRATION_KEYS, "calibration", CalibrationParams, errors,
    )
    subgroup = _parse_section(
        _tupled(_tupled(data.get("subgroup", {}), "age_edges"), "bmi_edges"),
        _SUBGROUP_KEYS, "subgroup", SubgroupParams, errors,
    )

    capacity = data.get("capacity_fraction")
    if capacity is not None and not 0 < float(capacity) <= 1:
        errors.append("capacity_fraction must be in (0, 1]")

    output_dir = data.get("output_dir")
    if output_dir is None:
        errors.append("missing required field: output_dir")
    else:
        output_dir = base_dir / Path(output_dir)

    if errors:
        raise ConfigError(errors)
    return RunConfig(
        data_sources=sources,
        output_dir=output_dir,
        cohort=cohort,
        outcome=outcome,
        models=models,
        model_a=model_a,
        model_b=model_b,
        reward=reward,
        sweep_rewards=sweep,
        capacity_fraction=None if capacity is None else float(capacity),
        calibration=calibration,
        risk_bins=int(data.get("risk_bins", 50)),
        subgroup=subgroup,
        weighted=bool(data.get("weighted", True)),
        seed=int(data.get("seed", 0)),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    return validate_config(path.read_text(), base_dir=path.parent)


def _parse_sources(data, base_dir, errors) -> list:
    raw = data.get("data_sources")
    if raw is None:
        errors.append("missing required field: data_sources")
        return []
    if not isinstance(raw, list) or not raw:
        errors.append("data_sources must be a non-empty list")
        return []
    sources = []
    for i, entry in enumerate(raw):
        if not isinstance(entry, dict):
            errors.append(f"data_sources[{i}] must be a mapping")
            continue
        for key in sorted(set(entry) - _SOURCE_KEYS):
            errors.append(f"unknown key: data_sources[{i}].{key}")
        if "path" not in entry:
            errors.append(f"data_sources[{i}]: missing required field: path")
            continue
        kind = entry.get("kind", "xport")
        if kind not in ("xport", "csv"):
            errors.append(f"data_sources[{i}]: kind must be xport or csv")
            continue
        path = base_dir / Path(entry["path"])
        if not path.exists():
            errors.append(f"data_sources[{i}]: path does not exist: {path}")
            continue
        sources.append(DataSource(
            path=path, kind=kind, cycle=entry.get("cycle"),
            schema=entry.get("schema"),
        ))
    return sources


def _parse_section(raw, allowed, name, factory, errors):
    if not isinstance(raw, dict):
        errors.append(f"{name} must be a mapping")
        return factory()
    for key in sorted(set(raw) - allowed):
        errors.append(f"unknown key: {name}.{key}")
    kwargs = {k: v for k, v in raw.items() if k in allowed}
    try:
        return factory(**kwargs)
    except (TypeError, ValueError) as exc:
        errors.append(f"{name}: {exc}")
        return factory()


def _tupled(raw, key):
    if isinstance(raw, dict) and key in raw and isinstance(raw[key], list):
        raw = dict(raw)
        raw[key] = tuple(raw[key])
    return raw


def _parse_models(data, errors) -> list:
    raw = data.get("models")
    if raw is None:
        return [(spec, 0.0) for spec in default_model_specs()]
    if not isinstance(raw, list) or len(raw) < 2:
        errors.append("models must list at least two specifications "
                      "(a baseline and a comparator)")
        return [(spec, 0.0) for spec in default_model_specs()]
    specs = []
    for i, entry in enumerate(raw):
        extra = set(entry) - {"name", "terms", "ridge"} if isinstance(entry, dict) else set()
        for key in sorted(extra):
            errors.append(f"unknown key: models[{i}].{key}")
        try:
            ridge = float(entry.get("ridge", 0.0))
            if ridge < 0:
                errors.append(f"models[{i}]: ridge must be nonnegative")
            specs.append((parse_spec(entry["name"], entry["terms"]), ridge))
        except (KeyError, TypeError) as exc:
            errors.append(f"models[{i}]: needs name and terms ({exc})")
        except ValueError as exc:
            errors.append(f"models[{i}]: {exc}")
    names = [s.name for s, _ in specs]
    if len(set(names)) != len(names):
        errors.append("model names must be unique")
    return specs


def _parse_comparison(data, models, errors):
    raw = data.get("comparison", {})
    if not isinstance(raw, dict):
        errors.append("comparison must be a mapping")
        raw = {}
    for key in sorted(set(raw) - _COMPARISON_KEYS):
        errors.append(f"unknown key: comparison.{key}")
    names = [m.name for m, _ in models]
    model_a = raw.get("model_a", "race_aware" if "race_aware" in names else None)
    model_b = raw.get("model_b", "race_unaware" if "race_unaware" in names else None)
    if model_a is None or model_b is None:
        errors.append("comparison: model_a and model_b are required when "
                      "defaults are not among the models")
        return "race_aware", "race_unaware"
    for label, name in (("model_a", model_a), ("model_b", model_b)):
        if names and name not in names:
            errors.append(f"comparison.{label}: no model named {name!r}")
    return model_a, model_b


def _parse_reward(data, errors) -> RewardSpec:
    value = data.get("reward", 70.0)
    dollars = data.get("dollars_per_util", 100.0)
    try:
        value = float(value)
        if value <= 1.0:
            errors.append(
                "reward must exceed 1 (the screening cost) for the "
                "indifference threshold to lie in (0, 1)"
            )
            return RewardSpec(70.0, 100.0)
        return RewardSpec(value, None if dollars is None else float(dollars))
    except (TypeError, ValueError) as exc:
        errors.append(f"reward: {exc}")
        return RewardSpec(70.0, 100.0)


def _parse_sweep(data, errors) -> tuple:
    raw = data.get("sweep_rewards")
    if raw is None:
        return util.DEFAULT_SWEEP
    try:
        values = tuple(float(v) for v in raw)
    except (TypeError, ValueError):
        errors.append("sweep_rewards must be a list of numbers")
        return util.DEFAULT_SWEEP
    bad = [v for v in values if v <= 1.0]
    if bad:
        errors.append(f"sweep_rewards must all exceed 1, got {bad}")
    return values


# ---------------------------------------------------------------------------
# Stages


def load_tables(config: RunConfig) -> list[RawTable]:
    tables: list[RawTable] = []
    for source in config.data_sources:
        if source.kind == "xport":
            loaded = load_xport(source.path)
        else:
            loaded = load_csv(source.path, schema=source.schema)
        for table in loaded:
            cycle = source.cycle or infer_cycle(table.name)
            if cycle is None:
                raise ConfigError([
                    f"{source.path}: cannot infer the survey cycle of member "
                    f"{table.name!r}; set 'cycle' on the data source"
                ])
            table.cycle = cycle
            tables.append(table)
    return tables


def stage_ingest(config: RunConfig, out: "_Tracker") -> Cohort:
    tables = load_tables(config)
    harmonized = harmonize_cycles(tables, HarmonizationMap(), config.outcome)
    cohort = build_cohort(harmonized.records, config.cohort)
    cohort_to_csv(cohort, out.path("cohort.csv"))
    write_provenance(cohort, out.path("cohort_provenance.json"), extra={
        "orphan_count": harmonized.orphan_count,
        "unmapped_race_count": harmonized.unmapped_race_count,
        "sources": [str(s.path.name) for s in config.data_sources],
        "weighted": config.weighted,
    })
    return cohort


def load_or_ingest_cohort(config: RunConfig, out: "_Tracker") -> Cohort:
    snapshot = config.output_dir / "cohort.csv"
    sidecar = config.output_dir / "cohort_provenance.json"
    if snapshot.exists() and sidecar.exists():
        return cohort_from_csv(snapshot, sidecar)
    return stage_ingest(config, out)


def stage_fit(config: RunConfig, cohort: Cohort, out: "_Tracker") -> dict:
    models = {}
    for spec, ridge in config.models:
        model = fit_risk_model(cohort, spec, weighted=config.weighted,
                               ridge=ridge)
        if not model.converged:
            log.warning("model %s did not converge in %d iterations",
                        spec.name, model.iterations)
        path = out.path(f"model_{spec.name}.json")
        path.write_text(model.to_json() + "\n")
        models[spec.name] = model
    return models


def load_or_fit_models(config: RunConfig, cohort: Cohort, out: "_Tracker") -> dict:
    models = {}
    for spec, _ in config.models:
        path = config.output_dir / f"model_{spec.name}.json"
        if path.exists():
            models[spec.name] = RiskModel.from_json(path.read_text())
        else:
            return stage_fit(config, cohort, out)
    return models


def _group_series(scored, weights):
    """(group, mask) pairs: pooled first, then each reported race."""
    from .ingest import REPORT_RACES

    members = [(util.ALL_GROUP, np.ones(len(scored), dtype=bool))]
    members += [(r.value, scored.race == r.value) for r in REPORT_RACES]
    return [(g, m) for g, m in members if np.any(m)]


def stage_report(config: RunConfig, cohort: Cohort, models: dict,
                 out: "_Tracker") -> None:
    cal = config.calibration
    for name, model in models.items():
        curves = []
        for method, params in (
            ("binned", {"bins": cal.bins, "score_range": cal.score_range}),
            ("smoothed", {"bandwidth": cal.bandwidth,
                          "score_range": cal.score_range,
                          "grid_points": cal.grid_points}),
        ):
            curves.extend(calibrate.group_calibration(
                cohort, model, method, weighted=config.weighted, **params,
            ))
        calibrate.curves_to_csv(curves, out.path(f"calibration_{name}.csv"))

    baseline = models[config.model_b]
    scored = baseline.score_cohort(cohort)
    weights = scored.weights if config.weighted else np.ones_like(scored.weights)

    histograms = [
        util.risk_distribution(
            scored.risk[mask], weights[mask],
            score_range=cal.score_range, bins=config.risk_bins, group=group,
        )
        for group, mask in _group_series(scored, weights)
    ]
    util.histograms_to_csv(histograms, out.path("risk_distribution.csv"))

    curves = []
    for group, mask in _group_series(scored, weights):
        try:
            curves.append(util.utility_curve(
                scored.risk[mask], scored.outcome[mask], weights[mask],
                config.reward, score_range=cal.score_range,
                bandwidth=cal.bandwidth, grid_points=cal.grid_points,
                group=group,
            ))
        except calibrate.InsufficientDataError as exc:
            log.warning("utility curve for %s skipped: %s", group, exc)
    util.utility_curves_to_csv(curves, out.path("utility_curve.csv"))

    model_a = models[config.model_a]
    model_b = models[config.model_b]
    report = util.utility_gain(
        model_a, model_b, cohort, config.reward, weighted=config.weighted,
    )
    util.report_to_csv(report, out.path("table1.csv"))
    unweighted_report = util.utility_gain(
        model_a, model_b, cohort, config.reward, weighted=False,
    )
    util.report_to_csv(unweighted_report, out.path("table1_unweighted.csv"))

    extra = {"unweighted": unweighted_report.to_dict()}
    if config.capacity_fraction is not None:
        capacity_report = util.utility_gain(
            model_a, model_b, cohort, config.reward,
            policy="capacity", capacity_fraction=config.capacity_fraction,
            weighted=config.weighted,
        )
        extra["capacity_scenario"] = capacity_report.to_dict()
    util.report_to_json(report, out.path("utility_report.json"), extra=extra)

    cells = util.subgroup_summary(
        cohort, model_a, model_b, config.reward,
        age_edges=config.subgroup.age_edges,
        bmi_edges=config.subgroup.bmi_edges,
        min_weighted_n=config.subgroup.min_weighted_n,
        weighted=config.weighted,
    )
    util.subgroups_to_csv(cells, out.path("subgroup.csv"))


def stage_sweep(config: RunConfig, cohort: Cohort, models: dict,
                out: "_Tracker") -> None:
    sweep = util.sensitivity_sweep(
        models[config.model_a], models[config.model_b], cohort,
        config.sweep_rewards,
        dollars_per_util=config.reward.dollars_per_util,
        weighted=config.weighted,
    )
    util.sweep_to_csv(sweep, out.path("sweep.csv"))


# ---------------------------------------------------------------------------
# Orchestration


class _Tracker:
    """Tracks files created by a run so failures can clean up after themselves."""

    def __init__(self, output_dir: Path):
        self.output_dir = output_dir
        self.created: list[Path] = []

    def path(self, name: str) -> Path:
        target = self.output_dir / name
        self.created.append(target)
        return target

    def remove_created(self) -> None:
        for target in self.created:
            try:
                target.unlink(missing_ok=True)
            except OSError:  # pragma: no cover
                pass


def run_stage(config: RunConfig, stage: str) -> None:
    """Run one named stage, reusing artifacts already in the output directory."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    config.output_dir.mkdir(parents=True, exist_ok=True)
    out = _Tracker(config.output_dir)
    try:
        if stage == "ingest":
            stage_ingest(config, out)
            return
        cohort = load_or_ingest_cohort(config, out)
        if stage == "fit":
            stage_fit(config, cohort, out)
            return
        models = load_or_fit_models(config, cohort, out)
        if stage == "report":
            stage_report(config, cohort, models, out)
        else:
            stage_sweep(config, cohort, models, out)
    except Exception as exc:
        out.remove_created()
        raise StageError(stage, exc) from exc


def run_pipeline(config: RunConfig) -> RunArtifacts:
    """Run every stage into an empty output directory and write the manifest."""
    output_dir = config.output_dir
    if output_dir.exists() and any(output_dir.iterdir()):
        raise StageError("setup", ValueError(
            f"output directory {output_dir} is not empty; a run owns its "
            "output directory exclusively"
        ))
    output_dir.mkdir(parents=True, exist_ok=True)
    out = _Tracker(output_dir)
    stage = "ingest"
    try:
        cohort = stage_ingest(config, out)
        stage = "fit"
        models = stage_fit(config, cohort, out)
        stage = "report"
        stage_report(config, cohort, models, out)
        stage = "sweep"
        stage_sweep(config, cohort, models, out)
        stage = "manifest"
        manifest_path = write_manifest(output_dir)
    except Exception as exc:
        out.remove_created()
        raise StageError(stage, exc) from exc
    files = json.loads(manifest_path.read_text())["files"]
    return RunArtifacts(
        output_dir=output_dir,
        manifest_path=manifest_path,
        files={name: info["sha256"] for name, info in files.items()},
    )


_ROLE_PATTERNS = (
    ("cohort.csv", "cohort-snapshot"),
    ("cohort_provenance.json", "cohort-provenance"),
    ("model_", "fitted-model"),
    ("calibration_", "calibration-curves"),
    ("risk_distribution.csv", "risk-distribution"),
    ("utility_curve.csv", "utility-curve"),
    ("table1.csv", "gain-table"),
    ("table1_unweighted.csv", "gain-table-unweighted"),
    ("utility_report.json", "utility-report"),
    ("subgroup.csv", "subgroup-gains"),
    ("sweep.csv", "reward-sensitivity"),
)


def _file_role(name: str) -> str:
    for prefix, role in _ROLE_PATTERNS:
        if name == prefix or name.startswith(prefix):
            return role
    return "other"


def write_manifest(output_dir: Path) -> Path:
    """Digest every file in the directory into manifest.json."""
    entries = {}
    for path in sorted(output_dir.iterdir()):
        if path.name == "manifest.json" or not path.is_file():
            continue
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        entries[path.name] = {"sha256": digest, "role": _file_role(path.name)}
    manifest_path = output_dir / "manifest.json"
    payload = {"generator": "riskscreen", "files": entries}
    manifest_path.write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n"
    )
    return manifest_path
