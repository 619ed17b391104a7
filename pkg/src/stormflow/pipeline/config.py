"""Pipeline configuration: a YAML or JSON file mapped onto dataclasses.

Relative paths are resolved against the directory holding the config file.
Unknown keys are rejected so typos do not silently fall back to defaults.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..climatology import LabelDomain
from ..descriptors import ExtractConfig
from ..errors import ConfigError
from ..evaluation import DEFAULT_EDGES_HOURS
from ..forest import ForestConfig
from ..optical_flow import FlowParams, SmoothingParams


@dataclass(frozen=True)
class DateWindow:
    """Frames whose day of month lies in ``days`` (inclusive) and, when
    given, whose UTC time of day lies in ``hours`` (inclusive, whole hours)."""

    days: tuple[int, int] = (1, 31)
    hours: tuple[int, int] | None = None

    def __post_init__(self):
        d0, d1 = self.days
        if not 1 <= d0 <= d1 <= 31:
            raise ValueError(f"bad day range {self.days}")
        if self.hours is not None:
            h0, h1 = self.hours
            if not 0 <= h0 <= h1 <= 24:
                raise ValueError(f"bad hour range {self.hours}")

    def contains(self, ts) -> bool:
        if not self.days[0] <= ts.day <= self.days[1]:
            return False
        if self.hours is None:
            return True
        minutes = ts.hour * 60 + ts.minute + ts.second / 60
        return self.hours[0] * 60 <= minutes <= self.hours[1] * 60


@dataclass(frozen=True)
class PipelineConfig:
    ch3_dir: Path
    ch4_dir: Path
    output_dir: Path
    storm_reports: Path | None = None
    seed: int = 0
    flow: FlowParams = field(default_factory=FlowParams)
    extract: ExtractConfig = field(default_factory=ExtractConfig)
    forest: ForestConfig = field(default_factory=ForestConfig)
    domain: LabelDomain = field(default_factory=LabelDomain)
    coverage_years: tuple[int, ...] | None = None
    train: DateWindow = DateWindow((1, 10))
    test: DateWindow = DateWindow((18, 22), (10, 18))
    lead_time_edges_hours: tuple[float, ...] = DEFAULT_EDGES_HOURS
    cv_folds: int = 10
    max_pair_skew_minutes: float = 2.0
    cache: bool = True
    train_descriptors: Path | None = None
    test_descriptors: Path | None = None

    def with_seed(self, seed: int) -> "PipelineConfig":
        return dataclasses.replace(self, seed=seed,
                                   forest=dataclasses.replace(self.forest, seed=seed))

    def extract_config(self) -> ExtractConfig:
        return dataclasses.replace(self.extract, flow=self.flow, domain=self.domain)


def _build(cls, data, where: str, **extra):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    try:
        return cls(**data, **extra)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from e


def _path(base: Path, value) -> Path | None:
    if value is None:
        return None
    p = Path(str(value)).expanduser()
    return p if p.is_absolute() else base / p


def _pair(value, where):
    if value is None:
        return None
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{where}: expected a two-element list")
    return (int(value[0]), int(value[1]))


_TOP_KEYS = {"inputs", "output_dir", "seed", "flow", "extract", "forest", "domain",
             "coverage_years", "train", "test", "evaluation", "cache", "pairing"}


def config_from_dict(raw: dict, base: Path) -> PipelineConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {', '.join(unknown)}")
    inputs = raw.get("inputs") or {}
    for key in ("ch3", "ch4"):
        if key not in inputs:
            raise ConfigError(f"inputs.{key} is required")
    if "output_dir" not in raw:
        raise ConfigError("output_dir is required")

    flow_raw = dict(raw.get("flow") or {})
    smoothing = _build(SmoothingParams, flow_raw.pop("smoothing", None), "flow.smoothing")
    flow = _build(FlowParams, flow_raw, "flow", smoothing=smoothing)

    seed = int(raw.get("seed", 0))
    forest_raw = dict(raw.get("forest") or {})
    forest_raw.setdefault("seed", seed)
    forest = _build(ForestConfig, forest_raw, "forest")

    domain_raw = dict(raw.get("domain") or {})
    polygon = _path(base, domain_raw.pop("polygon", None))
    if polygon is not None:
        if not polygon.exists():
            raise ConfigError(f"domain.polygon {polygon} does not exist")
        domain = LabelDomain.with_polygon_file(polygon, **domain_raw)
    else:
        domain = _build(LabelDomain, domain_raw, "domain")

    extract = _build(ExtractConfig, raw.get("extract"), "extract")

    windows = {}
    for name in ("train", "test"):
        w = dict(raw.get(name) or {})
        desc = _path(base, w.pop("descriptors", None))
        windows[name + "_descriptors"] = desc
        kw = {}
        if "days" in w:
            kw["days"] = _pair(w.pop("days"), f"{name}.days")
        if "hours" in w:
            kw["hours"] = _pair(w.pop("hours"), f"{name}.hours")
        if w:
            raise ConfigError(f"{name}: unknown key(s) {', '.join(sorted(w))}")
        default = PipelineConfig.__dataclass_fields__[name].default
        try:
            windows[name] = dataclasses.replace(default, **kw)
        except ValueError as e:
            raise ConfigError(f"{name}: {e}") from e

    ev = dict(raw.get("evaluation") or {})
    edges = tuple(float(e) for e in ev.pop("lead_time_edges_hours", DEFAULT_EDGES_HOURS))
    folds = int(ev.pop("cv_folds", 10))
    if ev:
        raise ConfigError(f"evaluation: unknown key(s) {', '.join(sorted(ev))}")

    pairing = dict(raw.get("pairing") or {})
    skew = float(pairing.pop("max_skew_minutes", 2.0))
    if pairing:
        raise ConfigError(f"pairing: unknown key(s) {', '.join(sorted(pairing))}")

    years = raw.get("coverage_years")
    return PipelineConfig(
        ch3_dir=_path(base, inputs["ch3"]),
        ch4_dir=_path(base, inputs["ch4"]),
        storm_reports=_path(base, inputs.get("storm_reports")),
        output_dir=_path(base, raw["output_dir"]),
        seed=seed,
        flow=flow,
        extract=extract,
        forest=forest,
        domain=domain,
        coverage_years=tuple(int(y) for y in years) if years is not None else None,
        lead_time_edges_hours=edges,
        cv_folds=folds,
        max_pair_skew_minutes=skew,
        cache=bool(raw.get("cache", True)),
        **windows,
    )


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: not valid YAML/JSON: {e}") from e
    return config_from_dict(raw, path.resolve().parent)
