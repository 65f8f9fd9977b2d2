"""Run configuration: one JSON file, relative paths resolved against its directory."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

from .cleaning import CleaningPolicy
from .detectors import DEFAULT_DETECTORS, Detector, DetectorConfig
from .features import CORRELATIONS, AggregationPolicy
from .ingest import ColumnMapping
from .similarity import DEFAULT_BOILERPLATE_FRACTION, DEFAULT_K, DEFAULT_W, NormalizationConfig
from .synthgen import SynthConfig

_SECTIONS = {
    "paths", "mapping", "normalization", "similarity", "detectors",
    "aggregation", "correlation", "cleaning", "synth", "threads",
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Paths:
    main_table: Path | None = None
    code_states: Path | None = None
    gradebook: Path | None = None
    output_dir: Path = Path("out")


@dataclass(frozen=True)
class RunConfig:
    paths: Paths = field(default_factory=Paths)
    mapping: ColumnMapping = field(default_factory=ColumnMapping)
    normalization: NormalizationConfig = field(default_factory=NormalizationConfig)
    k: int = DEFAULT_K
    w: int = DEFAULT_W
    boilerplate_fraction: float = DEFAULT_BOILERPLATE_FRACTION
    detector_config: DetectorConfig = field(default_factory=DetectorConfig)
    detectors: tuple[Detector, ...] = DEFAULT_DETECTORS
    weights: Mapping[Detector, float] = field(default_factory=lambda: {d: 1.0 for d in Detector})
    combine: str = "flagged"
    aggregation: AggregationPolicy = field(default_factory=AggregationPolicy)
    correlation: str = "pearson"
    cleaning: CleaningPolicy = field(default_factory=CleaningPolicy)
    synth: SynthConfig = field(default_factory=SynthConfig)
    threads: int = 1

    def __post_init__(self):
        if self.k < 1 or self.w < 1:
            raise ConfigError("k and w must be >= 1")
        if not 0.0 < self.boilerplate_fraction <= 1.0:
            raise ConfigError("boilerplate_fraction must be in (0, 1]")
        if self.correlation not in CORRELATIONS:
            raise ConfigError(f"correlation must be one of {sorted(CORRELATIONS)}")
        if self.combine not in ("flagged", "all"):
            raise ConfigError("detectors.combine must be 'flagged' or 'all'")
        missing = set(self.detectors) - set(self.weights)
        if missing:
            raise ConfigError(f"no weight for enabled detector(s): {sorted(map(str, missing))}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def to_dict(self) -> dict:
        """Canonical JSON-able form; paths are kept as given."""
        return {
            "paths": {k: None if v is None else str(v) for k, v in self.paths.__dict__.items()},
            "mapping": self.mapping.to_dict(),
            "normalization": self.normalization.to_dict(),
            "similarity": {"k": self.k, "w": self.w, "boilerplate_fraction": self.boilerplate_fraction},
            "detectors": {
                "enabled": [d.value for d in self.detectors],
                "config": self.detector_config.to_dict(),
                "weights": {d.value: w for d, w in sorted(self.weights.items(), key=lambda x: x[0].value)},
                "combine": self.combine,
            },
            "aggregation": self.aggregation.to_dict(),
            "correlation": self.correlation,
            "cleaning": self.cleaning.to_dict(),
            "synth": self.synth.to_dict(),
        }

    def digest(self) -> str:
        """SHA-256 of the analysis-relevant settings (output dir and thread count excluded)."""
        d = self.to_dict()
        d["paths"].pop("output_dir", None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def with_overrides(self, **kwargs) -> "RunConfig":
        return replace(self, **kwargs)


def _section(data: Mapping, name: str, allowed: set[str]) -> dict:
    sec = data.get(name) or {}
    if not isinstance(sec, Mapping):
        raise ConfigError(f"config section {name!r} must be an object")
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    return dict(sec)


def from_dict(data: Mapping, base_dir: Path | None = None) -> RunConfig:
    unknown = set(data) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    base = base_dir or Path(".")

    def path(value):
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else base / p

    try:
        p = _section(data, "paths", {"main_table", "code_states", "gradebook", "output_dir"})
        paths = Paths(
            main_table=path(p.get("main_table")),
            code_states=path(p.get("code_states")),
            gradebook=path(p.get("gradebook")),
            output_dir=path(p.get("output_dir", "out")),
        )
        sim = _section(data, "similarity", {"k", "w", "boilerplate_fraction"})
        det = _section(data, "detectors", {"enabled", "config", "weights", "combine"})
        enabled = tuple(Detector(d) for d in det.get("enabled", [d.value for d in DEFAULT_DETECTORS]))
        weights = {Detector(d): float(w) for d, w in det.get("weights", {d.value: 1.0 for d in Detector}).items()}
        return RunConfig(
            paths=paths,
            mapping=ColumnMapping.from_dict(_section(data, "mapping", set(ColumnMapping.__dataclass_fields__))),
            normalization=NormalizationConfig.from_dict(
                _section(data, "normalization", set(NormalizationConfig.__dataclass_fields__))
            ),
            k=int(sim.get("k", DEFAULT_K)),
            w=int(sim.get("w", DEFAULT_W)),
            boilerplate_fraction=float(sim.get("boilerplate_fraction", DEFAULT_BOILERPLATE_FRACTION)),
            detector_config=DetectorConfig.from_dict(det.get("config", {})),
            detectors=enabled,
            weights=weights,
            combine=det.get("combine", "flagged"),
            aggregation=AggregationPolicy(**_section(data, "aggregation", {"score_pool", "attempts"})),
            correlation=data.get("correlation", "pearson"),
            cleaning=CleaningPolicy.from_dict(_section(data, "cleaning", {"mode", "suspicion_min"})),
            synth=SynthConfig.from_dict(_section(data, "synth", set(SynthConfig.__dataclass_fields__))),
            threads=int(data.get("threads", 1)),
        )
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return from_dict(data, path.parent)


def dataset_config(dataset_dir: Path, output_dir: str = "out") -> dict:
    """Config JSON for a dataset written by ``synthgen.write_dataset``, paths relative to it."""
    return {
        "paths": {
            "main_table": "MainTable.csv",
            "code_states": "CodeStates",
            "gradebook": "gradebook.csv",
            "output_dir": output_dir,
        }
    }
