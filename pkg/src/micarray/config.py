"""Pipeline configuration loading and validation."""

import json
from dataclasses import dataclass, field
from pathlib import Path

from .annotator import AnnotatorConfig
from .errors import ConfigInvalid

DEFAULT_RATES = {"record_hz": 48000, "process_hz": 16000, "gcc_hz": 8000}


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    rates: dict = field(default_factory=lambda: dict(DEFAULT_RATES))
    array_geometry: str = None
    camera_model: str = None
    annotator: dict = field(default_factory=dict)
    measurement: dict = field(default_factory=dict)
    simulator: dict = field(default_factory=dict)
    mixing: dict = field(default_factory=dict)
    base_dir: str = "."

    def annotator_config(self):
        kwargs = dict(self.annotator)
        kwargs.setdefault("record_hz", self.rates["record_hz"])
        kwargs.setdefault("gcc_hz", self.rates["gcc_hz"])
        return AnnotatorConfig(**kwargs)

    def resolve(self, path):
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p


def load_config(path=None, seed_override=None):
    """Load and validate a pipeline config JSON; None gives the defaults."""
    if path is None:
        cfg = PipelineConfig()
    else:
        p = Path(path)
        if not p.exists():
            raise ConfigInvalid(f"config file not found: {p}")
        try:
            with open(p) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"config is not valid JSON: {exc}") from exc
        known = {f for f in PipelineConfig.__dataclass_fields__ if f != "base_dir"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        rates = dict(DEFAULT_RATES)
        rates.update(raw.get("rates", {}))
        raw["rates"] = rates
        cfg = PipelineConfig(base_dir=str(p.parent), **raw)
    if seed_override is not None:
        object.__setattr__(cfg, "seed", int(seed_override))
    _validate(cfg)
    return cfg


def _validate(cfg: PipelineConfig):
    rates = cfg.rates
    for key in ("record_hz", "process_hz", "gcc_hz"):
        if key not in rates or int(rates[key]) <= 0:
            raise ConfigInvalid(f"rates.{key} must be a positive integer")
    record = int(rates["record_hz"])
    for key in ("process_hz", "gcc_hz"):
        if record % int(rates[key]) != 0:
            raise ConfigInvalid(
                f"record_hz={record} is not an integer multiple of {key}={rates[key]}")
    for name in ("array_geometry", "camera_model"):
        value = getattr(cfg, name)
        if value is not None and not cfg.resolve(value).exists():
            raise ConfigInvalid(f"{name} file not found: {cfg.resolve(value)}")
    try:
        cfg.annotator_config()
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"annotator section invalid: {exc}") from exc
