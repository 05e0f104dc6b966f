"""Run configuration: JSON file plus command-line flag overrides.

A run config aggregates the imaging, training, network and mask
sections with a few top-level scalars. Files are validated strictly:
unknown keys anywhere are rejected so typos cannot silently fall back
to defaults. Flags always win over file values.
"""

import dataclasses
from dataclasses import dataclass, field

from .datagen import MaskSpec
from .errors import ConfigError
from .formats import read_json
from .optics import ImagingConfig
from .training import NetworkConfig, TrainConfig


@dataclass(frozen=True)
class RunConfig:
    imaging: ImagingConfig = field(default_factory=ImagingConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    mask: MaskSpec = field(default_factory=MaskSpec)
    threshold: float = 0.225
    coverage: float = 0.99999
    threads: int = 1
    out_dir: str = "out"

    def __post_init__(self):
        if not 0 < self.coverage <= 1:
            raise ConfigError(f"coverage must lie in (0, 1], got {self.coverage}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if self.threshold <= 0:
            raise ConfigError(f"threshold must be positive, got {self.threshold}")


_SECTIONS = {
    "imaging": ImagingConfig,
    "train": TrainConfig,
    "network": NetworkConfig,
    "mask": MaskSpec,
}


def _build_section(cls, values, where):
    if not isinstance(values, dict):
        raise ConfigError(f"section {where!r} must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"unknown keys in section {where!r}: {unknown}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"bad values in section {where!r}: {exc}") from exc


def load_run_config(path=None):
    """Read a RunConfig from a JSON file; defaults when path is None."""
    if path is None:
        return RunConfig()
    obj = read_json(path)
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    top_names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(obj) - top_names)
    if unknown:
        raise ConfigError(f"{path}: unknown top-level keys: {unknown}")
    kwargs = {}
    for key, value in obj.items():
        if key in _SECTIONS:
            kwargs[key] = _build_section(_SECTIONS[key], value, key)
        else:
            kwargs[key] = value
    try:
        return RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path}: bad top-level values: {exc}") from exc


def run_config_to_json(cfg):
    """Plain-dict form of a RunConfig, suitable for echoing into runs."""
    return dataclasses.asdict(cfg)


def override(cfg, **updates):
    """Functional update of top-level RunConfig fields."""
    return dataclasses.replace(cfg, **updates)


def override_section(cfg, section, **updates):
    """Functional update of one nested section, e.g. train or network."""
    current = getattr(cfg, section)
    return dataclasses.replace(cfg, **{section: dataclasses.replace(current, **updates)})
