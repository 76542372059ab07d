"""Pipeline configuration: one JSON-serializable document drives a run."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class PipelineConfig:
    """Tunable parameters of the separation pipeline.

    ``step_factor`` is the streamline step in units of the minimum bin
    width; ``eps_sep`` the factorization-test threshold; ``samples`` and
    ``source_kind`` configure the synthetic experiment generator.
    """

    bins_per_dim: int = 16
    min_samples_per_bin: int = 50
    step_factor: float = 0.5
    max_order: int = 4
    eps_sep: float = 0.05
    lattice_resolution: int = 64
    seed: int = 7
    samples: int = 200_000
    sample_rate: float = 16000.0
    source_kind: str = "ar2"
    out_dir: str = "out"
    wav_paths: tuple = ()

    def __post_init__(self):
        positive = (
            "bins_per_dim", "min_samples_per_bin", "step_factor",
            "max_order", "eps_sep", "lattice_resolution", "samples",
            "sample_rate",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        object.__setattr__(self, "wav_paths", tuple(self.wav_paths))

    def replace(self, **kw) -> "PipelineConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["wav_paths"] = list(d["wav_paths"])
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text) -> "PipelineConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config JSON must be an object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())
