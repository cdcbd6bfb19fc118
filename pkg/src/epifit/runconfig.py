"""Run configuration: one YAML file drives every pipeline command.

Paths inside the file resolve relative to the file's own directory. All
Table-1 style model variants are expressible through `model.variant` plus
flags; no code changes are needed to switch structure or likelihood.
"""

import copy
from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import ParameterError


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path
    output_dir: Path
    seed: int = 0

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ParameterError(f"config file {path} does not exist")
        with open(path) as handle:
            raw = yaml.safe_load(handle) or {}
        if not isinstance(raw, dict):
            raise ParameterError(f"config file {path} must be a mapping")
        return cls.from_dict(raw, base_dir=path.parent)

    @classmethod
    def from_dict(cls, raw: dict, base_dir=".") -> "RunConfig":
        base_dir = Path(base_dir)
        out = Path(raw.get("output_dir", "out"))
        if not out.is_absolute():
            out = base_dir / out
        return cls(raw=raw, base_dir=base_dir, output_dir=out,
                   seed=int(raw.get("seed", 0)))

    def section(self, name) -> dict:
        value = self.raw.get(name, {}) or {}
        if not isinstance(value, dict):
            raise ParameterError(f"config section {name!r} must be a mapping")
        return value

    def data_path(self, key):
        value = self.section("data").get(key)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def require_data_path(self, key) -> Path:
        p = self.data_path(key)
        if p is None:
            raise ParameterError(f"config data.{key} is required for this command")
        if not p.exists():
            raise ParameterError(f"data file {p} does not exist")
        return p

    def with_overrides(self, seed=None, chains=None, output_dir=None,
                       model=None, likelihood=None, span=None) -> "RunConfig":
        raw = copy.deepcopy(self.raw)
        if seed is not None:
            raw["seed"] = int(seed)
        if chains is not None:
            raw.setdefault("sampler", {})["chains"] = int(chains)
        if model is not None:
            raw.setdefault("model", {})["variant"] = model
        if likelihood is not None:
            raw.setdefault("model", {})["likelihood"] = likelihood
        if span is not None:
            raw.setdefault("smooth", {})["span"] = float(span)
        if output_dir is not None:
            raw["output_dir"] = str(output_dir)
        return RunConfig.from_dict(raw, base_dir=self.base_dir)
