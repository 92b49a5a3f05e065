"""Run configuration: one JSON file with a section per pipeline stage."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import toy
from .pino.model import ArchConfig
from .pino.train import ABLATION_ROWS, TrainConfig
from .system import ParameterSpace, SystemConfig

__all__ = ["RunConfig", "load_config", "apply_overrides", "resolve_system", "resolve_space"]

SYSTEM_PRESETS = {"toy": toy.toy_system, "sdof": toy.sdof_system, "full-layout": toy.full_layout_system}
SPACE_PRESETS = {"toy": toy.toy_space, "sdof": toy.sdof_space}


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DatasetSection(_Section):
    n_train: int = Field(default=800, ge=0)
    n_test: int = Field(default=200, ge=0)
    n_virtual: int = Field(default=200, ge=0)
    seed: int = 0


class ENSection(_Section):
    r: float = Field(default=0.02, gt=0)
    seed: int = 0
    draws: int = Field(default=1, ge=1)
    cap: float = Field(default=1e6, gt=0)


class TrainSection(TrainConfig):
    row: str | None = None

    @model_validator(mode="after")
    def _row(self):
        if self.row is not None and self.row not in ABLATION_ROWS:
            raise ValueError(f"unknown ablation row {self.row!r}")
        return self

    def resolved(self) -> TrainConfig:
        """Loss flags of ``row`` (when given) over the remaining fields."""
        data = self.model_dump(exclude={"row"})
        if self.row is not None:
            data.update(ABLATION_ROWS[self.row])
        return TrainConfig(**data)


class PDEMSection(_Section):
    n_sel: int = Field(default=64, ge=1)
    quantity: str = "u:a1.z"
    n_x: int = Field(default=81, ge=3)
    x_range: tuple[float, float] | None = None
    refine: int = Field(default=16, ge=1)
    seed: int = 0
    provider: Literal["oracle", "surrogate"] = "oracle"
    on_range: Literal["error", "widen"] = "error"


class MCSection(_Section):
    n: int = Field(default=10_000, ge=1)
    seed: int = 0
    quantity: str = "u:a1.z"
    provider: Literal["oracle", "surrogate"] = "surrogate"
    chunk: int = Field(default=1000, ge=1)
    fixed_excitation: bool = False
    kde: bool = False


class CompareSection(_Section):
    times: list[float] = Field(default_factory=list)
    thresholds: list[float] = Field(default_factory=list)
    absolute: bool = False


class SweepSection(_Section):
    """Each entry is a set of ``section.key`` overrides applied to the base config."""

    runs: list[dict[str, Any]] = Field(default_factory=list)


class AblateSection(_Section):
    rows: list[str] = Field(default_factory=lambda: ["V1", "V2", "V3", "V4"])

    @model_validator(mode="after")
    def _rows(self):
        bad = [r for r in self.rows if r not in ABLATION_ROWS]
        if bad:
            raise ValueError(f"unknown ablation rows {bad}")
        return self


class RunConfig(_Section):
    system: str | SystemConfig = "toy"
    space: str | ParameterSpace = "toy"
    dataset: DatasetSection = Field(default_factory=DatasetSection)
    en: ENSection = Field(default_factory=ENSection)
    arch: ArchConfig = Field(default_factory=ArchConfig)
    train: TrainSection = Field(default_factory=TrainSection)
    model_seed: int = 0
    pdem: PDEMSection = Field(default_factory=PDEMSection)
    mc: MCSection = Field(default_factory=MCSection)
    compare: CompareSection = Field(default_factory=CompareSection)
    sweep: SweepSection = Field(default_factory=SweepSection)
    ablate: AblateSection = Field(default_factory=AblateSection)

    @model_validator(mode="after")
    def _presets(self):
        if isinstance(self.system, str) and self.system not in SYSTEM_PRESETS:
            raise ValueError(f"unknown system preset {self.system!r}")
        if isinstance(self.space, str) and self.space not in SPACE_PRESETS:
            raise ValueError(f"unknown space preset {self.space!r}")
        return self


def resolve_system(cfg: RunConfig) -> SystemConfig:
    return SYSTEM_PRESETS[cfg.system]() if isinstance(cfg.system, str) else cfg.system


def resolve_space(cfg: RunConfig) -> ParameterSpace:
    return SPACE_PRESETS[cfg.space]() if isinstance(cfg.space, str) else cfg.space


def _parse_scalar(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides: list[str] | dict[str, Any]) -> dict:
    """Apply ``section.key=value`` overrides (values parsed as JSON when possible)."""
    items = overrides.items() if isinstance(overrides, dict) else []
    if not isinstance(overrides, dict):
        parsed = []
        for item in overrides:
            key, sep, value = item.partition("=")
            if not sep or not key:
                raise ValueError(f"override {item!r} is not of the form key=value")
            parsed.append((key, _parse_scalar(value)))
        items = parsed
    out = json.loads(json.dumps(data))
    for key, value in items:
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ValueError(f"override {key!r} descends into a non-section")
        node[parts[-1]] = value
    return out


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> tuple[RunConfig, dict]:
    """Validated config plus the raw dict it came from (for the snapshot)."""
    data = {} if path is None else json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValueError("config root must be an object")
    data = apply_overrides(data, overrides or [])
    return RunConfig.model_validate(data), data
