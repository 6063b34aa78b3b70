"""Experiment configuration with a strict schema; unknown keys are errors."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, ValidationError

from .errors import PreconditionError

FunctionSpec = Union[str, dict[str, Any]]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridConfig(_Strict):
    step: PositiveFloat
    cutoff: PositiveFloat
    x_min: float | None = None
    x_max: float | None = None
    window_decades: PositiveFloat = 1.0
    n_points: PositiveInt | None = None
    n_max: PositiveInt | None = None
    method: Literal["auto", "panjer", "direct", "fft"] = "auto"
    allow_heavy_truncation: bool = False


class Tolerances(_Strict):
    residual: PositiveFloat = 1e-9
    identity: PositiveFloat = 1e-12
    trend_factor: PositiveFloat = 1.0


class TiltConfig(_Strict):
    n_max: PositiveInt = 6
    gamma: float | None = None


class ConstructConfig(_Strict):
    builder: Literal["moments_ext", "weighted", "g_finite_moment", "flatten", "convex_inverse"]
    n_stages: int = Field(4, ge=0)
    f: FunctionSpec | None = None
    g: FunctionSpec | None = None
    f1: FunctionSpec | None = None
    f2: FunctionSpec | None = None


class VerifyConfig(_Strict):
    check: Literal["growth_bound", "semi_moment", "hypotheses", "tail_ratio"]
    h: FunctionSpec | None = None
    r: FunctionSpec | None = None
    N: PositiveInt = 40
    step: PositiveFloat = 0.25
    cutoff: PositiveFloat | None = None
    strict: bool = True
    y_values: list[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0])


class ExperimentConfig(_Strict):
    """One workflow over one summand law and one counting law."""

    # "construct" is a BaseModel method, so the section lives under an alias
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    distribution: dict[str, Any]
    tau: dict[str, Any]
    workflow: Literal["ratio", "tilt", "construct", "verify", "all"] = "ratio"
    grid: GridConfig | None = None
    c: PositiveFloat | None = None
    domination_grid: list[float] | None = None
    tolerances: Tolerances = Tolerances()
    tilt: TiltConfig = TiltConfig()
    construct_section: ConstructConfig | None = Field(None, alias="construct")
    verify: VerifyConfig | None = None
    output: str = "out"


def load_config(path: str | Path, **overrides: Any) -> ExperimentConfig:
    """Read a JSON config; ``overrides`` replace top-level keys (``None`` values are ignored)."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise PreconditionError(f"cannot read config {path}: {exc}") from None
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return parse_config(raw)


def parse_config(raw: dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise PreconditionError(f"invalid config: {exc}") from None


__all__ = ["ConstructConfig", "ExperimentConfig", "GridConfig", "Tolerances", "TiltConfig", "VerifyConfig",
           "load_config", "parse_config"]
