"""Experiment configuration files (JSON, validated, unknown keys rejected)."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .net.train import TrainConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataConfig(_Strict):
    dataset: Literal["mnist", "cifar10"] = "mnist"
    mnist_dir: str | None = None
    cifar_dir: str | None = None
    side: int = Field(8, ge=1, le=28)  # MNIST resampling
    train_limit: int | None = Field(None, ge=1)  # keep the first N training rows
    test_limit: int | None = Field(None, ge=1)
    standardize: bool = False


class ModelConfig(_Strict):
    """Either a named preset or an explicit layer list, plus circuit positions.

    ``circuits`` maps an MPO layer name to ``"left spec ; right spec"``.
    """

    preset: str | None = "mnist1"
    layers: list[dict] | None = None
    circuits: dict[str, str] = {}
    norm_every: int | None = Field(4, ge=1)
    gate_scale: float = Field(0.1, ge=0.0)

    @model_validator(mode="after")
    def _one_source(self):
        if (self.preset is None) == (self.layers is None):
            raise ValueError("give exactly one of 'preset' and 'layers'")
        return self


class DisentangleConfig(_Strict):
    layer: str = "mpo1"
    target_chi: int = Field(1, ge=1)
    left: str = "2b"
    right: str = "2b"
    passes: int = Field(50, ge=0)
    init: Literal["random", "identity"] = "random"
    scale: float = Field(0.1, ge=0.0)
    tol: float = Field(1e-8, ge=0.0)


class HealConfig(_Strict):
    layer: str = "mpo1"
    max_bond: int = Field(1, ge=1)
    in_dims: list[int] | None = None
    out_dims: list[int] | None = None


class ExperimentConfig(_Strict):
    seed: int = 0
    out_dir: str = "runs"
    data: DataConfig = DataConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    disentangle: DisentangleConfig = DisentangleConfig()
    heal: HealConfig = HealConfig()


def load_config(path) -> ExperimentConfig:
    """Parse and validate a JSON config file."""
    text = Path(path).read_text()
    return ExperimentConfig.model_validate(json.loads(text))
