"""tinyfq configuration management.

Order of precedence:
1. Environment variables (FQA_ prefix)
2. .env.<FQA_ENV> file, then .env
3. config.yaml

Subcommands layer a JSON --config file and explicit flags on top of the
section they use (see override()).
"""

from __future__ import annotations

import json
import logging
import os
import re
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union, get_args

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic_settings import BaseSettings

from .model.specs import Normalization


CONFIG_YAML = Path.cwd() / "config.yaml"

LossMode = Literal["squared", "absolute"]
OnUnreadable = Literal["skip", "abort"]
DegradationKind = Literal["gaussian_blur", "jpeg_recompress", "gaussian_noise", "occlusion", "downscale"]


# ---- Model ---- #

class ModelConfig(BaseModel):
    input_size: int = Field(default=64, ge=8)
    normalization: Normalization = Normalization()
    bn_eps: float = Field(default=1e-5, gt=0)
    bn_momentum: float = Field(default=0.9, ge=0, lt=1)
    # ReLU after the last 1x1 conv of every block; false = linear bottleneck.
    final_relu: bool = True
    embedding_dim: int = Field(default=64, ge=2)


# ---- Training ---- #

class TrainConfig(BaseModel):
    """SGD schedule and data handling for one training run.

    The class defaults are the full-scale schedule (17 epochs, batch 1024,
    lr 0.01 decayed by 0.1 every 5 epochs); config.yaml carries the
    desk-scale values.
    """
    model_config = ConfigDict(frozen=True)

    epochs: int = Field(default=17, ge=1)
    batch_size: int = Field(default=1024, ge=2)
    base_lr: float = Field(default=0.01, gt=0)
    lr_decay_factor: float = Field(default=0.1, gt=0, le=1)
    lr_decay_every: int = Field(default=5, ge=1)
    weight_decay: float = Field(default=1e-4, ge=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    seed: int = 0
    loss_mode: LossMode = "squared"
    on_unreadable: OnUnreadable = "skip"


def desk_schedule(epochs: int = 30, batch_size: int = 64, **kwargs) -> TrainConfig:
    """Desk-scale defaults: the decay period scales to a third of the run."""
    return TrainConfig(epochs=epochs, batch_size=batch_size,
                       lr_decay_every=max(1, epochs // 3), **kwargs)


# ---- Sampling and synthesis ---- #

class SamplerConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    min_images_per_identity: int = Field(default=100, ge=1)
    num_bins: int = Field(default=100, ge=2)
    low_fraction: float = Field(default=0.10, ge=0, lt=1)
    high_fraction: float = Field(default=0.05, ge=0, lt=1)
    # None: match the input size.
    target_budget: Optional[int] = Field(default=None, ge=1)
    max_oversample_factor: float = Field(default=10.0, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def check_fractions(self):
        if self.low_fraction + self.high_fraction >= 1:
            raise ValueError(
                f"low_fraction + high_fraction must be < 1, got "
                f"{self.low_fraction} + {self.high_fraction}")
        return self


class DegradationConfig(BaseModel):
    """Distortion at severity 1 for each kind; severity s scales toward it linearly."""
    max_sigma: float = Field(default=3.0, gt=0)
    min_jpeg_quality: int = Field(default=5, ge=1, le=95)
    max_noise_std: float = Field(default=40.0, gt=0)
    max_patch_fraction: float = Field(default=0.5, gt=0, le=1)
    min_scale: float = Field(default=0.125, gt=0, lt=1)
    fill: int = Field(default=0, ge=0, le=255)


class SynthConfig(BaseModel):
    num_identities: int = Field(default=32, ge=2)
    images_per_identity: int = Field(default=50, ge=2)
    kinds: List[DegradationKind] = list(get_args(DegradationKind))
    severities: List[float] = [0.0, 0.25, 0.5, 0.75, 1.0]
    # Images of one identity sharing a template id.
    template_size: int = Field(default=5, ge=1)

    @field_validator("severities")
    @classmethod
    def check_severities(cls, value):
        if not value or any(not 0.0 <= s <= 1.0 for s in value):
            raise ValueError(f"severities must be a non-empty list within [0, 1], got {value}")
        return value


# ---- Scoring and evaluation ---- #

class ScoringConfig(BaseModel):
    # score_blur = v / (v + blur_constant), v the Laplacian variance on 0-255 gray.
    blur_constant: float = Field(default=100.0, gt=0)
    jpeg_quality: int = Field(default=90, ge=1, le=100)
    # Bits per pixel of raw 8-bit RGB; the re-encoded size is scored against it.
    reference_bpp: float = Field(default=24.0, gt=0)
    combination_weights: Dict[str, float] = {"blur": 0.5, "jpeg": 0.5}

    @field_validator("combination_weights")
    @classmethod
    def check_weights(cls, value):
        if any(w < 0 for w in value.values()):
            raise ValueError(f"combination weights must be non-negative, got {value}")
        if abs(sum(value.values()) - 1.0) > 1e-6:
            raise ValueError(f"combination weights must sum to 1, got {value}")
        return value


class EvaluationConfig(BaseModel):
    fpr_targets: List[float] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5]
    folds: int = Field(default=10, ge=2)
    random_runs: int = Field(default=10, ge=1)
    negatives_per_positive: int = Field(default=4, ge=1)


# ---- Core settings model ---- #

class Settings(BaseSettings):
    model_config = {"env_prefix": "FQA_"}

    """App-wide settings loaded from YAML + env vars."""
    env: str = os.getenv("FQA_ENV", "dev")
    seed: int = 0
    # Worker threads for decoding, scoring and extraction.
    jobs: int = Field(default=4, ge=1)

    model: ModelConfig = ModelConfig()
    quality_training: TrainConfig = desk_schedule()
    recognizer_training: TrainConfig = desk_schedule()
    full_training: TrainConfig = TrainConfig()
    sampler: SamplerConfig = SamplerConfig()
    degradation: DegradationConfig = DegradationConfig()
    synth: SynthConfig = SynthConfig()
    scoring: ScoringConfig = ScoringConfig()
    evaluation: EvaluationConfig = EvaluationConfig()

    log_file: str | None = None
    log_level: Union[int, str] = logging.INFO

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, value):
        return resolve_log_level(value)


def resolve_log_level(value: Union[int, str, None], default: int = logging.INFO) -> int:
    """Accept a level name (DEBUG, info) or a number (10, "20")."""
    if value is None or value == "":
        return default
    if isinstance(value, int):
        return value
    text = str(value).strip()
    if text.isdigit():
        return int(text)
    level = logging.getLevelName(text.upper())
    if not isinstance(level, int):
        raise ValueError(f"unknown log level {value!r}")
    return level


# ---- Loader helpers ---- #
_PLACEHOLDER_RE = re.compile(r"\${([A-Z0-9_]+)(?::-(.*?))?}")

def _expand_placeholders(text: str) -> str:
    """
    Replace ${VAR}            → value from env  (or '')
            ${VAR:-default}   → value or fallback
    """
    def repl(match: re.Match):
        var, default = match.group(1), match.group(2)
        return os.getenv(var, default or "")

    return _PLACEHOLDER_RE.sub(repl, text)

def _yaml_defaults() -> dict[str, Any]:
    """Return dict from config.yaml with ${VAR} placeholders expanded."""
    if not CONFIG_YAML.exists():
        return {}
    raw = _expand_placeholders(CONFIG_YAML.read_text())
    return yaml.safe_load(raw) or {}

def _load_dotenv() -> None:
    """Populate os.environ from .env.<env> if it exists."""
    env = os.getenv("FQA_ENV", "dev")
    load_dotenv(f".env.{env}", override=False)
    load_dotenv(".env", override=False)

@lru_cache(maxsize=1)
def get_config() -> Settings:
    """Returns the settings object (cached after first call)."""
    _load_dotenv()
    return Settings(**_yaml_defaults())


# ---- Run-level overrides ---- #

def load_json_config(path: Union[str, Path, None]) -> dict:
    """Read a --config JSON file; sections use the same keys as config.yaml."""
    if path is None:
        return {}
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a JSON object at the top level")
    return data


def override(section: BaseModel, *layers: Optional[dict]) -> BaseModel:
    """Re-validate section with each layer's non-None values applied in order."""
    values = section.model_dump()
    for layer in layers:
        values.update({k: v for k, v in (layer or {}).items() if v is not None})
    return type(section).model_validate(values)
