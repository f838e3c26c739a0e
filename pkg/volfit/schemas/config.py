import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from volfit.core.errors import ConfigError
from volfit.models.enums import BackgroundMode, LatentSource, MixtureSpace, ParameterizationMode, Precision


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: ParameterizationMode = ParameterizationMode.DIRECT
    resolution: int = 32
    latent_dim: int = 8
    conditioning_dim: int = 0
    latent_source: LatentSource = LatentSource.ENCODER

    # Encoder over downsampled views
    encoder_views: int = 3
    encoder_size: int = 16
    encoder_hidden: int = 256

    # Bottleneck decoder
    decoder_hidden: int = 128
    bottleneck: int = 4
    leaky_slope: float = 0.2

    # Warp field
    use_warp: bool = True
    mixture_space: MixtureSpace = MixtureSpace.WARPED
    n_warps: int = 16
    warp_resolution: int = 32
    warp_hidden: int = 8
    init_quat_noise: float = 0.01

    view_conditioning: bool = False

    @field_validator(
        "resolution", "latent_dim", "encoder_views", "encoder_size", "encoder_hidden",
        "decoder_hidden", "bottleneck", "n_warps", "warp_resolution", "warp_hidden",
    )
    @classmethod
    def validate_positive(cls, v):
        if v <= 0:
            raise ValueError("Count must be positive")
        return v

    @field_validator("conditioning_dim")
    @classmethod
    def validate_conditioning_dim(cls, v):
        if v < 0:
            raise ValueError("Conditioning dimension cannot be negative")
        return v

    @field_validator("leaky_slope", "init_quat_noise")
    @classmethod
    def validate_non_negative(cls, v):
        if v < 0:
            raise ValueError("Value cannot be negative")
        return v

    @model_validator(mode="after")
    def validate_mode_flags(self):
        if self.mode == ParameterizationMode.DIRECT and self.view_conditioning:
            raise ValueError("View conditioning requires the latent (decoder) parameterization")
        return self


class LossWeights(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lambda_kl: float = 0.001
    lambda_tv: float = 0.01
    lambda_beta: float = 0.1
    eps_beta: float = 1e-5
    eps_tv: float = 1e-5

    @field_validator("lambda_kl", "lambda_tv", "lambda_beta", "eps_beta", "eps_tv")
    @classmethod
    def validate_non_negative(cls, v):
        if v < 0:
            raise ValueError("Loss weights must be non-negative")
        return v


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    batch_size: int = 16
    pixels_per_image: int = 128 * 128
    iterations: int = 2000
    seed: int = 0
    precision: Precision = Precision.FLOAT32
    step_count: int = 128

    learning_rate: float = Field(1e-4, description="network weights and per-frame latents")
    volume_learning_rate: float = Field(
        1e-2, description="direct-mode template and warp tensors; defaults to 1e-2, above the 1e-4 base rate"
    )
    background_learning_rate: float = Field(1e-1, description="learned background images")
    color_learning_rate: float = Field(1e-3, description="per-camera gain and bias")
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    priors: bool = True
    background: BackgroundMode = BackgroundMode.KNOWN
    learn_color: bool = True
    background_init_frames: int = 8

    frames: Optional[List[int]] = None
    checkpoint_every: int = 500
    log_every: int = 50

    @field_validator("batch_size", "pixels_per_image", "step_count", "checkpoint_every", "log_every",
                     "background_init_frames")
    @classmethod
    def validate_positive(cls, v):
        if v <= 0:
            raise ValueError("Count must be positive")
        return v

    @field_validator("iterations")
    @classmethod
    def validate_iterations(cls, v):
        if v < 0:
            raise ValueError("Iteration count cannot be negative")
        return v

    @field_validator("learning_rate", "volume_learning_rate", "background_learning_rate",
                     "color_learning_rate", "adam_eps")
    @classmethod
    def validate_rates(cls, v):
        if v < 0:
            raise ValueError("Learning rates must be non-negative")
        return v

    @field_validator("beta1", "beta2")
    @classmethod
    def validate_betas(cls, v):
        if not 0 <= v < 1:
            raise ValueError("Adam decay rates must lie in [0, 1)")
        return v


class RenderConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    step_count: int = 128

    @field_validator("step_count")
    @classmethod
    def validate_step_count(cls, v):
        if v <= 0:
            raise ValueError("Step count must be positive")
        return v


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model: ModelConfig = ModelConfig()
    loss: LossWeights = LossWeights()
    train: TrainConfig = TrainConfig()
    render: RenderConfig = RenderConfig()


def load_run_config(path: Optional[Path] = None, overrides: Sequence[str] = ()) -> RunConfig:
    """Load a JSON run config (or defaults) and apply dotted `key=value` overrides"""
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read config file {path}: {e}")
        if not isinstance(data, dict):
            raise ConfigError(f"Config file {path} must hold a JSON object")
    for override in overrides:
        apply_override(data, override)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid run config: {e}")


def apply_override(data: Dict[str, Any], override: str) -> None:
    """Set `section.key=value` inside a nested config dict; the value is parsed as JSON when possible"""
    if "=" not in override:
        raise ConfigError(f"Override '{override}' must have the form section.key=value")
    key, raw = override.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) != 2:
        raise ConfigError(f"Override key '{key}' must name a section and a field")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    data.setdefault(parts[0], {})
    if not isinstance(data[parts[0]], dict):
        raise ConfigError(f"Config section '{parts[0]}' is not an object")
    data[parts[0]][parts[1]] = value


def dump_run_config(config: RunConfig, path: Path) -> None:
    Path(path).write_text(json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True) + "\n")
