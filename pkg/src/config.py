"""
Typed configuration for search experiments.

Experiment files are YAML documents validated by the pydantic models below.
Presets ship in ``src/presets`` and resolve to fully explicit configs.
"""

import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError

logger = logging.getLogger(__name__)

PRESET_DIR = Path(__file__).parent / "presets"
SEED_DIR = Path(__file__).parent / "seeds"
FEATURE_TABLE_PATH = PRESET_DIR / "oracle_features.yaml"

PRESETS = {
    "desk": "desk.yaml",
    "paper-5.1": "paper-5.1.yaml",
    "paper-5.1-desk": "paper-5.1-desk.yaml",
    "paper-5.2": "paper-5.2.yaml",
    "paper-5.2-desk": "paper-5.2-desk.yaml",
}


def load_default_feature_weights() -> Dict[str, float]:
    """Read the checked-in oracle feature table."""
    data = yaml.safe_load(FEATURE_TABLE_PATH.read_text())
    return {str(name): float(weight) for name, weight in data["feature_weights"].items()}


class ModelConfig(BaseModel):
    """Model-level constants used to scale and count a genome."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    input_embedding_dim: int = Field(default=512, gt=0)
    vocab_size: int = Field(default=32768, gt=0)
    param_range: Tuple[int, int] = (59_100_000, 64_100_000)
    sequence_length: int = Field(default=16, gt=0)
    # a_i = width_quantum * max(1, round(d_i * scale))
    width_quantum: int = Field(default=16, gt=0)
    reference_relative_dim: int = Field(default=2, ge=1, le=10)
    scale_max: float = Field(default=64.0, gt=0.0)
    scale_iterations: int = Field(default=40, gt=0)

    @model_validator(mode="after")
    def check_param_range(self) -> "ModelConfig":
        low, high = self.param_range
        if not 0 < low < high:
            raise ValueError("param_range must satisfy 0 < min_params < max_params")
        return self

    @property
    def min_params(self) -> int:
        return self.param_range[0]

    @property
    def max_params(self) -> int:
        return self.param_range[1]


class ConstraintSettings(BaseModel):
    """Search-space constraints and sampling vocabulary switches."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    normalization_none: bool = False
    require_attend_to_encoder: bool = True
    require_residual_path: bool = True
    check_param_range: bool = True
    max_resamples: int = Field(default=1000, gt=0)


class ValidationConfig(ConstraintSettings):
    """Constraints bound to the model they are checked against."""

    model: ModelConfig = Field(default_factory=ModelConfig)

    @classmethod
    def unconstrained(cls, **overrides: Any) -> "ValidationConfig":
        """Every genome with in-range input indices passes."""
        values: Dict[str, Any] = {
            "require_attend_to_encoder": False,
            "require_residual_path": False,
            "check_param_range": False,
        }
        values.update(overrides)
        return cls(**values)


class OracleConfig(BaseModel):
    """Simulated learning-curve oracle settings."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    base_asymptote: float = -1.55
    initial_fitness: float = -3.0
    rate_mean: float = Field(default=0.15, gt=0.0)
    rate_spread: float = Field(default=0.2, ge=0.0)
    rate_asymptote_coupling: float = Field(default=0.5, ge=0.0)
    jitter: float = Field(default=0.01, ge=0.0)
    noise_scale: float = Field(default=0.0, ge=0.0)
    monotone: bool = True
    overfit_rate: float = Field(default=0.002, ge=0.0)
    seed: int = 0
    feature_weights: Dict[str, float] = Field(default_factory=load_default_feature_weights)

    @model_validator(mode="after")
    def check_start_below_asymptote(self) -> "OracleConfig":
        if self.initial_fitness >= self.base_asymptote:
            raise ValueError("initial_fitness must be below base_asymptote")
        return self


class SeedMode(str, Enum):
    TRANSFORMER_SEED = "transformer_seed"
    RANDOM = "random"


class FitnessModeKind(str, Enum):
    PDH = "pdh"
    FIXED_STEPS = "fixed_steps"


class FitnessMode(BaseModel):
    """PDH(schedule) or FIXED_STEPS(n)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: FitnessModeKind = FitnessModeKind.PDH
    step_increments: List[int] = Field(default_factory=lambda: [10, 10, 10], min_length=1)
    models_per_hurdle: int = Field(default=50, gt=0)
    fixed_steps: Optional[int] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def check_mode(self) -> "FitnessMode":
        if any(step <= 0 for step in self.step_increments):
            raise ValueError("step_increments must all be positive")
        if self.kind == FitnessModeKind.FIXED_STEPS and self.fixed_steps is None:
            raise ValueError("fixed_steps is required when kind is fixed_steps")
        return self

    @property
    def steps_per_full_evaluation(self) -> int:
        if self.kind == FitnessModeKind.FIXED_STEPS:
            return int(self.fixed_steps or 0)
        return sum(self.step_increments)


class ConfigSwitch(BaseModel):
    """A scheduled change applied once `at_models` child models were issued."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    at_models: int = Field(ge=0)
    mutation_rate: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    normalization_none: Optional[bool] = None


class SearchConfig(BaseModel):
    """Tournament-selection search settings."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    seed_mode: SeedMode = SeedMode.TRANSFORMER_SEED
    population_capacity: int = Field(default=100, gt=0)
    parent_subpop_size: int = Field(default=30, gt=0)
    kill_subpop_size: int = Field(default=30, gt=0)
    mutation_rate: float = Field(default=0.025, ge=0.0, le=1.0)
    switches: List[ConfigSwitch] = Field(default_factory=list)
    fitness_mode: FitnessMode = Field(default_factory=FitnessMode)
    total_models: Optional[int] = Field(default=None, ge=0)
    total_steps: Optional[int] = Field(default=None, ge=0)
    worker_count: int = Field(default=1, ge=1)
    seed: int = 0
    max_consecutive_failures: int = Field(default=10, gt=0)
    checkpoint_every: int = Field(default=50, gt=0)
    initial_counts_toward_first_hurdle: bool = False

    @model_validator(mode="after")
    def check_sizes_and_budget(self) -> "SearchConfig":
        for name in ("parent_subpop_size", "kill_subpop_size"):
            size = getattr(self, name)
            if size > self.population_capacity:
                raise ValueError(
                    f"{name} ({size}) exceeds population_capacity ({self.population_capacity})"
                )
        if (self.total_models is None) == (self.total_steps is None):
            raise ValueError("exactly one of total_models or total_steps must be set")
        return self


class AblationConfig(BaseModel):
    """Budget-equalised comparison of search setups."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    full_train_steps: int = Field(default=50, gt=0)
    arms: List[str] = Field(
        default_factory=lambda: [
            "pdh_seed",
            "pdh_random",
            "fixed_half",
            "fixed_increment",
            "fixed_max",
            "fixed_full",
        ]
    )

    @model_validator(mode="after")
    def check_reference_arm(self) -> "AblationConfig":
        if "pdh_seed" not in self.arms:
            raise ValueError("arms must include pdh_seed, whose consumption sets the step budget")
        return self


class ExperimentConfig(BaseModel):
    """Everything needed to reproduce a run."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = "custom"
    model: ModelConfig = Field(default_factory=ModelConfig)
    constraints: ConstraintSettings = Field(default_factory=ConstraintSettings)
    search: SearchConfig = Field(default_factory=lambda: SearchConfig(total_models=0))
    oracle: OracleConfig = Field(default_factory=OracleConfig)
    ablation: AblationConfig = Field(default_factory=AblationConfig)
    replications: int = Field(default=1, ge=1)
    output_dir: str = "runs/latest"

    def resolved(self) -> Dict[str, Any]:
        """Fully explicit form with every default filled in."""
        return self.model_dump(mode="json")

    def validation_config(self, normalization_none: Optional[bool] = None) -> ValidationConfig:
        settings = self.constraints.model_dump()
        if normalization_none is not None:
            settings["normalization_none"] = normalization_none
        return ValidationConfig(model=self.model, **settings)

    def with_overrides(
        self,
        seed: Optional[int] = None,
        workers: Optional[int] = None,
        output_dir: Optional[str] = None,
    ) -> "ExperimentConfig":
        """Apply command-line overrides, returning a new validated config."""
        search_updates: Dict[str, Any] = {}
        if seed is not None:
            search_updates["seed"] = seed
        if workers is not None:
            search_updates["worker_count"] = workers
        data = self.model_dump(mode="json")
        data["search"].update(search_updates)
        if output_dir is not None:
            data["output_dir"] = output_dir
        return parse_config(data)


def parse_config(data: Union[Dict[str, Any], None], source: str = "<config>") -> ExperimentConfig:
    """Validate a raw mapping; pydantic messages name the failing field."""
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: expected a mapping at the top level")
    try:
        return ExperimentConfig(**data)
    except ValidationError as exc:
        details = "; ".join(
            f"{'.'.join(str(part) for part in err['loc']) or '<root>'}: {err['msg']}"
            for err in exc.errors()
        )
        raise ConfigError(f"{source}: invalid config: {details}") from exc


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Load an experiment config from a YAML file."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    return parse_config(data, source=str(path))


def load_preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    logger.debug(f"Loading preset {name}")
    return load_config(PRESET_DIR / PRESETS[name])


def save_config(config: ExperimentConfig, path: Union[str, Path]) -> None:
    """Write the fully explicit config as YAML."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(config.resolved(), sort_keys=False))
