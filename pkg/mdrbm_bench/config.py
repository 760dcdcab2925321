"""Configuration classes for training runs and noise-robustness experiments."""

import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from typing_extensions import Self

from .errors import ConfigurationError

DATA_DIR_ENV = "MDRBM_DATA_DIR"

ModelKind = Literal["drbm", "drbm+elm", "mdrbm", "4nn"]
Theta0Source = Literal["random", "gbrbm"]

PAPER_NOISE_GRID = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]


class AdamConfig(BaseModel):
    """Hyperparameters of the Adam optimizer."""

    learning_rate: float = Field(1e-3, gt=0, description="Step size")
    beta1: float = Field(0.9, ge=0, lt=1, description="First-moment decay")
    beta2: float = Field(0.999, ge=0, lt=1, description="Second-moment decay")
    epsilon: float = Field(1e-8, gt=0, description="Denominator guard")


class TrainConfig(BaseModel):
    """Mini-batch training settings shared by every model."""

    epochs: int = Field(300, ge=0, description="Number of passes over the training data")
    batch_size: int = Field(100, ge=1, description="Mini-batch size")
    optimizer: AdamConfig = Field(default_factory=AdamConfig)
    evaluate_every: int = Field(1, ge=1, description="Evaluate held-out accuracy every this many epochs")


class SampleConfig(BaseModel):
    """Number of PELM samples per input during learning and inference."""

    s_train: int = Field(5, ge=1, description="Samples per datum for gradient estimation")
    s_infer: int = Field(50, ge=1, description="Samples per input for class-probability estimation")


class GbrbmConfig(BaseModel):
    """Contrastive-divergence pretraining settings for the (G) setting."""

    epochs: int = Field(100, ge=0, description="Pretraining epochs")
    batch_size: Optional[int] = Field(None, ge=1, description="Mini-batch size; defaults to the training batch size")
    k: int = Field(1, ge=1, description="Gibbs steps per CD estimate")
    optimizer: AdamConfig = Field(default_factory=AdamConfig)


class NoiseConfig(BaseModel):
    """Additive white Gaussian noise sweep."""

    grid: List[float] = Field(default_factory=lambda: list(PAPER_NOISE_GRID), description="Noise standard deviations")
    repeats: int = Field(5, ge=1, description="Independent noise draws per level")
    before_standardize: bool = Field(False, description="Add noise to raw inputs instead of standardized ones")

    @field_validator("grid")
    @classmethod
    def _check_grid(cls, grid: List[float]) -> List[float]:
        if not grid:
            raise ValueError("noise grid must not be empty")
        if any(not (s >= 0 and s < float("inf")) for s in grid):
            raise ValueError("noise levels must be finite and nonnegative")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("noise grid must be strictly ascending")
        return grid


class DatasetSpec(BaseModel):
    """Where a dataset lives and how much of it an experiment uses."""

    name: str = Field(description="Dataset name used in reports")
    format: Literal["idx", "cifar10", "csv"] = Field(description="On-disk format")
    train_paths: List[str] = Field(
        default_factory=list,
        description="idx: [images, labels]; cifar10: batch files; csv: files, pooled when test_paths is empty",
    )
    test_paths: List[str] = Field(default_factory=list, description="Test files in the same layout as train_paths")
    n_train: int = Field(ge=1, description="Training set size")
    n_test: int = Field(ge=1, description="Test set size")
    stratified: bool = Field(False, description="Draw per-class stratified subsets")
    n_classes: Optional[int] = Field(None, ge=2, description="Number of classes if not inferred from labels")
    label_column: str = Field("class", description="Label column (csv only)")
    delimiter: str = Field(",", description="Field delimiter (csv only)")

    def resolve(self, path: str) -> Path:
        """Resolve a dataset path against the data directory."""
        candidate = Path(path).expanduser()
        if candidate.is_absolute():
            return candidate
        return get_data_dir() / candidate

    def resolved_train_paths(self) -> List[Path]:
        return [self.resolve(p) for p in self.train_paths]

    def resolved_test_paths(self) -> List[Path]:
        return [self.resolve(p) for p in self.test_paths]


class ModelSpec(BaseModel):
    """One row of the model matrix."""

    kind: ModelKind = Field(description="Model family")
    theta0: Optional[Theta0Source] = Field(None, description="Source of the untrained layer parameters")

    @model_validator(mode="after")
    def _check_combination(self) -> Self:
        if self.kind in ("drbm", "4nn") and self.theta0 is not None:
            raise ValueError(f"model kind '{self.kind}' has no untrained layer; theta0 must be omitted")
        if self.kind in ("drbm+elm", "mdrbm") and self.theta0 is None:
            raise ValueError(f"model kind '{self.kind}' requires theta0 ('random' or 'gbrbm')")
        return self

    @property
    def label(self) -> str:
        """Report label, e.g. ``MDRBM(G)``."""
        base = {"drbm": "DRBM", "drbm+elm": "DRBM+ELM", "mdrbm": "MDRBM", "4nn": "4NN"}[self.kind]
        if self.theta0 is None:
            return base
        return f"{base}({'R' if self.theta0 == 'random' else 'G'})"


def default_models() -> List[ModelSpec]:
    """The five-model matrix plus the feed-forward baseline."""
    return [
        ModelSpec(kind="drbm"),
        ModelSpec(kind="drbm+elm", theta0="random"),
        ModelSpec(kind="drbm+elm", theta0="gbrbm"),
        ModelSpec(kind="mdrbm", theta0="random"),
        ModelSpec(kind="mdrbm", theta0="gbrbm"),
        ModelSpec(kind="4nn"),
    ]


class ExperimentConfig(BaseModel):
    """A complete noise-robustness experiment."""

    name: str = Field(description="Experiment name")
    dataset: DatasetSpec
    models: List[ModelSpec] = Field(default_factory=default_models)
    hidden_pelm: int = Field(500, ge=1, description="Width of the untrained layer (or first 4NN hidden layer)")
    hidden: int = Field(500, ge=1, description="Width of the DRBM hidden layer (or second 4NN hidden layer)")
    training: TrainConfig = Field(default_factory=TrainConfig)
    gbrbm: GbrbmConfig = Field(default_factory=GbrbmConfig)
    sampling: SampleConfig = Field(default_factory=SampleConfig)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    seed: int = Field(0, ge=0, description="Root seed")
    data_seed: int = Field(0, ge=0, description="Seed for the fixed train/test subsets")
    repeats: int = Field(5, ge=1, description="Independent training runs per model")

    def validate_config(self) -> None:
        """Validate that every referenced file exists and the matrix is usable."""
        if not self.models:
            raise ConfigurationError("at least one model must be configured")
        if not self.dataset.train_paths:
            raise ConfigurationError(f"dataset '{self.dataset.name}' has no training files")
        if self.dataset.format == "idx":
            for paths in (self.dataset.train_paths, self.dataset.test_paths):
                if len(paths) != 2:
                    raise ConfigurationError("idx datasets need exactly [images, labels] for train and test")
        if self.dataset.format != "csv" and not self.dataset.test_paths:
            raise ConfigurationError(f"dataset '{self.dataset.name}' has no test files")
        missing = [
            str(p)
            for p in self.dataset.resolved_train_paths() + self.dataset.resolved_test_paths()
            if not p.exists()
        ]
        if missing:
            raise ConfigurationError(f"dataset files not found: {', '.join(missing)}")

    def gbrbm_batch_size(self) -> int:
        return self.gbrbm.batch_size or self.training.batch_size

    def config_hash(self) -> str:
        """Stable hash of the full configuration."""
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def with_overrides(self, **overrides: Any) -> "ExperimentConfig":
        """Return a copy with command-line style overrides applied.

        Recognized keys: ``epochs``, ``batch_size``, ``evaluate_every``, ``s_train``, ``s_infer``, ``noise_grid``,
        ``repeats``, ``seed``, ``models``, ``before_standardize``. ``None`` values are ignored.
        """
        data = self.model_dump()
        routes = {
            "epochs": ("training", "epochs"),
            "batch_size": ("training", "batch_size"),
            "evaluate_every": ("training", "evaluate_every"),
            "s_train": ("sampling", "s_train"),
            "s_infer": ("sampling", "s_infer"),
            "noise_grid": ("noise", "grid"),
            "before_standardize": ("noise", "before_standardize"),
        }
        for key, value in overrides.items():
            if value is None:
                continue
            if key in routes:
                section, field_name = routes[key]
                data[section][field_name] = value
            elif key in ("repeats", "seed"):
                data[key] = value
                if key == "repeats":
                    data["noise"]["repeats"] = value
            elif key == "models":
                data["models"] = [m.model_dump() if isinstance(m, ModelSpec) else m for m in value]
            else:
                raise ConfigurationError(f"unknown override '{key}'")
        try:
            return ExperimentConfig(**data)
        except ValidationError as e:
            raise ConfigurationError(f"invalid override: {e}") from e

    @classmethod
    def load_from_file(cls, config_path: Union[str, Path]) -> "ExperimentConfig":
        """Load an experiment configuration from a JSON file.

        Args:
            config_path: Path to the config file

        Returns:
            ExperimentConfig instance
        """
        config_path = Path(config_path)
        if not config_path.exists():
            raise ConfigurationError(f"config file not found: {config_path}")
        try:
            with open(config_path, "r") as f:
                data = json.load(f)
            return cls(**data)
        except (json.JSONDecodeError, ValidationError, TypeError) as e:
            raise ConfigurationError(f"Failed to load config from {config_path}: {e}") from e

    def save_to_file(self, config_path: Union[str, Path]) -> None:
        """Save the configuration to a JSON file."""
        config_path = Path(config_path)
        config_path.parent.mkdir(parents=True, exist_ok=True)
        with open(config_path, "w") as f:
            json.dump(self.model_dump(mode="json"), f, indent=2)

    @classmethod
    def preset(cls, name: str) -> "ExperimentConfig":
        """Build the published setup for ``mnist``, ``fmnist``, ``ulc`` or ``cifar10``."""
        if name not in PRESETS:
            raise ConfigurationError(f"unknown dataset preset '{name}'; choose from {', '.join(sorted(PRESETS))}")
        return cls(**json.loads(json.dumps(PRESETS[name])))


def get_data_dir() -> Path:
    """Get the dataset directory, honouring the ``MDRBM_DATA_DIR`` override."""
    override = os.environ.get(DATA_DIR_ENV)
    if override:
        return Path(override).expanduser()
    return Path.home() / ".cache" / "mdrbm-bench" / "data"


PRESETS: Dict[str, Dict[str, Any]] = {
    "mnist": {
        "name": "mnist",
        "dataset": {
            "name": "MNIST",
            "format": "idx",
            "train_paths": ["mnist/train-images-idx3-ubyte.gz", "mnist/train-labels-idx1-ubyte.gz"],
            "test_paths": ["mnist/t10k-images-idx3-ubyte.gz", "mnist/t10k-labels-idx1-ubyte.gz"],
            "n_train": 3000,
            "n_test": 10000,
            "n_classes": 10,
        },
        "hidden_pelm": 500,
        "hidden": 500,
        "training": {"batch_size": 100, "evaluate_every": 10},
    },
    "fmnist": {
        "name": "fmnist",
        "dataset": {
            "name": "F-MNIST",
            "format": "idx",
            "train_paths": ["fmnist/train-images-idx3-ubyte.gz", "fmnist/train-labels-idx1-ubyte.gz"],
            "test_paths": ["fmnist/t10k-images-idx3-ubyte.gz", "fmnist/t10k-labels-idx1-ubyte.gz"],
            "n_train": 6000,
            "n_test": 10000,
            "n_classes": 10,
        },
        "hidden_pelm": 500,
        "hidden": 500,
        "training": {"batch_size": 100, "evaluate_every": 10},
    },
    "ulc": {
        "name": "ulc",
        "dataset": {
            "name": "ULC",
            "format": "csv",
            "train_paths": ["ulc/training.csv", "ulc/testing.csv"],
            "test_paths": [],
            "n_train": 472,
            "n_test": 203,
            "label_column": "class",
        },
        "hidden_pelm": 100,
        "hidden": 100,
        "training": {"batch_size": 20},
    },
    "cifar10": {
        "name": "cifar10",
        "dataset": {
            "name": "CIFAR-10",
            "format": "cifar10",
            "train_paths": [f"cifar-10-batches-bin/data_batch_{i}.bin" for i in range(1, 6)],
            "test_paths": ["cifar-10-batches-bin/test_batch.bin"],
            "n_train": 3000,
            "n_test": 10000,
            "n_classes": 10,
        },
        "hidden_pelm": 500,
        "hidden": 500,
        "training": {"batch_size": 100, "evaluate_every": 10},
    },
}
