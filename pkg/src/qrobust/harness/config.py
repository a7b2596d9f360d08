"""Experiment configuration, loaded from a single YAML file.

Schema (every key optional except the dataset paths)::

    seed: 0                        # master seed; sub-seeds are derived per task
    output_dir: runs/default
    workers: 1                     # parallel fitness evaluation threads
    data:
      train_images: data/mnist/train-images-idx3-ubyte.gz
      train_labels: data/mnist/train-labels-idx1-ubyte.gz
      test_images:  data/mnist/t10k-images-idx3-ubyte.gz
      test_labels:  data/mnist/t10k-labels-idx1-ubyte.gz
      digits: [0, 1]
      train_size: 1000             # split evenly across the digits
      test_size: 200
    classifier: pca_dra            # or cqc
    pca_dra: {pca_kind: linear, pca_dim: 2, kernel_gamma: null, layers: 7,
              ansatz: alternating, parameter_groups: null}
    cqc: {grids: [[7, 7], [3, 3]], depth: 5, field_radius: 1, head: normalize}
    noise: noiseless               # noise preset used by eval and attack
    shots: null                    # shot-mode evaluation when set
    train_ga: {population_size: 100, elite_k: 50, mutation_rate: 1.0,
               mutation_fraction: 0.2, mutation_sigma: 0.1, max_iters: 300,
               stagnation_window: 50, bound: 1.0}
    attack: {num_seeds: 50, w0: 1.0, w1: 1.0, mode: targeted,
             ga: {population_size: 200, elite_k: 100, mutation_rate: 0.5,
                  mutation_fraction: 0.1, mutation_sigma: 10.0, max_iters: 500,
                  stagnation_window: 20}}
    certify: {level: 0.9, depolarization: 0.1, epsilons: [0.0, 0.05, ...]}
    sweep: {channels: [depolarizing, bit_flip, phase_flip],
            grid: [0.0, 0.01, 0.02, 0.05, 0.1]}

Relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..errors import ConfigError
from ..evolve import GaConfig
from ..qsim import CHANNEL_KINDS, PRESETS


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DataConfig(_Strict):
    train_images: Path
    train_labels: Path
    test_images: Path
    test_labels: Path
    digits: list[int] = Field(default_factory=lambda: [0, 1])
    train_size: int = Field(1000, ge=1)
    test_size: int = Field(200, ge=1)

    @field_validator("digits")
    @classmethod
    def _digits(cls, v: list[int]) -> list[int]:
        if len(v) < 2 or len(set(v)) != len(v) or any(not 0 <= d <= 9 for d in v):
            raise ValueError("digits must be at least two distinct values in 0..9")
        if len(v) > 4:
            raise ValueError("at most four classes are supported")
        return v


class PcaDraSettings(_Strict):
    pca_kind: Literal["linear", "kernel_rbf"] = "linear"
    pca_dim: int = Field(2, ge=1)
    kernel_gamma: Optional[float] = Field(None, gt=0)
    layers: int = Field(7, ge=1)
    ansatz: Literal["alternating", "zy_pair"] = "alternating"
    parameter_groups: Optional[int] = Field(None, ge=1)


class CqcSettings(_Strict):
    grids: list[tuple[int, int]] = Field(default_factory=lambda: [(7, 7), (3, 3)])
    depth: int = Field(5, ge=1)
    field_radius: int = Field(1, ge=0)
    head: Literal["normalize", "softmax_fc"] = "normalize"


class GaSettings(_Strict):
    population_size: int = Field(100, ge=2)
    elite_k: int = Field(50, ge=1)
    mutation_rate: float = Field(1.0, ge=0, le=1)
    mutation_fraction: float = Field(0.2, ge=0, le=1)
    mutation_sigma: float = Field(0.1, ge=0)
    max_iters: int = Field(300, ge=1)
    stagnation_window: int = Field(50, ge=1)
    bound: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _k(self):
        if self.elite_k > self.population_size:
            raise ValueError("elite_k must not exceed population_size")
        return self

    def to_ga(self, genome_length: int, seed: int, workers: int, lower=None, upper=None) -> GaConfig:
        return GaConfig(
            population_size=self.population_size,
            elite_k=self.elite_k,
            mutation_rate=self.mutation_rate,
            mutation_fraction=self.mutation_fraction,
            mutation_sigma=self.mutation_sigma,
            max_iters=self.max_iters,
            stagnation_window=self.stagnation_window,
            lower=-self.bound if lower is None else lower,
            upper=self.bound if upper is None else upper,
            genome_length=genome_length,
            seed=seed,
            workers=workers,
        )


def _attack_ga() -> GaSettings:
    return GaSettings(population_size=200, elite_k=100, mutation_rate=0.5, mutation_fraction=0.1,
                      mutation_sigma=10.0, max_iters=500, stagnation_window=20, bound=255.0)


class AttackSettings(_Strict):
    num_seeds: int = Field(50, ge=1)
    w0: float = Field(1.0, ge=0)
    w1: float = Field(1.0, ge=0)
    mode: Literal["targeted", "untargeted"] = "targeted"
    ga: GaSettings = Field(default_factory=_attack_ga)


class CertifySettings(_Strict):
    level: float = Field(0.9, gt=0, lt=1)
    depolarization: float = Field(0.1, ge=0, lt=1)
    epsilons: list[float] = Field(default_factory=lambda: [round(0.05 * i, 2) for i in range(11)])

    @field_validator("epsilons")
    @classmethod
    def _eps(cls, v: list[float]) -> list[float]:
        if not v or any(not 0 <= e <= 1 for e in v):
            raise ValueError("epsilons must be a non-empty list in [0, 1]")
        return sorted(v)


class SweepSettings(_Strict):
    channels: list[str] = Field(default_factory=lambda: list(CHANNEL_KINDS))
    grid: list[float] = Field(default_factory=lambda: [0.0, 0.01, 0.02, 0.05, 0.1])

    @field_validator("channels")
    @classmethod
    def _channels(cls, v: list[str]) -> list[str]:
        bad = [c for c in v if c not in CHANNEL_KINDS]
        if bad:
            raise ValueError(f"unknown channel kinds {bad}")
        return v

    @field_validator("grid")
    @classmethod
    def _grid(cls, v: list[float]) -> list[float]:
        if not v or any(not 0 <= p <= 1 for p in v):
            raise ValueError("grid probabilities must lie in [0, 1]")
        return sorted(v)


class ExperimentConfig(_Strict):
    seed: int = Field(0, ge=0)
    output_dir: Path = Path("runs/default")
    workers: int = Field(1, ge=1)
    data: DataConfig
    classifier: Literal["pca_dra", "cqc"] = "pca_dra"
    pca_dra: PcaDraSettings = Field(default_factory=PcaDraSettings)
    cqc: CqcSettings = Field(default_factory=CqcSettings)
    noise: str = "noiseless"
    shots: Optional[int] = Field(None, ge=1)
    train_ga: GaSettings = Field(default_factory=GaSettings)
    attack: AttackSettings = Field(default_factory=AttackSettings)
    certify: CertifySettings = Field(default_factory=CertifySettings)
    sweep: SweepSettings = Field(default_factory=SweepSettings)

    @field_validator("noise")
    @classmethod
    def _noise(cls, v: str) -> str:
        if v not in PRESETS:
            raise ValueError(f"unknown noise preset {v!r}; known: {sorted(PRESETS)}")
        return v

    @property
    def num_classes(self) -> int:
        return len(self.data.digits)

    def snapshot(self) -> dict:
        """JSON-ready view for reports.

        Output directory and worker count are left out and dataset paths are
        reduced to file names, so reports do not depend on where or how fast
        a run happened.
        """
        data = self.model_dump(mode="json", exclude={"output_dir", "workers"})
        for name in ("train_images", "train_labels", "test_images", "test_labels"):
            data["data"][name] = Path(data["data"][name]).name
        return data


def _resolve(path: Path, base: Path) -> Path:
    return path if path.is_absolute() else (base / path)


def from_mapping(raw: dict, base_dir: Path | None = None, check_files: bool = True, **overrides) -> ExperimentConfig:
    """Validate a raw mapping; ``overrides`` with value None are ignored."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    raw = dict(raw)
    for key, value in overrides.items():
        if value is not None:
            raw[key] = value
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {exc}") from None
    base = base_dir or Path.cwd()
    data = cfg.data.model_copy(update={
        name: _resolve(getattr(cfg.data, name), base)
        for name in ("train_images", "train_labels", "test_images", "test_labels")
    })
    cfg = cfg.model_copy(update={"data": data, "output_dir": _resolve(cfg.output_dir, base)})
    if check_files:
        missing = [str(getattr(data, n)) for n in ("train_images", "train_labels", "test_images", "test_labels")
                   if not getattr(data, n).is_file()]
        if missing:
            raise ConfigError(f"dataset files not found: {', '.join(missing)}")
    return cfg


def load(path, **overrides) -> ExperimentConfig:
    p = Path(path)
    try:
        raw = yaml.safe_load(p.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {p}: {exc}") from None
    return from_mapping(raw or {}, p.parent, **overrides)
