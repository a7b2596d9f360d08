"""Black-box genetic adversarial attack on probability-vector classifiers.

The attacked classifier is reached only through a handle mapping a batch of
(n, H, W) images in [0, 1] to (n, C) class probabilities. Genomes are raw
pixel intensities on the 0-255 scale; the fitness of a candidate is

    w0 * p_adv - w1 * rmse / 255

where p_adv is the probability of the target class (targeted mode) or of the
most likely wrong class (untargeted mode). The returned adversarial image is
rounded to whole pixel values and its scores are recomputed after rounding.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import evolve
from .errors import EvaluationError, InvalidArgument
from .evolve import GaConfig
from .mnist import ImageTensor, write_idx_images, write_idx_labels

ClassifierHandle = Callable[[np.ndarray], np.ndarray]
MODES = ("targeted", "untargeted")
PIXEL_MAX = 255.0


class CountingClassifier:
    """Wraps a classifier handle and counts calls and scored images."""

    def __init__(self, handle: ClassifierHandle):
        self._handle = handle
        self._lock = threading.Lock()
        self.calls = 0
        self.images = 0

    def __call__(self, images: np.ndarray) -> np.ndarray:
        with self._lock:
            self.calls += 1
            self.images += len(images)
        try:
            probs = np.asarray(self._handle(images), dtype=float)
        except EvaluationError:
            raise
        except Exception as exc:
            raise EvaluationError(f"classifier failed: {exc}") from exc
        if probs.ndim != 2 or probs.shape[0] != len(images):
            raise EvaluationError(f"classifier returned shape {probs.shape} for {len(images)} images")
        return probs


def default_attack_ga(seed: int = 0, workers: int = 1) -> GaConfig:
    """Population 200, at most 500 generations, pixel genomes in [0, 255]."""
    return GaConfig(
        population_size=200,
        elite_k=100,
        mutation_rate=0.5,
        mutation_fraction=0.1,
        mutation_sigma=1.0,
        max_iters=500,
        stagnation_window=20,
        lower=0.0,
        upper=PIXEL_MAX,
        genome_length=784,
        seed=seed,
        workers=workers,
    )


@dataclass(frozen=True)
class AttackConfig:
    classifier: ClassifierHandle = field(repr=False)
    truth: int
    target_class: int | None = None
    num_classes: int = 2
    w0: float = 1.0
    w1: float = 1.0
    mode: str = "targeted"
    ga: GaConfig = field(default_factory=default_attack_ga)

    def __post_init__(self):
        if self.w0 < 0 or self.w1 < 0:
            raise InvalidArgument("fitness weights must be non-negative")
        if self.mode not in MODES:
            raise InvalidArgument(f"unknown attack mode {self.mode!r}")
        if self.num_classes < 2:
            raise InvalidArgument("need at least two classes")
        if not 0 <= self.truth < self.num_classes:
            raise InvalidArgument(f"truth label {self.truth} outside [0, {self.num_classes})")
        if self.mode == "targeted":
            target = (self.truth + 1) % self.num_classes if self.target_class is None else int(self.target_class)
            if target == self.truth:
                raise InvalidArgument("target class equals the true label")
            if not 0 <= target < self.num_classes:
                raise InvalidArgument(f"target class {target} outside [0, {self.num_classes})")
            object.__setattr__(self, "target_class", target)
        elif self.target_class is not None:
            raise InvalidArgument("untargeted attacks take no target class")


@dataclass(frozen=True, eq=False)
class AdversarialResult:
    adversarial: ImageTensor
    seed_image: ImageTensor
    fitness: float
    p_adv: float
    rmse: float
    avg_pixel_perturbation: float
    generations_used: int
    success: bool
    truth: int
    target_class: int | None
    predicted: int
    classifier_calls: int
    images_scored: int
    w0: float
    w1: float

    def report_row(self) -> dict:
        return {
            "truth": self.truth,
            "target_class": self.target_class,
            "predicted": self.predicted,
            "success": self.success,
            "fitness": self.fitness,
            "p_adv": self.p_adv,
            "rmse": self.rmse,
            "avg_pixel_perturbation": self.avg_pixel_perturbation,
            "generations_used": self.generations_used,
            "classifier_calls": self.classifier_calls,
            "images_scored": self.images_scored,
        }


def _pixels(image) -> np.ndarray:
    """Image as float pixels on the 0-255 scale."""
    if isinstance(image, ImageTensor):
        return image.to_bytes_scale()
    return np.asarray(image, dtype=float)


def rmse(a, b) -> float:
    """Root mean squared pixel difference on the 0-255 scale."""
    x, y = _pixels(a), _pixels(b)
    if x.shape != y.shape:
        raise InvalidArgument(f"image shapes differ: {x.shape} vs {y.shape}")
    return float(np.sqrt(np.mean((x - y) ** 2)))


def perturbation_stats(seed_image, adversarial) -> float:
    """Mean absolute pixel change as a fraction of 255."""
    x, y = _pixels(seed_image), _pixels(adversarial)
    if x.shape != y.shape:
        raise InvalidArgument(f"image shapes differ: {x.shape} vs {y.shape}")
    return float(np.mean(np.abs(x - y)) / PIXEL_MAX)


def _adv_probability(probs: np.ndarray, config: AttackConfig) -> np.ndarray:
    if config.mode == "targeted":
        return probs[:, config.target_class]
    wrong = probs.copy()
    wrong[:, config.truth] = -np.inf
    return wrong.max(axis=1)


def _batch_scores(pixels: np.ndarray, seed_pixels: np.ndarray, config: AttackConfig, classifier):
    """(fitness, p_adv, rmse, probs) for (n, H, W) candidates on the 0-255 scale."""
    probs = classifier(pixels / PIXEL_MAX)
    p_adv = _adv_probability(probs, config)
    err = np.sqrt(np.mean((pixels - seed_pixels) ** 2, axis=(1, 2)))
    return config.w0 * p_adv - config.w1 * err / PIXEL_MAX, p_adv, err, probs


def fitness(candidate, config: AttackConfig, seed_image) -> float:
    cand = _pixels(candidate)
    f, _, _, _ = _batch_scores(cand[None], _pixels(seed_image)[None], config, config.classifier)
    return float(f[0])


def _is_success(predicted: int, config: AttackConfig) -> bool:
    if config.mode == "targeted":
        return predicted == config.target_class
    return predicted != config.truth


def generate(seed_image: ImageTensor, config: AttackConfig) -> AdversarialResult:
    """Evolve an adversarial version of ``seed_image``.

    The population starts uniform over [0, 255] per pixel. The best genome is
    rounded to integer pixels before scoring, so the stored fields are
    exactly those of the returned image.
    """
    seed_px = _pixels(seed_image)
    shape = seed_px.shape
    ga = config.ga
    if ga.genome_length != seed_px.size:
        ga = replace(ga, genome_length=seed_px.size)
    classifier = CountingClassifier(config.classifier)

    def fitness_fn(genomes: np.ndarray) -> np.ndarray:
        f, _, _, _ = _batch_scores(genomes.reshape((-1,) + shape), seed_px[None], config, classifier)
        return f

    result = evolve.run(ga, fitness_fn, init_kind="uniform_bounds")
    final = np.clip(np.rint(result.best.genome), 0.0, PIXEL_MAX).reshape(shape)
    f, p_adv, err, probs = _batch_scores(final[None], seed_px[None], config, classifier)
    predicted = int(np.argmax(probs[0]))
    adversarial = ImageTensor(final / PIXEL_MAX)
    seed_tensor = seed_image if isinstance(seed_image, ImageTensor) else ImageTensor(seed_px / PIXEL_MAX)
    return AdversarialResult(
        adversarial=adversarial,
        seed_image=seed_tensor,
        fitness=float(f[0]),
        p_adv=float(p_adv[0]),
        rmse=float(err[0]),
        avg_pixel_perturbation=perturbation_stats(seed_px, final),
        generations_used=result.generations,
        success=_is_success(predicted, config),
        truth=config.truth,
        target_class=config.target_class,
        predicted=predicted,
        classifier_calls=classifier.calls,
        images_scored=classifier.images,
        w0=config.w0,
        w1=config.w1,
    )


def adversarial_accuracy(results: Sequence[AdversarialResult]) -> float:
    """Fraction of adversarial images the classifier still labels correctly."""
    if not results:
        raise InvalidArgument("no attack results")
    return sum(r.predicted == r.truth for r in results) / len(results)


def save_adversarial_set(results: Sequence[AdversarialResult], directory, prefix: str = "adversarial") -> list[Path]:
    """Write images and true labels as IDX files plus a JSONL sidecar, one row per attack."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    images = out / f"{prefix}-images-idx3-ubyte"
    labels = out / f"{prefix}-labels-idx1-ubyte"
    sidecar = out / f"{prefix}.jsonl"
    images.write_bytes(write_idx_images([r.adversarial for r in results]))
    labels.write_bytes(write_idx_labels([r.truth for r in results]))
    sidecar.write_text("".join(json.dumps(r.report_row(), sort_keys=True) + "\n" for r in results))
    return [images, labels, sidecar]
