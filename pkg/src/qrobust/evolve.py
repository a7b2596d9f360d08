"""Genetic-algorithm engine over flat real-valued genomes.

Shared by classifier training and the adversarial attack. A generation is

    top-k selection -> uniform crossover back to N -> mutation -> evaluation

with the current best individual exempt from mutation, so the best fitness
never decreases. All randomness is drawn serially from a per-generation
stream derived from ``(seed, generation)``; only fitness evaluation is
parallel, over a fixed partition of the population, so the worker count never
changes results.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import EvaluationError, InvalidArgument

log = logging.getLogger(__name__)

FitnessFn = Callable[[np.ndarray], np.ndarray]
"""Maps an (n, genome_len) array to n fitness values (higher is better)."""


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 200
    elite_k: int = 100
    mutation_rate: float = 0.5
    mutation_fraction: float = 0.1
    mutation_sigma: float = 1.0
    max_iters: int = 500
    stagnation_window: int = 20
    lower: float | Sequence[float] = 0.0
    upper: float | Sequence[float] = 255.0
    genome_length: int = 784
    seed: int = 0
    workers: int = 1
    top_compare: int = 10

    def __post_init__(self):
        if self.population_size < 2:
            raise InvalidArgument("population_size must be at least 2")
        if not 1 <= self.elite_k <= self.population_size:
            raise InvalidArgument("elite_k must lie in [1, population_size]")
        for name in ("mutation_rate", "mutation_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidArgument(f"{name} must lie in [0, 1], got {v}")
        if self.mutation_sigma < 0:
            raise InvalidArgument("mutation_sigma must be non-negative")
        if self.max_iters < 1:
            raise InvalidArgument("max_iters must be at least 1")
        if self.stagnation_window < 1:
            raise InvalidArgument("stagnation_window must be at least 1")
        if self.genome_length < 1:
            raise InvalidArgument("genome_length must be at least 1")
        lo, hi = self.bounds()
        if np.any(lo > hi):
            raise InvalidArgument("genome lower bound exceeds upper bound")

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.broadcast_to(np.asarray(self.lower, dtype=float), (self.genome_length,))
        hi = np.broadcast_to(np.asarray(self.upper, dtype=float), (self.genome_length,))
        return lo, hi


@dataclass
class Individual:
    genome: np.ndarray
    fitness: float
    age: int = 0


@dataclass
class Population:
    genomes: np.ndarray
    fitness: np.ndarray | None = None
    ages: np.ndarray = field(default=None)

    def __post_init__(self):
        self.genomes = np.asarray(self.genomes, dtype=float)
        if self.ages is None:
            self.ages = np.zeros(len(self.genomes), dtype=np.int64)

    def __len__(self) -> int:
        return len(self.genomes)

    def individual(self, i: int) -> Individual:
        fit = float(self.fitness[i]) if self.fitness is not None else math.nan
        return Individual(self.genomes[i].copy(), fit, int(self.ages[i]))


@dataclass
class GaResult:
    best: Individual
    history: list[float]
    generations: int
    stopped_by: str
    evaluations: int
    log_rows: list[tuple[int, float, float, float]]


def generator(seed: int, generation: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFF, int(generation)])


def init_population(config: GaConfig, init_kind: str = "uniform_bounds", seeded_from=None) -> Population:
    """``uniform_bounds``: every gene uniform in its bounds.
    ``seeded_from``: the given genome plus N-1 Gaussian perturbations of it
    (scale ``mutation_sigma``), clipped to bounds.
    """
    rng = generator(config.seed, 0)
    lo, hi = config.bounds()
    n, g = config.population_size, config.genome_length
    if init_kind == "uniform_bounds":
        genomes = lo + (hi - lo) * rng.random((n, g))
    elif init_kind == "seeded_from":
        if seeded_from is None:
            raise InvalidArgument("seeded_from init requires a genome")
        base = np.asarray(seeded_from, dtype=float).reshape(g)
        genomes = base + config.mutation_sigma * rng.standard_normal((n, g))
        genomes[0] = base
        genomes = np.clip(genomes, lo, hi)
    else:
        raise InvalidArgument(f"unknown init kind {init_kind!r}")
    return Population(genomes)


EVAL_CHUNKS = 8
"""Populations are always scored in this many fixed slices, whatever the worker
count, so batched kernels see identical shapes in serial and parallel runs."""


def evaluate(population: Population, fitness_fn: FitnessFn, workers: int = 1) -> np.ndarray:
    genomes = population.genomes
    chunks = np.array_split(np.arange(len(genomes)), min(EVAL_CHUNKS, len(genomes)))

    def score(idx: np.ndarray) -> np.ndarray:
        return np.asarray(fitness_fn(genomes[idx]), dtype=float).reshape(-1)

    if workers <= 1:
        parts = [score(idx) for idx in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(score, chunks))
    scores = np.concatenate(parts)
    if scores.shape != (len(genomes),):
        raise EvaluationError(f"fitness returned shape {scores.shape}, expected ({len(genomes)},)")
    bad = np.flatnonzero(~np.isfinite(scores))
    if bad.size:
        i = int(bad[0])
        raise EvaluationError(f"non-finite fitness {scores[i]} for individual {i}", genome=genomes[i].copy())
    population.fitness = scores
    return scores


def rank(fitness: np.ndarray) -> np.ndarray:
    """Indices by descending fitness; ties keep lower index first."""
    return np.argsort(-np.asarray(fitness), kind="stable")


def top_candidates(population: Population, k: int, fitness_fn: FitnessFn | None = None):
    if k > len(population) or k < 1:
        raise InvalidArgument(f"k={k} outside [1, {len(population)}]")
    if population.fitness is None:
        if fitness_fn is None:
            raise InvalidArgument("population has not been evaluated")
        evaluate(population, fitness_fn)
    order = rank(population.fitness)[:k]
    chosen = Population(population.genomes[order].copy(), population.fitness[order].copy(), population.ages[order].copy())
    return chosen, chosen.fitness


def crossover(parents: Population, n: int, rng: np.random.Generator) -> Population:
    """Extend ``parents`` to ``n`` members with children from per-gene Bernoulli(0.5) swaps.

    Each pair is two distinct parents drawn uniformly; pairs are drawn
    independently. An odd surplus child is dropped.
    """
    k = len(parents)
    n_children = n - k
    if n_children <= 0:
        return Population(parents.genomes[:n].copy(), None, parents.ages[:n].copy())
    if k < 2:
        raise InvalidArgument("crossover needs at least two parents")
    n_pairs = (n_children + 1) // 2
    first = rng.integers(0, k, size=n_pairs)
    second = (first + rng.integers(1, k, size=n_pairs)) % k
    p0 = parents.genomes[first]
    p1 = parents.genomes[second]
    swap = rng.random(p0.shape) < 0.5
    c0 = np.where(swap, p1, p0)
    c1 = np.where(swap, p0, p1)
    children = np.empty((2 * n_pairs, p0.shape[1]))
    children[0::2] = c0
    children[1::2] = c1
    genomes = np.concatenate([parents.genomes, children[:n_children]])
    ages = np.concatenate([parents.ages + 1, np.zeros(n_children, dtype=np.int64)])
    return Population(genomes, None, ages)


def mutate(population: Population, config: GaConfig, rng: np.random.Generator, best_index: int = 0) -> Population:
    """Gaussian-perturb ``mutation_fraction`` of the genes of each individual
    with probability ``mutation_rate``; ``best_index`` is never touched."""
    genomes = population.genomes.copy()
    n, g = genomes.shape
    chosen = rng.random(n) < config.mutation_rate
    chosen[best_index] = False
    rows = np.flatnonzero(chosen)
    m = int(round(config.mutation_fraction * g))
    if rows.size and m > 0 and config.mutation_sigma > 0:
        keys = rng.random((rows.size, g))
        genes = np.argpartition(keys, m - 1, axis=1)[:, :m] if m < g else np.tile(np.arange(g), (rows.size, 1))
        noise = rng.normal(0.0, config.mutation_sigma, size=(rows.size, m))
        lo, hi = config.bounds()
        r = rows[:, None]
        genomes[r, genes] = np.clip(genomes[r, genes] + noise, lo[genes], hi[genes])
    fitness = None if rows.size else population.fitness
    return Population(genomes, fitness, population.ages.copy())


def _top_scores(fitness: np.ndarray, k: int) -> np.ndarray:
    return np.sort(fitness)[::-1][:k]


def run(
    config: GaConfig,
    fitness_fn: FitnessFn,
    init_kind: str = "uniform_bounds",
    seeded_from=None,
    callback: Callable[[int, np.ndarray], None] | None = None,
) -> GaResult:
    """Evolve until ``max_iters`` generations or until the top candidates have
    stayed unchanged for ``stagnation_window`` consecutive generations.

    Returns the best individual ever evaluated and the best-so-far history,
    one entry per generation (entry 0 is the initial population).
    """
    population = init_population(config, init_kind, seeded_from)
    evaluate(population, fitness_fn, config.workers)
    evaluations = len(population)
    top_n = min(config.top_compare, config.population_size)

    i = int(rank(population.fitness)[0])
    best = population.individual(i)
    history = [best.fitness]
    log_rows = [(0, best.fitness, float(population.fitness.mean()), float(population.fitness.std()))]
    stagnant = 0
    stopped_by = "max_iters"
    generation = 0
    for generation in range(1, config.max_iters + 1):
        rng = generator(config.seed, generation)
        previous_top = _top_scores(population.fitness, top_n)
        parents, _ = top_candidates(population, config.elite_k)
        offspring = crossover(parents, config.population_size, rng)
        offspring = mutate(offspring, config, rng, best_index=0)
        evaluate(offspring, fitness_fn, config.workers)
        evaluations += len(offspring)
        population = offspring

        i = int(rank(population.fitness)[0])
        if population.fitness[i] > best.fitness:
            best = population.individual(i)
        history.append(best.fitness)
        log_rows.append((generation, best.fitness, float(population.fitness.mean()), float(population.fitness.std())))
        if callback is not None:
            callback(generation, population.fitness)

        if np.array_equal(previous_top, _top_scores(population.fitness, top_n)):
            stagnant += 1
            if stagnant >= config.stagnation_window:
                stopped_by = "stagnation"
                break
        else:
            stagnant = 0

    log.debug("GA stopped after %d generations (%s), best %.6g", generation, stopped_by, best.fitness)
    return GaResult(best, history, generation, stopped_by, evaluations, log_rows)


def format_log(rows: Sequence[tuple[int, float, float, float]]) -> str:
    """Tab-separated generation log: generation, best, mean, std."""
    lines = ["generation\tbest\tmean\tstd"]
    lines += [f"{g}\t{b!r}\t{m!r}\t{s!r}" for g, b, m, s in rows]
    return "\n".join(lines) + "\n"
