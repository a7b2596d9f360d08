import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qrobust import evolve
from qrobust.errors import EvaluationError, InvalidArgument
from qrobust.evolve import GaConfig, Population

seeds = st.integers(0, 2**40)


def small_config(**kw):
    base = dict(population_size=20, elite_k=10, mutation_rate=0.5, mutation_fraction=0.5, mutation_sigma=0.3,
                max_iters=30, stagnation_window=5, lower=-1.0, upper=1.0, genome_length=6, seed=0)
    base.update(kw)
    return GaConfig(**base)


def neg_norm(genomes):
    return -np.sum(genomes**2, axis=1)


def test_degenerate_bounds():
    pop = evolve.init_population(small_config(population_size=3, elite_k=1, lower=0.0, upper=0.0))
    np.testing.assert_array_equal(pop.genomes, np.zeros((3, 6)))


def test_init_is_seeded():
    a = evolve.init_population(small_config(seed=9))
    b = evolve.init_population(small_config(seed=9))
    c = evolve.init_population(small_config(seed=10))
    np.testing.assert_array_equal(a.genomes, b.genomes)
    assert not np.array_equal(a.genomes, c.genomes)


def test_uniform_init_moments():
    cfg = GaConfig(population_size=100, elite_k=50, genome_length=1000, lower=0.0, upper=255.0, seed=1)
    genes = evolve.init_population(cfg).genomes.ravel()
    assert genes.size == 10**5
    sigma_mean = 255.0 / np.sqrt(12) / np.sqrt(genes.size)
    assert abs(genes.mean() - 127.5) <= 3 * sigma_mean
    assert genes.min() >= 0 and genes.max() <= 255


def test_seeded_init():
    base = np.full(6, 0.25)
    pop = evolve.init_population(small_config(), "seeded_from", base)
    np.testing.assert_array_equal(pop.genomes[0], base)
    assert np.all(np.abs(pop.genomes) <= 1.0)
    with pytest.raises(InvalidArgument):
        evolve.init_population(small_config(), "seeded_from")
    with pytest.raises(InvalidArgument):
        evolve.init_population(small_config(), "gaussian")


def test_top_candidates_examples():
    pop = Population(np.arange(3.0)[:, None], np.array([1.0, 3.0, 2.0]))
    chosen, fit = evolve.top_candidates(pop, 1)
    assert chosen.genomes[0, 0] == 1.0 and fit[0] == 3.0
    chosen, fit = evolve.top_candidates(pop, 3)
    np.testing.assert_array_equal(fit, [3.0, 2.0, 1.0])
    flat = Population(np.arange(4.0)[:, None], np.zeros(4))
    chosen, _ = evolve.top_candidates(flat, 2)
    np.testing.assert_array_equal(chosen.genomes[:, 0], [0.0, 1.0])
    with pytest.raises(InvalidArgument):
        evolve.top_candidates(pop, 4)
    with pytest.raises(InvalidArgument):
        evolve.top_candidates(Population(np.zeros((2, 1))), 1)


def test_crossover_of_identical_parents():
    parents = Population(np.tile([0.1, 0.2, 0.3], (4, 1)))
    out = evolve.crossover(parents, 9, np.random.default_rng(0))
    assert len(out) == 9
    np.testing.assert_array_equal(out.genomes, np.tile([0.1, 0.2, 0.3], (9, 1)))


@given(seeds, st.integers(2, 8), st.integers(0, 11))
def test_crossover_exchanges_values(seed, k, extra):
    rng = np.random.default_rng(seed)
    parents = Population(rng.random((k, 5)))
    n = k + extra
    out = evolve.crossover(parents, n, np.random.default_rng(seed + 1))
    assert len(out) == n
    np.testing.assert_array_equal(out.genomes[:k], parents.genomes)
    # replay the draws to identify each pair's parents
    check = np.random.default_rng(seed + 1)
    pairs = (extra + 1) // 2
    first = check.integers(0, k, size=pairs)
    second = (first + check.integers(1, k, size=pairs)) % k
    children = out.genomes[k:]
    for j in range(pairs):
        a, b = parents.genomes[first[j]], parents.genomes[second[j]]
        assert first[j] != second[j]
        c0 = children[2 * j]
        assert np.all((c0 == a) | (c0 == b))
        if 2 * j + 1 < extra:
            c1 = children[2 * j + 1]
            for g in range(5):
                assert sorted([c0[g], c1[g]]) == sorted([a[g], b[g]])


def test_mutation_noop_cases():
    pop = Population(np.random.default_rng(0).random((10, 6)))
    for kw in ({"mutation_rate": 0.0}, {"mutation_sigma": 0.0}):
        out = evolve.mutate(pop, small_config(**kw), np.random.default_rng(1))
        np.testing.assert_array_equal(out.genomes, pop.genomes)


@given(seeds, st.integers(0, 19))
@settings(max_examples=50)
def test_mutation_spares_best_and_respects_bounds(seed, best):
    cfg = small_config(mutation_rate=1.0, mutation_fraction=1.0, mutation_sigma=5.0)
    pop = evolve.init_population(cfg)
    out = evolve.mutate(pop, cfg, np.random.default_rng(seed), best_index=best)
    np.testing.assert_array_equal(out.genomes[best], pop.genomes[best])
    assert np.all(out.genomes >= -1.0) and np.all(out.genomes <= 1.0)
    others = np.delete(np.arange(20), best)
    assert not np.array_equal(out.genomes[others], pop.genomes[others])


def test_mutation_touches_requested_gene_count():
    cfg = small_config(mutation_rate=1.0, mutation_fraction=0.5, mutation_sigma=0.01, lower=-10, upper=10)
    pop = Population(np.zeros((20, 6)))
    out = evolve.mutate(pop, cfg, np.random.default_rng(3), best_index=0)
    changed = np.count_nonzero(out.genomes != 0, axis=1)
    assert changed[0] == 0 and np.all(changed[1:] == 3)


def test_grid_search_oracle_and_ga_reach_origin():
    grid = np.linspace(-1, 1, 21)
    points = np.array(list(itertools.product(grid, repeat=4)))
    best = points[np.argmax(neg_norm(points))]
    np.testing.assert_array_equal(best, np.zeros(4))

    cfg = GaConfig(population_size=50, elite_k=25, mutation_rate=1.0, mutation_fraction=0.5, mutation_sigma=0.1,
                   max_iters=200, stagnation_window=200, lower=-1.0, upper=1.0, genome_length=4, seed=0)
    result = evolve.run(cfg, neg_norm)
    assert result.best.fitness >= -0.01
    assert result.generations <= 200


def test_constant_fitness_stops_by_stagnation():
    cfg = small_config(max_iters=100, stagnation_window=7)
    result = evolve.run(cfg, lambda g: np.zeros(len(g)))
    assert result.stopped_by == "stagnation"
    assert result.generations <= cfg.stagnation_window + 1


@given(seeds)
@settings(max_examples=15, deadline=None)
def test_history_is_monotone_and_genomes_bounded(seed):
    cfg = small_config(seed=seed, mutation_sigma=2.0)
    seen = []

    def fitness(g):
        seen.append(g.copy())
        return np.sin(5 * g).sum(axis=1)

    result = evolve.run(cfg, fitness)
    assert all(b >= a for a, b in zip(result.history, result.history[1:]))
    assert len(result.history) == result.generations + 1
    all_genomes = np.concatenate(seen)
    assert all_genomes.min() >= -1.0 and all_genomes.max() <= 1.0
    assert result.best.fitness == max(result.history)


@pytest.mark.parametrize("workers", [2, 3, 8])
def test_parallel_evaluation_matches_serial(workers):
    def fitness(g):
        return -np.abs(g @ np.arange(1.0, 7.0) - 1.0)

    serial = evolve.run(small_config(seed=4), fitness)
    parallel = evolve.run(small_config(seed=4, workers=workers), fitness)
    np.testing.assert_array_equal(serial.best.genome, parallel.best.genome)
    assert serial.history == parallel.history
    assert serial.log_rows == parallel.log_rows


def test_evaluation_errors_carry_genome():
    def fitness(g):
        out = np.zeros(len(g))
        out[-1] = np.nan
        return out

    with pytest.raises(EvaluationError) as info:
        evolve.run(small_config(), fitness)
    assert info.value.genome is not None and info.value.genome.shape == (6,)
    with pytest.raises(EvaluationError):
        evolve.run(small_config(), lambda g: np.zeros(len(g) + 1))


@pytest.mark.parametrize("kw", [
    {"population_size": 1}, {"elite_k": 0}, {"elite_k": 21}, {"mutation_rate": 1.5},
    {"mutation_fraction": -0.1}, {"mutation_sigma": -1.0}, {"max_iters": 0},
    {"stagnation_window": 0}, {"genome_length": 0}, {"lower": 2.0},
])
def test_config_validation(kw):
    with pytest.raises(InvalidArgument):
        small_config(**kw)


def test_format_log():
    text = evolve.format_log([(0, 1.0, 0.5, 0.25)])
    assert text == "generation\tbest\tmean\tstd\n0\t1.0\t0.5\t0.25\n"
