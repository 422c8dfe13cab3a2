"""Genetic algorithm over step permutations.

Truncation selection keeps the better half of each generation, the best
individual is carried over untouched, and the population is refilled by
partially matched crossover (PMX) followed by swap mutation.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence, TextIO

import numpy as np

from .reconfig import FitnessValue

log = logging.getLogger(__name__)

CONVERGENCE_TOL = 1e-9
BRUTE_FORCE_LIMIT = 8

Order = tuple[int, ...]


@dataclass(frozen=True)
class GaParams:
    pop_size: int = 64
    p_crossover: float = 0.8
    p_mutation: float = 0.1
    patience_generations: int = 20
    max_generations: int = 500
    elitism: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.pop_size < 4 or self.pop_size % 2:
            raise ValueError("pop_size must be even and >= 4")
        for name in ("p_crossover", "p_mutation"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.patience_generations < 1 or self.max_generations < 1:
            raise ValueError("patience_generations and max_generations must be >= 1")
        if not 0 <= self.elitism <= self.pop_size // 2:
            raise ValueError("elitism must lie in [0, pop_size/2]")


@dataclass
class Individual:
    order: Order
    fitness: FitnessValue | None = None


@dataclass
class GaResult:
    best: Individual
    generations_run: int
    history: list[float]
    evaluations: int
    model_calls: int = 0
    mean_history: list[float] = field(default_factory=list)


def is_permutation(order: Sequence[int], n_steps: int) -> bool:
    return len(order) == n_steps and sorted(order) == list(range(1, n_steps + 1))


def init_population(params: GaParams, n_steps: int, rng: np.random.Generator) -> list[Individual]:
    if n_steps < 2:
        raise ValueError("n_steps must be >= 2")
    return [Individual(tuple(int(v) for v in rng.permutation(n_steps) + 1)) for _ in range(params.pop_size)]


def select_parents(population: list[Individual]) -> list[Individual]:
    """Keep the top half by fitness; ties go to the earlier index."""
    if any(ind.fitness is None for ind in population):
        raise ValueError("every individual must be evaluated before selection")
    ranked = sorted(range(len(population)), key=lambda i: (-population[i].fitness.value, i))
    return [population[i] for i in ranked[: len(population) // 2]]


def _pmx_child(keep: Sequence[int], other: Sequence[int], cut1: int, cut2: int) -> Order:
    child = list(other)
    child[cut1:cut2] = keep[cut1:cut2]
    seg = set(keep[cut1:cut2])
    pos_in_keep = {v: i for i, v in enumerate(keep)}
    for i in itertools.chain(range(cut1), range(cut2, len(keep))):
        v = other[i]
        while v in seg:
            v = other[pos_in_keep[v]]
        child[i] = v
    return tuple(child)


def pmx(parent_a: Sequence[int], parent_b: Sequence[int], cut1: int, cut2: int) -> tuple[Order, Order]:
    """Partially matched crossover on segment ``[cut1, cut2)``.

    Each child keeps one parent's segment and takes the other parent's values
    elsewhere; duplicates of segment values are repaired by following the
    segment mapping until a free value turns up.
    """
    n = len(parent_a)
    if len(parent_b) != n:
        raise ValueError("parents must have equal length")
    if not 0 <= cut1 < cut2 <= n:
        raise ValueError(f"invalid cut points ({cut1}, {cut2}) for length {n}")
    return _pmx_child(parent_a, parent_b, cut1, cut2), _pmx_child(parent_b, parent_a, cut1, cut2)


def swap(order: Sequence[int], i: int, j: int) -> Order:
    out = list(order)
    out[i], out[j] = out[j], out[i]
    return tuple(out)


def mutate(order: Sequence[int], rng: np.random.Generator, p_mutation: float = 0.1) -> Order:
    """With probability ``p_mutation`` swap two distinct random positions."""
    if rng.random() < p_mutation:
        i, j = rng.choice(len(order), size=2, replace=False)
        return swap(order, int(i), int(j))
    return tuple(order)


def random_cuts(n_steps: int, rng: np.random.Generator) -> tuple[int, int]:
    a, b = sorted(int(c) for c in rng.choice(n_steps + 1, size=2, replace=False))
    return a, b


class _Evaluator:
    def __init__(self, fitness_fn: Callable[[Sequence[int]], FitnessValue]):
        self.fn = fitness_fn
        self.cache: dict[Order, FitnessValue] = {}
        self.lookups = 0

    def evaluate(self, population: list[Individual]) -> None:
        missing = list(dict.fromkeys(ind.order for ind in population if ind.order not in self.cache))
        if missing:
            try:
                if hasattr(self.fn, "many"):
                    values = self.fn.many(missing)
                else:
                    values = [self.fn(o) for o in missing]
            except Exception as exc:
                raise RuntimeError(f"fitness evaluation failed: {exc}") from exc
            self.cache.update(zip(missing, values))
        for ind in population:
            ind.fitness = self.cache[ind.order]
        self.lookups += len(population)


def optimize(fitness_fn: Callable[[Sequence[int]], FitnessValue], params: GaParams, n_steps: int,
             progress: TextIO | None = None) -> GaResult:
    """Run the GA until the best fitness stalls for ``patience_generations``."""
    rng = np.random.default_rng(params.seed)
    evaluator = _Evaluator(fitness_fn)
    population = init_population(params, n_steps, rng)
    if progress is not None:
        progress.write("generation,best_fitness,mean_fitness\n")

    best: Individual | None = None
    history: list[float] = []
    mean_history: list[float] = []
    stale = 0
    generation = 0
    while True:
        generation += 1
        evaluator.evaluate(population)
        gen_best = max(population, key=lambda ind: ind.fitness.value)
        prev = best.fitness.value if best is not None else None
        if best is None or gen_best.fitness.value > best.fitness.value:
            best = Individual(gen_best.order, gen_best.fitness)
        history.append(best.fitness.value)
        mean_history.append(float(np.mean([ind.fitness.value for ind in population])))
        if progress is not None:
            progress.write(f"{generation},{history[-1]!r},{mean_history[-1]!r}\n")

        if prev is not None and abs(best.fitness.value - prev) < CONVERGENCE_TOL:
            stale += 1
        else:
            stale = 0
        if stale >= params.patience_generations or generation >= params.max_generations:
            break

        parents = select_parents(population)
        nxt = [Individual(p.order, p.fitness) for p in parents[: params.elitism]]
        while len(nxt) < params.pop_size:
            i, j = rng.choice(len(parents), size=2, replace=False)
            a, b = parents[int(i)].order, parents[int(j)].order
            if rng.random() < params.p_crossover:
                a, b = pmx(a, b, *random_cuts(n_steps, rng))
            for child in (a, b):
                if len(nxt) < params.pop_size:
                    nxt.append(Individual(mutate(child, rng, params.p_mutation)))
        population = nxt

    log.debug("GA stopped after %d generations, best %.6f", generation, best.fitness.value)
    return GaResult(best=best, generations_run=generation, history=history, evaluations=evaluator.lookups,
                    model_calls=len(evaluator.cache), mean_history=mean_history)


def brute_force_best(fitness_fn: Callable[[Sequence[int]], FitnessValue], n_steps: int) -> tuple[Order, FitnessValue]:
    """Exhaustive search; returns the lexicographically first maximizer."""
    if n_steps > BRUTE_FORCE_LIMIT:
        raise ValueError(f"refusing to enumerate {n_steps}! orders (limit n_steps <= {BRUTE_FORCE_LIMIT})")
    orders = list(itertools.permutations(range(1, n_steps + 1)))
    values = fitness_fn.many(orders) if hasattr(fitness_fn, "many") else [fitness_fn(o) for o in orders]
    best_i = 0
    for i, v in enumerate(values):
        if v.value > values[best_i].value:
            best_i = i
    return orders[best_i], values[best_i]
