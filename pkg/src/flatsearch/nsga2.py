"""Bi-objective NSGA-II over integer genes (both objectives minimized)."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .search_space import Gene, SearchSpaceDef, crossover, mutate, sample_uniform

Evaluator = Callable[[list[Gene]], np.ndarray]


@dataclass(frozen=True)
class Individual:
    gene: Gene
    objectives: tuple[float, float]
    rank: int = -1
    crowding: float = 0.0


@dataclass(frozen=True)
class Population:
    individuals: tuple[Individual, ...]
    generation: int = 0

    def __len__(self) -> int:
        return len(self.individuals)

    @property
    def objectives(self) -> np.ndarray:
        return np.array([ind.objectives for ind in self.individuals], dtype=float)

    @property
    def genes(self) -> list[Gene]:
        return [ind.gene for ind in self.individuals]


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return bool(np.all(a <= b) and np.any(a < b))


def _objective_array(pop) -> np.ndarray:
    if isinstance(pop, Population):
        return pop.objectives
    return np.atleast_2d(np.asarray(pop, dtype=float))


def fast_nondominated_sort(pop) -> list[list[int]]:
    """Fronts of indices; front 0 holds every nondominated member."""
    f = _objective_array(pop)
    n = len(f)
    le = np.all(f[:, None, :] <= f[None, :, :], axis=2)
    lt = np.any(f[:, None, :] < f[None, :, :], axis=2)
    dom = le & lt  # dom[i, j]: i dominates j
    counts = dom.sum(axis=0)
    dominated_by = [np.flatnonzero(row) for row in dom]
    current = [i for i in range(n) if counts[i] == 0]
    fronts = []
    while current:
        fronts.append(current)
        nxt = []
        for i in current:
            for j in dominated_by[i]:
                counts[j] -= 1
                if counts[j] == 0:
                    nxt.append(int(j))
        current = sorted(nxt)
    return fronts


def crowding_distance(front) -> np.ndarray:
    """Per-member crowding distance; boundary members get +inf."""
    f = _objective_array(front)
    n = len(f)
    dist = np.zeros(n)
    if n <= 2:
        return np.full(n, np.inf)
    for m in range(f.shape[1]):
        order = np.argsort(f[:, m], kind="stable")
        vals = f[order, m]
        dist[order[0]] = dist[order[-1]] = np.inf
        span = vals[-1] - vals[0]
        if span > 0:
            dist[order[1:-1]] += (vals[2:] - vals[:-2]) / span
    return dist


def rank_and_crowding(objectives: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    objectives = np.asarray(objectives, dtype=float)
    rank = np.zeros(len(objectives), dtype=int)
    crowd = np.zeros(len(objectives))
    for r, front in enumerate(fast_nondominated_sort(objectives)):
        rank[front] = r
        crowd[front] = crowding_distance(objectives[front])
    return rank, crowd


def make_population(genes: Sequence[Gene], objectives: np.ndarray, generation: int = 0) -> Population:
    objectives = np.asarray(objectives, dtype=float)
    rank, crowd = rank_and_crowding(objectives)
    return Population(tuple(
        Individual(tuple(g), (float(o[0]), float(o[1])), int(r), float(c))
        for g, o, r, c in zip(genes, objectives, rank, crowd)
    ), generation)


def _tournament(pop: Population, rng: np.random.Generator) -> Individual:
    a, b = (pop.individuals[i] for i in rng.integers(0, len(pop), 2))
    if a.rank != b.rank:
        return a if a.rank < b.rank else b
    if a.crowding != b.crowding:
        return a if a.crowding > b.crowding else b
    return a if rng.random() < 0.5 else b


def survivor_order(objectives: np.ndarray) -> list[int]:
    """Indices sorted by (front, descending crowding, index)."""
    out = []
    for front in fast_nondominated_sort(objectives):
        crowd = crowding_distance(objectives[front])
        out.extend(front[i] for i in sorted(range(len(front)), key=lambda i: (-crowd[i], front[i])))
    return out


def evolve(pop: Population, space: SearchSpaceDef, offspring_count: int, mutation_prob: float,
           rng_seed, evaluator: Evaluator, max_attempts: int = 50) -> Population:
    """One generation: tournament, uniform crossover, mutation, elitist survival."""
    if offspring_count <= 0:
        return pop
    rng = np.random.default_rng(rng_seed)
    seen = set(pop.genes)
    children: list[Gene] = []
    attempts = 0
    while len(children) < offspring_count and attempts < max_attempts * offspring_count:
        attempts += 1
        p1, p2 = _tournament(pop, rng), _tournament(pop, rng)
        for child in crossover(p1.gene, p2.gene, rng.integers(2**63)):
            child = mutate(space, child, mutation_prob, rng.integers(2**63))
            if child not in seen and len(children) < offspring_count:
                seen.add(child)
                children.append(child)
    if not children:
        return replace(pop, generation=pop.generation + 1)

    child_obj = np.asarray(evaluator(children), dtype=float).reshape(len(children), 2)
    genes = pop.genes + children
    objectives = np.vstack([pop.objectives, child_obj])
    keep = survivor_order(objectives)[: len(pop)]
    return make_population([genes[i] for i in keep], objectives[keep], pop.generation + 1)


def run_nsga2(space: SearchSpaceDef, evaluator: Evaluator, rng_seed, pop_size: int = 40,
              generations: int = 20, mutation_prob: float | None = None,
              initial: Sequence[Gene] = ()) -> Population:
    """Seeded NSGA-II; ``initial`` genes are topped up with uniform samples to ``pop_size``."""
    if mutation_prob is None:
        mutation_prob = 1.0 / space.gene_length
    seeds = rng_seed if isinstance(rng_seed, np.random.SeedSequence) else np.random.SeedSequence(rng_seed)
    init_seed, *gen_seeds = seeds.spawn(generations + 1)
    genes: list[Gene] = []
    for g in initial:
        if tuple(g) not in genes and len(genes) < pop_size:
            genes.append(tuple(g))
    sampler = np.random.default_rng(init_seed)
    for _ in range(50 * pop_size):
        if len(genes) >= pop_size:
            break
        g = sample_uniform(space, sampler.integers(2**63))
        if g not in genes:
            genes.append(g)
    pop = make_population(genes, evaluator(genes))
    for s in gen_seeds:
        pop = evolve(pop, space, pop_size, mutation_prob, s, evaluator)
    return pop
