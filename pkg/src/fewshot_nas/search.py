"""Evolutionary and exhaustive architecture search under a resource cap.

Fitness is maximized (top-1 validation accuracy by default). Ties always go
to the smaller mixed-radix encoding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import Dataset
from .partition import Partition, PartitionMismatchError
from .space import SearchSpace, Subnet, encode, enumerate_subnets, flops, param_count, random_subnet
from .supernet import SupernetStore
from .training import accuracy

RETRIES_PER_CHILD = 100


class InfeasibleError(RuntimeError):
    pass


@dataclass(frozen=True)
class Constraint:
    metric: str  # "flops" or "params"
    max_value: float

    def __post_init__(self):
        if self.metric not in ("flops", "params"):
            raise ValueError(f"constraint metric must be flops or params, got {self.metric!r}")

    def cost(self, space: SearchSpace, subnet: Subnet) -> float:
        return flops(space, subnet) if self.metric == "flops" else param_count(space, subnet)


@dataclass(frozen=True)
class EvoConfig:
    population: int = 50
    generations: int = 20
    parents_top: int = 10
    mutation_prob: float = 0.1
    crossover_count: int = 25
    mutation_count: int = 25
    constraint: Constraint | None = None
    seed: int = 0

    def __post_init__(self):
        if self.population != self.crossover_count + self.mutation_count:
            raise ValueError("population must equal crossover_count + mutation_count")
        if not 1 <= self.parents_top <= self.population:
            raise ValueError("parents_top must lie in [1, population]")
        if not 0.0 <= self.mutation_prob <= 1.0:
            raise ValueError("mutation_prob must lie in [0, 1]")


@dataclass(frozen=True)
class Candidate:
    subnet: Subnet
    code: int
    fitness: float
    cost: float


@dataclass
class SearchResult:
    best: Candidate
    history: list[tuple[int, int, int, float, float]] = field(default_factory=list)  # (gen, rank, code, fitness, cost)
    evaluated: int = 0


def _rank_key(c: Candidate):
    return (-c.fitness, c.code)


def mutate(space: SearchSpace, subnet: Subnet, prob: float, rng: np.random.Generator) -> Subnet:
    """Resample each edge to a different op with probability ``prob``."""
    out = list(subnet.choices)
    for j, a in enumerate(space.arities):
        if rng.random() < prob:
            other = int(rng.integers(a - 1))
            out[j] = other if other < out[j] else other + 1
    return Subnet(tuple(out))


def crossover(a: Subnet, b: Subnet, rng: np.random.Generator) -> Subnet:
    mask = rng.random(len(a.choices)) < 0.5
    return Subnet(tuple(x if m else y for x, y, m in zip(a.choices, b.choices, mask)))


def supernet_fitness(store: SupernetStore, partition: Partition, val_set: Dataset,
                     batch_size: int = 256) -> Callable[[Subnet], float]:
    """Validation accuracy with weights inherited from each subnet's supernet."""
    if store.partition.hash != partition.hash:
        raise PartitionMismatchError("checkpoint was trained under a different partition")

    def fitness(subnet: Subnet) -> float:
        k = store.supernet_of(subnet)
        return accuracy(store.params[k], store.space, subnet, val_set, batch_size)

    return fitness


def evolutionary_search(space: SearchSpace, fitness_fn: Callable[[Subnet], float],
                        evo: EvoConfig = EvoConfig()) -> SearchResult:
    """SPOS-style evolution with elitist top-k parents and rejection of cap violators."""
    rng = np.random.default_rng(evo.seed)
    cons = evo.constraint
    seen: dict[int, Candidate] = {}

    def cost_of(s):
        return cons.cost(space, s) if cons is not None else float(flops(space, s))

    def feasible(s):
        return cons is None or cons.cost(space, s) <= cons.max_value

    def admit(s) -> Candidate:
        code = encode(space, s)
        if code not in seen:
            seen[code] = Candidate(s, code, float(fitness_fn(s)), float(cost_of(s)))
        return seen[code]

    def draw(make) -> Subnet | None:
        fallback = None
        for _ in range(RETRIES_PER_CHILD):
            s = make()
            if not feasible(s):
                continue
            if encode(space, s) not in seen:
                return s
            fallback = s
        return fallback

    population = []
    for _ in range(evo.population):
        s = draw(lambda: random_subnet(space, rng))
        if s is not None:
            population.append(admit(s))
    if not population:
        raise InfeasibleError(
            f"no subnet satisfies {cons.metric} <= {cons.max_value} after {RETRIES_PER_CHILD} draws per slot"
        )

    history = []
    parents = sorted(seen.values(), key=_rank_key)[:evo.parents_top]
    history += [(0, r, c.code, c.fitness, c.cost) for r, c in enumerate(parents)]
    for gen in range(1, evo.generations + 1):
        for _ in range(evo.mutation_count):
            p = parents[int(rng.integers(len(parents)))]
            s = draw(lambda: mutate(space, p.subnet, evo.mutation_prob, rng))
            if s is not None:
                admit(s)
        for _ in range(evo.crossover_count):
            def make():
                a = parents[int(rng.integers(len(parents)))]
                b = parents[int(rng.integers(len(parents)))]
                return crossover(a.subnet, b.subnet, rng)
            s = draw(make)
            if s is not None:
                admit(s)
        parents = sorted(seen.values(), key=_rank_key)[:evo.parents_top]
        history += [(gen, r, c.code, c.fitness, c.cost) for r, c in enumerate(parents)]
    return SearchResult(best=parents[0], history=history, evaluated=len(seen))


def exhaustive_search(space: SearchSpace, fitness_fn: Callable[[Subnet], float],
                      constraint: Constraint | None = None, limit: int = 1_000_000) -> Candidate:
    best = None
    for s in enumerate_subnets(space, limit=limit):
        if constraint is not None and constraint.cost(space, s) > constraint.max_value:
            continue
        cost = constraint.cost(space, s) if constraint is not None else float(flops(space, s))
        c = Candidate(s, encode(space, s), float(fitness_fn(s)), float(cost))
        if best is None or _rank_key(c) < _rank_key(best):
            best = c
    if best is None:
        raise InfeasibleError("no subnet satisfies the constraint")
    return best


def table_fitness(space: SearchSpace, table: dict[int, float]) -> Callable[[Subnet], float]:
    """Fitness looked up from a code -> accuracy mapping."""
    return lambda s: table[encode(space, s)]


def describe(space: SearchSpace, cand: Candidate) -> dict:
    return {
        "encoding": cand.code,
        "ops": space.op_names(cand.subnet),
        "choices": list(cand.subnet.choices),
        "fitness": cand.fitness,
        "cost": cand.cost,
    }

