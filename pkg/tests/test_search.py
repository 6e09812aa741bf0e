from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from fewshot_nas.evaloracle import synthetic_oracle
from fewshot_nas.partition import Criterion, PartitionMismatchError, build_partition
from fewshot_nas.search import (
    Constraint,
    EvoConfig,
    InfeasibleError,
    crossover,
    describe,
    evolutionary_search,
    exhaustive_search,
    mutate,
    supernet_fitness,
    table_fitness,
)
from fewshot_nas.space import Subnet, encode, enumerate_subnets, flops, load_space
from fewshot_nas.supernet import init_supernets

NAS201 = load_space("nas201")


@pytest.fixture(scope="module")
def oracle():
    return synthetic_oracle(NAS201, seed=0).accuracies()


def test_mutate_extremes():
    rng = np.random.default_rng(0)
    s = Subnet((0, 1, 2, 3, 4, 0))
    assert mutate(NAS201, s, 0.0, rng) == s
    for _ in range(100):
        m = mutate(NAS201, s, 1.0, rng)
        assert all(a != b for a, b in zip(m.choices, s.choices))


def test_mutation_rate_and_target_uniform():
    rng = np.random.default_rng(1)
    s = Subnet((2,) * 6)
    n = 20_000
    changed = 0
    targets = Counter()
    for _ in range(n):
        m = mutate(NAS201, s, 0.1, rng)
        for a in m.choices:
            if a != 2:
                changed += 1
                targets[a] += 1
    trials = 6 * n
    assert stats.binomtest(changed, trials, 0.1).pvalue > 1e-3
    assert 2 not in targets
    assert stats.chisquare([targets[a] for a in (0, 1, 3, 4)]).pvalue > 1e-3


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=6, max_size=6), st.lists(st.integers(0, 4), min_size=6, max_size=6),
       st.integers(0, 2 ** 32 - 1))
def test_crossover_takes_each_gene_from_a_parent(a, b, seed):
    child = crossover(Subnet(tuple(a)), Subnet(tuple(b)), np.random.default_rng(seed))
    assert all(c in (x, y) for c, x, y in zip(child.choices, a, b))


def test_crossover_is_fair():
    rng = np.random.default_rng(2)
    a, b = Subnet((0,) * 6), Subnet((1,) * 6)
    from_a = sum(c == 0 for _ in range(5000) for c in crossover(a, b, rng).choices)
    assert stats.binomtest(from_a, 30_000, 0.5).pvalue > 1e-3


def test_search_deterministic(oracle):
    fit = table_fitness(NAS201, oracle)
    a = evolutionary_search(NAS201, fit, EvoConfig(seed=3))
    b = evolutionary_search(NAS201, fit, EvoConfig(seed=3))
    assert a.best == b.best and a.history == b.history


def test_elitism_never_loses_best(oracle):
    res = evolutionary_search(NAS201, table_fitness(NAS201, oracle), EvoConfig(seed=4))
    best_per_gen = [f for g, r, c, f, cost in res.history if r == 0]
    assert len(best_per_gen) == 21
    assert all(x <= y for x, y in zip(best_per_gen, best_per_gen[1:]))


def test_finds_global_best_on_table(oracle):
    best_code = min(oracle, key=lambda c: (-oracle[c], c))
    res = evolutionary_search(NAS201, table_fitness(NAS201, oracle), EvoConfig(seed=0))
    assert res.best.code == best_code
    assert res.evaluated <= 50 * 21


def test_constraint_respected(oracle):
    cap = float(np.median([flops(NAS201, s) for s in enumerate_subnets(NAS201)]))
    asked = []

    def fit(s):
        asked.append(s)
        return oracle[encode(NAS201, s)]

    evo = EvoConfig(constraint=Constraint("flops", cap), seed=5)
    res = evolutionary_search(NAS201, fit, evo)
    assert all(flops(NAS201, s) <= cap for s in asked)
    assert all(cost <= cap for *_, cost in res.history)
    ref = exhaustive_search(NAS201, table_fitness(NAS201, oracle), Constraint("flops", cap))
    assert res.best.fitness <= ref.fitness


def test_infeasible_constraint(oracle):
    lowest = min(flops(NAS201, s) for s in enumerate_subnets(NAS201))
    with pytest.raises(InfeasibleError):
        evolutionary_search(NAS201, table_fitness(NAS201, oracle),
                            EvoConfig(constraint=Constraint("flops", lowest - 1), seed=0))
    with pytest.raises(InfeasibleError):
        exhaustive_search(NAS201, table_fitness(NAS201, oracle), Constraint("params", 0))


def test_exhaustive_tie_break_smallest_code():
    toy = load_space("toy3")
    best = exhaustive_search(toy, lambda s: 0.5)
    assert best.code == 0
    best = exhaustive_search(toy, lambda s: float(s.choices[2] == 2))
    assert best.code == encode(toy, Subnet((0, 0, 2)))


def test_config_validation():
    with pytest.raises(ValueError):
        EvoConfig(population=40)
    with pytest.raises(ValueError):
        EvoConfig(parents_top=0)
    with pytest.raises(ValueError):
        Constraint("latency", 1.0)


def test_supernet_fitness_checks_partition():
    toy = load_space("toy3")
    p3 = build_partition(toy, Criterion("NonlinearCount"), 3)
    p1 = build_partition(toy, Criterion("NonlinearCount"), 1)
    store = init_supernets(toy, p3, 2, 0)
    with pytest.raises(PartitionMismatchError):
        supernet_fitness(store, p1, None)


def test_describe(oracle):
    c = exhaustive_search(load_space("toy3"), lambda s: 1.0)
    d = describe(load_space("toy3"), c)
    assert d["encoding"] == 0 and d["ops"] == ["skip_connect"] * 3
