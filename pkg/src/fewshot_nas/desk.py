"""Desk-scale few-shot vs one-shot experiment on a 27-subnet space.

One run (per seed):

1. draw the synthetic dataset; the training split is halved into supernet
   train/validation sets, the test split scores stand-alone models;
2. build the stand-alone oracle by training every subnet from scratch;
3. train supernet stores for (K, G) in {1, 3} x {1, 2} with SBS, K=3 split by
   nonlinearity count;
4. estimate every subnet's validation accuracy from its supernet and compare
   rankings.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

from .data import SyntheticSpec, synthetic
from .evaloracle import OracleTable, build_desk_oracle, kendall_tau
from .partition import Criterion, build_partition
from .space import SearchSpace, encode, enumerate_subnets, load_space
from .supernet import init_supernets
from .training import TrainConfig, accuracy, preset, train

log = logging.getLogger(__name__)

ORACLE_CONFIG = TrainConfig(epochs=10, batch_size=64, lr0=0.05)


@dataclass
class DeskResult:
    seed: int
    oracle: OracleTable
    estimates: dict[tuple[int, int], dict[int, float]] = field(default_factory=dict)  # (K, G) -> code -> acc

    def tau_vs_oracle(self, K: int, G: int) -> float:
        truth = self.oracle.accuracies()
        est = self.estimates[K, G]
        codes = sorted(est)
        return kendall_tau([truth[c] for c in codes], [est[c] for c in codes])

    def tau_g1_vs_g2(self, K: int) -> float:
        a, b = self.estimates[K, 1], self.estimates[K, 2]
        codes = sorted(a)
        return kendall_tau([a[c] for c in codes], [b[c] for c in codes])


def supernet_estimates(space: SearchSpace, K: int, G: int, train_set, val_set, config: TrainConfig,
                       seed: int) -> dict[int, float]:
    partition = build_partition(space, Criterion("NonlinearCount"), K, seed=seed)
    store = init_supernets(space, partition, G, seed)
    train(store, train_set, config)
    out = {}
    for s in enumerate_subnets(space):
        out[encode(space, s)] = 100.0 * accuracy(store.params[store.supernet_of(s)], space, s, val_set)
    return out


def run_desk_experiment(seed: int, space: SearchSpace | None = None, data: SyntheticSpec | None = None,
                        oracle_config: TrainConfig = ORACLE_CONFIG, supernet_config: TrainConfig | None = None,
                        configs=((1, 1), (1, 2), (3, 1), (3, 2)), oracle: OracleTable | None = None) -> DeskResult:
    space = space or load_space("toy3")
    data = replace(data or SyntheticSpec(), seed=seed, shape=space.input_shape, num_classes=space.num_classes)
    splits = synthetic(data)
    if oracle is None:
        oracle = build_desk_oracle(space, splits, replace(oracle_config, seed=seed))
    train_set, val_set = splits.train.halves()
    cfg = replace(supernet_config or preset("desk"), seed=seed)
    result = DeskResult(seed, oracle)
    for K, G in configs:
        result.estimates[K, G] = supernet_estimates(space, K, G, train_set, val_set, cfg, seed)
        log.info("seed %d K=%d G=%d tau=%.3f", seed, K, G, result.tau_vs_oracle(K, G))
    return result
