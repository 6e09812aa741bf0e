"""Supernet training: supernet-balanced sampling (SBS) and a one-shot baseline.

An SBS step draws one subnet per supernet and updates each supernet once with
the loss of its own subnet on the shared mini-batch; the returned loss is the
sum over supernets. The one-shot step draws a single subnet uniformly from
the whole space and updates whichever supernet it belongs to.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, replace
from typing import Callable

import numpy as np

from . import engine as E
from .data import Dataset
from .partition import Partition, PartitionError
from .space import SearchSpace, Subnet, encode, random_subnet
from .supernet import SupernetStore, forward, init_params

log = logging.getLogger(__name__)

MODES = ("SBS", "UniformOneShot")
MAX_REJECTION_DRAWS = 1_000_000


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 1024
    lr0: float = 0.12
    momentum: float = 0.9
    weight_decay: float = 4e-5
    seed: int = 0
    mode: str = "SBS"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown training mode {self.mode!r}; choose from {MODES}")
        if self.epochs < 0 or self.batch_size < 2:
            raise ValueError("epochs must be >= 0 and batch_size >= 2")


PRESETS = {
    "full": TrainConfig(),
    "desk": TrainConfig(epochs=20, batch_size=64, lr0=0.05),
}


def preset(name: str, **overrides) -> TrainConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown train preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(base, **overrides)


@dataclass
class StepRecord:
    epoch: int
    step: int
    supernet_k: int
    subnet_code: int
    loss: float
    lr: float


def sample_balanced(partition: Partition, space: SearchSpace, rng: np.random.Generator,
                    probe_engine=None, max_draws: int = MAX_REJECTION_DRAWS) -> list[tuple[Subnet, int]]:
    """One uniformly random subnet per supernet, by rejection from the whole space.

    Draws that land in an already-filled bucket are discarded, so each bucket
    keeps its first hit, which is uniform over that subspace.
    """
    picked: dict[int, Subnet] = {}
    for _ in range(max_draws):
        s = random_subnet(space, rng)
        k = partition.assign_subnet(space, s, probe_engine)
        if k not in picked:
            picked[k] = s
            if len(picked) == partition.K:
                return [(picked[k], k) for k in range(partition.K)]
    missing = sorted(set(range(partition.K)) - set(picked))
    raise PartitionError(f"no subnet found for supernet(s) {missing} after {max_draws} draws; subspace empty?")


def _update(store: SupernetStore, subnet: Subnet, k: int, x, y, lr: float, config: TrainConfig) -> float:
    with E.Tape() as tape:
        loss = E.softmax_cross_entropy(store.forward(subnet, k, x), y)
    grads = {t.name: g for t, g in E.backward(tape, loss).items()}
    E.sgd_step(store.params[k], grads, lr, config.momentum, config.weight_decay, store.opt_state[k])
    store.update_counts[k] += 1
    return loss.item()


def sbs_step(store: SupernetStore, batch, config: TrainConfig, rng: np.random.Generator,
             lr: float | None = None, records: list | None = None,
             after_update: Callable[[int], None] | None = None) -> float:
    x, y = batch
    lr = config.lr0 if lr is None else lr
    total = 0.0
    for subnet, k in sample_balanced(store.partition, store.space, rng, store.probe_engine):
        loss = _update(store, subnet, k, x, y, lr, config)
        total += loss
        if records is not None:
            records.append(StepRecord(store.epoch, store.step, k, encode(store.space, subnet), loss, lr))
        if after_update is not None:
            after_update(k)
    return total


def uniform_step(store: SupernetStore, batch, config: TrainConfig, rng: np.random.Generator,
                 lr: float | None = None, records: list | None = None) -> float:
    x, y = batch
    lr = config.lr0 if lr is None else lr
    subnet = random_subnet(store.space, rng)
    k = store.supernet_of(subnet)
    loss = _update(store, subnet, k, x, y, lr, config)
    if records is not None:
        records.append(StepRecord(store.epoch, store.step, k, encode(store.space, subnet), loss, lr))
    return loss


def train(store: SupernetStore, dataset: Dataset, config: TrainConfig,
          records: list | None = None, until_epoch: int | None = None) -> tuple[SupernetStore, list[dict]]:
    """Train until ``config.epochs`` with a per-step cosine schedule.

    Resumes from ``store.epoch``; each epoch's shuffling and subnet draws are
    seeded by (seed, epoch), so a resumed run matches an uninterrupted one.
    ``until_epoch`` stops early (the schedule still spans ``config.epochs``).
    """
    steps_per_epoch = len(dataset) // config.batch_size
    if steps_per_epoch == 0 and config.epochs > 0:
        raise ValueError(f"dataset of {len(dataset)} samples is smaller than one batch of {config.batch_size}")
    total = config.epochs * steps_per_epoch
    x_dtype = store.dtype
    epoch_log = []
    step_fn = sbs_step if config.mode == "SBS" else uniform_step
    stop = config.epochs if until_epoch is None else min(until_epoch, config.epochs)
    while store.epoch < stop:
        data_rng = np.random.default_rng([config.seed, 1, store.epoch])
        arch_rng = np.random.default_rng([config.seed, 2, store.epoch])
        losses = [[] for _ in range(store.K)]
        lr = config.lr0
        local: list[StepRecord] = []
        for x, y in dataset.batches(config.batch_size, data_rng):
            lr = E.cosine_lr(store.step, total, config.lr0)
            step_fn(store, (x.astype(x_dtype, copy=False), y), config, arch_rng, lr=lr, records=local)
            store.step += 1
        for r in local:
            losses[r.supernet_k].append(r.loss)
        if records is not None:
            records.extend(local)
        row = {"epoch": store.epoch, "step": store.step, "lr": lr}
        for k, ls in enumerate(losses):
            row[f"loss_k{k}"] = float(np.mean(ls)) if ls else float("nan")
        for k in range(store.K):
            row[f"updates_k{k}"] = store.update_counts[k]
        epoch_log.append(row)
        log.info("epoch %d lr %.4g %s", store.epoch, lr,
                 " ".join(f"k{k}={row[f'loss_k{k}']:.4f}" for k in range(store.K)))
        store.epoch += 1
    return store, epoch_log


# -- stand-alone models and evaluation ----------------------------------------

def train_standalone(space: SearchSpace, subnet: Subnet, dataset: Dataset, config: TrainConfig,
                     G: int = 1, dtype=np.float32) -> dict[str, E.Tensor]:
    """Train one subnet from scratch with its own freshly initialized weights."""
    code = encode(space, subnet)
    params = init_params(space, G, np.random.default_rng([config.seed, 3, code]), dtype)
    state: dict[str, np.ndarray] = {}
    steps_per_epoch = len(dataset) // config.batch_size
    total = config.epochs * steps_per_epoch
    step = 0
    for epoch in range(config.epochs):
        rng = np.random.default_rng([config.seed, 4, epoch])
        for x, y in dataset.batches(config.batch_size, rng):
            lr = E.cosine_lr(step, total, config.lr0)
            with E.Tape() as tape:
                loss = E.softmax_cross_entropy(forward(params, space, subnet, x.astype(dtype, copy=False)), y)
            grads = {t.name: g for t, g in E.backward(tape, loss).items()}
            E.sgd_step(params, grads, lr, config.momentum, config.weight_decay, state)
            step += 1
    return params


def predict(params, space: SearchSpace, subnet: Subnet, dataset: Dataset, batch_size: int = 256) -> np.ndarray:
    dtype = params["stem.conv"].dtype
    out = []
    for x, _ in dataset.batches(batch_size, rng=None, drop_last=False):
        logits = forward(params, space, subnet, x.astype(dtype, copy=False), training=False)
        out.append(logits.data.argmax(axis=1))
    return np.concatenate(out)


def accuracy(params, space: SearchSpace, subnet: Subnet, dataset: Dataset, batch_size: int = 256) -> float:
    """Top-1 accuracy in [0, 1] with fixed, unshuffled evaluation batches."""
    return float((predict(params, space, subnet, dataset, batch_size) == dataset.labels).mean())


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
