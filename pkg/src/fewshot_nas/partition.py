"""Split a search space into K disjoint subspaces by a scalar criterion.

Scores are binned contiguously: bin k holds scores in (edge[k-1], edge[k]],
the last bin everything above the last edge. Bin edges are picked greedily so
each bin carries about the same number of subnets, without ever splitting one
score value across two bins.
"""

from __future__ import annotations

import bisect
import hashlib
import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .space import (
    SearchSpace,
    Subnet,
    count_nonlinearities,
    encode,
    enumerate_subnets,
    flops,
    param_count,
    random_subnet,
    space_to_dict,
)

log = logging.getLogger(__name__)

CRITERIA = ("NonlinearCount", "Flops", "LinearRegions")


class PartitionError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class PartitionMismatchError(RuntimeError):
    """A checkpoint or store was built under a different partition."""


@dataclass(frozen=True)
class Criterion:
    kind: str = "NonlinearCount"
    probe_samples: int = 8
    probe_seed: int = 0

    def __post_init__(self):
        if self.kind not in CRITERIA:
            raise ConfigurationError(f"unknown criterion {self.kind!r}; choose from {CRITERIA}")

    @property
    def needs_probe(self) -> bool:
        return self.kind == "LinearRegions"


def space_digest(space: SearchSpace) -> str:
    blob = json.dumps(space_to_dict(space), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def score(criterion: Criterion, space: SearchSpace, subnet: Subnet, probe_engine=None) -> float:
    if criterion.kind == "NonlinearCount":
        if probe_engine is not None:
            raise ConfigurationError("NonlinearCount takes no probe engine")
        return count_nonlinearities(space, subnet)
    if criterion.kind == "Flops":
        if probe_engine is not None:
            raise ConfigurationError("Flops takes no probe engine")
        return flops(space, subnet, G=1)
    if probe_engine is None:
        raise ConfigurationError("LinearRegions needs a probe engine (one forward pass per subnet)")
    return probe_engine.linear_regions(subnet)


@dataclass
class Partition:
    criterion: Criterion
    K: int
    bin_edges: list[float]
    subspace_sizes: list[int]
    seed: int = 0
    exact: bool = True
    score_range: tuple[float, float] = (0.0, 0.0)
    space_digest: str = ""
    bin_values: list[list[float]] = field(default_factory=list)

    def __post_init__(self):
        if len(self.bin_edges) != self.K - 1:
            raise PartitionError(f"K={self.K} needs {self.K - 1} bin edges, got {len(self.bin_edges)}")
        if list(self.bin_edges) != sorted(self.bin_edges):
            raise PartitionError("bin edges must be sorted")

    def assign(self, value: float) -> int:
        lo, hi = self.score_range
        if value < lo or value > hi:
            log.debug("score %s outside observed range [%s, %s]; clamped to an edge bin", value, lo, hi)
        return bisect.bisect_left(self.bin_edges, value) if self.bin_edges else 0

    def assign_subnet(self, space: SearchSpace, subnet: Subnet, probe_engine=None) -> int:
        return self.assign(score(self.criterion, space, subnet, probe_engine))

    @property
    def hash(self) -> str:
        doc = {
            "criterion": asdict(self.criterion),
            "K": self.K,
            "bin_edges": [float(e) for e in self.bin_edges],
            "seed": self.seed,
            "space_digest": self.space_digest,
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bin_edges"] = [float(e) for e in self.bin_edges]
        d["score_range"] = [float(v) for v in self.score_range]
        d["hash"] = self.hash
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Partition":
        d = dict(d)
        stored = d.pop("hash", None)
        d["criterion"] = Criterion(**d["criterion"])
        d["score_range"] = tuple(d["score_range"])
        p = cls(**d)
        if stored is not None and stored != p.hash:
            raise PartitionError("partition document hash does not match its contents")
        return p

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Partition":
        return cls.from_dict(json.loads(Path(path).read_text()))


def equal_mass_bins(values: Sequence[float], masses: Sequence[int], K: int) -> list[list[float]]:
    """Greedy contiguous grouping of sorted distinct values into K bins.

    Each bin takes values while doing so moves its mass closer to the
    remaining mass divided by the remaining bins, always leaving at least one
    value for every bin still to fill.
    """
    m = len(values)
    if K > m:
        raise PartitionError(f"only {m} distinct scores; cannot form K={K} bins, use a smaller K")
    bins = []
    i = 0
    remaining = float(sum(masses))
    for b in range(K - 1):
        left = K - b
        target = remaining / left
        cum = masses[i]
        j = i + 1
        while j < m - (left - 1) and abs(cum + masses[j] - target) < abs(cum - target):
            cum += masses[j]
            j += 1
        bins.append(list(values[i:j]))
        remaining -= cum
        i = j
    bins.append(list(values[i:]))
    return bins


def _scored_subnets(space, criterion, sample_budget, rng, probe_engine) -> tuple[list[float], bool]:
    if space.size <= sample_budget:
        subnets = enumerate_subnets(space, limit=sample_budget)
        exact = True
    else:
        subnets = (random_subnet(space, rng) for _ in range(sample_budget))
        exact = False
    return [score(criterion, space, s, probe_engine) for s in subnets], exact


def build_partition(space: SearchSpace, criterion: Criterion, K: int, sample_budget: int = 1_000_000,
                    seed: int = 0, probe_engine=None) -> Partition:
    if K < 1:
        raise PartitionError(f"K must be at least 1, got {K}")
    if criterion.needs_probe and probe_engine is None:
        raise ConfigurationError("LinearRegions needs a probe engine")
    rng = np.random.default_rng(seed)
    scores, exact = _scored_subnets(space, criterion, sample_budget, rng, probe_engine)
    hist = Counter(scores)
    values = sorted(hist)
    masses = [hist[v] for v in values]
    groups = equal_mass_bins(values, masses, K)
    sizes = [sum(hist[v] for v in g) for g in groups]
    if not exact:
        # sampled masses estimate the share of the full space
        sizes = [int(round(s * space.size / len(scores))) for s in sizes]
    return Partition(
        criterion=criterion,
        K=K,
        bin_edges=[float(g[-1]) for g in groups[:-1]],
        subspace_sizes=sizes,
        seed=seed,
        exact=exact,
        score_range=(float(values[0]), float(values[-1])),
        space_digest=space_digest(space),
        bin_values=[[float(v) for v in g] for g in groups] if len(values) <= 64 else [],
    )


# -- statistics ---------------------------------------------------------------

@dataclass
class PartitionStats:
    histograms: list[tuple[int, str, float, float, int]]  # (supernet, metric, bin_lo, bin_hi, count)
    summary: list[dict]
    values: dict[str, list[tuple[int, float]]]  # metric -> [(supernet, value)]

    def total_mass(self, metric: str) -> int:
        return sum(r[4] for r in self.histograms if r[1] == metric)


def partition_stats(space: SearchSpace, partition: Partition, oracle=None, dataset: str | None = None,
                    subnets: Iterable[Subnet] | None = None, bins: int = 20, probe_engine=None) -> PartitionStats:
    """Per-supernet FLOPs/params histograms and, with an oracle, accuracy medians.

    ``oracle`` is anything with ``accuracy(code, dataset)``; subnets missing
    from it are skipped for the accuracy metric only.
    """
    if subnets is None:
        subnets = enumerate_subnets(space)
    per_metric: dict[str, list[tuple[int, float]]] = {"flops": [], "params": []}
    if oracle is not None:
        per_metric["accuracy"] = []
    for s in subnets:
        k = partition.assign_subnet(space, s, probe_engine)
        per_metric["flops"].append((k, float(flops(space, s))))
        per_metric["params"].append((k, float(param_count(space, s))))
        if oracle is not None:
            acc = oracle.accuracy(encode(space, s), dataset)
            if acc is not None:
                per_metric["accuracy"].append((k, float(acc)))

    rows = []
    for metric, pairs in per_metric.items():
        if not pairs:
            continue
        allv = np.array([v for _, v in pairs])
        edges = np.histogram_bin_edges(allv, bins=bins)
        for k in range(partition.K):
            vk = np.array([v for kk, v in pairs if kk == k])
            counts, _ = np.histogram(vk, bins=edges)
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                rows.append((k, metric, float(lo), float(hi), int(c)))

    summary = []
    for k in range(partition.K):
        entry = {"supernet": k, "count": sum(1 for kk, _ in per_metric["flops"] if kk == k)}
        for metric, pairs in per_metric.items():
            vk = [v for kk, v in pairs if kk == k]
            entry[f"{metric}_median"] = float(np.median(vk)) if vk else float("nan")
        summary.append(entry)
    return PartitionStats(histograms=rows, summary=summary, values=per_metric)
