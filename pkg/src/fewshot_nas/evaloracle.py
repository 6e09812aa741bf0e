"""Ground-truth tables, stand-alone desk oracles and rank-correlation reports."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import Splits
from .space import SearchSpace, Subnet, decode, encode, enumerate_subnets, flops, param_count
from .training import TrainConfig, accuracy, train_standalone

log = logging.getLogger(__name__)

ORACLE_COLUMNS = ("encoding", "dataset", "accuracy", "flops", "params")


class OracleParseError(ValueError):
    pass


class OracleIntegrityError(ValueError):
    pass


@dataclass(frozen=True)
class OracleRow:
    accuracy: float  # percent
    flops: int
    params: int


@dataclass
class OracleTable:
    rows: dict[str, dict[int, OracleRow]] = field(default_factory=dict)
    provenance: str = ""

    @property
    def datasets(self) -> list[str]:
        return sorted(self.rows)

    def _resolve(self, dataset: str | None) -> str | None:
        if dataset is not None:
            return dataset
        if len(self.rows) == 1:
            return next(iter(self.rows))
        if not self.rows:
            return None
        raise KeyError(f"table holds datasets {self.datasets}; name one")

    def add(self, dataset: str, code: int, row: OracleRow) -> None:
        if not 0.0 <= row.accuracy <= 100.0:
            raise OracleIntegrityError(f"accuracy {row.accuracy} for {code} outside [0, 100]")
        table = self.rows.setdefault(dataset, {})
        if code in table:
            raise OracleIntegrityError(f"duplicate encoding {code} for dataset {dataset!r}")
        table[code] = row

    def accuracy(self, code: int, dataset: str | None = None) -> float | None:
        ds = self._resolve(dataset)
        row = self.rows.get(ds, {}).get(code) if ds is not None else None
        return None if row is None else row.accuracy

    def accuracies(self, dataset: str | None = None) -> dict[int, float]:
        ds = self._resolve(dataset)
        return {} if ds is None else {c: r.accuracy for c, r in self.rows[ds].items()}

    def __len__(self) -> int:
        return sum(len(t) for t in self.rows.values())


def load_oracle(path: str | Path) -> OracleTable:
    table = OracleTable(provenance=str(path))
    with open(path, newline="") as f:
        lines = (ln for ln in f if not ln.startswith("#"))
        reader = csv.reader(lines)
        header = next(reader, None)
        if header is None:
            raise OracleParseError(f"{path}: empty file, expected header {','.join(ORACLE_COLUMNS)}")
        if tuple(h.strip() for h in header) != ORACLE_COLUMNS:
            raise OracleParseError(f"{path}: header {header} != {list(ORACLE_COLUMNS)}")
        for rec in reader:
            line = reader.line_num
            if not rec:
                continue
            if len(rec) != len(ORACLE_COLUMNS):
                raise OracleParseError(f"{path}:{line}: expected {len(ORACLE_COLUMNS)} fields, got {len(rec)}")
            try:
                code = int(rec[0])
                row = OracleRow(float(rec[2]), int(float(rec[3])), int(float(rec[4])))
            except ValueError as exc:
                raise OracleParseError(f"{path}:{line}: {exc}") from None
            if code < 0:
                raise OracleParseError(f"{path}:{line}: negative encoding {code}")
            try:
                table.add(rec[1], code, row)
            except OracleIntegrityError as exc:
                raise OracleIntegrityError(f"{path}:{line}: {exc}") from None
    return table


def save_oracle(table: OracleTable, path: str | Path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as f:
        if header_comment:
            f.write(f"# {header_comment}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(ORACLE_COLUMNS)
        for ds in table.datasets:
            for code in sorted(table.rows[ds]):
                r = table.rows[ds][code]
                w.writerow([code, ds, repr(r.accuracy), r.flops, r.params])


def synthetic_oracle(space: SearchSpace, seed: int = 0, dataset: str = "synthetic",
                     noise: float = 0.5) -> OracleTable:
    """A smooth-plus-noise accuracy landscape over an enumerable space.

    Accuracy = 60 + per-(edge, op) effects + pairwise edge interactions +
    Gaussian noise, clipped to [0, 100]. Useful wherever real tabular ground
    truth is not available.
    """
    rng = np.random.default_rng([seed, 31337])
    effects = [rng.normal(0.0, 3.0, size=a) for a in space.arities]
    pairs = {}
    for j in range(space.num_edges):
        for k in range(j + 1, space.num_edges):
            pairs[j, k] = rng.normal(0.0, 0.6, size=(space.arities[j], space.arities[k]))
    table = OracleTable(provenance=f"synthetic(seed={seed})")
    for s in enumerate_subnets(space):
        c = s.choices
        acc = 60.0 + sum(effects[j][c[j]] for j in range(len(c)))
        acc += sum(m[c[j], c[k]] for (j, k), m in pairs.items())
        acc += rng.normal(0.0, noise)
        table.add(dataset, encode(space, s),
                  OracleRow(float(np.clip(round(acc, 4), 0.0, 100.0)), flops(space, s), param_count(space, s)))
    return table


def _desk_one(args) -> tuple[int, float]:
    space, code, splits, config = args
    subnet = decode(space, code)
    params = train_standalone(space, subnet, splits.train, config)
    return code, 100.0 * accuracy(params, space, subnet, splits.test)


def build_desk_oracle(space: SearchSpace, splits: Splits, config: TrainConfig,
                      subnets: Iterable[Subnet] | None = None, dataset: str = "desk",
                      workers: int = 1) -> OracleTable:
    """Train every subnet from scratch and record its test accuracy (percent)."""
    codes = sorted({encode(space, s) for s in (subnets if subnets is not None else enumerate_subnets(space))})
    jobs = [(space, c, splits, config) for c in codes]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_desk_one, jobs))
    else:
        results = [_desk_one(j) for j in jobs]
    table = OracleTable(provenance=f"desk(seed={config.seed}, epochs={config.epochs})")
    for code, acc in results:
        s = decode(space, code)
        table.add(dataset, code, OracleRow(acc, flops(space, s), param_count(space, s)))
    return table


# -- Kendall tau-b --------------------------------------------------------------

def _merge_count(a: list) -> tuple[list, int]:
    """Stable merge sort returning (sorted, number of inversions)."""
    n = len(a)
    if n < 2:
        return a, 0
    width = 1
    swaps = 0
    src = list(a)
    while width < n:
        dst = []
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j = lo, mid
            while i < mid and j < hi:
                if src[j] < src[i]:
                    dst.append(src[j])
                    swaps += mid - i
                    j += 1
                else:
                    dst.append(src[i])
                    i += 1
            dst.extend(src[i:mid])
            dst.extend(src[j:hi])
        src = dst
        width *= 2
    return src, swaps


def _tied_pairs(sorted_vals: Sequence) -> int:
    total = 0
    run = 1
    for prev, cur in zip(sorted_vals, sorted_vals[1:]):
        if cur == prev:
            run += 1
        else:
            total += run * (run - 1) // 2
            run = 1
    return total + run * (run - 1) // 2


def kendall_tau_counts(x: Sequence[float], y: Sequence[float]) -> tuple[int, int, int]:
    """(concordant - discordant, pairs untied in x, pairs untied in y), O(n log n)."""
    n = len(x)
    if n != len(y):
        raise ValueError(f"length mismatch: {n} vs {len(y)}")
    if n < 2:
        raise ValueError("kendall tau needs at least 2 observations")
    pairs = sorted(zip(x, y))
    n0 = n * (n - 1) // 2
    n1 = _tied_pairs([p[0] for p in pairs])
    n3 = _tied_pairs(pairs)
    ys, swaps = _merge_count([p[1] for p in pairs])
    n2 = _tied_pairs(ys)
    return n0 - n1 - n2 + n3 - 2 * swaps, n0 - n1, n0 - n2


def kendall_tau(x: Sequence[float], y: Sequence[float]) -> float:
    """Tie-corrected Kendall tau-b."""
    s, dx, dy = kendall_tau_counts(x, y)
    if dx == 0 or dy == 0:
        raise ValueError("kendall tau is undefined when one input is entirely tied")
    return s / math.sqrt(dx * dy)


# -- rank report ----------------------------------------------------------------

@dataclass
class RankReport:
    tau_all: float
    tau_top: float
    top_M: int
    n: int
    medians: list[dict]
    scatter: list[tuple[int, float, float, int]]  # (code, oracle_acc, estimated_acc, supernet_k)


def _safe_tau(x, y) -> float:
    try:
        return kendall_tau(x, y)
    except ValueError as exc:
        log.warning("tau undefined: %s", exc)
        return float("nan")


def rank_report(estimates: Mapping[int, float], oracle: OracleTable | Mapping[int, float], top_M: int = 150,
                dataset: str | None = None, supernet_of: Mapping[int, int] | None = None) -> RankReport:
    """Rank agreement between supernet estimates and ground truth.

    ``top_M`` keeps the M best subnets by ground truth (ties by smaller code);
    it is clamped to the number of shared subnets with a warning.
    """
    truth = oracle.accuracies(dataset) if isinstance(oracle, OracleTable) else dict(oracle)
    shared = sorted(set(estimates) & set(truth))
    if not shared:
        raise ValueError("estimates and oracle share no subnet encodings")
    missing = set(estimates) - set(truth)
    if missing:
        log.warning("%d estimated subnets have no oracle row; ignored", len(missing))
    m = top_M
    if m > len(shared):
        log.warning("top_M=%d exceeds the %d shared subnets; clamped", top_M, len(shared))
        m = len(shared)
    tau_all = _safe_tau([truth[c] for c in shared], [estimates[c] for c in shared])
    top = sorted(shared, key=lambda c: (-truth[c], c))[:m]
    tau_top = _safe_tau([truth[c] for c in top], [estimates[c] for c in top]) if m >= 2 else float("nan")
    ks = {c: (supernet_of[c] if supernet_of is not None else 0) for c in shared}
    medians = []
    for k in sorted(set(ks.values())):
        members = [c for c in shared if ks[c] == k]
        medians.append({
            "supernet": k,
            "count": len(members),
            "oracle_median": float(np.median([truth[c] for c in members])),
            "estimated_median": float(np.median([estimates[c] for c in members])),
        })
    scatter = [(c, float(truth[c]), float(estimates[c]), ks[c]) for c in shared]
    return RankReport(tau_all, tau_top, m, len(shared), medians, scatter)
