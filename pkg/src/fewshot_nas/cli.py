"""Command-line entry point: ``fewshot-nas <command> [options]``.

Every command reads one YAML run config (all keys optional, desk-scale
defaults), applies ``--set key=value`` and flag overrides, and writes its
artifacts under the run's output directory together with ``manifest.json``
(artifact -> sha256). Output headers carry the root seed and the derived
per-stage seeds but no timestamps, so reruns are byte-identical.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import math
import sys
import zlib
from contextlib import nullcontext
from dataclasses import fields, replace
from pathlib import Path

import numpy as np
import yaml

from . import plotting
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import DatasetError, SyntheticSpec, read_dataset, synthetic
from .evaloracle import (
    OracleIntegrityError,
    OracleParseError,
    build_desk_oracle,
    kendall_tau,
    load_oracle,
    rank_report,
    save_oracle,
)
from .partition import (
    ConfigurationError,
    Criterion,
    Partition,
    PartitionError,
    PartitionMismatchError,
    build_partition,
    partition_stats,
    score,
    space_digest,
)
from .search import (
    Constraint,
    EvoConfig,
    InfeasibleError,
    describe,
    evolutionary_search,
    exhaustive_search,
    supernet_fitness,
    table_fitness,
)
from .space import (
    SpaceError,
    count_nonlinearities,
    decode,
    encode,
    enumerate_subnets,
    flops,
    load_space,
    param_count,
    random_subnet,
)
from .supernet import ProbeEngine, init_supernets
from .training import PRESETS, TrainConfig, accuracy, train

log = logging.getLogger("fewshot_nas")

EVO_PRESETS = {
    "full": EvoConfig(),
    "desk": EvoConfig(population=20, generations=10, parents_top=5, crossover_count=10, mutation_count=10),
}

# Desk values are the defaults; the full-scale training and evolution settings
# are one ``train_preset: full`` / ``evo_preset: full`` away.
DEFAULTS = {
    "space": "nas201_desk",
    "criterion": "NonlinearCount",
    "probe_samples": 8,
    "probe_seed": 0,
    "K": 3,
    "G": 2,
    "partition_sample_budget": 1_000_000,
    "stats_bins": 20,
    "train_preset": "desk",
    "train": {},
    "oracle_train": {"epochs": 10, "batch_size": 64, "lr0": 0.05},
    "evo_preset": "desk",
    "evo": {},
    "constraint": None,
    "dataset": {"synthetic": {}},
    "oracle": None,
    "oracle_dataset": None,
    "top_M": 150,
    "seed": 0,
    "output": "runs/default",
}

ALLOWED_G = (1, 2, 4)
STAGES = ("partition", "data", "init", "train", "search", "oracle")
ENUMERATE_LIMIT = 1_000_000


class ConfigError(ValueError):
    """Bad flags or config values; maps to exit status 2."""


USAGE_ERRORS = (ConfigError, ConfigurationError)
RUNTIME_ERRORS = (PartitionError, PartitionMismatchError, CheckpointError, InfeasibleError, SpaceError,
                  DatasetError, OracleParseError, OracleIntegrityError, OSError, ValueError, RuntimeError)


# -- configuration --------------------------------------------------------------

def stage_seed(root: int, stage: str) -> int:
    """Independent 32-bit seed for one pipeline stage, derived from the root seed."""
    return int(np.random.SeedSequence([root, zlib.crc32(stage.encode())]).generate_state(1)[0])


def _set_dotted(cfg: dict, key: str, value) -> None:
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = value


class RunConfig:
    """Validated view over the merged key-value document."""

    def __init__(self, doc: dict):
        self.doc = doc
        try:
            self.space = load_space(doc["space"])
        except (SpaceError, OSError) as exc:
            raise ConfigError(f"space: {exc}") from None
        self.seed = int(doc["seed"])
        self.K = int(doc["K"])
        self.G = int(doc["G"])
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        if self.G not in ALLOWED_G:
            raise ConfigError(f"G must be one of {ALLOWED_G}, got {self.G}")
        try:
            self.space.check_divisor(self.G)
        except SpaceError as exc:
            raise ConfigError(str(exc)) from None
        self.criterion = Criterion(doc["criterion"], int(doc["probe_samples"]), int(doc["probe_seed"]))
        self.output = Path(doc["output"])
        self.train = self._dataclass(TrainConfig, PRESETS, doc["train_preset"], doc["train"], "train")
        self.train = replace(self.train, seed=stage_seed(self.seed, "train"))
        self.oracle_train = self._dataclass(TrainConfig, PRESETS, "desk", doc["oracle_train"], "oracle_train")
        self.oracle_train = replace(self.oracle_train, seed=stage_seed(self.seed, "oracle"))
        evo = self._dataclass(EvoConfig, EVO_PRESETS, doc["evo_preset"], doc["evo"], "evo")
        self.evo = replace(evo, seed=stage_seed(self.seed, "search"), constraint=self._constraint(doc["constraint"]))
        self.top_M = int(doc["top_M"])
        if self.top_M < 2:
            raise ConfigError("top_M must be >= 2")
        self.oracle_path = self._path(doc["oracle"], "oracle")
        self.dataset_spec = doc["dataset"]
        if not isinstance(self.dataset_spec, dict) or len(self.dataset_spec) != 1 \
                or next(iter(self.dataset_spec)) not in ("synthetic", "dir"):
            raise ConfigError("dataset must be {synthetic: {...}} or {dir: path}")
        if "dir" in self.dataset_spec:
            self._path(self.dataset_spec["dir"], "dataset.dir")

    @staticmethod
    def _dataclass(cls, presets, name, overrides, key):
        if name not in presets:
            raise ConfigError(f"{key}: unknown preset {name!r}; choose from {sorted(presets)}")
        known = {f.name for f in fields(cls)}
        extra = set(overrides or {}) - known
        if extra:
            raise ConfigError(f"{key}: unknown keys {sorted(extra)}; allowed {sorted(known)}")
        try:
            return replace(presets[name], **(overrides or {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key}: {exc}") from None

    @staticmethod
    def _constraint(doc):
        if doc is None:
            return None
        try:
            c = Constraint(doc["metric"], float(doc["max_value"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"constraint: {exc}") from None
        return None if math.isinf(c.max_value) else c

    @staticmethod
    def _path(value, key):
        if value is None:
            return None
        p = Path(value)
        if not p.exists():
            raise ConfigError(f"{key}: {p} does not exist")
        return p

    def stage_seeds(self) -> dict[str, int]:
        return {s: stage_seed(self.seed, s) for s in STAGES}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.doc, sort_keys=True, default=str).encode()).hexdigest()[:16]

    def probe_engine(self):
        if not self.criterion.needs_probe:
            return None
        return ProbeEngine(self.space, self.criterion.probe_samples, self.criterion.probe_seed)

    def splits(self):
        if "dir" in self.dataset_spec:
            return read_dataset(self.dataset_spec["dir"])
        opts = dict(self.dataset_spec["synthetic"] or {})
        known = {f.name for f in fields(SyntheticSpec)} - {"shape", "num_classes", "seed"}
        extra = set(opts) - known
        if extra:
            raise ConfigError(f"dataset.synthetic: unknown keys {sorted(extra)}")
        spec = SyntheticSpec(**opts, shape=self.space.input_shape, num_classes=self.space.num_classes,
                             seed=stage_seed(self.seed, "data"))
        return synthetic(spec)

    def oracle(self, required: bool = False):
        if self.oracle_path is None:
            if required:
                raise ConfigError("this command needs an oracle table (--oracle or `oracle:` in the config)")
            return None
        return load_oracle(self.oracle_path)


def resolve_config(args) -> RunConfig:
    doc = copy.deepcopy(DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        loaded = yaml.safe_load(path.read_text()) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: expected a key-value document")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
        doc.update(loaded)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        if key.split(".")[0] not in DEFAULTS:
            raise ConfigError(f"--set: unknown key {key!r}")
        _set_dotted(doc, key, yaml.safe_load(value))
    for flag, key in (("space", "space"), ("criterion", "criterion"), ("K", "K"), ("G", "G"), ("seed", "seed"),
                      ("out", "output"), ("oracle", "oracle"), ("train_preset", "train_preset"),
                      ("evo_preset", "evo_preset"), ("top_M", "top_M")):
        value = getattr(args, flag, None)
        if value is not None:
            doc[key] = value
    if getattr(args, "epochs", None) is not None:
        doc["train"] = {**(doc["train"] or {}), "epochs": args.epochs}
    for metric in ("flops", "params"):
        cap = getattr(args, f"max_{metric}", None)
        if cap is not None:
            doc["constraint"] = {"metric": metric, "max_value": cap}
    return RunConfig(doc)


# -- outputs --------------------------------------------------------------------

class Run:
    """Output directory bookkeeping: headers, CSVs and the manifest."""

    def __init__(self, cfg: RunConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.dir = cfg.output
        self.dir.mkdir(parents=True, exist_ok=True)
        self.written: list[Path] = []

    def header(self) -> str:
        seeds = " ".join(f"{k}={v}" for k, v in self.cfg.stage_seeds().items())
        return f"fewshot-nas {self.command} root_seed={self.cfg.seed} {seeds} config={self.cfg.digest()}"

    def path(self, name: str) -> Path:
        return self.dir / name

    def track(self, path: Path) -> Path:
        self.written.append(Path(path))
        return Path(path)

    def write_csv(self, name: str, columns, rows) -> Path:
        p = self.path(name)
        with open(p, "w", newline="") as f:
            f.write(f"# {self.header()}\n")
            w = csv.writer(f, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
        return self.track(p)

    def write_json(self, name: str, doc) -> Path:
        p = self.path(name)
        p.write_text(json.dumps({"header": self.header(), **doc}, indent=2, sort_keys=True) + "\n")
        return self.track(p)

    def finish(self) -> Path:
        mpath = self.path("manifest.json")
        manifest = json.loads(mpath.read_text()) if mpath.exists() else {"artifacts": {}, "commands": {}}
        for p in self.written:
            manifest["artifacts"][p.name] = {
                "sha256": hashlib.sha256(p.read_bytes()).hexdigest(),
                "bytes": p.stat().st_size,
                "command": self.command,
            }
        manifest["commands"][self.command] = {
            "root_seed": self.cfg.seed,
            "stage_seeds": self.cfg.stage_seeds(),
            "config": self.cfg.doc,
        }
        mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
        return mpath


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _load_partition(run: Run, args) -> Partition:
    path = Path(args.partition) if getattr(args, "partition", None) else run.path("partition.json")
    if not path.exists():
        raise ConfigError(f"partition file {path} not found; run `fewshot-nas split` first")
    part = Partition.load(path)
    if part.space_digest and part.space_digest != space_digest(run.cfg.space):
        raise PartitionMismatchError(f"{path} was built for a different search space")
    if part.K != run.cfg.K or part.criterion.kind != run.cfg.criterion.kind:
        raise PartitionMismatchError(
            f"{path} has K={part.K}, criterion {part.criterion.kind}; config asks for "
            f"K={run.cfg.K}, criterion {run.cfg.criterion.kind}"
        )
    return part


def _checkpoint_path(run: Run, args) -> Path:
    return Path(args.checkpoint) if getattr(args, "checkpoint", None) else run.path("checkpoint.bin")


def _subnets_for_stats(space, seed, budget):
    if space.size <= ENUMERATE_LIMIT:
        return list(enumerate_subnets(space))
    rng = np.random.default_rng(seed)
    return [random_subnet(space, rng) for _ in range(budget)]


# -- commands -------------------------------------------------------------------

def cmd_split(args, cfg: RunConfig) -> int:
    run = Run(cfg, "split")
    probe = cfg.probe_engine()
    part = build_partition(cfg.space, cfg.criterion, cfg.K, int(cfg.doc["partition_sample_budget"]),
                           seed=stage_seed(cfg.seed, "partition"), probe_engine=probe)
    part.save(run.path("partition.json"))
    run.track(run.path("partition.json"))
    oracle = cfg.oracle()
    subnets = _subnets_for_stats(cfg.space, stage_seed(cfg.seed, "partition"), 20_000)
    stats = partition_stats(cfg.space, part, oracle, cfg.doc["oracle_dataset"], subnets,
                            bins=int(cfg.doc["stats_bins"]), probe_engine=probe)
    run.write_csv("partition_stats.csv", ["supernet", "metric", "bin_lo", "bin_hi", "count"], stats.histograms)
    cols = list(stats.summary[0])
    run.write_csv("partition_summary.csv", cols, [[e[c] for c in cols] for e in stats.summary])
    run.track(plotting.plot_metric_histograms(stats, run.path("fig_metric_hist.png")))
    if oracle is not None and stats.values.get("accuracy"):
        run.track(plotting.plot_accuracy_distributions(stats, run.path("fig_accuracy_dist.png")))
    run.finish()
    print(f"partition K={part.K} sizes={part.subspace_sizes} edges={part.bin_edges} -> {run.dir}")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    run = Run(cfg, "train")
    part = _load_partition(run, args)
    ck = _checkpoint_path(run, args)
    probe = cfg.probe_engine()
    if args.resume and ck.exists():
        store = load_checkpoint(ck, cfg.space, part, probe)
        if store.G != cfg.G:
            raise PartitionMismatchError(f"{ck} was trained with G={store.G}, config has G={cfg.G}")
        log.info("resuming from %s at epoch %d step %d", ck, store.epoch, store.step)
    else:
        store = init_supernets(cfg.space, part, cfg.G, stage_seed(cfg.seed, "init"), probe_engine=probe)
    train_set, _ = cfg.splits().train.halves()
    epoch_log = []
    log_path = run.path("train_log.csv")
    if args.resume and log_path.exists():
        epoch_log = _read_log(log_path)
        epoch_log = [r for r in epoch_log if r["epoch"] < store.epoch]
    if store.epoch == 0:
        save_checkpoint(store, ck, extra={"train": _asdict(cfg.train)})
    for e in range(store.epoch + 1, cfg.train.epochs + 1):
        _, rows = train(store, train_set, cfg.train, until_epoch=e)
        epoch_log += rows
        save_checkpoint(store, ck, extra={"train": _asdict(cfg.train)})
    run.track(ck)
    cols = ["epoch", "step", "lr"] + [f"loss_k{k}" for k in range(store.K)] + [f"updates_k{k}" for k in range(store.K)]
    run.write_csv("train_log.csv", cols, [[r[c] for c in cols] for r in epoch_log])
    run.track(plotting.plot_training_curves(epoch_log, run.path("fig_training.png")))
    run.finish()
    print(f"trained K={store.K} G={store.G} to epoch {store.epoch} (step {store.step}, "
          f"updates {store.update_counts}) -> {ck}")
    return 0


def _asdict(dc):
    return {f.name: getattr(dc, f.name) for f in fields(dc)}


def _read_log(path: Path) -> list[dict]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(ln for ln in f if not ln.startswith("#")))
    out = []
    for r in rows:
        out.append({k: (int(v) if k in ("epoch", "step") or k.startswith("updates_") else float(v))
                    for k, v in r.items()})
    return out


def _val_set(cfg: RunConfig):
    return cfg.splits().train.halves()[1]


def cmd_search(args, cfg: RunConfig) -> int:
    run = Run(cfg, "search")
    if args.fitness == "oracle":
        table = cfg.oracle(required=True).accuracies(cfg.doc["oracle_dataset"])
        fitness = table_fitness(cfg.space, table)
        source = "oracle"
    else:
        part = _load_partition(run, args)
        store = load_checkpoint(_checkpoint_path(run, args), cfg.space, part, cfg.probe_engine())
        fitness = supernet_fitness(store, part, _val_set(cfg))
        source = "supernet"
    if args.exhaustive:
        best = exhaustive_search(cfg.space, fitness, cfg.evo.constraint, limit=ENUMERATE_LIMIT)
        history, evaluated = [], cfg.space.size
    else:
        res = evolutionary_search(cfg.space, fitness, cfg.evo)
        best, history, evaluated = res.best, res.history, res.evaluated
    cons = cfg.evo.constraint
    run.write_json("search_result.json", {
        "best": describe(cfg.space, best),
        "fitness_source": source,
        "method": "exhaustive" if args.exhaustive else "evolutionary",
        "evaluated": evaluated,
        "constraint": None if cons is None else {"metric": cons.metric, "max_value": cons.max_value},
        "evo": {k: v for k, v in _asdict(cfg.evo).items() if k != "constraint"},
    })
    run.write_csv("search_history.csv", ["generation", "rank", "encoding", "fitness", "cost"], history)
    run.finish()
    print(f"best {best.code} {cfg.space.op_names(best.subnet)} fitness={best.fitness:.4f} cost={best.cost:.0f}")
    return 0


def _estimates(store, space, codes, val_set):
    out, ks = {}, {}
    for code in codes:
        s = decode(space, code)
        k = store.supernet_of(s)
        out[code] = 100.0 * accuracy(store.params[k], space, s, val_set)
        ks[code] = k
    return out, ks


def cmd_eval_rank(args, cfg: RunConfig) -> int:
    run = Run(cfg, "eval-rank")
    oracle = cfg.oracle(required=True)
    truth = oracle.accuracies(cfg.doc["oracle_dataset"])
    part = _load_partition(run, args)
    store = load_checkpoint(_checkpoint_path(run, args), cfg.space, part, cfg.probe_engine())
    codes = sorted(truth)
    if args.sample is not None and args.sample < len(codes):
        rng = np.random.default_rng(stage_seed(cfg.seed, "search"))
        codes = sorted(int(c) for c in rng.choice(codes, size=args.sample, replace=False))
    val_set = _val_set(cfg)
    est, ks = _estimates(store, cfg.space, codes, val_set)
    report = rank_report(est, truth, cfg.top_M, supernet_of=ks)
    run.write_csv("rank_scatter.csv", ["subnet_code", "oracle_acc", "estimated_acc", "supernet_k"], report.scatter)
    rows = [["tau_all", "", report.tau_all], [f"tau_top{report.top_M}", "", report.tau_top], ["n", "", report.n]]
    for m in report.medians:
        rows += [["count", m["supernet"], m["count"]], ["oracle_median", m["supernet"], m["oracle_median"]],
                 ["estimated_median", m["supernet"], m["estimated_median"]]]
    if args.compare_checkpoint:
        other = load_checkpoint(args.compare_checkpoint, cfg.space, part, cfg.probe_engine())
        est2, _ = _estimates(other, cfg.space, codes, val_set)
        try:
            tau_pair = kendall_tau([est[c] for c in codes], [est2[c] for c in codes])
        except ValueError:
            tau_pair = float("nan")
        rows.append([f"tau_vs_G{other.G}", "", tau_pair])
    run.write_csv("rank_summary.csv", ["metric", "supernet", "value"], rows)
    run.track(plotting.plot_rank_scatter(report, run.path("fig_rank_scatter.png")))
    run.finish()
    print(f"tau_all={report.tau_all:.4f} tau_top{report.top_M}={report.tau_top:.4f} n={report.n}")
    return 0


def cmd_enumerate(args, cfg: RunConfig) -> int:
    run = Run(cfg, "enumerate")
    part_path = run.path("partition.json")
    part = Partition.load(part_path) if part_path.exists() else None
    probe = cfg.probe_engine()
    rows = []
    for s in enumerate_subnets(cfg.space, limit=args.limit):
        row = [encode(cfg.space, s), "|".join(cfg.space.op_names(s)), count_nonlinearities(cfg.space, s),
               flops(cfg.space, s), param_count(cfg.space, s)]
        if part is not None:
            row += [score(part.criterion, cfg.space, s, probe), part.assign_subnet(cfg.space, s, probe)]
        rows.append(row)
    cols = ["encoding", "ops", "nonlinearities", "flops", "params"] + (["score", "supernet_k"] if part else [])
    run.write_csv("subnets.csv", cols, rows)
    run.finish()
    print(f"{len(rows)} subnets -> {run.path('subnets.csv')}")
    return 0


def cmd_desk_oracle(args, cfg: RunConfig) -> int:
    run = Run(cfg, "desk-oracle")
    splits = cfg.splits()
    subnets = None
    if args.sample is not None:
        rng = np.random.default_rng(stage_seed(cfg.seed, "oracle"))
        codes = rng.choice(cfg.space.size, size=min(args.sample, cfg.space.size), replace=False)
        subnets = [decode(cfg.space, int(c)) for c in codes]
    elif cfg.space.size > ENUMERATE_LIMIT:
        raise ConfigError("space too large to train exhaustively; pass --sample N")
    table = build_desk_oracle(cfg.space, splits, cfg.oracle_train, subnets, dataset=args.dataset_name,
                              workers=args.threads or 1)
    out = run.path(args.name)
    save_oracle(table, out, header_comment=run.header())
    run.track(out)
    run.finish()
    print(f"{len(table)} stand-alone accuracies -> {out}")
    return 0


COMMANDS = {
    "split": cmd_split,
    "train": cmd_train,
    "search": cmd_search,
    "eval-rank": cmd_eval_rank,
    "enumerate": cmd_enumerate,
    "desk-oracle": cmd_desk_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="YAML run config")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (dotted for nested, e.g. train.epochs=3)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="root seed")
    common.add_argument("--space", help="bundled space name or YAML path")
    common.add_argument("--criterion", choices=("NonlinearCount", "LinearRegions", "Flops", "Params"))
    common.add_argument("--K", type=int)
    common.add_argument("--G", type=int)
    common.add_argument("--oracle", help="oracle CSV (encoding,dataset,accuracy,flops,params)")
    common.add_argument("--threads", type=int, default=None, help="cap on worker processes and BLAS threads")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="fewshot-nas", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("split", parents=[common], help="partition the space and write statistics")

    p = sub.add_parser("train", parents=[common], help="train the K supernets")
    p.add_argument("--partition", help="partition JSON (default: <out>/partition.json)")
    p.add_argument("--checkpoint", help="checkpoint path (default: <out>/checkpoint.bin)")
    p.add_argument("--resume", action="store_true", help="continue from an existing checkpoint")
    p.add_argument("--epochs", type=int)
    p.add_argument("--train-preset", dest="train_preset", choices=sorted(PRESETS))

    p = sub.add_parser("search", parents=[common], help="evolutionary search for the best subnet")
    p.add_argument("--partition")
    p.add_argument("--checkpoint")
    p.add_argument("--fitness", choices=("supernet", "oracle"), default="supernet")
    p.add_argument("--exhaustive", action="store_true", help="score every subnet instead of evolving")
    p.add_argument("--max-flops", dest="max_flops", type=float)
    p.add_argument("--max-params", dest="max_params", type=float)
    p.add_argument("--evo-preset", dest="evo_preset", choices=sorted(EVO_PRESETS))

    p = sub.add_parser("eval-rank", parents=[common], help="rank correlation against an oracle table")
    p.add_argument("--partition")
    p.add_argument("--checkpoint")
    p.add_argument("--compare-checkpoint", dest="compare_checkpoint",
                   help="second checkpoint (e.g. another G) to correlate estimates with")
    p.add_argument("--top-M", dest="top_M", type=int)
    p.add_argument("--sample", type=int, help="evaluate a seeded random subset of the oracle's subnets")

    p = sub.add_parser("enumerate", parents=[common], help="list subnets with structural metrics")
    p.add_argument("--limit", type=int, default=ENUMERATE_LIMIT)

    p = sub.add_parser("desk-oracle", parents=[common], help="train subnets from scratch into an oracle table")
    p.add_argument("--name", default="oracle.csv")
    p.add_argument("--dataset-name", dest="dataset_name", default="desk")
    p.add_argument("--sample", type=int, help="train a seeded random subset of this size")
    return parser


def _thread_limit(threads):
    if not threads:
        return nullcontext()
    if threads < 1:
        raise ConfigError("--threads must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=threads)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        with _thread_limit(args.threads):
            return COMMANDS[args.command](args, cfg)
    except USAGE_ERRORS as exc:
        print(f"fewshot-nas {args.command}: configuration error: {exc}", file=sys.stderr)
        return 2
    except RUNTIME_ERRORS as exc:
        print(f"fewshot-nas {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
