import csv
import hashlib
import json

import pytest
import yaml

from fewshot_nas.checkpoint import load_checkpoint
from fewshot_nas.cli import main, stage_seed
from fewshot_nas.evaloracle import save_oracle, synthetic_oracle
from fewshot_nas.partition import Partition
from fewshot_nas.space import load_space
from fewshot_nas.supernet import init_supernets


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(ln for ln in f if not ln.startswith("#")))


def make_config(tmp_path, name="run", **extra):
    doc = {
        "space": "toy3",
        "K": 3,
        "G": 2,
        "dataset": {"synthetic": {"n_train": 128, "n_test": 64}},
        "train": {"epochs": 2, "batch_size": 32},
        "oracle_train": {"epochs": 1, "batch_size": 32},
        "output": str(tmp_path / name),
    }
    doc.update(extra)
    p = tmp_path / f"{name}.yaml"
    p.write_text(yaml.safe_dump(doc))
    return p, tmp_path / name


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg, out = make_config(tmp)
    for cmd in ("split", "enumerate", "desk-oracle", "train", "search"):
        assert main([cmd, "-c", str(cfg)]) == 0, cmd
    assert main(["eval-rank", "-c", str(cfg), "--oracle", str(out / "oracle.csv")]) == 0
    return cfg, out


def test_split_nas201_covers_space(tmp_path):
    table = synthetic_oracle(load_space("nas201"), seed=0)
    save_oracle(table, tmp_path / "oracle.csv")
    cfg, out = make_config(tmp_path, space="nas201", oracle=str(tmp_path / "oracle.csv"))
    assert main(["split", "-c", str(cfg)]) == 0
    part = Partition.load(out / "partition.json")
    assert sum(part.subspace_sizes) == 15625
    rows = read_rows(out / "partition_stats.csv")
    for metric in ("flops", "params", "accuracy"):
        assert sum(int(r["count"]) for r in rows if r["metric"] == metric) == 15625
    assert (out / "fig_accuracy_dist.png").exists()


def test_split_k1_trivial(tmp_path):
    cfg, out = make_config(tmp_path, K=1)
    assert main(["split", "-c", str(cfg)]) == 0
    assert Partition.load(out / "partition.json").subspace_sizes == [27]


@pytest.mark.parametrize("argv", [
    ["split", "--K", "0"],
    ["split", "--G", "3"],
    ["split", "--set", "train.nonsense=1"],
    ["split", "--space", "no-such-space"],
    ["split", "--criterion", "Depth"],
])
def test_usage_errors_exit_2(tmp_path, argv):
    cfg, _ = make_config(tmp_path)
    assert main(argv + ["-c", str(cfg)]) == 2


def test_unknown_command_exit_2():
    assert main(["frobnicate"]) == 2


def test_missing_config_exit_2(tmp_path):
    assert main(["split", "-c", str(tmp_path / "absent.yaml")]) == 2


def test_train_without_partition_exit_2(tmp_path):
    cfg, _ = make_config(tmp_path)
    assert main(["train", "-c", str(cfg)]) == 2


def test_pipeline_outputs(pipeline):
    _, out = pipeline
    manifest = json.loads((out / "manifest.json").read_text())
    for name, entry in manifest["artifacts"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == entry["sha256"]
    assert set(manifest["commands"]) == {"split", "enumerate", "desk-oracle", "train", "search", "eval-rank"}
    assert len(read_rows(out / "subnets.csv")) == 27
    assert len(read_rows(out / "rank_scatter.csv")) == 27
    summary = {r["metric"]: r["value"] for r in read_rows(out / "rank_summary.csv") if not r["supernet"]}
    assert -1.0 <= float(summary["tau_all"]) <= 1.0
    assert "tau_top27" in summary  # top_M clamped to the space size


def test_headers_carry_seeds(pipeline):
    _, out = pipeline
    first = (out / "train_log.csv").read_text().splitlines()[0]
    assert first.startswith("# fewshot-nas train root_seed=0")
    assert f"train={stage_seed(0, 'train')}" in first


def test_training_log_balanced(pipeline):
    _, out = pipeline
    rows = read_rows(out / "train_log.csv")
    assert [int(r["epoch"]) for r in rows] == [0, 1]
    last = rows[-1]
    assert last["updates_k0"] == last["updates_k1"] == last["updates_k2"] == last["step"]


def test_rerun_is_byte_identical(pipeline):
    cfg, out = pipeline
    before = {n: (out / n).read_bytes() for n in ("partition.json", "partition_stats.csv", "search_result.json",
                                                    "search_history.csv")}
    assert main(["split", "-c", str(cfg)]) == 0
    assert main(["search", "-c", str(cfg)]) == 0
    for n, data in before.items():
        assert (out / n).read_bytes() == data, n


def test_search_matches_exhaustive_on_tiny_space(pipeline):
    cfg, out = pipeline
    evo = json.loads((out / "search_result.json").read_text())["best"]
    assert main(["search", "-c", str(cfg), "--exhaustive"]) == 0
    exh = json.loads((out / "search_result.json").read_text())["best"]
    assert evo["encoding"] == exh["encoding"]
    assert main(["search", "-c", str(cfg)]) == 0  # restore the evolutionary result


def test_search_infeasible_exit_1(pipeline):
    cfg, _ = pipeline
    assert main(["search", "-c", str(cfg), "--max-flops", "1"]) == 1


def test_eval_rank_requires_oracle(pipeline):
    cfg, _ = pipeline
    assert main(["eval-rank", "-c", str(cfg)]) == 2


def test_enumerate_refuses_large_space(tmp_path):
    cfg, _ = make_config(tmp_path, space="nas201")
    assert main(["enumerate", "-c", str(cfg), "--limit", "100"]) == 1


def test_train_zero_epochs_checkpoints_init(tmp_path):
    cfg, out = make_config(tmp_path, train={"epochs": 0, "batch_size": 32})
    assert main(["split", "-c", str(cfg)]) == 0
    assert main(["train", "-c", str(cfg)]) == 0
    sp = load_space("toy3")
    part = Partition.load(out / "partition.json")
    store = load_checkpoint(out / "checkpoint.bin", sp, part)
    assert store.checksums() == init_supernets(sp, part, 2, stage_seed(0, "init")).checksums()
    assert store.step == 0


def test_train_resume_continues_step_counter(tmp_path):
    cfg, out = make_config(tmp_path)
    assert main(["split", "-c", str(cfg)]) == 0
    assert main(["train", "-c", str(cfg), "--epochs", "1"]) == 0
    steps = read_rows(out / "train_log.csv")[-1]["step"]
    assert main(["train", "-c", str(cfg), "--epochs", "2", "--resume"]) == 0
    rows = read_rows(out / "train_log.csv")
    assert [int(r["epoch"]) for r in rows] == [0, 1]
    assert int(rows[-1]["step"]) == 2 * int(steps)


def test_train_refuses_other_partition(tmp_path):
    cfg, out = make_config(tmp_path)
    assert main(["split", "-c", str(cfg)]) == 0
    assert main(["train", "-c", str(cfg), "--K", "2"]) == 1


def test_eval_rank_compare_checkpoint(pipeline, tmp_path):
    cfg, out = pipeline
    other_cfg, other = make_config(tmp_path, name="g1", G=1)
    assert main(["split", "-c", str(other_cfg)]) == 0
    assert main(["train", "-c", str(other_cfg)]) == 0
    assert main(["eval-rank", "-c", str(cfg), "--oracle", str(out / "oracle.csv"),
                 "--compare-checkpoint", str(other / "checkpoint.bin")]) == 0
    summary = {r["metric"]: r["value"] for r in read_rows(out / "rank_summary.csv") if not r["supernet"]}
    assert -1.0 <= float(summary["tau_vs_G1"]) <= 1.0
