import struct

import numpy as np
import pytest

from fewshot_nas.checkpoint import CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint
from fewshot_nas.data import (
    Dataset,
    DatasetError,
    SyntheticSpec,
    read_dataset,
    read_split,
    synthetic,
    write_dataset,
)
from fewshot_nas.partition import Criterion, PartitionMismatchError, build_partition
from fewshot_nas.space import load_space
from fewshot_nas.supernet import init_supernets
from fewshot_nas.training import TrainConfig, train


def test_synthetic_deterministic_and_shaped():
    a = synthetic(SyntheticSpec(n_train=64, n_test=32, seed=1))
    b = synthetic(SyntheticSpec(n_train=64, n_test=32, seed=1))
    np.testing.assert_array_equal(a.train.images, b.train.images)
    assert a.train.images.shape == (64, 3, 8, 8) and a.train.images.dtype == np.float32
    assert a.test.labels.max() < 4
    c = synthetic(SyntheticSpec(n_train=64, n_test=32, seed=2))
    assert not np.array_equal(a.train.images, c.train.images)


def test_dataset_round_trip(tmp_path):
    splits = synthetic(SyntheticSpec(n_train=40, n_test=10, seed=0))
    write_dataset(splits, tmp_path)
    back = read_dataset(tmp_path)
    np.testing.assert_array_equal(back.train.images, splits.train.images)
    np.testing.assert_array_equal(back.test.labels, splits.test.labels)


def test_dataset_header_little_endian(tmp_path):
    splits = synthetic(SyntheticSpec(n_train=5, n_test=3, seed=0))
    write_dataset(splits, tmp_path)
    raw = (tmp_path / "train" / "images.bin").read_bytes()
    assert raw[:4] == b"FSIM"
    assert struct.unpack("<5I", raw[4:24]) == (1, 5, 3, 8, 8)
    assert len(raw) == 24 + 4 * 5 * 3 * 8 * 8


def test_dataset_corruption_detected(tmp_path):
    splits = synthetic(SyntheticSpec(n_train=5, n_test=3, seed=0))
    write_dataset(splits, tmp_path)
    p = tmp_path / "train" / "images.bin"
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(DatasetError, match="expected"):
        read_split(tmp_path / "train")
    p.write_bytes(b"XXXX" + p.read_bytes()[4:])
    with pytest.raises(DatasetError, match="magic"):
        read_split(tmp_path / "train")


def test_dataset_shape_mismatch():
    with pytest.raises(DatasetError):
        Dataset(np.zeros((3, 1, 2, 2), np.float32), np.zeros(2, np.int64))


def test_halves_and_batches():
    ds = Dataset(np.zeros((10, 1, 2, 2), np.float32), np.arange(10))
    a, b = ds.halves()
    assert list(a.labels) == [0, 1, 2, 3, 4] and list(b.labels) == [5, 6, 7, 8, 9]
    assert [len(y) for _, y in ds.batches(4)] == [4, 4]
    assert [len(y) for _, y in ds.batches(4, drop_last=False)] == [4, 4, 2]
    seen = np.concatenate([y for _, y in ds.batches(5, np.random.default_rng(0))])
    assert sorted(seen) == list(range(10))


# -- checkpoints -------------------------------------------------------------------

@pytest.fixture
def trained():
    sp = load_space("toy3")
    part = build_partition(sp, Criterion("NonlinearCount"), 3)
    store = init_supernets(sp, part, 2, 0)
    data = synthetic(SyntheticSpec(n_train=64, n_test=8, seed=0)).train
    train(store, data, TrainConfig(epochs=2, batch_size=16, lr0=0.05), until_epoch=1)
    return sp, part, store, data


def test_checkpoint_round_trip(tmp_path, trained):
    sp, part, store, _ = trained
    p = tmp_path / "ck.bin"
    save_checkpoint(store, p)
    back = load_checkpoint(p, sp, part)
    assert back.checksums() == store.checksums()
    assert (back.G, back.K, back.epoch, back.step) == (2, 3, 1, store.step)
    assert back.update_counts == store.update_counts
    for k in range(3):
        assert set(back.opt_state[k]) == set(store.opt_state[k])
        for n in store.opt_state[k]:
            np.testing.assert_array_equal(back.opt_state[k][n], store.opt_state[k][n])


def test_resume_from_checkpoint_matches(tmp_path, trained):
    sp, part, store, data = trained
    cfg = TrainConfig(epochs=2, batch_size=16, lr0=0.05)
    save_checkpoint(store, tmp_path / "ck.bin")
    resumed = load_checkpoint(tmp_path / "ck.bin", sp, part)
    train(resumed, data, cfg)
    train(store, data, cfg)
    assert resumed.checksums() == store.checksums()


def test_checkpoint_rejects_other_partition(tmp_path, trained):
    sp, _, store, _ = trained
    save_checkpoint(store, tmp_path / "ck.bin")
    with pytest.raises(PartitionMismatchError):
        load_checkpoint(tmp_path / "ck.bin", sp, build_partition(sp, Criterion("NonlinearCount"), 2))


def test_checkpoint_rejects_other_space(tmp_path, trained):
    _, _, store, _ = trained
    save_checkpoint(store, tmp_path / "ck.bin")
    with pytest.raises(CheckpointError, match="search space"):
        load_checkpoint(tmp_path / "ck.bin", load_space("nas201_desk"))


def test_checkpoint_corruption(tmp_path, trained):
    _, _, store, _ = trained
    p = tmp_path / "ck.bin"
    save_checkpoint(store, p)
    p.write_bytes(p.read_bytes() + b"\0")
    with pytest.raises(CheckpointError, match="trailing"):
        read_checkpoint(p)
    p.write_bytes(b"NOTACKPT" + p.read_bytes()[8:])
    with pytest.raises(CheckpointError, match="magic"):
        read_checkpoint(p)
