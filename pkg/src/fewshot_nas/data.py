"""Datasets: a seeded synthetic generator and a little-endian binary layout.

On-disk layout of a dataset directory::

    <dir>/train/images.bin   b"FSIM" | u32 version=1 | u32 n, c, h, w | float32[n*c*h*w]
    <dir>/train/labels.bin   b"FSLB" | u32 version=1 | u32 n          | int32[n]
    <dir>/test/...           same two files

All integers and floats are little-endian; images are NCHW, row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGES_MAGIC = b"FSIM"
LABELS_MAGIC = b"FSLB"
FORMAT_VERSION = 1


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # (n, c, h, w) float32
    labels: np.ndarray  # (n,) int64

    def __post_init__(self):
        if self.images.ndim != 4 or self.labels.shape != (self.images.shape[0],):
            raise DatasetError(f"images {self.images.shape} and labels {self.labels.shape} disagree")

    def __len__(self) -> int:
        return self.labels.shape[0]

    def halves(self) -> tuple["Dataset", "Dataset"]:
        """First half for training, second half for validation."""
        h = len(self) // 2
        return Dataset(self.images[:h], self.labels[:h]), Dataset(self.images[h:], self.labels[h:])

    def batches(self, batch_size: int, rng: np.random.Generator | None = None, drop_last: bool = True):
        n = len(self)
        order = rng.permutation(n) if rng is not None else np.arange(n)
        stop = n - n % batch_size if drop_last else n
        for i in range(0, stop, batch_size):
            idx = order[i:i + batch_size]
            yield self.images[idx], self.labels[idx]


@dataclass
class Splits:
    train: Dataset
    test: Dataset


@dataclass(frozen=True)
class SyntheticSpec:
    n_train: int = 2048
    n_test: int = 1024
    num_classes: int = 4
    shape: tuple[int, int, int] = (3, 8, 8)
    blobs: int = 3
    noise: float = 2.5
    seed: int = 0


def _prototype(rng, shape, blobs):
    c, h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    img = np.zeros(shape)
    for ch in range(c):
        for _ in range(blobs):
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            sy, sx = rng.uniform(0.6, 1.8, size=2)
            img[ch] += rng.choice([-1.0, 1.0]) * np.exp(-((yy - cy) ** 2 / (2 * sy ** 2) + (xx - cx) ** 2 / (2 * sx ** 2)))
        img[ch] -= img[ch].mean()
        img[ch] /= img[ch].std() + 1e-12
    return img


def synthetic(spec: SyntheticSpec = SyntheticSpec()) -> Splits:
    """Gaussian clusters around per-class blob images.

    Each class prototype is zero-mean per channel, so globally pooled linear
    features carry no class signal; telling classes apart needs spatial
    nonlinear processing. Samples are the prototype shifted by up to one
    pixel plus i.i.d. Gaussian noise.
    """
    rng = np.random.default_rng([spec.seed, 104729])
    protos = np.stack([_prototype(rng, spec.shape, spec.blobs) for _ in range(spec.num_classes)])

    def draw(n):
        labels = rng.integers(spec.num_classes, size=n)
        shifts = rng.integers(-1, 2, size=(n, 2))
        imgs = protos[labels].copy()
        for i, (dy, dx) in enumerate(shifts):
            imgs[i] = np.roll(imgs[i], (int(dy), int(dx)), axis=(1, 2))
        imgs += spec.noise * rng.standard_normal(imgs.shape)
        return Dataset(imgs.astype(np.float32), labels.astype(np.int64))

    return Splits(train=draw(spec.n_train), test=draw(spec.n_test))


# -- binary I/O ---------------------------------------------------------------

def write_split(ds: Dataset, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    n, c, h, w = ds.images.shape
    with open(d / "images.bin", "wb") as f:
        f.write(IMAGES_MAGIC + struct.pack("<5I", FORMAT_VERSION, n, c, h, w))
        f.write(ds.images.astype("<f4").tobytes())
    with open(d / "labels.bin", "wb") as f:
        f.write(LABELS_MAGIC + struct.pack("<2I", FORMAT_VERSION, n))
        f.write(ds.labels.astype("<i4").tobytes())


def read_split(directory: str | Path) -> Dataset:
    d = Path(directory)
    raw = (d / "images.bin").read_bytes()
    if raw[:4] != IMAGES_MAGIC:
        raise DatasetError(f"{d / 'images.bin'}: bad magic")
    version, n, c, h, w = struct.unpack_from("<5I", raw, 4)
    if version != FORMAT_VERSION:
        raise DatasetError(f"{d / 'images.bin'}: unsupported version {version}")
    body = raw[24:]
    if len(body) != 4 * n * c * h * w:
        raise DatasetError(f"{d / 'images.bin'}: expected {n * c * h * w} floats, found {len(body) // 4}")
    images = np.frombuffer(body, dtype="<f4").reshape(n, c, h, w).astype(np.float32)

    raw = (d / "labels.bin").read_bytes()
    if raw[:4] != LABELS_MAGIC:
        raise DatasetError(f"{d / 'labels.bin'}: bad magic")
    version, nl = struct.unpack_from("<2I", raw, 4)
    if version != FORMAT_VERSION or nl != n:
        raise DatasetError(f"{d / 'labels.bin'}: version {version}, {nl} labels for {n} images")
    labels = np.frombuffer(raw[12:], dtype="<i4").astype(np.int64)
    if labels.shape != (n,):
        raise DatasetError(f"{d / 'labels.bin'}: truncated label block")
    return Dataset(images, labels)


def write_dataset(splits: Splits, directory: str | Path) -> None:
    write_split(splits.train, Path(directory) / "train")
    write_split(splits.test, Path(directory) / "test")


def read_dataset(directory: str | Path) -> Splits:
    return Splits(train=read_split(Path(directory) / "train"), test=read_split(Path(directory) / "test"))
