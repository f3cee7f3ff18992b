"""Dataset ingestion: benchmark loaders, per-class indices, synthetic blobs."""

import gzip
import json
import os
import pickle
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ConfigurationError, DataLoadError

KNOWN_DATASETS = ("mnist", "fashionmnist", "svhn", "cifar10", "cifar100", "blobs-file")


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray  # [C]
    std: np.ndarray  # [C]


@dataclass
class LabeledDataset:
    """Immutable normalized dataset with a per-class index.

    images: [N, C, H, W] float32, already normalized with norm_stats.
    """

    images: torch.Tensor
    labels: torch.Tensor
    class_index: dict = field(default_factory=dict)
    norm_stats: NormStats = None
    name: str = "unnamed"

    def __post_init__(self):
        if self.class_index == {}:
            idx = {}
            for i, y in enumerate(self.labels.tolist()):
                idx.setdefault(int(y), []).append(i)
            self.class_index = idx
        if not torch.isfinite(self.images).all():
            raise DataLoadError(f"dataset {self.name}: non-finite pixels after normalization")

    @property
    def num_classes(self):
        return len(self.class_index)

    @property
    def image_shape(self):
        return tuple(self.images.shape[1:])

    def __len__(self):
        return self.images.shape[0]


def class_batch(ds, class_id, indices):
    """Stack the given samples of one class, preserving order."""
    allowed = set(ds.class_index.get(int(class_id), []))
    if not allowed:
        raise IndexError(f"class {class_id} not present")
    for i in indices:
        if int(i) not in allowed:
            raise IndexError(f"index {i} does not belong to class {class_id}")
    idx = torch.as_tensor(list(indices), dtype=torch.long)
    return ds.images[idx], ds.labels[idx]


def make_blobs(num_classes, per_class, shape, separation, seed):
    """Isotropic Gaussian clouds in pixel space, one per class.

    Class means are mutually at distance >= separation; per-coordinate noise
    is unit variance. Deterministic given seed. The result lives directly in
    normalized space (norm_stats is identity).
    """
    if num_classes < 2 or per_class < 4 or separation <= 0:
        raise ConfigurationError(
            f"make_blobs: need num_classes >= 2, per_class >= 4, separation > 0 "
            f"(got {num_classes}, {per_class}, {separation})"
        )
    c, h, w = shape
    dim = c * h * w
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((num_classes, dim))
    d2 = ((means[:, None, :] - means[None, :, :]) ** 2).sum(-1)
    min_dist = np.sqrt(d2[~np.eye(num_classes, dtype=bool)].min())
    means *= separation / min_dist
    images = np.empty((num_classes * per_class, dim), dtype=np.float32)
    labels = np.empty(num_classes * per_class, dtype=np.int64)
    for k in range(num_classes):
        sl = slice(k * per_class, (k + 1) * per_class)
        images[sl] = means[k] + rng.standard_normal((per_class, dim))
        labels[sl] = k
    stats = NormStats(mean=np.zeros(c, dtype=np.float32), std=np.ones(c, dtype=np.float32))
    ds = LabeledDataset(
        images=torch.from_numpy(images.reshape(-1, c, h, w)),
        labels=torch.from_numpy(labels),
        norm_stats=stats,
        name="blobs",
    )
    ds.class_means = means  # generator ground truth, handy for oracle tests
    return ds


def save_blobs_file(ds, path):
    """Self-describing dump: JSON header line + raw little-endian float32, C-order."""
    images = ds.images.numpy().astype("<f4")
    header = {
        "shape": list(images.shape),
        "classes": sorted(int(c) for c in ds.class_index),
        "labels": ds.labels.tolist(),
        "mean": np.asarray(ds.norm_stats.mean, dtype=float).tolist(),
        "std": np.asarray(ds.norm_stats.std, dtype=float).tolist(),
    }
    with open(path, "wb") as f:
        f.write((json.dumps(header) + "\n").encode())
        f.write(np.ascontiguousarray(images).tobytes())


def _load_blobs_file(path):
    try:
        with open(path, "rb") as f:
            header = json.loads(f.readline().decode())
            raw = f.read()
    except (OSError, ValueError) as e:
        raise DataLoadError(f"cannot read blobs file {path}: {e}")
    shape = header["shape"]
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise DataLoadError(f"blobs file {path}: payload {len(raw)} bytes, expected {expected}")
    images = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    labels = np.asarray(header["labels"], dtype=np.int64)
    stats = NormStats(
        mean=np.asarray(header["mean"], dtype=np.float32),
        std=np.asarray(header["std"], dtype=np.float32),
    )
    return LabeledDataset(
        images=torch.from_numpy(images), labels=torch.from_numpy(labels),
        norm_stats=stats, name="blobs-file",
    )


def _open_maybe_gz(root, names):
    for name in names:
        p = os.path.join(root, name)
        if os.path.exists(p):
            return gzip.open(p, "rb") if p.endswith(".gz") else open(p, "rb")
    raise DataLoadError(f"missing dataset file: {os.path.join(root, names[0])}")


def _read_idx(f):
    magic, = struct.unpack(">i", f.read(4))
    ndim = magic & 0xFF
    dims = struct.unpack(">" + "i" * ndim, f.read(4 * ndim))
    data = np.frombuffer(f.read(), dtype=np.uint8)
    if data.size != int(np.prod(dims)):
        raise DataLoadError("truncated idx payload")
    return data.reshape(dims)


def _raw_idx_split(root, split):
    prefix = "train" if split == "train" else "t10k"
    with _open_maybe_gz(root, [f"{prefix}-images-idx3-ubyte", f"{prefix}-images-idx3-ubyte.gz",
                               f"{prefix}-images.idx3-ubyte"]) as f:
        images = _read_idx(f).astype(np.float32) / 255.0
    with _open_maybe_gz(root, [f"{prefix}-labels-idx1-ubyte", f"{prefix}-labels-idx1-ubyte.gz",
                               f"{prefix}-labels.idx1-ubyte"]) as f:
        labels = _read_idx(f).astype(np.int64)
    return images[:, None, :, :], labels


def _raw_svhn_split(root, split):
    from scipy.io import loadmat

    path = os.path.join(root, f"{split}_32x32.mat")
    if not os.path.exists(path):
        raise DataLoadError(f"missing dataset file: {path}")
    mat = loadmat(path)
    images = mat["X"].transpose(3, 2, 0, 1).astype(np.float32) / 255.0
    labels = mat["y"].reshape(-1).astype(np.int64) % 10
    return images, labels


def _unpickle(path):
    if not os.path.exists(path):
        raise DataLoadError(f"missing dataset file: {path}")
    with open(path, "rb") as f:
        return pickle.load(f, encoding="latin1")


def _raw_cifar10_split(root, split):
    base = os.path.join(root, "cifar-10-batches-py")
    files = [f"data_batch_{i}" for i in range(1, 6)] if split == "train" else ["test_batch"]
    xs, ys = [], []
    for name in files:
        d = _unpickle(os.path.join(base, name))
        xs.append(np.asarray(d["data"], dtype=np.uint8))
        ys.extend(d["labels"])
    images = np.concatenate(xs).reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return images, np.asarray(ys, dtype=np.int64)


def _raw_cifar100_split(root, split):
    d = _unpickle(os.path.join(root, "cifar-100-python", split))
    images = np.asarray(d["data"], dtype=np.uint8).reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return images, np.asarray(d["fine_labels"], dtype=np.int64)


_RAW_LOADERS = {
    "mnist": _raw_idx_split,
    "fashionmnist": _raw_idx_split,
    "svhn": _raw_svhn_split,
    "cifar10": _raw_cifar10_split,
    "cifar100": _raw_cifar100_split,
}


def load_dataset(name, root, split="train"):
    """Load a benchmark split, normalized with training-split channel statistics."""
    if name not in KNOWN_DATASETS:
        raise ConfigurationError(f"unknown dataset {name!r}; expected one of {KNOWN_DATASETS}")
    if name == "blobs-file":
        path = root if os.path.isfile(root) else os.path.join(root, "blobs.bin")
        return _load_blobs_file(path)
    loader = _RAW_LOADERS[name]
    train_images, train_labels = loader(root, "train")
    mean = train_images.mean(axis=(0, 2, 3))
    std = train_images.std(axis=(0, 2, 3))
    std = np.where(std > 0, std, 1.0).astype(np.float32)
    if split == "train":
        images, labels = train_images, train_labels
    else:
        images, labels = loader(root, split)
    images = (images - mean[None, :, None, None]) / std[None, :, None, None]
    return LabeledDataset(
        images=torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32)),
        labels=torch.from_numpy(labels),
        norm_stats=NormStats(mean=mean, std=std),
        name=name,
    )
