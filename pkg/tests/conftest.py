import numpy as np
import pytest
import torch

from repdistill.data import make_blobs
from repdistill.models import ModelSpec, build_model

BLOB_SHAPE = (1, 8, 8)


@pytest.fixture(scope="session")
def blob_ds():
    return make_blobs(3, 100, BLOB_SHAPE, 10.0, 0)


@pytest.fixture(scope="session")
def blob_spec():
    return ModelSpec(depth=2, width=32, norm="instance", in_shape=BLOB_SHAPE, num_classes=3)


@pytest.fixture()
def blob_model(blob_spec):
    return build_model(blob_spec, 0)


def nearest_centroid_accuracy(ds):
    X = ds.images.reshape(len(ds), -1).numpy()
    y = ds.labels.numpy()
    classes = sorted(ds.class_index)
    mus = np.stack([X[y == c].mean(0) for c in classes])
    d2 = ((X[:, None, :] - mus[None]) ** 2).sum(-1)
    pred = np.asarray(classes)[np.argmin(d2, axis=1)]
    return float((pred == y).mean())


def assert_tensors_equal(a, b):
    assert torch.equal(a, b)
