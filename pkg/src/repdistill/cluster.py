"""Per-class k-means in embedding space, representative mini-batches and
clustering-based synthetic initialization."""

from dataclasses import dataclass, field

import numpy as np
import torch

from . import kernels
from .errors import ConfigurationError, EmptyStateError
from .match import SyntheticSet
from .models import embed

DEFAULT_MAX_ITER = 100
DEFAULT_TOL = 1e-4


@dataclass
class ClusterAssignment:
    class_id: int
    centers: np.ndarray  # [k, d] float32
    membership: dict  # sample index -> cluster id
    center_sample: dict  # cluster id -> sample index nearest its center
    objective: float  # sum of squared member-to-center distances
    k: int
    sq_dist: dict = field(default_factory=dict)  # sample index -> squared distance
    objective_history: list = field(default_factory=list)


def _kmeanspp_seed(points, k, rng):
    m = points.shape[0]
    chosen = [int(rng.integers(m))]
    d2 = kernels.pairwise_sq_dists_numpy(points, points[chosen[-1:]])[:, 0]
    while len(chosen) < k:
        total = d2.sum()
        if total <= 0:
            remaining = [i for i in range(m) if i not in set(chosen)]
            chosen.append(int(rng.choice(remaining)))
        else:
            chosen.append(int(rng.choice(m, p=d2 / total)))
        d2 = np.minimum(d2, kernels.pairwise_sq_dists_numpy(points, points[chosen[-1:]])[:, 0])
    return points[chosen].copy()


def _repair_empty(points, centers, labels, d2):
    # move the globally farthest point onto each empty cluster's center
    for j in range(centers.shape[0]):
        if not np.any(labels == j):
            far = int(np.argmax(d2))
            centers[j] = points[far]
            labels[far] = j
            d2[far] = 0.0
    return centers, labels, d2


def kmeans(points, k, seed, max_iter=DEFAULT_MAX_ITER, tol=DEFAULT_TOL, class_id=-1):
    """k-means++ seeding followed by Lloyd iterations.

    Distances run in float32 with float64 objective accumulation; the returned
    clusters are all non-empty and the objective history is non-increasing.
    """
    points = np.ascontiguousarray(points, dtype=np.float32)
    m = points.shape[0]
    if k < 1 or k > m:
        raise ConfigurationError(f"k must be in [1, {m}], got {k}")
    rng = np.random.default_rng(seed)
    centers = _kmeanspp_seed(points, k, rng)
    history = []
    labels = None
    for _ in range(max_iter):
        labels, d2 = kernels.assign_clusters(points, centers)
        centers, labels, d2 = _repair_empty(points, centers, labels, d2)
        history.append(float(np.sum(d2, dtype=np.float64)))
        new_centers = np.empty_like(centers)
        for j in range(k):
            new_centers[j] = points[labels == j].mean(axis=0, dtype=np.float64)
        shift = float(np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).mean())
        centers = new_centers
        if shift < tol:
            break
    labels, d2 = kernels.assign_clusters(points, centers)
    centers, labels, d2 = _repair_empty(points, centers, labels, d2)
    history.append(float(np.sum(d2, dtype=np.float64)))
    center_sample = {}
    for j in range(k):
        members = np.flatnonzero(labels == j)
        center_sample[j] = int(members[np.argmin(d2[members])])
    return ClusterAssignment(
        class_id=class_id,
        centers=centers,
        membership={int(i): int(labels[i]) for i in range(m)},
        center_sample=center_sample,
        objective=history[-1],
        k=k,
        sq_dist={int(i): float(d2[i]) for i in range(m)},
        objective_history=history,
    )


def class_embeddings(ds, class_id, model):
    idx = ds.class_index[int(class_id)]
    with torch.no_grad():
        feats = embed(model, ds.images[torch.as_tensor(idx, dtype=torch.long)])
    return np.asarray(idx), feats.numpy().astype(np.float32)


def cluster_class(ds, class_id, model, k, seed):
    """k-means over one class's embeddings; k is clamped to the class size."""
    idx, feats = class_embeddings(ds, class_id, model)
    k = min(int(k), len(idx))
    a = kmeans(feats, k, seed, class_id=int(class_id))
    remap = {int(local): int(idx[local]) for local in range(len(idx))}
    return ClusterAssignment(
        class_id=int(class_id),
        centers=a.centers,
        membership={remap[i]: c for i, c in a.membership.items()},
        center_sample={c: remap[i] for c, i in a.center_sample.items()},
        objective=a.objective,
        k=a.k,
        sq_dist={remap[i]: d for i, d in a.sq_dist.items()},
        objective_history=a.objective_history,
    )


def representative_batch(assignment, ds, model, n, seed=0):
    """The n members nearest each sub-cluster center, clusters in id order.

    Clusters smaller than n contribute all of their members.
    """
    if not assignment.membership:
        raise EmptyStateError("empty cluster assignment")
    if n < 1:
        raise ConfigurationError(f"n must be >= 1, got {n}")
    members = {j: [] for j in range(assignment.k)}
    for i, c in assignment.membership.items():
        members[c].append(i)
    batch = []
    for j in range(assignment.k):
        ranked = sorted(members[j], key=lambda i: (assignment.sq_dist[i], i))
        batch.extend(ranked[: min(n, len(ranked))])
    return batch


def init_synthetic(ds, model, ipc, seed):
    """Per class, cluster into ipc sub-clusters and copy each center sample."""
    if ipc < 1:
        raise ConfigurationError(f"ipc must be >= 1, got {ipc}")
    for c, idx in ds.class_index.items():
        if ipc > len(idx):
            raise ConfigurationError(f"ipc {ipc} exceeds class {c} population {len(idx)}")
    seeds = np.random.SeedSequence(seed).spawn(ds.num_classes)
    images, labels = [], []
    for c in sorted(ds.class_index):
        a = cluster_class(ds, c, model, ipc, seeds[c].entropy)
        picks = [a.center_sample[j] for j in range(a.k)]
        images.append(ds.images[torch.as_tensor(picks, dtype=torch.long)])
        labels.extend([c] * a.k)
    return SyntheticSet(
        images=torch.cat(images).clone().requires_grad_(True),
        labels=torch.as_tensor(labels, dtype=torch.long),
        ipc=int(ipc),
    )
