"""Evaluation and diagnostics: train-on-synthetic accuracy, MMD,
gradient-norm statistics and feature-migration traces."""

import csv
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import kernels
from .augment import augment_pair
from .errors import ShapeMismatchError, UsageError
from .models import build_model, embed, forward_logits


@dataclass
class MetricsLog:
    """Append-only (outer_iter, inner_step, class_id, metric, value) rows."""

    rows: list = field(default_factory=list)
    config_hash: str = ""
    seed: int = 0

    def log(self, outer_iter, inner_step, class_id, metric, value):
        value = float(value)
        if not np.isfinite(value):
            raise ValueError(f"non-finite metric {metric} at ({outer_iter},{inner_step})")
        self.rows.append((int(outer_iter), int(inner_step), int(class_id), metric, value))

    def series(self, metric, class_id=None):
        return [
            (o, s, v)
            for o, s, c, m, v in self.rows
            if m == metric and (class_id is None or c == class_id)
        ]

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["outer_iter", "inner_step", "class_id", "metric", "value"])
            w.writerows(self.rows)

    @classmethod
    def from_csv(cls, path):
        log = cls()
        with open(path, newline="") as f:
            r = csv.reader(f)
            next(r)
            for o, s, c, m, v in r:
                log.rows.append((int(o), int(s), int(c), m, float(v)))
        return log


def median_bandwidth(pooled):
    """Median pairwise Euclidean distance; 1.0 when degenerate."""
    d2 = kernels.pairwise_sq_dists_numpy(pooled.astype(np.float64), pooled.astype(np.float64))
    iu = np.triu_indices(len(pooled), k=1)
    if len(iu[0]) == 0:
        return 1.0
    med = float(np.median(np.sqrt(d2[iu])))
    return med if med > 0 else 1.0


def mmd(features_a, features_b, bandwidth=None):
    """Biased squared-MMD with a Gaussian kernel (median-heuristic bandwidth)."""
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeMismatchError(f"feature dims differ: {a.shape} vs {b.shape}")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise UsageError("empty feature set")
    if bandwidth is None:
        bandwidth = median_bandwidth(np.concatenate([a, b]))
    kaa = kernels.gaussian_kernel_mean(a, a, bandwidth)
    kbb = kernels.gaussian_kernel_mean(b, b, bandwidth)
    kab = kernels.gaussian_kernel_mean(a, b, bandwidth)
    return max(kaa + kbb - 2.0 * kab, 0.0)


def linear_mmd(features_a, features_b):
    """Squared distance between mean embeddings (linear-kernel variant)."""
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise ShapeMismatchError(f"feature dims differ: {a.shape} vs {b.shape}")
    diff = a.mean(axis=0) - b.mean(axis=0)
    return float(diff @ diff)


def evaluate(syn, test, spec, epochs=1000, lr=0.01, repeats=5, seed=0,
             aug_spec=(), momentum=0.9, test_batch=1024):
    """Train `repeats` fresh models on the synthetic set, report test top-1.

    Returns (mean, std, per-repeat accuracies).
    """
    if epochs < 1 or repeats < 1:
        raise UsageError("epochs and repeats must be >= 1")
    images = syn.images.detach()
    labels = syn.labels
    accs = []
    seeds = np.random.SeedSequence(seed).spawn(repeats)
    for r in range(repeats):
        rng = np.random.default_rng(seeds[r])
        model = build_model(spec, int(rng.integers(2**31)))
        velocity = [torch.zeros_like(p) for p in model.parameters()]
        for _ in range(epochs):
            if aug_spec:
                batch, _ = augment_pair(images, images, aug_spec, int(rng.integers(2**31)))
            else:
                batch = images
            loss = F.cross_entropy(forward_logits(model, batch), labels)
            grads = torch.autograd.grad(loss, list(model.parameters()))
            with torch.no_grad():
                for p, v, g in zip(model.parameters(), velocity, grads):
                    v.mul_(momentum).add_(g)
                    p -= lr * v
        accs.append(top1_accuracy(model, test, batch_size=test_batch))
    accs = np.asarray(accs)
    return float(accs.mean()), float(accs.std()), accs.tolist()


def top1_accuracy(model, ds, batch_size=1024):
    hits = 0
    with torch.no_grad():
        for i in range(0, len(ds), batch_size):
            logits = forward_logits(model, ds.images[i:i + batch_size])
            hits += int((logits.argmax(dim=1) == ds.labels[i:i + batch_size]).sum())
    return hits / len(ds)


def per_sample_gradient_norms(model, images, labels):
    """L2 norm over all parameters of each sample's individual loss gradient."""
    norms = []
    params = list(model.parameters())
    for i in range(images.shape[0]):
        loss = F.cross_entropy(forward_logits(model, images[i:i + 1]), labels[i:i + 1])
        grads = torch.autograd.grad(loss, params)
        norms.append(float(torch.sqrt(sum((g**2).sum() for g in grads))))
    return np.asarray(norms)


def gradient_norm_stats(model, ds, class_id, indices=None):
    """Per-sample gradient norms of one class plus summary statistics."""
    if indices is None:
        indices = ds.class_index[int(class_id)]
    if len(indices) == 0:
        raise UsageError(f"class {class_id} is empty")
    idx = torch.as_tensor(list(indices), dtype=torch.long)
    norms = per_sample_gradient_norms(model, ds.images[idx], ds.labels[idx])
    summary = {
        "mean": float(norms.mean()),
        "variance": float(norms.var()),
        "quantiles": {q: float(np.quantile(norms, q)) for q in (0.1, 0.25, 0.5, 0.75, 0.9)},
    }
    return norms, summary


def feature_migration(snapshots, probe):
    """Mean embedding distance between consecutive synthetic-image versions."""
    if len(snapshots) < 2:
        raise UsageError("need at least 2 snapshots")
    shapes = {tuple(s.shape) for s in snapshots}
    if len(shapes) != 1:
        raise ShapeMismatchError(f"snapshot shapes differ: {shapes}")
    with torch.no_grad():
        feats = [embed(probe, s.detach()) for s in snapshots]
    return [
        float((feats[i + 1] - feats[i]).norm(dim=1).mean())
        for i in range(len(feats) - 1)
    ]
