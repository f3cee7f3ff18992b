"""Matching objectives over a shared random model: gradient matching with
metric mse/mae/cosine, and distribution matching over mean embeddings."""

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .augment import DEFAULT_AUG
from .errors import (
    ConfigurationError,
    NumericalInstabilityError,
    ShapeMismatchError,
    UsageError,
)
from .models import ModelSpec, embed, forward_logits

METRICS = ("mse", "mae", "cosine")


@dataclass
class SyntheticSet:
    """Learnable images with fixed labels, ipc entries per class."""

    images: torch.Tensor  # [num_classes * ipc, C, H, W], leaf with requires_grad
    labels: torch.Tensor  # [num_classes * ipc] int64, immutable
    ipc: int
    update_count: int = 0

    @property
    def num_classes(self):
        return int(self.labels.max().item()) + 1

    def class_indices(self, class_id):
        return torch.nonzero(self.labels == int(class_id), as_tuple=True)[0]

    def class_images(self, class_id):
        return self.images[self.class_indices(class_id)]

    def clone_images(self):
        return self.images.detach().clone()


def random_synthetic(ds, ipc, seed):
    """ipc uniformly sampled real images per class, without replacement."""
    if ipc < 1:
        raise ConfigurationError(f"ipc must be >= 1, got {ipc}")
    import numpy as np

    rng = np.random.default_rng(seed)
    images, labels = [], []
    for c in sorted(ds.class_index):
        idx = ds.class_index[c]
        if ipc > len(idx):
            raise ConfigurationError(f"ipc {ipc} exceeds class {c} population {len(idx)}")
        picks = rng.choice(len(idx), size=ipc, replace=False)
        images.append(ds.images[torch.as_tensor([idx[i] for i in picks], dtype=torch.long)])
        labels.extend([c] * ipc)
    return SyntheticSet(
        images=torch.cat(images).clone().requires_grad_(True),
        labels=torch.as_tensor(labels, dtype=torch.long),
        ipc=int(ipc),
    )


@dataclass
class MatchConfig:
    """Knobs of one distillation run; defaults follow the standard recipe."""

    objective: str = "gradient"  # gradient | distribution
    metric: str = "mse"  # mse | mae | cosine
    aug_spec: tuple = DEFAULT_AUG
    num_subclusters: int = 128  # real mini-batch = num_subclusters * per_cluster
    per_cluster: int = 1
    cluster_interval: int = 10
    interval_unit: str = "outer"  # outer | inner
    outer_iters: int = 1200
    inner_loops: int = 100
    lr_images: float = 0.005
    lr_model: float = 0.01
    model_train_source: str = "real"  # real | synthetic
    ipc: int = 10
    model: ModelSpec = field(default_factory=ModelSpec)
    train_batch: int = 128
    seed: int = 0

    def validate(self):
        if self.objective not in ("gradient", "distribution"):
            raise ConfigurationError(f"unknown objective {self.objective!r}")
        if self.metric not in METRICS:
            raise ConfigurationError(f"unknown metric {self.metric!r}")
        if self.num_subclusters < 1 or self.per_cluster < 1:
            raise ConfigurationError("num_subclusters and per_cluster must be >= 1")
        if self.cluster_interval < 1:
            raise ConfigurationError("cluster_interval must be >= 1")
        if self.interval_unit not in ("outer", "inner"):
            raise ConfigurationError(f"unknown interval_unit {self.interval_unit!r}")
        if self.outer_iters < 0 or self.inner_loops < 1:
            raise ConfigurationError("outer_iters must be >= 0, inner_loops >= 1")
        if self.lr_images <= 0 or self.lr_model <= 0:
            raise ConfigurationError("learning rates must be > 0")
        if self.model_train_source not in ("real", "synthetic"):
            raise ConfigurationError(f"unknown model_train_source {self.model_train_source!r}")
        if self.ipc < 1:
            raise ConfigurationError("ipc must be >= 1")
        return self

    @property
    def real_batch_size(self):
        return self.num_subclusters * self.per_cluster


def class_gradient(model, batch, labels, create_graph=False):
    """Per-layer gradient of the mean cross-entropy over a single-class batch."""
    if batch.shape[0] == 0:
        raise UsageError("empty batch")
    if labels.unique().numel() != 1:
        raise UsageError("class_gradient expects a single-class batch")
    loss = F.cross_entropy(forward_logits(model, batch), labels)
    return list(torch.autograd.grad(loss, list(model.parameters()), create_graph=create_graph))


def _layer_cosine_loss(a, b):
    fa, fb = a.flatten(), b.flatten()
    na, nb = fa.norm().detach(), fb.norm().detach()
    if na == 0 and nb == 0:
        return fa.sum() * 0.0  # identical zero gradients
    if na == 0 or nb == 0:
        return fa.sum() * 0.0 + 1.0  # zero-vector similarity treated as 0
    return 1.0 - (fa * fb).sum() / (fa.norm() * fb.norm() + 1e-12)


def gradient_match_loss(g_s, g_t, metric):
    """Layerwise metric over two gradient lists, summed over layers."""
    if metric not in METRICS:
        raise ConfigurationError(f"unknown metric {metric!r}")
    if len(g_s) != len(g_t) or any(a.shape != b.shape for a, b in zip(g_s, g_t)):
        raise ShapeMismatchError("gradient layer structures differ")
    total = torch.zeros(())
    for a, b in zip(g_s, g_t):
        if metric == "mse":
            total = total + ((a - b) ** 2).mean()
        elif metric == "mae":
            total = total + (a - b).abs().mean()
        else:
            total = total + _layer_cosine_loss(a, b)
    return total


def distribution_match_loss(model, real_batch, syn_batch):
    """Squared Euclidean distance between batch-mean embeddings."""
    if real_batch.shape[0] == 0 or syn_batch.shape[0] == 0:
        raise UsageError("empty batch")
    mu_r = embed(model, real_batch).mean(dim=0)
    mu_s = embed(model, syn_batch).mean(dim=0)
    return ((mu_s - mu_r) ** 2).sum()


def image_update_step(syn, class_id, loss, lr_images, context=""):
    """SGD step on one class's synthetic images; other classes untouched."""
    idx = syn.class_indices(class_id)
    if idx.numel() == 0:
        raise UsageError(f"class {class_id} not present in synthetic set")
    if loss.requires_grad:
        grad = torch.autograd.grad(loss, syn.images, allow_unused=True)[0]
    else:
        grad = None
    if grad is not None:
        if not torch.isfinite(grad).all():
            raise NumericalInstabilityError(f"non-finite image gradient {context}")
        with torch.no_grad():
            syn.images[idx] -= lr_images * grad[idx]
    syn.update_count += 1
    return syn
