"""Matching model family: ConvNet-D with instance normalization.

Block = 3x3 conv -> norm -> ReLU -> 2x2 average pool; a global average pool
feeds a single linear head, so the embedding dimension equals the width.
"""

import json
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, NumericalInstabilityError, ShapeMismatchError


@dataclass(frozen=True)
class ModelSpec:
    depth: int = 3
    width: int = 128
    norm: str = "instance"  # instance | batch | none
    in_shape: tuple = (3, 32, 32)
    num_classes: int = 10

    def __post_init__(self):
        if self.depth < 1 or self.width < 1:
            raise ConfigurationError(f"depth and width must be >= 1 (got {self.depth}, {self.width})")
        if self.norm not in ("instance", "batch", "none"):
            raise ConfigurationError(f"unknown norm {self.norm!r}")


def _make_norm(kind, channels):
    if kind == "instance":
        return nn.InstanceNorm2d(channels, affine=True)
    if kind == "batch":
        return nn.BatchNorm2d(channels)
    return nn.Identity()


class ConvNet(nn.Module):
    def __init__(self, spec):
        super().__init__()
        c, h, w = spec.in_shape
        layers = []
        in_ch = c
        for _ in range(spec.depth):
            if h < 2 or w < 2:
                raise ConfigurationError(
                    f"depth {spec.depth} collapses a {spec.in_shape} input below 1x1"
                )
            layers += [
                nn.Conv2d(in_ch, spec.width, 3, padding=1),
                _make_norm(spec.norm, spec.width),
                nn.ReLU(inplace=True),
                nn.AvgPool2d(2),
            ]
            in_ch = spec.width
            h, w = h // 2, w // 2
        self.blocks = nn.Sequential(*layers)
        self.head = nn.Linear(spec.width, spec.num_classes)

    def features(self, x):
        z = self.blocks(x)
        return F.adaptive_avg_pool2d(z, 1).flatten(1)

    def forward(self, x):
        return self.head(self.features(x))


@dataclass
class Model:
    spec: ModelSpec
    net: ConvNet
    seed: int

    def parameters(self):
        return self.net.parameters()

    def named_parameters(self):
        return self.net.named_parameters()


def _init_parameters(net, seed):
    # uniform fan-in scaling for weights, zero biases
    g = torch.Generator().manual_seed(int(seed))
    for m in net.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            fan_in = m.weight[0].numel()
            bound = 1.0 / np.sqrt(fan_in)
            with torch.no_grad():
                m.weight.uniform_(-bound, bound, generator=g)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, (nn.InstanceNorm2d, nn.BatchNorm2d)):
            if m.affine:
                with torch.no_grad():
                    m.weight.fill_(1.0)
                    m.bias.zero_()


def build_model(spec, seed):
    """Freshly initialized model; identical parameters for identical (spec, seed)."""
    net = ConvNet(spec)
    _init_parameters(net, seed)
    net.train()
    return Model(spec=spec, net=net, seed=int(seed))


def _check_batch(model, batch):
    if batch.ndim != 4 or tuple(batch.shape[1:]) != tuple(model.spec.in_shape):
        raise ShapeMismatchError(
            f"batch shape {tuple(batch.shape)} incompatible with model input {model.spec.in_shape}"
        )


def forward_logits(model, batch):
    _check_batch(model, batch)
    return model.net(batch)


def embed(model, batch):
    """Penultimate pooled feature vectors [B, width]."""
    _check_batch(model, batch)
    return model.net.features(batch)


def sgd_step(model, batch, labels, lr):
    """One plain SGD step on mean cross-entropy; updates model parameters."""
    if lr < 0:
        raise ConfigurationError(f"lr must be >= 0, got {lr}")
    loss = F.cross_entropy(forward_logits(model, batch), labels)
    if not torch.isfinite(loss):
        raise NumericalInstabilityError(f"non-finite training loss {loss.item()}")
    grads = torch.autograd.grad(loss, list(model.parameters()))
    with torch.no_grad():
        for p, g in zip(model.parameters(), grads):
            p -= lr * g
    return model


def save_model(model, path):
    """Header JSON line (spec, seed, tensor layout) + raw float32 little-endian tensors."""
    named = [(n, p.detach().numpy().astype("<f4")) for n, p in model.named_parameters()]
    header = {
        "spec": asdict(model.spec),
        "seed": model.seed,
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in named],
    }
    with open(path, "wb") as f:
        f.write((json.dumps(header) + "\n").encode())
        for _, a in named:
            f.write(np.ascontiguousarray(a).tobytes())


def load_model(path):
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode())
        raw = f.read()
    spec_d = header["spec"]
    spec_d["in_shape"] = tuple(spec_d["in_shape"])
    spec = ModelSpec(**spec_d)
    model = build_model(spec, header["seed"])
    offset = 0
    params = dict(model.named_parameters())
    with torch.no_grad():
        for t in header["tensors"]:
            n = int(np.prod(t["shape"]))
            arr = np.frombuffer(raw, dtype="<f4", count=n, offset=offset).reshape(t["shape"])
            params[t["name"]].copy_(torch.from_numpy(arr.copy()))
            offset += n * 4
    return model
