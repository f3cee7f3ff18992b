"""On-disk formats: syn.bin image dumps, manifests, PNG grids, checkpoints.

syn.bin is one JSON header line (shape, dtype tag, labels, ipc, norm stats)
followed by raw little-endian float32 pixels in C order. The binary dump
preserves unclamped normalized values; PNG export denormalizes and clamps.
"""

import dataclasses
import hashlib
import json
import os

import numpy as np
import torch

from .errors import DataLoadError
from .match import SyntheticSet


def config_hash(cfg):
    if dataclasses.is_dataclass(cfg):
        cfg = dataclasses.asdict(cfg)
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_syn(path, syn, norm_stats=None, extra=None):
    images = syn.images.detach().numpy().astype("<f4")
    header = {
        "shape": list(images.shape),
        "dtype": "<f4",
        "ipc": syn.ipc,
        "labels": syn.labels.tolist(),
        "update_count": syn.update_count,
    }
    if norm_stats is not None:
        header["mean"] = np.asarray(norm_stats.mean, dtype=float).tolist()
        header["std"] = np.asarray(norm_stats.std, dtype=float).tolist()
    if extra:
        header.update(extra)
    with open(path, "wb") as f:
        f.write((json.dumps(header, sort_keys=True) + "\n").encode())
        f.write(np.ascontiguousarray(images).tobytes())


def load_syn(path):
    try:
        with open(path, "rb") as f:
            header = json.loads(f.readline().decode())
            raw = f.read()
    except (OSError, ValueError) as e:
        raise DataLoadError(f"cannot read synthetic dump {path}: {e}")
    shape = header["shape"]
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise DataLoadError(f"{path}: payload {len(raw)} bytes, expected {expected}")
    images = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    syn = SyntheticSet(
        images=torch.from_numpy(images).requires_grad_(True),
        labels=torch.as_tensor(header["labels"], dtype=torch.long),
        ipc=int(header["ipc"]),
        update_count=int(header.get("update_count", 0)),
    )
    return syn, header


def denormalize_to_uint8(images, norm_stats):
    arr = images.detach().numpy()
    mean = np.asarray(norm_stats.mean, dtype=np.float32)[None, :, None, None]
    std = np.asarray(norm_stats.std, dtype=np.float32)[None, :, None, None]
    pixels = (arr * std + mean) * 255.0
    return np.clip(pixels, 0, 255).astype(np.uint8)


def save_png_grid(path, syn, norm_stats, pad=2):
    """One row per class, ipc columns."""
    from PIL import Image

    imgs = denormalize_to_uint8(syn.images, norm_stats)
    n, c, h, w = imgs.shape
    classes = sorted(set(syn.labels.tolist()))
    rows, cols = len(classes), syn.ipc
    grid = np.zeros((rows * (h + pad) + pad, cols * (w + pad) + pad, c), dtype=np.uint8)
    for r, cls in enumerate(classes):
        idx = [i for i, y in enumerate(syn.labels.tolist()) if y == cls]
        for col, i in enumerate(idx[:cols]):
            y0 = pad + r * (h + pad)
            x0 = pad + col * (w + pad)
            grid[y0:y0 + h, x0:x0 + w] = imgs[i].transpose(1, 2, 0)
    if c == 1:
        Image.fromarray(grid[:, :, 0], mode="L").save(path)
    else:
        Image.fromarray(grid, mode="RGB").save(path)


def save_checkpoint(ckpt_dir, syn, metrics, norm_stats, outer_iter, cfg):
    os.makedirs(ckpt_dir, exist_ok=True)
    state = {
        "outer_iter": int(outer_iter),
        "update_count": syn.update_count,
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
    }
    with open(os.path.join(ckpt_dir, "state.json"), "w") as f:
        json.dump(state, f, indent=2, sort_keys=True)
    save_syn(os.path.join(ckpt_dir, "syn.bin"), syn, norm_stats,
             extra={"config_hash": state["config_hash"]})
    metrics.to_csv(os.path.join(ckpt_dir, "metrics.csv"))


def load_checkpoint(ckpt_dir):
    with open(os.path.join(ckpt_dir, "state.json")) as f:
        state = json.load(f)
    syn, header = load_syn(os.path.join(ckpt_dir, "syn.bin"))
    from .metrics import MetricsLog

    metrics_path = os.path.join(ckpt_dir, "metrics.csv")
    metrics = MetricsLog.from_csv(metrics_path) if os.path.exists(metrics_path) else None
    return syn, metrics, state, header
