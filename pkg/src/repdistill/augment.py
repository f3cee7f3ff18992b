"""Differentiable siamese augmentation.

One parameter vector is sampled per op per call and applied identically to
the real and synthetic batches; every transform is differentiable with
respect to the image pixels.
"""

import torch
import torch.nn.functional as F

from .errors import ConfigurationError, ShapeMismatchError

DEFAULT_AUG = ("flip", "rotate", "scale", "crop", "brightness", "saturation", "contrast", "cutout")

DEFAULT_RANGES = {
    "flip": {"p": 0.5},
    "rotate": {"degrees": 15.0},
    "scale": {"lo": 0.8, "hi": 1.2},
    "crop": {"pad": 4},
    "brightness": {"delta": 0.25},
    "saturation": {"delta": 0.5},
    "contrast": {"delta": 0.5},
    "cutout": {"max_frac": 0.5},
}


def _affine(x, mat):
    theta = mat.to(x.dtype).unsqueeze(0).expand(x.shape[0], 2, 3)
    grid = F.affine_grid(theta, list(x.shape), align_corners=False)
    return F.grid_sample(x, grid, align_corners=False, padding_mode="zeros")


def _apply_flip(x, p):
    return torch.flip(x, dims=[3]) if p["do"] else x


def _apply_rotate(x, p):
    t = torch.tensor(p["theta"])
    mat = torch.stack([
        torch.stack([torch.cos(t), -torch.sin(t), torch.tensor(0.0)]),
        torch.stack([torch.sin(t), torch.cos(t), torch.tensor(0.0)]),
    ])
    return _affine(x, mat)


def _apply_scale(x, p):
    s = 1.0 / p["scale"]
    mat = torch.tensor([[s, 0.0, 0.0], [0.0, s, 0.0]])
    return _affine(x, mat)


def _apply_crop(x, p):
    pad, dy, dx = p["pad"], p["dy"], p["dx"]
    h, w = x.shape[2], x.shape[3]
    padded = F.pad(x, (pad, pad, pad, pad))
    return padded[:, :, dy:dy + h, dx:dx + w]


def _apply_brightness(x, p):
    return x + p["shift"]


def _apply_saturation(x, p):
    m = x.mean(dim=1, keepdim=True)
    return (x - m) * p["factor"] + m


def _apply_contrast(x, p):
    m = x.mean(dim=(1, 2, 3), keepdim=True)
    return (x - m) * p["factor"] + m


def _apply_cutout(x, p):
    side, top, left = p["side"], p["top"], p["left"]
    if side == 0:
        return x
    mask = torch.ones(1, 1, x.shape[2], x.shape[3], dtype=x.dtype)
    mask[:, :, top:top + side, left:left + side] = 0.0
    return x * mask


_APPLY = {
    "flip": _apply_flip,
    "rotate": _apply_rotate,
    "scale": _apply_scale,
    "crop": _apply_crop,
    "brightness": _apply_brightness,
    "saturation": _apply_saturation,
    "contrast": _apply_contrast,
    "cutout": _apply_cutout,
}


def _u(g, lo, hi):
    return lo + (hi - lo) * torch.rand((), generator=g).item()


def _sample_op(name, ranges, hw, g):
    h, w = hw
    r = ranges
    if name == "flip":
        return {"do": torch.rand((), generator=g).item() < r["p"]}
    if name == "rotate":
        d = r["degrees"]
        return {"theta": _u(g, -d, d) * torch.pi / 180.0}
    if name == "scale":
        return {"scale": _u(g, r["lo"], r["hi"])}
    if name == "crop":
        pad = int(r["pad"])
        return {
            "pad": pad,
            "dy": int(torch.randint(0, 2 * pad + 1, (), generator=g)),
            "dx": int(torch.randint(0, 2 * pad + 1, (), generator=g)),
        }
    if name == "brightness":
        return {"shift": _u(g, -r["delta"], r["delta"])}
    if name in ("saturation", "contrast"):
        return {"factor": _u(g, 1.0 - r["delta"], 1.0 + r["delta"])}
    if name == "cutout":
        side = int(torch.randint(0, int(min(h, w) * r["max_frac"]) + 1, (), generator=g))
        return {
            "side": side,
            "top": int(torch.randint(0, h - side + 1, (), generator=g)),
            "left": int(torch.randint(0, w - side + 1, (), generator=g)),
        }
    raise ConfigurationError(f"unknown augmentation {name!r}")


def _normalize_spec(aug_spec):
    out = []
    for entry in aug_spec:
        if isinstance(entry, str):
            name, override = entry, {}
        else:
            name, override = entry
        if name not in _APPLY:
            raise ConfigurationError(f"unknown augmentation {name!r}")
        ranges = dict(DEFAULT_RANGES[name])
        ranges.update(override)
        out.append((name, ranges))
    return out


def sample_params(aug_spec, hw, seed):
    """Draw the shared per-op parameter vectors for one siamese call."""
    g = torch.Generator().manual_seed(int(seed))
    return [(name, _sample_op(name, ranges, hw, g)) for name, ranges in _normalize_spec(aug_spec)]


def apply_params(batch, params):
    for name, p in params:
        batch = _APPLY[name](batch, p)
    return batch


def augment_pair(real_batch, syn_batch, aug_spec, seed):
    """Apply one identically-parameterized augmentation chain to both batches."""
    if real_batch.shape[1] != syn_batch.shape[1]:
        raise ShapeMismatchError(
            f"channel mismatch: {real_batch.shape[1]} vs {syn_batch.shape[1]}"
        )
    params = sample_params(aug_spec, (int(real_batch.shape[2]), int(real_batch.shape[3])), seed)
    return apply_params(real_batch, params), apply_params(syn_batch, params)
