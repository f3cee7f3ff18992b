import numpy as np
import pytest
import torch
import torch.nn.functional as F

from repdistill.errors import ConfigurationError, ShapeMismatchError
from repdistill.models import (
    Model,
    ModelSpec,
    build_model,
    embed,
    forward_logits,
    load_model,
    save_model,
    sgd_step,
)


def test_build_model_deterministic(blob_spec):
    a = build_model(blob_spec, 0)
    b = build_model(blob_spec, 0)
    for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert torch.equal(pa, pb)
    c = build_model(blob_spec, 1)
    assert any(not torch.equal(pa, pc)
               for (_, pa), (_, pc) in zip(a.named_parameters(), c.named_parameters()))


def test_spatial_collapse_rejected():
    spec = ModelSpec(depth=10, width=8, in_shape=(1, 8, 8), num_classes=2)
    with pytest.raises(ConfigurationError):
        build_model(spec, 0)


def test_invalid_spec_fields():
    with pytest.raises(ConfigurationError):
        ModelSpec(depth=0)
    with pytest.raises(ConfigurationError):
        ModelSpec(norm="layer")


def test_logits_shape():
    spec = ModelSpec(depth=3, width=128, in_shape=(3, 32, 32), num_classes=10)
    model = build_model(spec, 0)
    logits = forward_logits(model, torch.randn(5, 3, 32, 32))
    assert logits.shape == (5, 10)
    assert torch.isfinite(logits).all()


def test_zero_input_identical_rows(blob_spec):
    model = build_model(blob_spec, 3)
    logits = forward_logits(model, torch.zeros(4, *blob_spec.in_shape))
    assert torch.allclose(logits, logits[0].expand_as(logits), atol=1e-6)


def test_instance_norm_batch_independence(blob_ds, blob_model):
    batch = blob_ds.images[:8]
    single = forward_logits(blob_model, batch[:1])
    joint = forward_logits(blob_model, batch)
    assert torch.allclose(single[0], joint[0], atol=1e-5)


def test_shape_mismatch(blob_model):
    with pytest.raises(ShapeMismatchError):
        forward_logits(blob_model, torch.randn(2, 3, 8, 8))
    with pytest.raises(ShapeMismatchError):
        embed(blob_model, torch.randn(2, 1, 9, 9))


def test_embed_head_consistency(blob_ds, blob_model):
    batch = blob_ds.images[:6]
    feats = embed(blob_model, batch)
    logits = feats @ blob_model.net.head.weight.T + blob_model.net.head.bias
    assert torch.allclose(logits, forward_logits(blob_model, batch), atol=1e-6)


def test_embed_permutation(blob_ds, blob_model):
    batch = blob_ds.images[:6]
    perm = torch.tensor([3, 1, 5, 0, 2, 4])
    assert torch.allclose(embed(blob_model, batch)[perm],
                          embed(blob_model, batch[perm]), atol=1e-6)


def test_embed_separates_blob_classes(blob_ds, blob_model):
    a = blob_ds.images[blob_ds.class_index[0][0]][None]
    b = blob_ds.images[blob_ds.class_index[1][0]][None]
    with torch.no_grad():
        dist = (embed(blob_model, a) - embed(blob_model, b)).norm()
    assert float(dist) > 0


def test_sgd_step_lr_zero(blob_ds, blob_model):
    before = [p.clone() for p in blob_model.parameters()]
    sgd_step(blob_model, blob_ds.images[:8], blob_ds.labels[:8], lr=0.0)
    for p, b in zip(blob_model.parameters(), before):
        assert torch.equal(p, b)


def test_sgd_step_reduces_loss(blob_ds, blob_spec):
    model = build_model(blob_spec, 5)
    batch, labels = blob_ds.images[:32], blob_ds.labels[:32]
    with torch.no_grad():
        initial = float(F.cross_entropy(forward_logits(model, batch), labels))
    for _ in range(50):
        sgd_step(model, batch, labels, lr=0.01)
    with torch.no_grad():
        final = float(F.cross_entropy(forward_logits(model, batch), labels))
    assert final < initial


def _relu_sign_pattern(model, batch):
    signs = []
    hooks = []
    for m in model.net.modules():
        if isinstance(m, torch.nn.ReLU):
            hooks.append(m.register_forward_pre_hook(
                lambda _m, args: signs.append(args[0] > 0)))
    with torch.no_grad():
        forward_logits(model, batch)
    for h in hooks:
        h.remove()
    return signs


def _finite_diff_param_grad(model, batch, labels, param, flat_index, h=1e-3):
    base_signs = _relu_sign_pattern(model, batch)
    vals = []
    with torch.no_grad():
        flat = param.view(-1)
        orig = float(flat[flat_index])
        for delta in (h, -h):
            flat[flat_index] = orig + delta
            signs = _relu_sign_pattern(model, batch)
            if any(not torch.equal(a, b) for a, b in zip(base_signs, signs)):
                flat[flat_index] = orig
                return None  # crosses a ReLU kink; central difference invalid here
            vals.append(float(F.cross_entropy(forward_logits(model, batch), labels)))
        flat[flat_index] = orig
    return (vals[0] - vals[1]) / (2 * h)


def test_parameter_gradients_match_finite_differences(blob_ds):
    spec = ModelSpec(depth=1, width=4, in_shape=(1, 8, 8), num_classes=3)
    model = build_model(spec, 7)
    model.net.double()
    batch = blob_ds.images[:8].double()
    labels = blob_ds.labels[:8]
    loss = F.cross_entropy(forward_logits(model, batch), labels)
    grads = torch.autograd.grad(loss, list(model.parameters()))
    rng = np.random.default_rng(0)
    checked = 0
    for param, grad in zip(model.parameters(), grads):
        for _ in range(4):
            i = int(rng.integers(param.numel()))
            fd = _finite_diff_param_grad(model, batch, labels, param, i)
            if fd is None:
                continue
            analytic = float(grad.view(-1)[i])
            denom = max(abs(fd), abs(analytic), 1e-8)
            assert abs(fd - analytic) / denom < 1e-4
            checked += 1
    assert checked >= 10


def test_checkpoint_roundtrip(tmp_path, blob_spec, blob_ds):
    model = build_model(blob_spec, 9)
    sgd_step(model, blob_ds.images[:16], blob_ds.labels[:16], lr=0.05)
    path = tmp_path / "model.bin"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.spec == model.spec
    for (na, pa), (nb, pb) in zip(model.named_parameters(), loaded.named_parameters()):
        assert na == nb
        assert torch.allclose(pa, pb, atol=1e-7)
