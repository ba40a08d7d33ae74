import pytest
import torch
import torch.nn.functional as F

from rudd.data import generate_toy
from rudd.distill.classifier import (
    ClassifierConfig,
    accuracy,
    classifier_features,
    classifier_logits,
    init_classifier,
    train_classifier,
)
from rudd.numerics import ShapeError

D = torch.float64


def torch_features(params, images, blocks):
    """Same body through ``torch.nn.functional`` in NCHW."""
    h = images.permute(0, 3, 1, 2)
    for b in range(blocks):
        k, bias, gain, shift = params[4 * b : 4 * b + 4]
        h = F.conv2d(h, k.permute(3, 2, 0, 1), bias, padding=1)
        h = F.instance_norm(h, weight=gain, bias=shift, eps=1e-5)
        h = F.avg_pool2d(F.relu(h), 2)
    return h.permute(0, 2, 3, 1).reshape(h.shape[0], -1)


def test_config_validation():
    with pytest.raises(ShapeError):
        ClassifierConfig(4, 12, 12, blocks=3)
    with pytest.raises(ValueError):
        ClassifierConfig(1, 8, 8)
    assert ClassifierConfig(4, 16, 8, blocks=2, channels=5).feature_dim == 5 * 4 * 2
    assert ClassifierConfig(4, 6, 6, blocks=0).feature_dim == 108


@pytest.mark.parametrize("blocks", [0, 1, 2])
def test_param_shapes(blocks, gen):
    cfg = ClassifierConfig(5, 8, 12, blocks=blocks, channels=6)
    params = init_classifier(cfg, gen, D)
    assert [tuple(p.shape) for p in params] == cfg.shapes()
    x = torch.rand(3, 8, 12, 3, generator=gen, dtype=D)
    assert classifier_logits(params, x, cfg).shape == (3, 5)


@pytest.mark.parametrize("blocks", [1, 2, 3])
def test_features_match_functional(blocks, gen):
    cfg = ClassifierConfig(3, 16, 8, blocks=blocks, channels=5)
    params = init_classifier(cfg, gen, D)
    # nontrivial affine and bias
    params = [p + 0.3 * torch.randn(p.shape, generator=gen, dtype=D) for p in params]
    x = torch.rand(4, 16, 8, 3, generator=gen, dtype=D)
    ours = classifier_features(params, x, cfg)
    ref = torch_features(params, x, blocks)
    assert torch.allclose(ours, ref, rtol=1e-10, atol=1e-12)


def test_wrong_image_shape(gen):
    cfg = ClassifierConfig(3, 8, 8, blocks=1, channels=4)
    with pytest.raises(ShapeError):
        classifier_features(init_classifier(cfg, gen), torch.zeros(2, 8, 4, 3), cfg)


def test_trains_on_toy_data():
    train, test = generate_toy(4, 30, 16, 16, seed=0), generate_toy(4, 20, 16, 16, seed=1)
    cfg = ClassifierConfig(4, 16, 16, blocks=2, channels=16)
    params = train_classifier(train.images, train.labels, cfg, steps=150, lr=3e-3, batch_size=32)
    assert accuracy(params, test.images, test.labels, cfg) >= 0.9


def test_training_deterministic():
    ds = generate_toy(3, 4, 8, 8, seed=2)
    cfg = ClassifierConfig(3, 8, 8, blocks=1, channels=4)
    a = train_classifier(ds.images, ds.labels, cfg, steps=20, batch_size=5, seed=7)
    b = train_classifier(ds.images, ds.labels, cfg, steps=20, batch_size=5, seed=7)
    c = train_classifier(ds.images, ds.labels, cfg, steps=20, batch_size=5, seed=8)
    assert all(torch.equal(p, q) for p, q in zip(a, b))
    assert not all(torch.equal(p, q) for p, q in zip(a, c))
