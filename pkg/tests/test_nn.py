"""Backbone, head, optimizer, and checkpoint behavior."""

import numpy as np
import pytest
from conftest import check_gradients

from hycoreg import autodiff as ad
from hycoreg.autodiff import Tensor
from hycoreg.bundle import load_checkpoint, save_checkpoint
from hycoreg.contrastive import regression_loss
from hycoreg.errors import NumericalError, ParameterError, ShapeError
from hycoreg.nn import (
    PRESETS,
    BackboneConfig,
    ConvStage,
    SGD,
    forward_backbone,
    forward_head,
    init_params,
    resolve_preset,
)

RNG = np.random.default_rng(777)

TINY = BackboneConfig(
    stages=(ConvStage(2, (3, 2, 2), (2, 1, 1)), ConvStage(2, (2, 2, 2), (1, 1, 1))),
    feature_dim=3,
    head_hidden=4,
    attention=True,
    attention_dim=2,
)
TINY_K, TINY_S, TINY_OUT = 8, 4, 2


def tiny_model(seed=3, **overrides):
    config = TINY
    if overrides:
        from dataclasses import replace

        config = replace(TINY, **overrides)
    return init_params(config, TINY_K, TINY_S, TINY_OUT, seed=seed)


def test_preset_shapes_trace_desk_and_paper_scale():
    for name, cfg in PRESETS.items():
        for k, s in ((64, 8), (224, 10)):
            shapes = cfg.trace_shapes(k, s)
            assert all(min(sh) >= 1 for sh in shapes), (name, k, s)


def test_trace_rejects_collapsing_stage():
    cfg = BackboneConfig(stages=(ConvStage(2, (9, 1, 1), (1, 1, 1)),))
    with pytest.raises(ShapeError):
        cfg.trace_shapes(8, 4)


def test_resolve_preset_unknown():
    with pytest.raises(ParameterError):
        resolve_preset("gigantic")


def test_forward_rejects_wrong_shape_before_compute():
    model = tiny_model()
    with pytest.raises(ShapeError):
        forward_backbone(model, np.zeros((2, 1, TINY_K + 1, TINY_S, TINY_S)))


def test_zero_weights_give_zero_features_and_predictions():
    model = tiny_model()
    for t in model.params.values():
        t.data = np.zeros_like(t.data)
    batch = RNG.uniform(size=(3, 1, TINY_K, TINY_S, TINY_S))
    feats = forward_backbone(model, batch)
    assert np.array_equal(feats.data, np.zeros_like(feats.data))
    preds = forward_head(model, feats)
    assert np.array_equal(preds.data, np.zeros_like(preds.data))


def test_identical_patches_give_identical_rows():
    model = tiny_model()
    one = RNG.uniform(size=(1, 1, TINY_K, TINY_S, TINY_S))
    batch = np.concatenate([one, one])
    feats = forward_backbone(model, batch)
    assert np.array_equal(feats.data[0], feats.data[1])


def test_single_conv_sum_feature_matches_loop_oracle():
    # 1x1x1 conv with kernel=1 and an all-ones dense row reduces to a global sum
    config = BackboneConfig(stages=(ConvStage(1, (1, 1, 1), (1, 1, 1)),), feature_dim=1, head_hidden=2)
    model = init_params(config, 4, 3, 1, seed=0)
    model.params["conv0.kernel"].data = np.ones_like(model.params["conv0.kernel"].data)
    model.params["conv0.bias"].data = np.zeros_like(model.params["conv0.bias"].data)
    model.params["feat.weight"].data = np.ones_like(model.params["feat.weight"].data)
    model.params["feat.bias"].data = np.zeros_like(model.params["feat.bias"].data)
    batch = RNG.uniform(size=(2, 1, 4, 3, 3))
    feats = forward_backbone(model, batch)
    for b in range(2):
        total = 0.0
        for d in range(4):
            for h in range(3):
                for w in range(3):
                    total += batch[b, 0, d, h, w]
        assert abs(feats.data[b, 0] - total) < 1e-9


def test_head_manual_two_by_two():
    config = BackboneConfig(stages=(ConvStage(1, (1, 1, 1), (1, 1, 1)),), feature_dim=2, head_hidden=2)
    model = init_params(config, 2, 2, 2, seed=0)
    w0 = np.array([[0.5, -1.0], [2.0, 0.25]])
    b0 = np.array([0.1, -0.2])
    w1 = np.array([[1.5, 0.0], [-0.5, 1.0]])
    b1 = np.array([0.05, 0.6])
    model.params["head.w0"].data = w0
    model.params["head.b0"].data = b0
    model.params["head.w1"].data = w1
    model.params["head.b1"].data = b1
    f = np.array([[0.3, 0.7]])
    expected = np.maximum(f @ w0 + b0, 0.0) @ w1 + b1
    preds = forward_head(model, Tensor(f))
    assert np.abs(preds.data - expected).max() < 1e-12


def test_simplex_head_rows_sum_to_one():
    model = tiny_model(simplex_head=True)
    batch = RNG.uniform(size=(5, 1, TINY_K, TINY_S, TINY_S))
    preds = forward_head(model, forward_backbone(model, batch))
    assert np.abs(preds.data.sum(axis=1) - 1.0).max() < 1e-6
    assert preds.data.min() >= 0.0


def test_attention_weights_rows_sum_to_one():
    model = tiny_model()
    collect = {}
    batch = RNG.uniform(size=(2, 1, TINY_K, TINY_S, TINY_S))
    feats = forward_backbone(model, batch, collect=collect)
    attn = collect["attention"]
    assert np.abs(attn.sum(axis=-1) - 1.0).max() < 1e-6
    assert np.isfinite(feats.data).all()


def test_full_model_gradients_match_finite_differences():
    model = tiny_model()
    batch = Tensor(RNG.uniform(0.1, 0.9, size=(2, 1, TINY_K, TINY_S, TINY_S)))
    labels = RNG.uniform(size=(2, TINY_OUT))

    def loss():
        feats = forward_backbone(model, batch)
        preds = forward_head(model, feats)
        return regression_loss(preds, labels) + ad.tensor_sum(feats * feats) * 0.01

    worst = check_gradients(loss, dict(model.params), tol=1e-4)
    assert max(worst.values()) < 1e-4


def test_backward_fills_unreached_parameters_with_zero():
    model = tiny_model()
    batch = RNG.uniform(size=(2, 1, TINY_K, TINY_S, TINY_S))
    feats = forward_backbone(model, batch)
    ad.tensor_sum(feats * feats).backward()
    model.fill_missing_grads()
    # the head never participated: its gradients exist and are zero
    for name in ("head.w0", "head.b0", "head.w1", "head.b1"):
        assert np.array_equal(model.params[name].grad, np.zeros_like(model.params[name].data))
    assert np.abs(model.params["conv0.kernel"].grad).max() > 0


def test_sgd_lr_zero_keeps_parameters():
    model = tiny_model()
    before = model.state_arrays()
    for t in model.params.values():
        t.grad = np.ones_like(t.data)
    SGD(lr=0.0, momentum=0.9).step(model)
    after = model.state_arrays()
    assert all(np.array_equal(before[n], after[n]) for n in before)


def test_sgd_scalar_arithmetic():
    config = BackboneConfig(stages=(ConvStage(1, (1, 1, 1), (1, 1, 1)),), feature_dim=1, head_hidden=1)
    model = init_params(config, 1, 1, 1, seed=0)
    t = model.params["feat.weight"]
    t.data = np.array([[1.0]])
    for other in model.params.values():
        other.grad = np.zeros_like(other.data)
    t.grad = np.array([[0.5]])
    SGD(lr=0.1, momentum=0.0).step(model)
    assert np.allclose(t.data, 0.95)
    assert t.grad is None  # gradients cleared by the step


def test_sgd_quadratic_bowl_contracts():
    p = Tensor(RNG.uniform(0.5, 1.0, size=(6,)), requires_grad=True)

    class Holder:
        params = {"p": p}

        def named(self):
            return self.params.items()

        def zero_grad(self):
            p.zero_grad()

    initial = np.linalg.norm(p.data)
    opt = SGD(lr=0.1, momentum=0.0)
    norms = [initial]
    for _ in range(100):
        ad.tensor_sum(p * p).backward()
        opt.step(Holder())
        norms.append(np.linalg.norm(p.data))
    assert all(b < a for a, b in zip(norms, norms[1:]))
    assert norms[-1] < 1e-8 * initial


def test_sgd_rejects_nan_gradient_with_name():
    model = tiny_model()
    for t in model.params.values():
        t.grad = np.zeros_like(t.data)
    model.params["feat.weight"].grad[0, 0] = np.nan
    with pytest.raises(NumericalError, match="feat.weight"):
        SGD().step(model)


def test_checkpoint_round_trip(tmp_path):
    model = tiny_model(seed=9)
    path = tmp_path / "ckpt.bin"
    save_checkpoint(path, model.digest, model.state_arrays())
    digest, arrays = load_checkpoint(path)
    assert digest == model.digest
    fresh = tiny_model(seed=1)
    fresh.load_state_arrays(arrays)
    assert fresh.state_digest() == model.state_digest()


def test_checkpoint_missing_parameter_rejected(tmp_path):
    model = tiny_model()
    arrays = model.state_arrays()
    arrays.pop("head.w1")
    path = tmp_path / "ckpt.bin"
    save_checkpoint(path, model.digest, arrays)
    _, loaded = load_checkpoint(path)
    with pytest.raises(ShapeError, match="head.w1"):
        model.load_state_arrays(loaded)


def test_init_is_deterministic_and_in_glorot_range():
    a = tiny_model(seed=5)
    b = tiny_model(seed=5)
    assert a.state_digest() == b.state_digest()
    w = a.params["feat.weight"]
    fan_in, fan_out = w.data.shape
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    assert np.abs(w.data).max() <= bound
