import numpy as np
import pytest

from conftest import random_radar, tiny_config
from gesture_fusion import tensor as tc
from gesture_fusion.dataset import GestureDataset
from gesture_fusion.model import FusionOutputs, GestureModel
from gesture_fusion.tensor import Tensor
from gesture_fusion.training import (
    SGD,
    TrainConfig,
    apply_sm_masking,
    evaluate,
    sgd_update,
    total_loss,
    train,
)


def _logits_with_ce(target_ce, label, n_classes=8):
    """Logits whose cross-entropy against ``label`` equals ``target_ce``."""
    # p(label) = exp(-ce); spread the rest uniformly
    p = np.full(n_classes, (1 - np.exp(-target_ce)) / (n_classes - 1))
    p[label] = np.exp(-target_ce)
    return np.log(p)


def test_total_loss_substitution():
    with tc.wide_precision():
        out = FusionOutputs(
            Tensor(_logits_with_ce(1.0, 2)[None]),
            Tensor(_logits_with_ce(2.0, 2)[None]),
            Tensor(np.array([[0.0] * 2 + [1e4] + [0.0] * 5])),
        )
        loss, comps = total_loss(out, 2, 0.5)
    assert comps["L_F"] == pytest.approx(1.0, abs=1e-12)
    assert comps["L_R"] == pytest.approx(2.0, abs=1e-12)
    assert comps["L_K"] == pytest.approx(0.0, abs=1e-12)
    assert loss.item() == pytest.approx(2.0, abs=1e-12)


def test_total_loss_mu_zero_is_fused_loss(rng):
    out = FusionOutputs(Tensor(rng.standard_normal((2, 4, 8))), Tensor(rng.standard_normal((2, 4, 8))),
                        Tensor(rng.standard_normal((2, 4, 8))))
    loss, comps = total_loss(out, np.array([1, 3]), 0.0)
    assert loss.item() == comps["L_F"]
    with pytest.raises(ValueError):
        total_loss(FusionOutputs(out.y_hat), np.array([1, 3]), 0.5)


def test_total_loss_gradient_tiny_model(rng):
    from gesture_fusion.gradcheck import check_gradients

    model = GestureModel(tiny_config(seed=8)).astype(np.float64)
    with tc.wide_precision():
        x_R, x_K = random_radar(rng, 2, 4, 12, n_real=6, dtype=np.float64), rng.random((2, 4, 34))
        errs = check_gradients(lambda: total_loss(model(x_R, x_K), np.array([0, 7]), 0.5)[0],
                               model.parameters(), max_probes=20)
    assert max(errs.values()) < 1e-3


def test_sgd_plain_step():
    theta, v = np.array([1.0, -2.0]), np.zeros(2)
    sgd_update(theta, np.array([0.5, 0.5]), v, 0.1, 0.0, 0.0)
    np.testing.assert_allclose(theta, [0.95, -2.05])


def test_sgd_momentum_decays_geometrically():
    theta, v = np.zeros(1), np.array([1.0])
    for t in range(1, 6):
        sgd_update(theta, np.zeros(1), v, 0.1, 0.9, 0.0)
        assert v[0] == pytest.approx(0.9 ** t)


def test_sgd_quadratic_bowl_converges():
    # f = 1/2 sum a_i (theta_i - c_i)^2; with weight decay the minimiser of
    # f + wd/2 |theta|^2 is a c / (a + wd)
    cfg = TrainConfig()
    a, c = np.array([1.0, 4.0]), np.array([0.3, -0.2])
    p = Tensor(np.zeros(2), requires_grad=True, dtype=np.float64)
    opt = SGD([("theta", p)], cfg.lr, cfg.momentum, cfg.weight_decay)
    for _ in range(500):
        p.grad = a * (p.data - c)
        opt.step()
    np.testing.assert_allclose(p.data, a * c / (a + cfg.weight_decay), atol=1e-6)


def test_sgd_rejects_non_finite():
    p = Tensor(np.zeros(2), requires_grad=True)
    opt = SGD([("w", p)], 0.1)
    p.grad = np.array([np.nan, 0.0], np.float32)
    with pytest.raises(FloatingPointError, match="w"):
        opt.step()


def test_sm_masking():
    rng = np.random.default_rng(0)
    r, k = apply_sm_masking(1000, 0.0, rng)
    assert r.all() and k.all()
    r, k = apply_sm_masking(10_000, 1.0, rng)
    assert not np.any(~r & ~k)
    assert 0.47 <= np.mean(~r) <= 0.53
    r, k = apply_sm_masking(20_000, 0.3, rng)
    assert abs(np.mean(~r | ~k) - 0.3) < 0.015


def test_masked_sample_enters_model_as_zeros(rng):
    model = GestureModel(tiny_config())
    x_R, x_K = random_radar(rng, 2, 4, 12, n_real=4), rng.random((2, 4, 34)).astype(np.float32)
    out = model(x_R, x_K, mask=(np.array([False, True]), np.array([True, True])), return_features=True)
    zero = model(np.zeros_like(x_R[:1]), x_K[:1], return_features=True)
    assert np.array_equal(out.features["radar_points"].data[0], zero.features["radar_points"].data[0])


def _toy_dataset(rng, n=24):
    y = np.arange(n) % 8
    x_K = rng.random((n, 4, 34)).astype(np.float32) * 0.1
    x_K[np.arange(n), :, y] += 1.0  # class-coded keypoints
    x_R = random_radar(rng, n, 4, 12, n_real=5)
    return GestureDataset(x_R, x_K, y, np.arange(n) // 8)


def test_train_is_deterministic_and_logs_components(rng):
    data = _toy_dataset(rng)
    cfg = TrainConfig(epochs=3, batch_size=8, micro_batch=3, seed=4)
    _, h1 = train(tiny_config(), cfg, data)
    _, h2 = train(tiny_config(), cfg, data)
    assert h1.epochs == h2.epochs and h1.steps == h2.steps
    assert len(h1.steps) == 9
    for l_f, l_r, l_k, total in h1.steps:
        assert l_r > 0 and l_k > 0
        assert abs(total - (l_f + 0.5 * (l_r + l_k))) <= 1e-6


def test_train_returns_best_validation_checkpoint(rng):
    data = _toy_dataset(rng)
    model, hist = train(tiny_config(), TrainConfig(epochs=6, batch_size=8, seed=1), data)
    assert hist.best_val_acc == max(e["val_acc"] for e in hist.epochs)
    assert hist.best_epoch == int(np.argmax([e["val_acc"] for e in hist.epochs]))
    assert evaluate(model, data) == hist.best_val_acc


def test_train_rejects_empty_split(rng):
    with pytest.raises(ValueError):
        train(tiny_config(), TrainConfig(epochs=1), _toy_dataset(rng).take([]))


def test_constant_classifier_is_at_chance(rng):
    n = 800
    data = GestureDataset(np.zeros((n, 4, 5, 12), np.float32), np.zeros((n, 4, 34), np.float32),
                          np.arange(n) % 8, np.zeros(n, int))
    acc = evaluate(GestureModel(tiny_config()), data)
    # any constant prediction on a balanced set scores exactly 1/8
    assert acc == pytest.approx(0.125)
