import math

import numpy as np
import pytest

from batchsel.model import (
    ModelSpec,
    ParameterSet,
    backward,
    forward,
    forward_backward,
    init_params,
    load_params,
    lr_schedule,
    mean_loss,
    momentum_step,
    save_params,
    sgd_step,
)
from batchsel.verify import finite_difference_grad, naive_mlp_losses, naive_softmax_losses

KINDS = [("softmax-regression", 0), ("mlp-1hidden", 6)]


def random_instance(kind, hidden, seed, d=5, k=4, b=3):
    rng = np.random.default_rng(seed)
    params = init_params(ModelSpec(kind, d, k, hidden, init_seed=seed))
    params.theta += rng.normal(scale=0.3, size=params.theta.shape)
    x = rng.normal(size=(b, d))
    y = rng.integers(0, k, size=b)
    return params, x, y


def test_zero_weights_give_uniform_prediction():
    params = ParameterSet(ModelSpec("softmax-regression", 7, 10), np.zeros(7 * 10 + 10))
    r = forward(params, np.random.default_rng(0).normal(size=(5, 7)), np.arange(5))
    np.testing.assert_allclose(r.losses, math.log(10), rtol=1e-15)
    np.testing.assert_allclose(r.true_prob, 0.1, rtol=1e-14)
    np.testing.assert_array_equal(r.predicted, 0)  # ties go to the lowest class


def test_saturated_logits():
    params = ParameterSet(ModelSpec("softmax-regression", 3, 3), np.zeros(12))
    params.views()["W"][...] = 1000.0 * np.eye(3)
    r = forward(params, np.eye(3), np.arange(3))
    assert np.all(r.losses < 1e-12)
    np.testing.assert_array_equal(r.predicted, np.arange(3))
    assert np.all(np.isfinite(r.losses))


@pytest.mark.parametrize("kind, hidden", KINDS)
def test_forward_matches_naive_loops(kind, hidden):
    params, x, y = random_instance(kind, hidden, 4)
    v = params.views()
    if kind == "softmax-regression":
        expected = naive_softmax_losses(x.tolist(), y, v["W"].tolist(), v["b"].tolist())
    else:
        expected = naive_mlp_losses(x.tolist(), y, v["W1"].tolist(), v["b1"].tolist(), v["W2"].tolist(), v["b2"].tolist())
    np.testing.assert_allclose(forward(params, x, y).losses, expected, rtol=0, atol=1e-10)


@pytest.mark.parametrize("kind, hidden", KINDS)
@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(kind, hidden, seed):
    params, x, y = random_instance(kind, hidden, seed)

    def loss(theta):
        return mean_loss(ParameterSet(params.spec, np.array(theta)), x, y)

    numeric = np.array(finite_difference_grad(loss, params.theta, 1e-5))
    analytic = backward(params, x, y)
    rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-6)
    assert rel.max() <= 1e-5


@pytest.mark.parametrize("kind, hidden", KINDS)
def test_duplicated_sample_same_gradient(kind, hidden):
    params, x, y = random_instance(kind, hidden, 1, b=1)
    np.testing.assert_allclose(backward(params, np.vstack([x, x]), np.concatenate([y, y])),
                               backward(params, x, y), rtol=1e-14, atol=1e-16)


def test_zero_input_gives_zero_weight_gradient():
    params, _, _ = random_instance("softmax-regression", 0, 2)
    g = params.views(backward(params, np.zeros((1, 5)), np.array([1])))
    assert np.all(g["W"] == 0.0)
    assert np.any(g["b"] != 0.0)


def test_forward_backward_consistent_with_forward():
    params, x, y = random_instance("mlp-1hidden", 6, 3)
    r, _ = forward_backward(params, x, y)
    r2 = forward(params, x, y)
    np.testing.assert_array_equal(r.losses, r2.losses)
    np.testing.assert_array_equal(r.predicted, r2.predicted)


def test_non_finite_inputs_rejected():
    params, x, y = random_instance("softmax-regression", 0, 0)
    x[0, 0] = np.nan
    with pytest.raises(ValueError):
        forward(params, x, y)
    with pytest.raises(FloatingPointError):
        sgd_step(params, np.full_like(params.theta, np.inf), 0.1)
    with pytest.raises(FloatingPointError):
        momentum_step(params, np.full_like(params.theta, np.nan), 0.1)


def test_momentum_zero_equals_sgd():
    a, _, _ = random_instance("mlp-1hidden", 4, 0)
    b = a.copy()
    g = np.random.default_rng(1).normal(size=a.theta.shape)
    sgd_step(a, g, 0.05)
    momentum_step(b, g, 0.05, mu=0.0)
    np.testing.assert_array_equal(a.theta, b.theta)


def test_momentum_unrolled():
    p = ParameterSet(ModelSpec("softmax-regression", 1, 2), np.zeros(4))
    g = np.array([1.0, 2.0, -1.0, 0.5])
    momentum_step(p, g, 0.1)
    np.testing.assert_allclose(p.theta, -0.1 * g, rtol=1e-15)
    momentum_step(p, g, 0.1)
    np.testing.assert_allclose(p.theta, -0.1 * g - 0.1 * 1.9 * g, rtol=1e-15)


def test_zero_lr_leaves_params():
    p, _, _ = random_instance("mlp-1hidden", 3, 0)
    before = p.theta.copy()
    momentum_step(p, np.ones_like(p.theta), 0.0)
    sgd_step(p, np.ones_like(p.theta), 0.0)
    np.testing.assert_array_equal(p.theta, before)


def test_lr_schedule_steps():
    assert lr_schedule(0.1, 49, 100) == 0.1
    assert lr_schedule(0.1, 50, 100) == pytest.approx(0.01)
    assert lr_schedule(0.1, 74, 100) == pytest.approx(0.01)
    assert lr_schedule(0.1, 75, 100) == pytest.approx(0.001)
    assert lr_schedule(0.1, 80, 100) == pytest.approx(0.001)
    assert lr_schedule(0.1, 99, 100, mode="constant") == 0.1


def test_loss_decreases_on_separable_blobs():
    rng = np.random.default_rng(0)
    x = np.vstack([rng.normal(-2, 0.3, size=(40, 2)), rng.normal(2, 0.3, size=(40, 2))])
    y = np.repeat([0, 1], 40)
    params = init_params(ModelSpec("softmax-regression", 2, 2, init_seed=0))
    losses = []
    for _ in range(50):
        r, g = forward_backward(params, x, y)
        losses.append(r.losses.mean())
        sgd_step(params, g, 0.5)
    assert all(b < a for a, b in zip(losses[5:], losses[6:]))


def test_deterministic_trajectories():
    def trajectory():
        params = init_params(ModelSpec("mlp-1hidden", 5, 3, 8, init_seed=9))
        rng = np.random.default_rng(1)
        x, y = rng.normal(size=(20, 5)), rng.integers(0, 3, size=20)
        for s in range(10):
            momentum_step(params, backward(params, x[s:s + 4], y[s:s + 4]), 0.1)
        return params.theta
    assert np.array_equal(trajectory(), trajectory())


def test_glorot_init_range():
    spec = ModelSpec("mlp-1hidden", 30, 10, 20, init_seed=3)
    v = init_params(spec).views()
    assert np.abs(v["W1"]).max() <= math.sqrt(6 / 50)
    assert np.abs(v["W2"]).max() <= math.sqrt(6 / 30)
    assert np.all(v["b1"] == 0) and np.all(v["b2"] == 0)


def test_checkpoint_round_trip(tmp_path):
    p, _, _ = random_instance("mlp-1hidden", 6, 0)
    save_params(p, tmp_path / "ckpt")
    raw = (tmp_path / "ckpt.bin").read_bytes()
    assert len(raw) == 8 * p.theta.size
    assert np.array_equal(np.frombuffer(raw, dtype="<f8"), p.theta)
    q = load_params(tmp_path / "ckpt")
    assert q.spec == p.spec
    assert np.array_equal(q.theta, p.theta)


def test_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec("cnn", 3, 2)
    with pytest.raises(ValueError):
        ModelSpec("softmax-regression", 3, 1)
    with pytest.raises(ValueError):
        ModelSpec("mlp-1hidden", 3, 2, hidden_dim=0)
