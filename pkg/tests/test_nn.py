"""Neural stack: finite-difference gradient oracles, optimizer behavior,
DP-Adam clipping/noise semantics, and checkpoint round trips."""

import io
import math

import numpy as np
import pytest

from privgnn import nn
from privgnn.nn import (
    DpOptimizerConfig,
    MlpModel,
    adam_step,
    clip_gradients,
    dp_adam_step,
    init_adam_state,
    read_mlp,
    selu,
    selu_grad,
    softmax_cross_entropy,
    write_mlp,
)

SELU_SCALE, SELU_ALPHA = nn.SELU_SCALE, nn.SELU_ALPHA


from gradcheck import assert_gradients_match


# ---------------------------------------------------------------------------
# SeLU and the loss
# ---------------------------------------------------------------------------


def test_selu_values():
    assert selu(np.array([0.0]))[0] == 0.0
    # Asymptote as x -> -inf is -scale*alpha.
    assert selu(np.array([-40.0]))[0] == pytest.approx(
        -SELU_SCALE * SELU_ALPHA, rel=1e-12
    )
    assert -SELU_SCALE * SELU_ALPHA == pytest.approx(-1.7581, abs=1e-4)
    assert selu(np.array([2.0]))[0] == pytest.approx(2 * SELU_SCALE, rel=1e-15)


def test_selu_grad_finite_differences():
    rng = np.random.default_rng(0)
    x = rng.uniform(-4, 4, size=100)
    h = 1e-7
    numeric = (selu(x + h) - selu(x - h)) / (2 * h)
    np.testing.assert_allclose(selu_grad(x), numeric, rtol=1e-6, atol=1e-7)


def test_softmax_cross_entropy_uniform_logits():
    logits = np.zeros((6, 5))
    loss, _ = softmax_cross_entropy(logits, np.arange(6) % 5)
    assert loss == pytest.approx(math.log(5), rel=1e-12)


def test_softmax_cross_entropy_confident_limit():
    logits = np.full((1, 4), -1e4)
    logits[0, 2] = 1e4
    loss, _ = softmax_cross_entropy(logits, np.array([2]))
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_softmax_cross_entropy_gradient_oracle():
    rng = np.random.default_rng(1)
    logits = rng.standard_normal((4, 3))
    labels = rng.integers(0, 3, size=4)
    _, grad = softmax_cross_entropy(logits, labels)
    h = 1e-6
    for i in range(4):
        for j in range(3):
            up = logits.copy()
            up[i, j] += h
            down = logits.copy()
            down[i, j] -= h
            num = (
                softmax_cross_entropy(up, labels)[0]
                - softmax_cross_entropy(down, labels)[0]
            ) / (2 * h)
            assert grad[i, j] == pytest.approx(num, rel=1e-6, abs=1e-9)


def test_softmax_cross_entropy_label_range():
    with pytest.raises(ValueError):
        softmax_cross_entropy(np.zeros((2, 3)), np.array([0, 3]))


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def test_forward_identity_layer():
    model = MlpModel([3, 3], activations=["none"], seed=0)
    model.weights[0][...] = np.eye(3)
    model.biases[0][...] = 0.0
    x = np.random.default_rng(2).standard_normal((5, 3))
    out, _ = model.forward(x)
    np.testing.assert_allclose(out, x, atol=1e-15)


def test_forward_zero_weights_selu():
    model = MlpModel([4, 4], activations=["selu"], seed=0)
    model.weights[0][...] = 0.0
    out, _ = model.forward(np.ones((3, 4)))
    np.testing.assert_array_equal(out, 0.0)


def test_forward_batch_independence_without_batch_norm():
    model = MlpModel([4, 6, 3], activations=["selu", "none"], seed=3)
    rng = np.random.default_rng(4)
    batch = rng.standard_normal((5, 4))
    full, _ = model.forward(batch)
    solo, _ = model.forward(batch[2:3])
    np.testing.assert_allclose(full[2], solo[0], atol=1e-15)


def test_backward_matches_finite_differences_two_layer_selu():
    rng = np.random.default_rng(5)
    for seed in range(3):
        model = MlpModel([5, 8, 4], activations=["selu", "none"], seed=seed)
        x = rng.standard_normal((6, 5))
        labels = rng.integers(0, 4, size=6)
        assert_gradients_match(model, x, labels)


def test_backward_with_batch_norm_matches_finite_differences():
    rng = np.random.default_rng(6)
    model = MlpModel([4, 6, 3], activations=["selu", "none"], use_batch_norm=True, seed=1)
    x = rng.standard_normal((8, 4))
    labels = rng.integers(0, 3, size=8)
    # Batch statistics depend on parameters, so run in training mode with
    # running stats restored around every probe.
    snap = model.snapshot()
    assert_gradients_match(model, x, labels, tol=2e-5)
    model.restore(snap)


def test_backward_zero_and_scaled_upstream():
    model = MlpModel([3, 5, 2], activations=["selu", "none"], seed=7)
    x = np.random.default_rng(8).standard_normal((4, 3))
    _, tape = model.forward(x, training=True)
    zero_grads, _ = model.backward(tape, np.zeros((4, 2)))
    for g in zero_grads:
        np.testing.assert_array_equal(g, 0.0)
    upstream = np.random.default_rng(9).standard_normal((4, 2))
    g1, _ = model.backward(tape, upstream)
    g2, _ = model.backward(tape, 2.0 * upstream)
    for a, b in zip(g1, g2):
        np.testing.assert_allclose(2.0 * a, b, rtol=1e-12, atol=1e-300)


def test_batch_norm_eval_is_affine():
    model = MlpModel([3, 4], activations=["selu"], use_batch_norm=True, seed=2)
    rng = np.random.default_rng(10)
    model.forward(rng.standard_normal((32, 3)), training=True)  # fit running stats
    bn = model.norms[0]
    x = rng.standard_normal((5, 3))
    z = x @ model.weights[0] + model.biases[0]
    expected = bn.gamma * (z - bn.running_mean) / np.sqrt(
        bn.running_var + bn.eps
    ) + bn.beta
    out, _ = model.forward(x, training=False)
    np.testing.assert_allclose(out, selu(expected), atol=1e-12)


# ---------------------------------------------------------------------------
# Adam and DP-Adam
# ---------------------------------------------------------------------------


def test_adam_zero_gradient_no_update():
    params = [np.ones((2, 2)), np.ones(2)]
    state = init_adam_state(params)
    before = [p.copy() for p in params]
    adam_step(params, [np.zeros_like(p) for p in params], state, DpOptimizerConfig())
    for p, b in zip(params, before):
        np.testing.assert_array_equal(p, b)


def test_adam_first_step_is_signed_learning_rate():
    cfg = DpOptimizerConfig(learning_rate=0.01)
    params = [np.array([1.0, -1.0])]
    state = init_adam_state(params)
    grad = np.array([0.3, -0.7])
    adam_step(params, [grad], state, cfg)
    # At t=1 the bias-corrected update is -lr * g / (|g| + eps) ~ -lr*sign(g).
    np.testing.assert_allclose(
        params[0], [1.0 - 0.01, -1.0 + 0.01], rtol=1e-5
    )


def test_adam_bitwise_reproducible():
    def run():
        model = MlpModel([3, 4, 2], seed=0)
        rng = np.random.default_rng(11)
        x = rng.standard_normal((10, 3))
        y = rng.integers(0, 2, size=10)
        state = init_adam_state(model.parameters())
        cfg = DpOptimizerConfig(learning_rate=0.05)
        for _ in range(20):
            logits, tape = model.forward(x, training=True)
            _, gl = softmax_cross_entropy(logits, y)
            grads, _ = model.backward(tape, gl)
            adam_step(model.parameters(), grads, state, cfg)
        return model.parameters()

    for a, b in zip(run(), run()):
        assert np.array_equal(a, b)


def test_clip_gradients_boundary():
    grads = [np.array([6.0, 8.0])]  # norm 10
    clipped, norm = clip_gradients(grads, 1.0)
    assert norm == pytest.approx(10.0)
    assert np.linalg.norm(clipped[0]) == pytest.approx(1.0, rel=1e-12)
    # Under the bound: untouched.
    same, _ = clip_gradients(grads, 100.0)
    np.testing.assert_array_equal(same[0], grads[0])


def _per_sample_tapes(model, x):
    tapes = []
    for i in range(x.shape[0]):
        _, tape = model.forward(x[i : i + 1], training=True)
        tapes.append(tape)
    return tapes


def test_dp_adam_noise_free_equals_plain_adam_on_mean_gradient():
    rng = np.random.default_rng(12)
    x = rng.standard_normal((8, 3))
    y = rng.integers(0, 2, size=8)
    cfg = DpOptimizerConfig(learning_rate=0.02, clip_norm=1e12, noise_multiplier=0.0)

    dp_model = MlpModel([3, 5, 2], seed=5)
    plain_model = MlpModel([3, 5, 2], seed=5)
    dp_state = init_adam_state(dp_model.parameters())
    plain_state = init_adam_state(plain_model.parameters())

    for step in range(100):
        tapes = _per_sample_tapes(dp_model, x)
        dp_adam_step(dp_model, tapes, y, cfg, seed=step, state=dp_state)

        logits, tape = plain_model.forward(x, training=True)
        _, gl = softmax_cross_entropy(logits, y)
        grads, _ = plain_model.backward(tape, gl)
        adam_step(plain_model.parameters(), grads, plain_state, cfg)

    for a, b in zip(dp_model.parameters(), plain_model.parameters()):
        np.testing.assert_allclose(a, b, atol=1e-8)


def test_dp_adam_per_sample_clip_invariant():
    rng = np.random.default_rng(13)
    model = MlpModel([4, 6, 3], seed=9)
    x = 10.0 * rng.standard_normal((6, 4))
    y = rng.integers(0, 3, size=6)
    clip = 0.5
    for i in range(6):
        _, tape = model.forward(x[i : i + 1], training=True)
        _, gl = softmax_cross_entropy(tape["out"], y[i : i + 1])
        grads, _ = model.backward(tape, gl)
        clipped, _ = clip_gradients(grads, clip)
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in clipped))
        assert norm <= clip + 1e-9


def test_dp_adam_opposite_gradients_cancel():
    model = MlpModel([1, 2], activations=["none"], seed=1)
    model.weights[0][...] = 0.0
    model.biases[0][...] = 0.0
    before = [p.copy() for p in model.parameters()]
    # Zero weights give uniform posteriors, so the two samples' gradients are
    # exact negatives of each other and the summed update vanishes.
    x = np.array([[1.0], [1.0]])
    y = np.array([0, 1])
    cfg = DpOptimizerConfig(learning_rate=0.1, clip_norm=1e9, noise_multiplier=0.0)
    state = init_adam_state(model.parameters())
    tapes = _per_sample_tapes(model, x)
    dp_adam_step(model, tapes, y, cfg, seed=0, state=state)
    for p, b in zip(model.parameters(), before):
        np.testing.assert_allclose(p, b, atol=1e-12)


def test_dp_adam_rejects_batch_norm_and_empty_batches():
    model = MlpModel([3, 4, 2], use_batch_norm=True, seed=0)
    cfg = DpOptimizerConfig()
    state = init_adam_state(model.parameters())
    with pytest.raises(ValueError, match="batch norm"):
        dp_adam_step(model, [None], np.array([0]), cfg, 0, state)
    plain = MlpModel([3, 2], seed=0)
    with pytest.raises(ValueError, match="empty batch"):
        dp_adam_step(plain, [], np.array([]), cfg, 0, init_adam_state(plain.parameters()))


def test_dp_adam_reports_sampling_metadata():
    model = MlpModel([3, 2], seed=4)
    x = np.random.default_rng(14).standard_normal((4, 3))
    tapes = _per_sample_tapes(model, x)
    cfg = DpOptimizerConfig(noise_multiplier=1.5)
    meta = dp_adam_step(
        model, tapes, np.zeros(4, dtype=int), cfg, 0,
        init_adam_state(model.parameters()), dataset_size=16,
    )
    assert meta.sampling_rate == pytest.approx(0.25)
    assert meta.noise_multiplier == 1.5


def test_dp_adam_noise_is_seeded():
    def step_with(seed):
        model = MlpModel([3, 2], seed=2)
        x = np.random.default_rng(15).standard_normal((4, 3))
        tapes = _per_sample_tapes(model, x)
        cfg = DpOptimizerConfig(noise_multiplier=1.0, clip_norm=1.0)
        dp_adam_step(model, tapes, np.zeros(4, dtype=int), cfg, seed,
                     init_adam_state(model.parameters()))
        return model.parameters()

    a1, a2, b = step_with(7), step_with(7), step_with(8)
    for x1, x2 in zip(a1, a2):
        assert np.array_equal(x1, x2)
    assert any(not np.array_equal(x, y) for x, y in zip(a1, b))


# ---------------------------------------------------------------------------
# Checkpoint records
# ---------------------------------------------------------------------------


def test_mlp_round_trip_through_buffer():
    model = MlpModel([4, 6, 3], activations=["selu", "none"], use_batch_norm=True, seed=3)
    model.forward(np.random.default_rng(16).standard_normal((12, 4)), training=True)
    buf = io.BytesIO()
    write_mlp(buf, model)
    buf.seek(0)
    loaded = read_mlp(buf)
    assert loaded.dims == model.dims
    assert loaded.activations == model.activations
    for a, b in zip(loaded.parameters(), model.parameters()):
        assert np.array_equal(a, b)
    np.testing.assert_array_equal(loaded.norms[0].running_mean, model.norms[0].running_mean)
    x = np.random.default_rng(17).standard_normal((5, 4))
    np.testing.assert_array_equal(
        loaded.forward(x)[0], model.forward(x)[0]
    )
