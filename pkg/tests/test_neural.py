import math

import numpy as np
import pytest

import config
from utilities.errors import NonFiniteLoss, ShapeMismatch
from utilities.featurize import synth_corpus
from utilities.neural import (
    AdamHyper,
    AdamState,
    InputScaler,
    Network,
    NetworkSpec,
    TrainConfig,
    adam_step,
    backward,
    dataset_loss,
    elu,
    forward,
    grad_check,
    init_network,
    load_network,
    sample_masks,
    save_network,
    split_validation,
    train,
)

TOL = 1e-4


def hand_forward(network, batch):
    """Row-by-row, unit-by-unit forward pass with math.exp."""
    outputs = []
    for row in batch:
        a = [float(v) for v in row]
        for w, b, act in zip(network.weights, network.biases, network.spec.activations):
            z = [sum(a[i] * w[i, j] for i in range(len(a))) + b[j] for j in range(w.shape[1])]
            if act == "elu":
                a = [v if v > 0 else math.exp(v) - 1.0 for v in z]
            elif act == "sigmoid":
                a = [1.0 / (1.0 + math.exp(-v)) for v in z]
            else:
                a = z
        outputs.append(a)
    return np.array(outputs)


def shrink(widths):
    return [max(3, w // 32) for w in widths]


# ============================================================================
# forward
# ============================================================================

def test_identity_linear_layer():
    spec = NetworkSpec(layer_widths=[3, 3], activations=["linear"])
    net = Network(spec, [np.eye(3)], [np.zeros(3)])
    batch = np.array([[1.0, -2.0, 0.5], [0.0, 4.0, 9.0]])
    out, _ = forward(net, batch)
    assert np.array_equal(out, batch)


def test_elu_saturates_at_minus_one():
    assert elu(np.array([-1e9]))[0] == pytest.approx(-1.0)
    assert elu(np.array([2.0]))[0] == 2.0


def test_forward_matches_hand_oracle():
    spec = NetworkSpec(layer_widths=[2, 16, 1], activations=["elu", "sigmoid"])
    net = init_network(spec, np.random.default_rng(0))
    net.biases[0] = np.random.default_rng(1).normal(size=16)
    batch = np.random.default_rng(2).normal(size=(5, 2))
    out, _ = forward(net, batch)
    assert np.allclose(out, hand_forward(net, batch), atol=1e-12)


def test_forward_rejects_wrong_width():
    net = init_network(NetworkSpec(layer_widths=[3, 2], activations=["linear"]), np.random.default_rng(0))
    with pytest.raises(ShapeMismatch):
        forward(net, np.zeros((2, 4)))


def test_dropout_only_in_train_mode():
    spec = NetworkSpec(layer_widths=[4, 8, 1], activations=["elu", "sigmoid"], dropout_rate=0.5)
    net = init_network(spec, np.random.default_rng(0))
    batch = np.ones((6, 4))
    infer_a, _ = forward(net, batch, "infer")
    infer_b, _ = forward(net, batch, "infer")
    assert np.array_equal(infer_a, infer_b)
    _, cache = forward(net, batch, "train", np.random.default_rng(1))
    assert set(np.unique(cache.masks[0])) <= {0.0, 2.0}


def test_network_spec_needs_one_activation_per_layer():
    with pytest.raises(ValueError):
        NetworkSpec(layer_widths=[3, 4, 1], activations=["elu"])


# ============================================================================
# Adam
# ============================================================================

def test_zero_gradient_leaves_params():
    params = [np.array([[1.0, -2.0]]), np.array([0.5])]
    state = AdamState.zeros_like(params)
    new, _ = adam_step(params, [np.zeros((1, 2)), np.zeros(1)], state, 1, AdamHyper())
    assert all(np.array_equal(a, b) for a, b in zip(new, params))


def test_first_step_moves_by_alpha():
    params = [np.array([0.0])]
    new, state = adam_step(params, [np.array([1.0])], AdamState.zeros_like(params), 1, AdamHyper(alpha=0.001))
    assert abs(new[0][0] + 0.001) < 1e-6
    assert params[0][0] == 0.0
    assert state.m[0][0] == pytest.approx(0.1)


def test_identical_tensors_identical_trajectories():
    rng = np.random.default_rng(3)
    a = [rng.normal(size=(3, 2))]
    b = [a[0].copy()]
    sa, sb = AdamState.zeros_like(a), AdamState.zeros_like(b)
    for t in range(1, 20):
        g = rng.normal(size=(3, 2))
        a, sa = adam_step(a, [g], sa, t, AdamHyper())
        b, sb = adam_step(b, [g.copy()], sb, t, AdamHyper())
    assert np.array_equal(a[0], b[0])


def test_step_index_starts_at_one():
    params = [np.zeros(2)]
    with pytest.raises(ValueError):
        adam_step(params, [np.zeros(2)], AdamState.zeros_like(params), 0, AdamHyper())


def test_mismatched_gradient_shape():
    params = [np.zeros(2)]
    with pytest.raises(ShapeMismatch):
        adam_step(params, [np.zeros(3)], AdamState.zeros_like(params), 1, AdamHyper())


# ============================================================================
# train
# ============================================================================

def scaled_corpus(small_corpus):
    return InputScaler.fit(small_corpus.matrix).transform(small_corpus.matrix)


def test_zero_learning_rate_keeps_weights(small_corpus):
    x = scaled_corpus(small_corpus)
    spec = NetworkSpec(layer_widths=[12, 6, 12], activations=["elu", "linear"])
    start = init_network(spec, np.random.default_rng(0))
    cfg = TrainConfig(epochs=3, batch_size=16, adam=AdamHyper(alpha=0.0), seed=1)
    trained, trace = train(spec, x, x, cfg, network=start)
    assert all(np.array_equal(a, b) for a, b in zip(trained.params(), start.params()))
    assert len(trace) == 3


def test_zero_epochs_returns_initial_network(small_corpus):
    x = scaled_corpus(small_corpus)
    spec = NetworkSpec(layer_widths=[12, 4, 12], activations=["elu", "linear"])
    net, trace = train(spec, x, x, TrainConfig(seed=5), epochs=0)
    expected = init_network(spec, np.random.default_rng(5))
    assert all(np.array_equal(a, b) for a, b in zip(net.params(), expected.params()))
    assert len(trace) == 0


def test_autoencoder_loss_halves():
    corpus = synth_corpus(50, 150, 20, 0.9, seed=8)
    x = InputScaler.fit(corpus.matrix).transform(corpus.matrix)
    spec = NetworkSpec(layer_widths=[20, 8, 20], activations=["elu", "linear"])
    _, trace = train(spec, x, x, TrainConfig(epochs=60, batch_size=16, seed=8))
    assert trace.train_loss[-1] < 0.5 * trace.train_loss[0]
    assert trace.val_loss[-1] < trace.val_loss[0]


def test_same_seed_gives_identical_training(small_corpus):
    x = scaled_corpus(small_corpus)
    spec = NetworkSpec(layer_widths=[12, 6, 12], activations=["elu", "linear"], dropout_rate=0.2)
    cfg = TrainConfig(epochs=5, batch_size=16, seed=21)
    first_net, first = train(spec, x, x, cfg)
    second_net, second = train(spec, x, x, cfg)
    assert first.train_loss == second.train_loss
    assert first.val_loss == second.val_loss
    assert all(np.array_equal(a, b) for a, b in zip(first_net.params(), second_net.params()))


def test_equal_train_and_validation_curves_coincide(small_corpus):
    x = scaled_corpus(small_corpus)
    spec = NetworkSpec(layer_widths=[12, 6, 12], activations=["elu", "linear"], dropout_rate=0.0)
    _, trace = train(spec, x, x, TrainConfig(epochs=10, batch_size=32, seed=2), validation=(x, x))
    assert np.allclose(trace.train_loss, trace.val_loss, atol=1e-9, rtol=0)


def test_default_validation_split_is_last_tenth():
    train_idx, val_idx = split_validation(160, None, np.random.default_rng(0))
    assert len(val_idx) == 16
    assert len(set(train_idx) | set(val_idx)) == 160
    _, none = split_validation(5, None, np.random.default_rng(0))
    assert len(none) == 0


def test_diverging_training_raises():
    spec = NetworkSpec(layer_widths=[2, 1], activations=["linear"])
    x = np.array([[1.0, np.inf], [0.0, 1.0]])
    with np.errstate(all="ignore"):
        with pytest.raises(NonFiniteLoss) as err:
            train(spec, x, np.zeros((2, 1)), TrainConfig(epochs=2, seed=0))
    assert err.value.epoch == 1


def test_targets_must_match_output_width():
    spec = NetworkSpec(layer_widths=[2, 1], activations=["linear"])
    with pytest.raises(ShapeMismatch):
        train(spec, np.zeros((4, 2)), np.zeros((4, 2)), TrainConfig())


# ============================================================================
# Gradient checking
# ============================================================================

def test_single_linear_unit_gradient():
    spec = NetworkSpec(layer_widths=[1, 1], activations=["linear"], loss="mse")
    net = Network(spec, [np.array([[2.0]])], [np.array([0.0])])
    x, t = np.array([[1.0]]), np.array([[0.0]])
    out, cache = forward(net, x)
    grads = backward(net, cache, out, t)
    assert grads[0][0, 0] == pytest.approx(4.0)
    assert grad_check(net, x, t).passed(1e-6)


def test_small_bce_network_gradients():
    spec = NetworkSpec(
        layer_widths=[4, 8, 3, 1], activations=["elu", "elu", "sigmoid"], loss="binary_cross_entropy"
    )
    rng = np.random.default_rng(11)
    net = init_network(spec, rng)
    x = rng.normal(size=(6, 4))
    t = rng.integers(0, 2, size=(6, 1)).astype(np.float64)
    report = grad_check(net, x, t)
    assert report.passed(TOL), report
    assert report.n_checked == sum(p.size for p in net.params())


def test_gradients_with_frozen_dropout_masks():
    spec = NetworkSpec(
        layer_widths=[4, 8, 3, 1],
        activations=["elu", "elu", "sigmoid"],
        dropout_rate=0.3,
        loss="binary_cross_entropy",
    )
    rng = np.random.default_rng(12)
    net = init_network(spec, rng)
    x = rng.normal(size=(6, 4))
    t = rng.integers(0, 2, size=(6, 1)).astype(np.float64)
    masks = sample_masks(net, 6, rng)
    assert grad_check(net, x, t, masks=masks).passed(TOL)


def test_random_architectures_pass_gradient_check():
    rng = np.random.default_rng(2024)
    families = []
    for hidden in config.AE_HIDDEN.values():
        h = shrink(hidden)
        families.append(([12, *h, 12], ["elu"] * len(h) + ["linear"], "mse"))
    for hidden in config.DNN_HIDDEN.values():
        h = shrink(hidden)
        families.append(([12, *h, 1], ["elu"] * len(h) + ["sigmoid"], "binary_cross_entropy"))

    for i in range(20):
        widths, acts, loss = families[i % len(families)]
        spec = NetworkSpec(layer_widths=widths, activations=acts, loss=loss)
        net = init_network(spec, rng)
        x = rng.uniform(0.0, 1.0, size=(5, 12))
        if loss == "mse":
            t = x.copy()
        else:
            t = rng.integers(0, 2, size=(5, 1)).astype(np.float64)
        report = grad_check(net, x, t)
        assert report.passed(TOL), (widths, report)


# ============================================================================
# Scaling and persistence
# ============================================================================

def test_scaler_maps_to_unit_interval():
    m = np.array([[0.0, 5.0, 3.0], [10.0, 5.0, 1.0], [4.0, 5.0, 2.0]])
    scaled = InputScaler.fit(m).transform(m)
    assert scaled.min() >= 0.0 and scaled.max() <= 1.0
    assert np.all(scaled[:, 1] == 0.0)


def test_network_file_round_trip(tmp_path):
    spec = NetworkSpec(layer_widths=[5, 7, 2], activations=["elu", "sigmoid"])
    net = init_network(spec, np.random.default_rng(0))
    path = str(tmp_path / "net.bin")
    save_network(net, path)
    loaded = load_network(path)
    x = np.random.default_rng(1).normal(size=(4, 5))
    assert np.array_equal(forward(loaded, x)[0], forward(net, x)[0])
    assert loaded.spec == spec


def test_dataset_loss_bce_clamped():
    spec = NetworkSpec(layer_widths=[1, 1], activations=["sigmoid"], loss="binary_cross_entropy")
    net = Network(spec, [np.array([[1000.0]])], [np.array([0.0])])
    loss = dataset_loss(net, np.array([[1.0]]), np.array([[0.0]]))
    assert np.isfinite(loss)
    assert loss == pytest.approx(-math.log(config.BCE_CLAMP), rel=1e-6)
