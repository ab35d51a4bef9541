import json
import math

import numpy as np
import pytest

from ensemblade import nnet
from ensemblade.nnet import (Activation, LabeledExample, MlpArchitecture,
                             MlpModel, cross_entropy, forward, init_mlp,
                             input_gradient, load_model, param_gradients,
                             predict_class, save_model, sgd_step)

from _gradcheck import input_grad_errors, param_grad_errors, random_triple

# Fixed [2,3,2] instance used for the symbolic forward oracle.  The expected
# probabilities were computed independently at 50-digit precision from the
# same weights and rounded to float64.
ORACLE_W0 = np.array([[0.5, -0.25], [-1.0, 0.75], [0.3, 0.6]])
ORACLE_W1 = np.array([[1.2, -0.7, 0.4], [-0.3, 0.9, -1.1]])
ORACLE_X = np.array([1.0, -1.0])
ORACLE_PROBS = {
    Activation.TANH: (0.8830830473824664, 0.11691695261753358),
    Activation.SIGMOID: (0.8053742757363774, 0.19462572426362261),
    Activation.RELU: (0.7549149868676283, 0.24508501313237172),
}


def oracle_model(activation):
    arch = MlpArchitecture((2, 3, 2), activation)
    return MlpModel(arch, [ORACLE_W0.copy(), ORACLE_W1.copy()])


def test_architecture_validation():
    with pytest.raises(ValueError):
        MlpArchitecture((3,), Activation.TANH)
    with pytest.raises(ValueError):
        MlpArchitecture((2, 0, 2), Activation.TANH)
    arch = MlpArchitecture((4, 8, 3), Activation.RELU)
    assert arch.input_dim == 4 and arch.num_classes == 3 and arch.num_layers == 2


def test_model_shape_validation():
    arch = MlpArchitecture((2, 3, 2), Activation.TANH)
    with pytest.raises(ValueError):
        MlpModel(arch, [np.zeros((3, 2))])
    with pytest.raises(ValueError):
        MlpModel(arch, [np.zeros((2, 3)), np.zeros((2, 3))])
    with pytest.raises(ValueError):
        MlpModel(arch, [np.full((3, 2), np.nan), np.zeros((2, 3))])


def test_init_deterministic_and_shapes():
    arch = MlpArchitecture((2, 3, 2), Activation.TANH)
    a = init_mlp(arch, 7)
    b = init_mlp(arch, 7)
    assert all(np.array_equal(u, v) for u, v in zip(a.weights, b.weights))
    assert a.weights[0].shape == (3, 2)
    assert a.weights[1].shape == (2, 3)
    assert not all(np.array_equal(u, v)
                   for u, v in zip(a.weights, init_mlp(arch, 8).weights))


def test_init_fan_bound():
    # fan_in + fan_out = 3 for a [1,2] matrix, so s = sqrt(2).
    model = init_mlp(MlpArchitecture((1, 2), Activation.TANH), 1)
    s = math.sqrt(2.0)
    assert np.all(np.abs(model.weights[0]) <= s)


def test_forward_zero_weights_uniform():
    arch = MlpArchitecture((3, 4, 5), Activation.RELU)
    model = MlpModel(arch, [np.zeros((4, 3)), np.zeros((5, 4))])
    trace = forward(model, np.array([1.0, -2.0, 0.5]))
    np.testing.assert_array_equal(trace.probs, np.full(5, 0.2))


def test_forward_symmetric_single_layer():
    model = MlpModel(MlpArchitecture((2, 2), Activation.TANH), [np.eye(2)])
    trace = forward(model, np.array([0.37, 0.37]))
    np.testing.assert_array_equal(trace.probs, np.array([0.5, 0.5]))


@pytest.mark.parametrize("activation", list(Activation))
def test_forward_symbolic_oracle(activation):
    trace = forward(oracle_model(activation), ORACLE_X)
    np.testing.assert_allclose(trace.probs, ORACLE_PROBS[activation],
                               rtol=0, atol=1e-14)


def test_forward_deterministic_bitwise():
    model = init_mlp(MlpArchitecture((3, 5, 4), Activation.SIGMOID), 3)
    x = np.array([0.1, -0.7, 2.2])
    t1, t2 = forward(model, x), forward(model, x)
    np.testing.assert_array_equal(t1.probs, t2.probs)
    np.testing.assert_array_equal(t1.logits, t2.logits)


def test_simplex_property():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        model, x, _ = random_triple(rng, Activation.TANH)
        probs = forward(model, x).probs
        assert abs(probs.sum() - 1.0) <= 1e-9
        assert np.all(probs >= 0) and np.all(probs <= 1)


def test_output_row_permutation_equivariance():
    model = oracle_model(Activation.TANH)
    perm = np.array([1, 0])
    permuted = MlpModel(model.arch, [model.weights[0], model.weights[1][perm]])
    np.testing.assert_array_equal(forward(permuted, ORACLE_X).probs,
                                  forward(model, ORACLE_X).probs[perm])


def test_predict_class():
    assert predict_class(np.array([0.9, 0.1])) == 0
    assert predict_class(np.array([0.5, 0.5])) == 0
    assert predict_class(np.full(4, 0.25)) == 0
    assert predict_class(np.array([0.1, 0.2, 0.7])) == 2


def test_cross_entropy_values():
    assert cross_entropy(np.array([0.0, 1.0]), 1) == 0.0
    assert cross_entropy(np.array([0.5, 0.5]), 0) == pytest.approx(
        0.6931471805599453, abs=1e-15)
    assert cross_entropy(np.array([0.36, 0.64]), 0) == pytest.approx(
        1.0216512475319814, abs=1e-15)
    # Zero probability is clamped, not -inf.
    assert cross_entropy(np.array([0.0, 1.0]), 0) == pytest.approx(
        -math.log(1e-12))


def test_input_gradient_saturated_is_exactly_zero():
    # Logit gap 1600: the losing softmax weight underflows to 0.0, so the
    # true-class probability is exactly 1 and the gradient exactly zero.
    arch = MlpArchitecture((2, 2), Activation.TANH)
    model = MlpModel(arch, [np.array([[800.0, 0.0], [-800.0, 0.0]])])
    x = np.array([1.0, 0.3])
    assert forward(model, x).probs[0] == 1.0
    np.testing.assert_array_equal(input_gradient(model, x, 0), np.zeros(2))


def test_input_gradient_single_layer_closed_form():
    # For logits z = Wx the gradient is (h - onehot)^T W.
    W = np.array([[0.8, -0.2], [0.1, 0.5], [-0.6, 0.9]])
    model = MlpModel(MlpArchitecture((2, 3), Activation.TANH), [W])
    x = np.array([0.4, -1.1])
    h = forward(model, x).probs
    expected = (h - np.eye(3)[1]) @ W
    np.testing.assert_allclose(input_gradient(model, x, 1), expected,
                               rtol=1e-12, atol=0)


@pytest.mark.parametrize("activation", list(Activation))
def test_input_gradient_finite_differences(activation):
    rng = np.random.default_rng(11)
    tol = 1e-3 if activation == Activation.RELU else 1e-4
    for _ in range(10):
        model, x, label = random_triple(rng, activation)
        errs, kept = input_grad_errors(model, x, label)
        assert np.all(errs[kept] <= tol)


@pytest.mark.parametrize("activation", list(Activation))
def test_param_gradients_finite_differences(activation):
    rng = np.random.default_rng(13)
    tol = 1e-3 if activation == Activation.RELU else 1e-4
    for _ in range(10):
        model, x, label = random_triple(rng, activation)
        errs, kept = param_grad_errors(model, x, label)
        assert np.all(errs[kept] <= tol)


def test_param_gradients_weighted_linearity():
    model = oracle_model(Activation.TANH)
    ex = LabeledExample(ORACLE_X, 1)
    single = param_gradients(model, [(ex, 1.0)])
    halved = param_gradients(model, [(ex, 0.5), (ex, 0.5)])
    for a, b in zip(single, halved):
        np.testing.assert_allclose(a, b, rtol=1e-15, atol=0)


def test_param_gradients_zero_weights():
    model = oracle_model(Activation.TANH)
    ex = LabeledExample(ORACLE_X, 0)
    grads = param_gradients(model, [(ex, 0.0), (ex, 0.0)])
    for g in grads:
        np.testing.assert_array_equal(g, np.zeros_like(g))


def test_param_gradients_empty_batch():
    with pytest.raises(ValueError):
        param_gradients(oracle_model(Activation.TANH), [])


def test_sgd_step_identities():
    model = oracle_model(Activation.SIGMOID)
    zero = [np.zeros_like(w) for w in model.weights]
    ones = [np.ones_like(w) for w in model.weights]
    for stepped in (sgd_step(model, ones, 0.0), sgd_step(model, zero, 1.0)):
        for a, b in zip(stepped.weights, model.weights):
            np.testing.assert_array_equal(a, b)
    # Pure function: the input model is untouched.
    stepped = sgd_step(model, ones, 0.1)
    np.testing.assert_array_equal(model.weights[0], ORACLE_W0)
    np.testing.assert_allclose(stepped.weights[0], ORACLE_W0 - 0.1, rtol=0)


def test_sgd_step_descends_convex_loss():
    rng = np.random.default_rng(5)
    model = init_mlp(MlpArchitecture((3, 2), Activation.TANH), 5)
    batch = [(LabeledExample(rng.normal(size=3), int(rng.integers(0, 2))), 0.25)
             for _ in range(4)]

    def batch_loss(m):
        return sum(w * cross_entropy(forward(m, ex.features).probs, ex.label)
                   for ex, w in batch)

    grads = param_gradients(model, batch)
    assert batch_loss(sgd_step(model, grads, 1e-3)) < batch_loss(model)


def test_model_persistence_round_trip(tmp_path):
    model = init_mlp(MlpArchitecture((3, 5, 2), Activation.RELU), 99)
    path = tmp_path / "model.json"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.arch == model.arch
    for a, b in zip(loaded.weights, model.weights):
        np.testing.assert_array_equal(a, b)
    # The file is plain JSON with the documented layout.
    doc = json.loads(path.read_text())
    assert doc["arch"]["widths"] == [3, 5, 2]
    assert doc["arch"]["activation"] == "relu"
    assert len(doc["weights"]) == 2
