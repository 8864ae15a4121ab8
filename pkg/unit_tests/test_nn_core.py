""" unit tests for the differentiable layers """
import pytest

import numpy as np
from scipy import special

from eeg_cdfusion import nn_core
from eeg_cdfusion.autodiff import Tensor, gradient_check
from eeg_cdfusion.exceptions import ShapeError
from eeg_cdfusion.nn_core import BatchNormState, LstmWeights

SEEDS = range(5)


def rand(rng, *shape):
    return rng.standard_normal(shape)


def test_linear_identity():
    """ Test W = I, b = 0 returns the input """
    x = np.random.default_rng(0).standard_normal((4, 3))
    out = nn_core.linear(x, np.eye(3), np.zeros(3))
    np.testing.assert_array_equal(out.values, x)


def test_linear_hand_arithmetic():
    """ Test [1, 2] W + b with W = [[1], [1]], b = [0.5] """
    out = nn_core.linear(np.array([1.0, 2.0]), np.array([[1.0], [1.0]]), np.array([0.5]))
    np.testing.assert_allclose(out.values, [3.5])


def test_linear_width_mismatch():
    """ Test the input width must match the weight rows """
    with pytest.raises(ShapeError):
        nn_core.linear(np.ones((2, 4)), np.ones((3, 2)))


@pytest.mark.parametrize("seed", SEEDS)
def test_linear_gradient(seed):
    """ Test (4 x 3)(3 x 2) + b against finite differences """
    rng = np.random.default_rng(seed)
    assert gradient_check(nn_core.linear, [rand(rng, 4, 3), rand(rng, 3, 2), rand(rng, 2)], seed=seed + 100) <= 1e-6


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("activation", [nn_core.relu, nn_core.leaky_relu, nn_core.sigmoid, nn_core.tanh])
def test_activation_gradients(activation, seed):
    """ Test pointwise activations against finite differences """
    rng = np.random.default_rng(seed)
    assert gradient_check(activation, [rand(rng, 3, 5)], seed=seed + 100) <= 1e-6


def test_leaky_relu_slope():
    """ Test negative inputs are scaled by 0.2 """
    out = nn_core.leaky_relu(np.array([-2.0, 0.0, 3.0]))
    np.testing.assert_allclose(out.values, [-0.4, 0.0, 3.0])


def test_conv1d_unit_kernel_is_identity():
    """ Test K = 1 with a unit kernel copies one channel """
    x = np.random.default_rng(1).standard_normal((2, 5))
    kernels = np.array([[[1.0], [0.0]]])
    np.testing.assert_allclose(nn_core.conv1d(x, kernels).values, x[:1])


def test_conv1d_hand_arithmetic():
    """ Test [1, 2, 3] with kernel [1, 1] """
    out = nn_core.conv1d(np.array([[1.0, 2.0, 3.0]]), np.array([[[1.0, 1.0]]]))
    np.testing.assert_allclose(out.values, [[3.0, 5.0]])


def test_conv1d_output_length():
    """ Test floor((L - K) / s) + 1 outputs """
    out = nn_core.conv1d(np.ones((2, 3, 10)), np.ones((4, 3, 3)), stride=2)
    assert out.shape == (2, 4, 4)


def test_conv1d_channel_mismatch():
    """ Test kernels must match the input channels """
    with pytest.raises(ShapeError):
        nn_core.conv1d(np.ones((2, 3, 10)), np.ones((4, 2, 3)))


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("stride", [1, 2])
def test_conv1d_gradient(seed, stride):
    """ Test convolution gradients for input, kernels and bias """
    rng = np.random.default_rng(seed)
    inputs = [rand(rng, 2, 3, 9), rand(rng, 4, 3, 3), rand(rng, 4)]
    assert gradient_check(lambda x, w, b: nn_core.conv1d(x, w, b, stride=stride), inputs, seed=seed + 100) <= 1e-6


def test_batch_norm_standardizes():
    """ Test gamma = 1, beta = 0 gives mean 0 and variance 1 per channel """
    x = np.random.default_rng(2).standard_normal((8, 3, 20)) * 4.0 + 1.5
    out = nn_core.batch_norm(x, np.ones(3), np.zeros(3), BatchNormState.fresh(3)).values
    np.testing.assert_allclose(out.mean(axis=(0, 2)), 0.0, atol=1e-5)
    np.testing.assert_allclose(out.var(axis=(0, 2)), 1.0, atol=1e-5)


def test_batch_norm_affine():
    """ Test gamma = 2, beta = 3 on standardized input """
    x = np.random.default_rng(3).standard_normal((8, 3, 20))
    x = (x - x.mean(axis=(0, 2), keepdims=True)) / x.std(axis=(0, 2), keepdims=True)
    out = nn_core.batch_norm(x, np.full(3, 2.0), np.full(3, 3.0), BatchNormState.fresh(3)).values
    np.testing.assert_allclose(out.mean(axis=(0, 2)), 3.0, atol=1e-5)
    np.testing.assert_allclose(out.std(axis=(0, 2)), 2.0, atol=1e-4)


def test_batch_norm_running_statistics():
    """ Test momentum 0.1 updates and eval mode using them """
    x = np.random.default_rng(4).standard_normal((4, 2, 10)) + 5.0
    state = BatchNormState.fresh(2)
    nn_core.batch_norm(x, np.ones(2), np.zeros(2), state, nn_core.TRAIN)
    count = 40
    np.testing.assert_allclose(state.running_mean, 0.1 * x.mean(axis=(0, 2)))
    np.testing.assert_allclose(state.running_var, 0.9 + 0.1 * x.var(axis=(0, 2)) * count / (count - 1))
    out = nn_core.batch_norm(x, np.ones(2), np.zeros(2), state, nn_core.EVAL).values
    expected = (x - state.running_mean[None, :, None]) / np.sqrt(state.running_var[None, :, None] + 1e-5)
    np.testing.assert_allclose(out, expected)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("mode", [nn_core.TRAIN, nn_core.EVAL])
def test_batch_norm_gradient(seed, mode):
    """ Test batch norm gradients in both modes """
    rng = np.random.default_rng(seed)
    inputs = [rand(rng, 4, 3, 5), rand(rng, 3), rand(rng, 3)]

    def fn(x, gamma, beta):
        state = BatchNormState(np.full(3, 0.2), np.full(3, 1.5))
        return nn_core.batch_norm(x, gamma, beta, state, mode)

    assert gradient_check(fn, inputs, seed=seed + 100) <= 1e-5


def _lstm_weights(rng, d_in, hidden, scale=0.5):
    return [rand(rng, d_in, 4 * hidden) * scale, rand(rng, hidden, 4 * hidden) * scale, rand(rng, 4 * hidden) * scale]


def test_lstm_zero_weights_stay_zero():
    """ Test zero weights keep the hidden state at zero """
    x = np.random.default_rng(5).standard_normal((2, 6, 3))
    weights = LstmWeights(Tensor(np.zeros((3, 8))), Tensor(np.zeros((2, 8))), Tensor(np.zeros(8)))
    assert not nn_core.lstm(x, weights).values.any()


def test_lstm_single_step_by_hand():
    """ Test T = 1 against the cell equations """
    rng = np.random.default_rng(6)
    x = rng.standard_normal((1, 3))
    w_x, w_h, bias = _lstm_weights(rng, 3, 2)
    gates = x[0] @ w_x + bias
    i, f, g, o = special.expit(gates[0:2]), special.expit(gates[2:4]), np.tanh(gates[4:6]), special.expit(gates[6:8])
    c = f * 0.0 + i * g
    expected = o * np.tanh(c)
    out = nn_core.lstm(x, LstmWeights(Tensor(w_x), Tensor(w_h), Tensor(bias)))
    np.testing.assert_allclose(out.values[0], expected, atol=1e-12)


def test_lstm_forget_bias_initialization():
    """ Test the forget gate bias starts at +1 """
    _, _, bias = nn_core.init_lstm_weights(np.random.default_rng(0), 3, 4)
    np.testing.assert_array_equal(bias[4:8], 1.0)


def test_lstm_weight_bounds_follow_fan_in():
    """ Test input weights are bounded by 1/sqrt(d_in), recurrent ones by 1/sqrt(hidden) """
    w_x, w_h, _ = nn_core.init_lstm_weights(np.random.default_rng(1), 100, 4)
    assert np.abs(w_x).max() <= 0.1
    assert np.abs(w_h).max() <= 0.5
    assert np.abs(w_h).max() > 0.1


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("reverse", [False, True])
def test_lstm_gradient(seed, reverse):
    """ Test BPTT over inputs and all weights, T = 4 """
    rng = np.random.default_rng(seed)
    inputs = [rand(rng, 2, 4, 3), *_lstm_weights(rng, 3, 2)]

    def fn(x, w_x, w_h, bias):
        return nn_core.lstm(x, LstmWeights(w_x, w_h, bias), reverse=reverse)

    assert gradient_check(fn, inputs, seed=seed + 100) <= 1e-4


def test_lstm_initial_state():
    """ Test h0 and c0 seed the recurrence """
    rng = np.random.default_rng(7)
    x = rng.standard_normal((1, 2, 3))
    weights = LstmWeights(*(Tensor(w) for w in _lstm_weights(rng, 3, 2)))
    default = nn_core.lstm(x, weights).values
    seeded = nn_core.lstm(x, weights, h0=np.ones(2), c0=np.ones(2)).values
    assert not np.allclose(default, seeded)


def test_bilstm_palindrome_symmetry():
    """ Test shared weights on a palindromic input swap halves at T - 1 - t """
    rng = np.random.default_rng(8)
    half = rng.standard_normal((3, 2))
    x = np.concatenate([half, half[::-1]])
    weights = LstmWeights(*(Tensor(w) for w in _lstm_weights(rng, 2, 3)))
    out = nn_core.bilstm(x, weights, weights).values
    assert out.shape == (6, 6)
    for t in range(6):
        np.testing.assert_allclose(out[t, :3], out[5 - t, 3:], atol=1e-12)


def test_bilstm_zero_weights():
    """ Test zero weights give zeros """
    zeros = LstmWeights(Tensor(np.zeros((2, 8))), Tensor(np.zeros((2, 8))), Tensor(np.zeros(8)))
    assert not nn_core.bilstm(np.ones((5, 2)), zeros, zeros).values.any()


@pytest.mark.parametrize("seed", SEEDS)
def test_bilstm_gradient(seed):
    """ Test BiLSTM gradients over both directions """
    rng = np.random.default_rng(seed)
    inputs = [rand(rng, 2, 4, 3), *_lstm_weights(rng, 3, 2), *_lstm_weights(rng, 3, 2)]

    def fn(x, fw_x, fw_h, fb, bw_x, bw_h, bb):
        return nn_core.bilstm(x, LstmWeights(fw_x, fw_h, fb), LstmWeights(bw_x, bw_h, bb))

    assert gradient_check(fn, inputs, seed=seed + 100) <= 1e-4


def test_softmax_uniform():
    """ Test equal inputs give 1 / n """
    np.testing.assert_allclose(nn_core.softmax(np.zeros((2, 4))).values, 0.25)


def test_softmax_shift_invariance():
    """ Test adding a constant to a row leaves the output unchanged """
    x = np.random.default_rng(9).standard_normal((3, 5))
    shifted = x + np.array([[100.0], [-50.0], [7.0]])
    np.testing.assert_allclose(nn_core.softmax(x).values, nn_core.softmax(shifted).values, atol=1e-12)


@pytest.mark.parametrize("seed", SEEDS)
def test_softmax_gradient(seed):
    """ Test softmax gradients along either axis """
    rng = np.random.default_rng(seed)
    assert gradient_check(lambda x: nn_core.softmax(x, axis=0), [rand(rng, 4, 3)], seed=seed + 100) <= 1e-6
    assert gradient_check(nn_core.softmax, [rand(rng, 4, 3)], seed=seed + 100) <= 1e-6


def test_masked_softmax_zeroes_masked_entries():
    """ Test masked entries get exactly zero weight """
    mask = np.array([[True, False, True], [False, True, False]])
    out = nn_core.masked_softmax(np.ones((2, 3)), mask).values
    np.testing.assert_array_equal(out, [[0.5, 0.0, 0.5], [0.0, 1.0, 0.0]])


@pytest.mark.parametrize("seed", SEEDS)
def test_masked_softmax_gradient(seed):
    """ Test masked softmax gradients """
    rng = np.random.default_rng(seed)
    mask = rng.random((4, 4)) < 0.6
    mask[np.arange(4), np.arange(4)] = True
    assert gradient_check(lambda x: nn_core.masked_softmax(x, mask), [rand(rng, 4, 4)], seed=seed + 100) <= 1e-6


def test_cross_entropy_uniform_logits():
    """ Test equal logits give ln 2 """
    loss = nn_core.cross_entropy(np.zeros((3, 2)), np.array([0, 1, 1]))
    assert float(loss.values) == pytest.approx(np.log(2.0), abs=1e-12)


def test_cross_entropy_margin_drives_loss_to_zero():
    """ Test the loss decreases monotonically in the correct-class margin """
    losses = [float(nn_core.cross_entropy(np.array([[margin, 0.0]]), np.array([0])).values) for margin in range(11)]
    assert all(a > b for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 1e-4


@pytest.mark.parametrize("seed", SEEDS)
def test_cross_entropy_gradient(seed):
    """ Test cross-entropy gradients with respect to the logits """
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=6)
    assert gradient_check(lambda x: nn_core.cross_entropy(x, labels), [rand(rng, 6, 2)], seed=seed + 100) <= 1e-6


def test_cross_entropy_shape_mismatch():
    """ Test one label per logit row """
    with pytest.raises(ShapeError):
        nn_core.cross_entropy(np.zeros((3, 2)), np.array([0, 1]))
