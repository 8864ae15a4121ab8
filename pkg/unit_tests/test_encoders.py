""" unit tests for the TDEE and SDEE encoder blocks """
import pytest

import numpy as np

from eeg_cdfusion import encoders, nn_core
from eeg_cdfusion.autodiff import Tensor, gradient_check
from eeg_cdfusion.encoders import SdeeConfig, TdeeConfig
from eeg_cdfusion.exceptions import ConfigurationError, ShapeError
from eeg_cdfusion.graph_builder import build_graph, knn_adjacency

SMALL_TDEE = TdeeConfig(in_channels=2, conv_channels=(3, 3, 3), kernel_sizes=(3, 3, 3),
                        strides=(1, 1, 1), bilstm_hidden=2, lstm_hidden=3)


def as_params(arrays):
    return {name: Tensor(value) for name, value in arrays.items()}


def random_graph(rng, n_nodes, p=0.4):
    upper = np.triu(rng.random((n_nodes, n_nodes)) < p, k=1)
    return (upper | upper.T).astype(np.int64)


def dense_gcn(adjacency, h, weight):
    a_tilde = adjacency + np.eye(adjacency.shape[0])
    d_inv_sqrt = np.diag(1.0 / np.sqrt(a_tilde.sum(axis=1)))
    return np.maximum(d_inv_sqrt @ a_tilde @ d_inv_sqrt @ h @ weight, 0.0)


def brute_force_gat(adjacency, h, weight, attention):
    z = h @ weight
    width = z.shape[1]
    out = np.zeros_like(z)
    alphas = np.zeros(adjacency.shape)
    for i in range(adjacency.shape[0]):
        neighbours = [j for j in range(adjacency.shape[0]) if adjacency[i, j] or j == i]
        scores = []
        for j in neighbours:
            e = attention[:width] @ z[i] + attention[width:] @ z[j]
            scores.append(e if e > 0 else 0.2 * e)
        weights = np.exp(np.array(scores) - max(scores))
        weights /= weights.sum()
        for j, alpha in zip(neighbours, weights):
            alphas[i, j] = alpha
            out[i] += alpha * z[j]
    return np.maximum(out, 0.0), alphas


def test_tdee_output_shape_for_defaults():
    """ Test W = 256 maps to T' = 30 steps of width 64 """
    cfg = TdeeConfig()
    assert cfg.output_length(256) == 30
    weights, buffers = encoders.init_tdee_params(cfg, np.random.default_rng(0), np.float32)
    raw = np.random.default_rng(1).standard_normal((2, 32, 256)).astype(np.float32)
    out = encoders.tdee_forward(raw, as_params(weights), buffers, cfg)
    assert out.shape == (2, 30, 64)
    assert out.dtype == np.float32


def test_tdee_unbatched_input():
    """ Test a single [C, W] window gives [T', d] """
    weights, buffers = encoders.init_tdee_params(SMALL_TDEE, np.random.default_rng(0))
    out = encoders.tdee_forward(np.ones((2, 12)) * np.arange(12), as_params(weights), buffers, SMALL_TDEE)
    assert out.shape == (6, 3)


def test_tdee_zero_input_zero_biases():
    """ Test all-zero input with zero biases stays zero """
    weights, buffers = encoders.init_tdee_params(SMALL_TDEE, np.random.default_rng(0))
    for name in weights:
        if name.endswith(("bias", "beta")):
            weights[name] = np.zeros_like(weights[name])
    out = encoders.tdee_forward(np.zeros((2, 2, 12)), as_params(weights), buffers, SMALL_TDEE)
    assert not out.values.any()


def test_tdee_window_too_short():
    """ Test windows shorter than the convolution stack """
    with pytest.raises(ShapeError):
        SMALL_TDEE.output_length(5)


def test_tdee_channel_mismatch():
    """ Test the input must have in_channels rows """
    weights, buffers = encoders.init_tdee_params(SMALL_TDEE, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        encoders.tdee_forward(np.zeros((1, 3, 12)), as_params(weights), buffers, SMALL_TDEE)


def test_tdee_eval_mode_uses_running_statistics():
    """ Test eval mode leaves the buffers alone """
    weights, buffers = encoders.init_tdee_params(SMALL_TDEE, np.random.default_rng(0))
    raw = np.random.default_rng(2).standard_normal((2, 2, 12))
    encoders.tdee_forward(raw, as_params(weights), buffers, SMALL_TDEE, nn_core.TRAIN)
    after_train = {name: value.copy() for name, value in buffers.items()}
    assert np.any(after_train["tdee.bn.running_mean"] != 0.0)
    encoders.tdee_forward(raw, as_params(weights), buffers, SMALL_TDEE, nn_core.EVAL)
    for name, value in buffers.items():
        np.testing.assert_array_equal(value, after_train[name])


@pytest.mark.parametrize("seed", range(5))
def test_tdee_conv_kernel_gradient(seed):
    """ Test the end-to-end gradient with respect to the first kernel """
    rng = np.random.default_rng(seed)
    weights, buffers = encoders.init_tdee_params(SMALL_TDEE, rng)
    raw = rng.standard_normal((2, 2, 12))

    def fn(kernel):
        params = as_params(weights)
        params["tdee.conv1.weight"] = kernel
        fresh = {name: value.copy() for name, value in buffers.items()}
        return encoders.tdee_forward(raw, params, fresh, SMALL_TDEE)

    assert gradient_check(fn, [weights["tdee.conv1.weight"]], seed=seed + 100) <= 1e-4


def test_gcn_two_node_average():
    """ Test the complete 2-node graph with W = I averages positive features """
    h = np.array([[1.0, 2.0], [3.0, 6.0]])
    out = encoders.gcn_layer(np.array([[0, 1], [1, 0]]), h, np.eye(2)).values
    np.testing.assert_allclose(out, [[2.0, 4.0], [2.0, 4.0]])


def test_gcn_single_node_is_relu():
    """ Test a lone node with its self-loop """
    out = encoders.gcn_layer(np.zeros((1, 1), dtype=int), np.array([[-1.0, 2.0]]), np.eye(2)).values
    np.testing.assert_allclose(out, [[0.0, 2.0]])


@pytest.mark.parametrize("seed", range(5))
def test_gcn_matches_dense_formula(seed):
    """ Test against ReLU(D^-1/2 (A + I) D^-1/2 h W) """
    rng = np.random.default_rng(seed)
    adjacency = random_graph(rng, 6)
    h, weight = rng.standard_normal((6, 4)), rng.standard_normal((4, 3))
    out = encoders.gcn_layer(adjacency, h, weight).values
    np.testing.assert_allclose(out, dense_gcn(adjacency, h, weight), atol=1e-12)


def test_gcn_accepts_channel_graph_and_batches():
    """ Test ChannelGraph input and a stack of adjacencies """
    rng = np.random.default_rng(3)
    features = rng.standard_normal((2, 6, 4))
    weight = rng.standard_normal((4, 4))
    graphs = [build_graph(sample, k=2) for sample in features]
    batched = encoders.gcn_layer(np.stack([g.adjacency for g in graphs]), features, weight).values
    for graph, sample, out in zip(graphs, features, batched):
        np.testing.assert_allclose(encoders.gcn_layer(graph, sample, weight).values, out, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_gcn_gradient(seed):
    """ Test GCN gradients for h and W """
    rng = np.random.default_rng(seed)
    adjacency = random_graph(rng, 5)
    inputs = [rng.standard_normal((5, 3)), rng.standard_normal((3, 2))]
    assert gradient_check(lambda h, w: encoders.gcn_layer(adjacency, h, w), inputs, seed=seed + 100) <= 1e-6


def test_gat_identical_features_attend_uniformly():
    """ Test alpha_ij = 1 / |N_i + {i}| when every node looks the same """
    rng = np.random.default_rng(4)
    adjacency = random_graph(rng, 5, p=0.5)
    h = np.tile(rng.standard_normal(3), (5, 1))
    alpha, _ = encoders.gat_attention(adjacency, h, rng.standard_normal((3, 2)), rng.standard_normal(4))
    expected = (adjacency + np.eye(5)) / (adjacency + np.eye(5)).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(alpha.values, expected, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_gat_matches_brute_force(seed):
    """ Test a 4-node random graph against per-edge evaluation """
    rng = np.random.default_rng(seed)
    adjacency = random_graph(rng, 4, p=0.5)
    h, weight, attention = rng.standard_normal((4, 3)), rng.standard_normal((3, 2)), rng.standard_normal(4)
    expected_out, expected_alpha = brute_force_gat(adjacency, h, weight, attention)
    alpha, _ = encoders.gat_attention(adjacency, h, weight, attention)
    np.testing.assert_allclose(alpha.values, expected_alpha, atol=1e-10)
    np.testing.assert_allclose(alpha.values.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(encoders.gat_layer(adjacency, h, weight, attention).values, expected_out, atol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_gat_gradient(seed):
    """ Test GAT gradients for h, W and the attention vector """
    rng = np.random.default_rng(seed)
    adjacency = random_graph(rng, 5)
    inputs = [rng.standard_normal((5, 3)), rng.standard_normal((3, 2)), rng.standard_normal(4)]
    assert gradient_check(lambda h, w, a: encoders.gat_layer(adjacency, h, w, a), inputs, seed=seed + 100) <= 1e-6


def test_gat_attention_vector_shape():
    """ Test a must have 2 F' entries """
    with pytest.raises(ShapeError):
        encoders.gat_attention(np.zeros((2, 2), dtype=int), np.ones((2, 3)), np.ones((3, 2)), np.ones(3))


@pytest.mark.parametrize("kind", [encoders.GCN, encoders.GAT])
def test_sdee_output_shape(kind):
    """ Test [32, 64] output for the DEAP channel count """
    cfg = SdeeConfig(encoder_kind=kind)
    params = as_params(encoders.init_sdee_params(cfg, np.random.default_rng(0)))
    de = np.random.default_rng(1).standard_normal((32, 5))
    assert encoders.sdee_forward(de, params, cfg, k=5).shape == (32, 64)
    assert encoders.sdee_forward(np.stack([de, de + 1.0]), params, cfg, k=5).shape == (2, 32, 64)


@pytest.mark.parametrize("kind", [encoders.GCN, encoders.GAT])
def test_sdee_channel_permutation_equivariance(kind):
    """ Test permuting channels permutes the output rows """
    cfg = SdeeConfig(embed_dim=8, encoder_kind=kind)
    params = as_params(encoders.init_sdee_params(cfg, np.random.default_rng(2)))
    rng = np.random.default_rng(3)
    de = rng.standard_normal((10, 5))
    perm = rng.permutation(10)
    out = encoders.sdee_forward(de, params, cfg, k=3).values
    permuted = encoders.sdee_forward(de[perm], params, cfg, k=3).values
    np.testing.assert_allclose(permuted, out[perm], atol=1e-10)


def test_sdee_gcn_and_gat_differ():
    """ Test the two graph encoders are not the same function """
    rng = np.random.default_rng(5)
    de = rng.standard_normal((8, 5))
    outputs = []
    for kind in (encoders.GCN, encoders.GAT):
        cfg = SdeeConfig(embed_dim=8, encoder_kind=kind)
        params = as_params(encoders.init_sdee_params(cfg, np.random.default_rng(6)))
        outputs.append(encoders.sdee_forward(de, params, cfg, k=3).values)
    assert not np.allclose(outputs[0], outputs[1])


def test_sdee_precomputed_adjacency():
    """ Test passing the KNN adjacency equals building it inside """
    cfg = SdeeConfig(embed_dim=8)
    params = as_params(encoders.init_sdee_params(cfg, np.random.default_rng(7)))
    de = np.random.default_rng(8).standard_normal((8, 5))
    built = encoders.sdee_forward(de, params, cfg, k=3).values
    given = encoders.sdee_forward(de, params, cfg, k=3, adjacency=knn_adjacency(de, 3)).values
    np.testing.assert_array_equal(built, given)


@pytest.mark.parametrize("kwargs", [{"encoder_kind": "sage"}, {"n_layers": 0}, {"gat_heads": 4}])
def test_invalid_sdee_config(kwargs):
    """ Test SDEE configuration checks """
    with pytest.raises(ConfigurationError):
        SdeeConfig(**kwargs)
