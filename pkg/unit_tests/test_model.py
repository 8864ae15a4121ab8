""" unit tests for the assembled classifier and its checkpoints """
import pytest

import numpy as np

from eeg_cdfusion import model, nn_core
from eeg_cdfusion.autodiff import no_grad
from eeg_cdfusion.exceptions import ConfigurationError, FormatError
from eeg_cdfusion.model import ModelConfig
from eeg_cdfusion.nn_core import cross_entropy

N_CHANNELS, WIDTH, D_MODEL = 4, 32, 8


def small_config(**changes):
    values = dict(n_channels=N_CHANNELS, d_model=D_MODEL, n_heads=2, k_nn=2)
    values.update(changes)
    return ModelConfig(**values)


def batch(n=5, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, N_CHANNELS, WIDTH)), rng.standard_normal((n, N_CHANNELS, 5)), rng.integers(0, 2, n)


tests = [(model.SDEE_ONLY, ("sdee.",), ("tdee.", "cda."), 1),
         (model.TDEE_ONLY, ("tdee.",), ("sdee.", "cda."), 1),
         (model.CONCAT, ("sdee.", "tdee."), ("cda.",), 2),
         (model.ONE_STEP, ("sdee.", "tdee.", "cda."), (), 1),
         (model.TWO_STEP, ("sdee.", "tdee.", "cda."), (), 3),
         ]
@pytest.mark.parametrize("mode, present, absent, width", tests)
def test_blocks_per_fusion_mode(mode, present, absent, width):
    """ Test each mode creates exactly its blocks and a matching head """
    params = model.init_params(small_config(fusion_mode=mode), seed=0)
    names = set(params.weights)
    for prefix in present:
        assert any(name.startswith(prefix) for name in names)
    for prefix in absent:
        assert not any(name.startswith(prefix) for name in names)
    assert params.weights["head.dense1.weight"].shape == (width * D_MODEL, D_MODEL)
    assert bool(params.buffers) == ("tdee." in present)


@pytest.mark.parametrize("mode", model.FUSION_MODES)
def test_every_used_weight_gets_a_gradient(mode):
    """ Test logits are [N, 2] and back-propagation reaches every weight """
    params = model.init_params(small_config(fusion_mode=mode), seed=1)
    raw, de, labels = batch()
    logits = model.forward(params, raw, de)
    assert logits.shape == (5, 2)
    cross_entropy(logits, labels).backward()
    for name, grad in params.grads().items():
        assert grad is not None, name
        assert grad.shape == params.weights[name].shape


def test_init_is_seeded():
    """ Test the same seed gives the same weights and another seed does not """
    first = model.init_params(small_config(), seed=3).arrays()
    second = model.init_params(small_config(), seed=3).arrays()
    other = model.init_params(small_config(), seed=4).arrays()
    assert all(np.array_equal(first[name], second[name]) for name in first)
    assert not all(np.array_equal(first[name], other[name]) for name in first)


def test_temporal_query_direction():
    """ Test X_beta can query X_alpha; X_CM then has one row per time step """
    params = model.init_params(small_config(cda_query="temporal"), seed=2)
    raw, de, _ = batch()
    features = model.encode(params, raw, de)
    fused = model.fuse(params, features)
    assert fused.x_cm.shape == features.x_beta.shape
    assert fused.x_fc.shape == (5, 3 * D_MODEL)


def test_two_step_keeps_pooled_domains():
    """ Test the head input starts with the pooled X_alpha and X_beta """
    params = model.init_params(small_config(), seed=2)
    raw, de, _ = batch()
    with no_grad():
        features = model.encode(params, raw, de, mode=nn_core.EVAL)
        x_fc = model.fuse(params, features).x_fc.values
    np.testing.assert_array_equal(x_fc[:, :D_MODEL], features.x_alpha.values.mean(axis=1))
    np.testing.assert_array_equal(x_fc[:, D_MODEL : 2 * D_MODEL], features.x_beta.values.mean(axis=1))


def test_eval_forward_is_deterministic():
    """ Test eval-mode forward passes repeat exactly """
    params = model.init_params(small_config(), seed=5)
    raw, de, _ = batch()
    with no_grad():
        first = model.forward(params, raw, de, mode=nn_core.EVAL).values
        second = model.forward(params, raw, de, mode=nn_core.EVAL).values
    np.testing.assert_array_equal(first, second)


tests = [({"fusion_mode": "three_step"}),
         ({"d_model": 7, "n_heads": 7}),
         ({"d_model": 8, "n_heads": 3}),
         ({"k_nn": 4}),
         ({"encoder_kind": "sage"}),
         ({"dtype": "float16"}),
         ({"cda_query": "both"}),
         ]
@pytest.mark.parametrize("changes", tests)
def test_invalid_model_config(changes):
    """ Test architecture checks """
    with pytest.raises(ConfigurationError):
        small_config(**changes)


@pytest.mark.parametrize("mode", [model.TWO_STEP, model.SDEE_ONLY])
def test_checkpoint_round_trip(mode, tmp_path):
    """ Test a saved checkpoint reloads to the same predictions """
    params = model.init_params(small_config(fusion_mode=mode, encoder_kind="gat"), seed=6)
    raw, de, _ = batch()
    model.forward(params, raw, de, mode=nn_core.TRAIN)
    model.save_checkpoint(params, tmp_path / "ckpt")
    loaded = model.load_checkpoint(tmp_path / "ckpt")
    assert loaded.config == params.config
    assert set(loaded.weights) == set(params.weights)
    for name, array in params.buffers.items():
        np.testing.assert_array_equal(loaded.buffers[name], array)
    with no_grad():
        expected = model.forward(params, raw, de, mode=nn_core.EVAL).values
        actual = model.forward(loaded, raw, de, mode=nn_core.EVAL).values
    np.testing.assert_array_equal(actual, expected)


def test_checkpoint_missing_tensor(tmp_path):
    """ Test a manifest that lost a weight is rejected """
    params = model.init_params(small_config(), seed=7)
    model.save_checkpoint(params, tmp_path)
    manifest = tmp_path / model.MANIFEST_FILE
    lines = manifest.read_text(encoding="utf-8").splitlines()
    manifest.write_text("\n".join(line for line in lines if not line.startswith("cda.w_q")) + "\n", encoding="utf-8")
    with pytest.raises(FormatError):
        model.load_checkpoint(tmp_path)


def test_checkpoint_shape_mismatch(tmp_path):
    """ Test manifest shapes are checked against the containers """
    params = model.init_params(small_config(), seed=7)
    model.save_checkpoint(params, tmp_path)
    manifest = tmp_path / model.MANIFEST_FILE
    text = manifest.read_text(encoding="utf-8").replace("head.dense2.bias\tweight\t2", "head.dense2.bias\tweight\t3")
    manifest.write_text(text, encoding="utf-8")
    with pytest.raises(FormatError):
        model.load_checkpoint(tmp_path)
