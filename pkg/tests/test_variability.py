import numpy as np
import pytest

from conftest import random_model
from npp.errors import ConfigError
from npp.nn import DenseModel, LinearLayer
from npp.variability import PerturbSpec, perturb_weights


def _big_model():
    rng = np.random.default_rng(0)
    return DenseModel([LinearLayer(rng.standard_normal((400, 300)) + 0.1, np.ones(300))], ["none"])


def test_sigma_zero_is_byte_identical():
    model = random_model([5, 4, 3], ["relu", "none"])
    out = perturb_weights(model, PerturbSpec(0.0, seed=3))
    for a, b in zip(model.layers, out.layers):
        assert a.weight.tobytes() == b.weight.tobytes()


def test_same_seed_same_model_and_original_untouched():
    model = random_model([5, 4, 3], ["relu", "none"])
    w0 = model.layers[0].weight.copy()
    a = perturb_weights(model, PerturbSpec(0.1, seed=3))
    b = perturb_weights(model, PerturbSpec(0.1, seed=3))
    c = perturb_weights(model, PerturbSpec(0.1, seed=4))
    assert a.layers[0].weight.tobytes() == b.layers[0].weight.tobytes()
    assert a.layers[0].weight.tobytes() != c.layers[0].weight.tobytes()
    np.testing.assert_array_equal(model.layers[0].weight, w0)


def test_relative_noise_statistics():
    model = _big_model()
    out = perturb_weights(model, PerturbSpec(0.05, seed=1))
    rel = out.layers[0].weight / model.layers[0].weight - 1
    assert 0.049 <= rel.std() <= 0.051
    # unbiased: mean perturbed weight within 3 standard errors of the original
    diff = out.layers[0].weight - model.layers[0].weight
    se = diff.std() / np.sqrt(diff.size)
    assert abs(diff.mean()) <= 3 * se


def test_biases_untouched_and_zeros_stay_zero():
    model = _big_model()
    model.layers[0].weight[:10] = 0.0
    out = perturb_weights(model, PerturbSpec(0.2, seed=2))
    assert np.all(out.layers[0].weight[:10] == 0.0)
    assert out.layers[0].bias.tobytes() == model.layers[0].bias.tobytes()


def test_scope_limits_layers():
    model = random_model([5, 4, 3], ["relu", "none"])
    out = perturb_weights(model, PerturbSpec(0.1, seed=0, layers=(1,)))
    assert out.layers[0].weight.tobytes() == model.layers[0].weight.tobytes()
    assert out.layers[1].weight.tobytes() != model.layers[1].weight.tobytes()
    full = perturb_weights(model, PerturbSpec(0.1, seed=0))
    assert out.layers[1].weight.tobytes() == full.layers[1].weight.tobytes()
    with pytest.raises(ConfigError):
        perturb_weights(model, PerturbSpec(0.1, layers=(5,)))


def test_literal_formula_triples_mean():
    model = _big_model()
    out = perturb_weights(model, PerturbSpec(0.0, literal=True))
    np.testing.assert_allclose(out.layers[0].weight, 2 * model.layers[0].weight)
    out = perturb_weights(model, PerturbSpec(0.05, seed=1, literal=True))
    ratio = out.layers[0].weight / model.layers[0].weight
    assert abs(ratio.mean() - 2.0) < 1e-3


def test_negative_sigma_rejected():
    with pytest.raises(ConfigError):
        PerturbSpec(-0.1)
