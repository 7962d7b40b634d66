import numpy as np
import pytest

from npp.nn import AdapterPair, Batch, DenseModel, LinearLayer


def random_model(widths, activations, seed=0, adapter_rank=None, adapter_nonzero=True):
    rng = np.random.default_rng(seed)
    layers = []
    for d, h in zip(widths[:-1], widths[1:]):
        layer = LinearLayer(rng.standard_normal((d, h)) / np.sqrt(d), 0.1 * rng.standard_normal(h))
        if adapter_rank:
            B = rng.standard_normal((adapter_rank, h)) * 0.3 if adapter_nonzero else np.zeros((adapter_rank, h))
            layer.adapter = AdapterPair(rng.standard_normal((d, adapter_rank)) / np.sqrt(d), B)
        layers.append(layer)
    return DenseModel(layers, list(activations))


def random_batch(n, d, classes, seed=1):
    rng = np.random.default_rng(seed)
    return Batch(rng.standard_normal((n, d)), rng.integers(0, classes, n))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
