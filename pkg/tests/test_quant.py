import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import norm

from conftest import random_batch, random_model
from npp.errors import ConfigError, IntegrityError
from npp.nn import forward
from npp.quant import (
    QTensor,
    QuantFormat,
    codebook,
    dequantize,
    fake_quantize,
    fake_quantize_activations,
    fake_quantize_model,
    max_roundtrip_error,
    quantize_tensor,
)

KINDS = ["int8", "fp4_e2m1", "nf4"]

# values shipped with the reference 4-bit NormalFloat implementation (float32)
NF4_PUBLISHED = [
    -1.0, -0.6961928009986877, -0.5250730514526367, -0.39491748809814453,
    -0.28444138169288635, -0.18477343022823334, -0.09105003625154495, 0.0,
    0.07958029955625534, 0.16093020141124725, 0.24611230194568634, 0.33791524171829224,
    0.44070982933044434, 0.5626170039176941, 0.7229568362236023, 1.0,
]


def _nf4_oracle():
    offset = 0.9677083
    pos = norm.ppf(np.linspace(offset, 0.5, 9)[:-1])
    neg = -norm.ppf(np.linspace(offset, 0.5, 8)[:-1])
    v = np.sort(np.concatenate([pos, [0.0], neg]))
    return v / np.max(np.abs(v))


def test_nf4_codebook_shape_and_zero():
    cb = codebook(QuantFormat("nf4"))
    assert len(cb) == 16 and np.all(np.diff(cb) > 0)
    assert np.count_nonzero(cb == 0.0) == 1
    assert cb[0] == -1.0 and cb[-1] == 1.0


def test_nf4_matches_independent_quantiles():
    np.testing.assert_allclose(codebook("nf4"), _nf4_oracle(), rtol=0, atol=1e-6)
    np.testing.assert_allclose(codebook("nf4"), NF4_PUBLISHED, rtol=0, atol=1e-6)


def test_fp4_levels():
    cb = codebook("fp4_e2m1")
    assert len(cb) == 16
    assert -1.0 in cb and 1.0 in cb
    mags = np.array([0, 0.5, 1, 1.5, 2, 3, 4, 6]) / 6
    np.testing.assert_array_equal(np.unique(cb), np.unique(np.concatenate([-mags, mags])))
    # the only non-increase is the signed zero pair
    assert np.all(np.diff(np.delete(cb, 7)) > 0)


def test_int8_has_no_codebook():
    with pytest.raises(ConfigError):
        codebook("int8")


@pytest.mark.parametrize("kind", KINDS)
def test_all_zero_tensor(kind):
    q = quantize_tensor(np.zeros((3, 4)), QuantFormat(kind))
    assert float(q.scale) == 1.0
    np.testing.assert_array_equal(dequantize(q), np.zeros((3, 4)))
    if kind != "int8":
        assert np.all(codebook(kind)[q.codes] == 0.0)


def test_int8_example():
    q = quantize_tensor(np.array([-2.0, 0.0, 1.0]), QuantFormat("int8"))
    np.testing.assert_array_equal(q.codes, [-127, 0, 64])  # 63.5 rounds half to even
    assert float(q.step) == 2.0 / 127
    assert float(q.scale) == 2.0


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("v", [3.7, -0.013, 1e-5, -250.0])
def test_single_nonzero_exact(kind, v):
    x = np.zeros(6)
    x[2] = v
    assert fake_quantize(x, QuantFormat(kind))[2] == v


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("gran", ["per_tensor", "per_channel"])
def test_roundtrip_error_bound(kind, gran):
    x = np.random.default_rng(7).standard_normal((100, 100)) * np.linspace(0.1, 5, 100)
    q = quantize_tensor(x, QuantFormat(kind, gran))
    err = np.abs(dequantize(q) - x)
    bound = max_roundtrip_error(q)
    slack = np.spacing(np.abs(x)) if kind == "int8" else 0.0
    assert np.all(err <= bound + slack + 1e-15 * np.abs(x))


def test_int8_roundtrip_explicit_bound():
    x = np.random.default_rng(3).uniform(-4, 4, 10_000)
    q = quantize_tensor(x, QuantFormat("int8"))
    err = np.abs(dequantize(q) - x)
    assert np.all(err <= float(q.scale) / 127 / 2 + np.spacing(np.abs(x)))


def test_nf4_roundtrip_explicit_bound():
    x = np.random.default_rng(4).standard_normal(10_000)
    q = quantize_tensor(x, QuantFormat("nf4"))
    half_gap = np.max(np.diff(_nf4_oracle())) / 2
    assert np.all(np.abs(dequantize(q) - x) <= float(q.scale) * half_gap + 1e-15)


def test_ties_go_toward_zero():
    cb = codebook("fp4_e2m1")  # levels 0.5/6 and 1/6 around 0.75/6
    x = np.array([6.0, 0.75, -0.75, 0.25])
    codes = quantize_tensor(x, QuantFormat("fp4_e2m1")).codes
    np.testing.assert_allclose(cb[codes] * 6, [6.0, 0.5, -0.5, 0.0])


def test_fp4_zero_encodes_positive():
    codes = quantize_tensor(np.array([0.0, -0.0, 1.0]), QuantFormat("fp4_e2m1")).codes
    assert codes[0] == 8 and codes[1] == 8


def test_per_channel_scales_last_axis():
    x = np.array([[1.0, -4.0], [-2.0, 0.5]])
    q = quantize_tensor(x, QuantFormat("int8", "per_channel"))
    np.testing.assert_array_equal(q.scale, [2.0, 4.0])


@pytest.mark.parametrize("kind", KINDS)
def test_corrupted_codes_rejected(kind):
    q = quantize_tensor(np.arange(4.0), QuantFormat(kind))
    bad = q.codes.copy()
    bad[0] = -128 if kind == "int8" else 16
    with pytest.raises(IntegrityError):
        dequantize(QTensor(bad, q.scale, q.format, q.original_shape))
    with pytest.raises(IntegrityError):
        dequantize(QTensor(q.codes, q.scale, q.format, (5,)))


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 40), elements=finite), st.sampled_from(KINDS))
def test_projection_property(x, kind):
    fmt = QuantFormat(kind)
    q1 = quantize_tensor(x, fmt)
    q2 = quantize_tensor(dequantize(q1), fmt)
    np.testing.assert_array_equal(q1.codes, q2.codes)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(2, 40), elements=finite), st.sampled_from(KINDS))
def test_monotone_codes(x, kind):
    fmt = QuantFormat(kind)
    q = quantize_tensor(np.sort(x), fmt)
    values = dequantize(q)
    assert np.all(np.diff(values) >= 0)
    if kind == "int8":
        assert np.all(np.diff(q.codes.astype(int)) >= 0)


@settings(max_examples=60, deadline=None)
@given(
    # scaled values must stay normal floats, or c * x loses information before quantizing
    arrays(np.float64, st.integers(1, 30), elements=st.floats(-100, 100).filter(lambda v: v == 0 or abs(v) > 1e-200)),
    st.sampled_from([0.5, 2.0, 3.0, 1e-3, 7.25]),
    st.sampled_from(KINDS),
)
def test_scale_covariance(x, c, kind):
    fmt = QuantFormat(kind)
    q = quantize_tensor(x, fmt)
    qc = quantize_tensor(c * x, fmt)
    np.testing.assert_array_equal(q.codes, qc.codes)
    if np.any(x != 0):
        assert float(qc.scale) == c * float(q.scale)


def test_activation_quantization_levels():
    h = np.array([[1.0, -0.5, 0.26, 0.0]])
    out = fake_quantize_activations(h, 4)
    np.testing.assert_allclose(out, [[1.0, -4 / 7, 2 / 7, 0.0]])
    clipped = fake_quantize_activations(np.array([[3.0, -0.5]]), 4, scale=1.0)
    np.testing.assert_allclose(clipped, [[1.0, -4 / 7]])


def test_fake_quantize_model_is_idempotent_and_frozen():
    model = random_model([6, 5, 3], ["relu", "none"])
    fmt = QuantFormat("nf4", activation_bits=4)
    once = fake_quantize_model(model, fmt)
    twice = fake_quantize_model(once, fmt)
    for a, b in zip(once.layers, twice.layers):
        assert a.frozen and b.frozen
        assert a.weight.tobytes() == b.weight.tobytes()
    batch = random_batch(5, 6, 3)
    np.testing.assert_array_equal(forward(once, batch), forward(twice, batch))


def test_int8_fixed_point_weights_lossless():
    model = random_model([6, 5, 3], ["relu", "none"])
    for layer in model.layers:
        s = np.max(np.abs(layer.weight))
        layer.weight = np.rint(layer.weight / s * 127) / 127 * s
    q = fake_quantize_model(model, QuantFormat("int8"))
    for a, b in zip(model.layers, q.layers):
        np.testing.assert_array_equal(a.weight, b.weight)
    batch = random_batch(20, 6, 3)
    np.testing.assert_array_equal(forward(model, batch).argmax(1), forward(q, batch).argmax(1))


def test_static_activation_needs_calibration():
    model = random_model([4, 3], ["none"])
    with pytest.raises(ConfigError):
        fake_quantize_model(model, QuantFormat("nf4", activation_bits=4, activation_scale="static"))
    q = fake_quantize_model(
        model, QuantFormat("nf4", activation_bits=4, activation_scale="static"), calibration=np.ones((2, 4)) * 3
    )
    assert q.layers[0].act_scale == 3.0


def test_activation_quantization_hits_main_path_only():
    model = random_model([4, 3], ["none"], adapter_rank=1)
    q = fake_quantize_model(model, QuantFormat("int8", activation_bits=4))
    x = np.array([[1.0, 0.33, -0.2, 0.05]])
    hq = fake_quantize_activations(x, 4)
    layer = q.layers[0]
    expected = hq @ layer.weight + layer.bias + (x @ layer.adapter.A) @ layer.adapter.B
    np.testing.assert_allclose(forward(q, x), expected, rtol=0, atol=1e-14)
