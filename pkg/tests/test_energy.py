import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_model
from npp.energy import EnergyConstants, layer_energy, network_energy
from npp.errors import ConfigError
from npp.lora import AdapterPlan, attach_adapters


def test_no_surrogate_gives_800():
    assert layer_energy(512, 1000, 0).tops_per_watt == pytest.approx(2 / 2.5e-15 / 1e12, rel=1e-12)
    assert layer_energy(512, 1000, 0, mode="fraction=0.421").tops_per_watt == pytest.approx(800.0, rel=1e-12)


def test_fraction_mode_example():
    led = layer_energy(512, 1000, 8, mode="fraction=0.421")
    # oracle: 2 * 524096 / (1.28e-9 / (1 - 0.421)) / 1e12
    oracle = 2 * 524096 / (512000 * 2.5e-15 / 0.579) / 1e12
    assert led.tops_per_watt == pytest.approx(oracle, rel=1e-12)
    assert abs(led.tops_per_watt / 464 - 1) <= 0.05
    assert led.surrogate_energy_share == pytest.approx(0.421, rel=1e-12)


def test_constants_mode_share():
    led = layer_energy(512, 1000, 8)
    assert led.macs_surrogate == 12096
    assert led.surrogate_energy_share == pytest.approx(12096 * 19 / (512000 * 2.5 + 12096 * 19), rel=1e-12)
    assert 0.151 < led.surrogate_energy_share < 0.153


def test_bad_fraction_and_dims():
    for f in ("fraction=0", "fraction=1", "fraction=1.5"):
        with pytest.raises(ValueError):
            layer_energy(4, 4, 1, mode=f)
    with pytest.raises(ConfigError):
        layer_energy(0, 4, 1)
    with pytest.raises(ConfigError):
        layer_energy(4, 4, 1, mode="bogus")
    with pytest.raises(ConfigError):
        EnergyConstants(e_cim=0.0)


def test_network_energy():
    single = random_model([6, 4], ["none"])
    one = attach_adapters(single, AdapterPlan(2))
    a, b = network_energy(one), layer_energy(6, 4, 2)
    assert (a.energy_main, a.energy_surrogate, a.tops_per_watt) == (b.energy_main, b.energy_surrogate, b.tops_per_watt)
    two = random_model([6, 6, 6], ["relu", "none"])
    l1 = layer_energy(6, 6, 2)
    led = network_energy(two, plan=AdapterPlan(2))
    assert led.energy_total == 2 * l1.energy_total
    assert led.tops_per_watt == pytest.approx(l1.tops_per_watt, rel=1e-14)
    assert len(led.layers) == 2
    assert network_energy(two).tops_per_watt == pytest.approx(800.0, rel=1e-12)


@given(st.integers(1, 2000), st.integers(1, 2000), st.integers(1, 64))
def test_tops_decreasing_in_rank(d, h, r):
    assert layer_energy(d, h, r + 1).tops_per_watt < layer_energy(d, h, r).tops_per_watt


@given(st.integers(1, 2000), st.integers(1, 2000), st.integers(0, 64), st.integers(2, 5))
def test_duplicated_workload_same_tops(d, h, r, k):
    one = layer_energy(d, h, r)
    many = one
    for _ in range(k - 1):
        many = many + one
    assert many.tops_per_watt == pytest.approx(one.tops_per_watt, rel=1e-12)


@given(st.floats(0.001, 0.999), st.integers(1, 64))
def test_fraction_roundtrip(f, r):
    led = layer_energy(100, 200, r, mode=f"fraction={f!r}")
    assert led.surrogate_energy_share == pytest.approx(f, rel=1e-12)
