import math

import pytest
from hypothesis import given, settings, strategies as st

from hasaseg.power import (PowerSpec, format_power_table, monte_carlo_power, power_rows,
                           required_accuracy, required_epsilon, se_factor)


def test_se_factor_values():
    assert se_factor(240, 10_000) == pytest.approx(0.0923, abs=5e-4)
    assert se_factor(240, 240) == pytest.approx(math.sqrt(4 / 240))
    assert round(se_factor(240, 240), 4) == 0.1291
    assert se_factor(2, 1e12) == pytest.approx(1.0, abs=1e-5)
    with pytest.raises(ValueError):
        se_factor(0, 10)


def test_required_epsilon_formula():
    spec = PowerSpec(240, 10_000, 1.96, 0.10)
    eps = required_epsilon(spec)
    assert eps == pytest.approx(0.10 / (1.96 * math.sqrt(2 / 240 + 2 / 10_000)))
    # the quoted 0.5528 uses the se factor rounded to 0.0923
    assert eps == pytest.approx(0.5528, abs=1e-3)
    assert required_accuracy(spec) == pytest.approx(1 - eps)
    assert required_epsilon(PowerSpec(z=1e12)) < 1e-9


@settings(max_examples=50)
@given(st.integers(2, 5000), st.integers(2, 5000), st.integers(1, 5000))
def test_epsilon_monotone(nc, nk, extra):
    a = required_epsilon(PowerSpec(nc, nk))
    assert required_epsilon(PowerSpec(nc + extra, nk)) > a
    assert required_epsilon(PowerSpec(nc, nk + extra)) > a
    assert required_epsilon(PowerSpec(nc, nk, z=2.5)) < a


def test_spec_validation():
    with pytest.raises(ValueError):
        PowerSpec(n_cases=0)
    with pytest.raises(ValueError):
        PowerSpec(z=0)
    with pytest.raises(ValueError):
        monte_carlo_power(PowerSpec(trials=10))


def test_noiseless_detects_always():
    assert monte_carlo_power(PowerSpec(eps=0.0, trials=1000)) == 1.0


def test_detection_at_bound_is_half():
    spec = PowerSpec(240, 10_000, 1.96, 0.10, trials=10_000)
    rate = monte_carlo_power(PowerSpec(240, 10_000, 1.96, 0.10, required_epsilon(spec), 10_000))
    assert abs(rate - 0.5) <= 0.05


def test_null_calibration():
    rate = monte_carlo_power(PowerSpec(240, 2_000, 1.96, 0.0, eps=0.3, trials=10_000), seed=3)
    assert abs(rate - 0.025) <= 0.02


def test_monte_carlo_deterministic():
    spec = PowerSpec(50, 200, eps=0.2, trials=2000)
    assert monte_carlo_power(spec, seed=5) == monte_carlo_power(spec, seed=5)


def test_power_rows_and_table():
    rows = power_rows(240, 10_000, trials=1000)
    assert [r["z"] for r in rows] == [1.96, 1.645]
    assert rows[0]["accuracy_stated"] == 0.9447
    assert rows[1]["accuracy_stated"] == 0.9341
    text = format_power_table(rows)
    assert "0.09238" in text
    assert "1.6450" in text
    assert power_rows(100, 100, zs=(1.96,), trials=1000)[0]["accuracy_stated"] is None
