import math

import numpy as np
import pytest

from nelson_tfd import (
    PhysicalParams,
    ThermalPoint,
    coth_half,
    nondimensionalize,
    partition_function,
    thermal_occupation,
)

from oracles import SERIES_RATIO_001, THERMAL


@pytest.mark.parametrize("bb", sorted(THERMAL))
def test_occupation_matches_reference(bb):
    p = PhysicalParams.from_beta_bar(bb)
    assert thermal_occupation(p) == pytest.approx(THERMAL[bb][0], rel=1e-13)


def test_occupation_zero_temperature():
    assert thermal_occupation(PhysicalParams(beta=math.inf)) == 0.0


@pytest.mark.parametrize("bb", [1.0, 3.0])
def test_partition_function(bb):
    assert partition_function(PhysicalParams.from_beta_bar(bb)) == pytest.approx(THERMAL[bb][1], rel=1e-13)


def test_partition_function_zero_temperature_message():
    with pytest.raises(ValueError, match="partition function undefined at β=∞ in this normalization"):
        partition_function(PhysicalParams(beta=math.inf))


def test_nondimensionalize():
    assert nondimensionalize(ThermalPoint(0.0, 0.0), PhysicalParams()) == (0.0, 0.0)
    assert nondimensionalize(ThermalPoint(2.0, -1.0), PhysicalParams()) == (2.0, -1.0)
    X, Xt = nondimensionalize(ThermalPoint(1.0, 0.0), PhysicalParams(m=4.0))
    assert (X, Xt) == (2.0, 0.0)


def test_occupation_strictly_decreasing():
    bbs = np.geomspace(1e-3, 700, 400)  # exp(-bb) underflows beyond ~745
    n = [thermal_occupation(PhysicalParams.from_beta_bar(b)) for b in bbs]
    assert all(a > b for a, b in zip(n, n[1:]))


def test_high_temperature_series():
    n = thermal_occupation(PhysicalParams.from_beta_bar(0.01))
    ratio = n / (1 / 0.01 - 0.5)
    assert ratio == pytest.approx(SERIES_RATIO_001, rel=1e-12)
    assert abs(ratio - 1) < 0.01


@pytest.mark.parametrize("bb", [1e-3, 0.3, 1.0, 7.0, 60.0, 699.0, 701.0, 900.0])
def test_half_coth_identity(bb):
    for hbar in (1.0, 0.37):
        p = PhysicalParams.from_beta_bar(bb, hbar=hbar)
        lhs = hbar / 2 + hbar * thermal_occupation(p)
        assert lhs == pytest.approx(hbar / 2 * coth_half(p), rel=4e-16 * max(1.0, 1 / bb))


def test_overflow_guard_finite():
    p = PhysicalParams.from_beta_bar(1000.0)
    assert thermal_occupation(p) == 0.0 or thermal_occupation(p) < 1e-300
    assert coth_half(p) == 1.0
    assert math.isfinite(partition_function(p))


@pytest.mark.parametrize("kw", [dict(m=0), dict(omega=-1), dict(hbar=math.nan), dict(beta=0),
                                dict(beta=-2), dict(beta=math.nan), dict(m=math.inf)])
def test_params_validation(kw):
    with pytest.raises(ValueError):
        PhysicalParams(**kw)


def test_params_beta_bar_round_trip():
    p = PhysicalParams.from_beta_bar(2.5, m=2.0, omega=3.0, hbar=0.5)
    assert p.beta_bar == pytest.approx(2.5)
    assert PhysicalParams(beta=math.inf).beta_bar == math.inf
    assert p.with_beta_bar(math.inf).zero_temperature


def test_thermal_point_must_be_finite():
    ThermalPoint(np.zeros(3), np.ones(3), 1.0)
    with pytest.raises(ValueError):
        ThermalPoint(math.nan, 0.0)
    with pytest.raises(ValueError):
        ThermalPoint(0.0, np.array([0.0, math.inf]))
