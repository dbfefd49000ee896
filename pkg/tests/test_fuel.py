import json
import math
from importlib import resources

import numpy as np
import pytest

from mixplatoon.errors import ConfigError
from mixplatoon.fuel import VtMicroTable, default_table, vt_micro_fuel
from oracles import vt_micro_loops

RAW = json.loads(resources.files("mixplatoon").joinpath("data/vtmicro_default.json").read_text())


# values frozen from the loop-based oracle on the shipped table
@pytest.mark.parametrize("v, a, expected", [
    (0.0, 0.0, 0.43746231194628515),
    (50.0, 0.0, 1.2438910397271277),
    (50.0, 3.0, 4.127741042753357),
    (50.0, -3.0, 0.5868386545200052),
    (100.0, 5.0, 15.71884313510135),
    (130.0, 20.0, 0.01704847872618811),   # both inputs clamped
])
def test_shipped_table_values(v, a, expected):
    assert vt_micro_fuel(v, a, default_table()) == pytest.approx(expected, rel=1e-12)


def test_agrees_with_oracle_on_grid():
    table = default_table()
    for v in np.linspace(0, 124, 13):
        for a in np.linspace(-13, 13, 27):
            ref = vt_micro_loops(v, a, RAW["K_pos"], RAW["K_neg"])
            assert vt_micro_fuel(v, a, table) == pytest.approx(ref, rel=1e-10)


def test_accelerating_costs_more():
    table = default_table()
    for v in (20.0, 50.0, 80.0):
        assert vt_micro_fuel(v, 3.0, table) > vt_micro_fuel(v, 0.0, table)


def test_array_shape_preserved():
    out = vt_micro_fuel(np.full((3, 4), 40.0), np.zeros((3, 4)), default_table())
    assert out.shape == (3, 4) and np.all(out > 0)


def test_zero_table_gives_one():
    z = np.zeros((4, 4))
    t = VtMicroTable(z, z, "ft/s", "ft/s2", "ml/s")
    assert vt_micro_fuel(37.0, -2.0, t) == 1.0


def test_constant_term_table():
    t = VtMicroTable.constant(0.5)
    for v, a in [(0, 0), (60, 5), (120, -10)]:
        assert vt_micro_fuel(v, a, t) == pytest.approx(0.5)


def test_deceleration_table_used_below_zero():
    kp = np.zeros((4, 4))
    kn = np.zeros((4, 4))
    kn[0, 0] = math.log(2.0)
    t = VtMicroTable(kp, kn, "ft/s", "ft/s2", "ml/s")
    assert vt_micro_fuel(10.0, -0.1, t) == pytest.approx(2.0)
    assert vt_micro_fuel(10.0, 0.0, t) == pytest.approx(1.0)


def test_round_trip_dict():
    t = default_table()
    back = VtMicroTable.from_dict(t.to_dict())
    assert np.array_equal(back.k_pos, t.k_pos) and back.rate_unit == t.rate_unit


@pytest.mark.parametrize("mutate", [
    lambda d: d.pop("K_pos"),
    lambda d: d.update(K_neg=[[0.0] * 4] * 3),
    lambda d: d.update(speed_unit="furlong/fortnight"),
    lambda d: d.update(rate_unit="gal/h"),
])
def test_malformed_tables(mutate):
    d = dict(RAW)
    mutate(d)
    with pytest.raises(ConfigError):
        VtMicroTable.from_dict(d)


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        VtMicroTable.load(tmp_path / "none.json")
