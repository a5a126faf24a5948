import copy
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from esdroop.feeder import (
    TAP_MAX, TAP_MIN, FeederParseError, FeederValidationError, Regulator, dumps, from_dict,
    load_feeder, loads_json, path_to_source, regulator_step, save_feeder, to_dict,
)

from conftest import two_bus_doc


def three_bus_doc():
    doc = two_bus_doc(pv_kva=100.0)
    doc["buses"].append({"id": "3", "phases": "abc", "base_kv": 1.0})
    doc["branches"].append(copy.deepcopy(doc["branches"][0]) | {"id": "2-3", "from": "2", "to": "3"})
    return doc


def test_bundled_feeders_load():
    four = load_feeder("4bus.json")
    assert [b.id for b in four.buses] == ["1", "2", "3", "4"]
    assert [pv.monitored_branch for pv in four.pvs] == ["2-3", "3-4"]
    thirteen = load_feeder("13bus.json")
    assert len(thirteen.buses) == 13
    assert thirteen.regulators[0].branch == "650-632"
    assert path_to_source(thirteen, "611")[-1] == "650-632"


def test_json_round_trip(tmp_path):
    for name in ("4bus.json", "13bus.json"):
        m = load_feeder(name)
        save_feeder(m, tmp_path / name)
        again = load_feeder(tmp_path / name)
        assert again == m
        assert loads_json(dumps(m)) == m


def test_cycle_is_rejected():
    doc = three_bus_doc()
    doc["branches"].append({"id": "3-2", "from": "3", "to": "2", "phases": "abc",
                            "z": doc["branches"][0]["z"]})
    with pytest.raises(FeederValidationError, match="non-radial"):
        from_dict(doc)


def test_island_is_rejected():
    doc = three_bus_doc()
    doc["buses"].append({"id": "9", "phases": "abc", "base_kv": 1.0})
    doc["buses"].append({"id": "8", "phases": "abc", "base_kv": 1.0})
    doc["branches"].append({"id": "8-9", "from": "8", "to": "9", "phases": "abc", "z": doc["branches"][0]["z"]})
    doc["branches"].append({"id": "9-8", "from": "9", "to": "8", "phases": "abc", "z": doc["branches"][0]["z"]})
    with pytest.raises(FeederValidationError, match="unreachable"):
        from_dict(doc)


@pytest.mark.parametrize("mutate, message", [
    (lambda d: d["branches"][0].update({"to": "7"}), "dangling"),
    (lambda d: d["buses"].append(dict(d["buses"][0])), "duplicate bus"),
    (lambda d: d["branches"][0]["z"][0][1].__setitem__(0, 0.5), "symmetric"),
    (lambda d: d["pvs"][0].update({"rated_kw": 200.0}), "rated_kw"),
    (lambda d: d["pvs"][0].update({"monitored_branch": "2-3"}), "monitored branch"),
    (lambda d: d["loads"][0].update({"zip": [0.5, 0.2, 0.2]}), "zip"),
    (lambda d: d.update({"regulators": [{"branch": "1-2", "taps": [17, 0, 0]}]}), "tap outside"),
    (lambda d: d["buses"][1].update({"phases": "ab"}), "phases"),
])
def test_validation_errors(mutate, message):
    doc = three_bus_doc()
    mutate(doc)
    with pytest.raises(FeederValidationError, match=message):
        from_dict(doc)


def test_parse_errors():
    with pytest.raises(FeederParseError):
        loads_json("{not json")
    doc = two_bus_doc()
    del doc["buses"][0]["base_kv"]
    with pytest.raises(FeederParseError, match="base_kv"):
        from_dict(doc)
    doc = two_bus_doc()
    doc["branches"][0]["z"] = [[1, 2]]
    with pytest.raises(FeederParseError):
        from_dict(doc)


def test_missing_file_raises():
    with pytest.raises(FileNotFoundError):
        load_feeder("/nonexistent/feeder.json")


def test_to_dict_is_json_serialisable():
    text = json.dumps(to_dict(load_feeder("13bus.json")))
    assert "650-632" in text


# --- regulator law ------------------------------------------------------------

def test_regulator_raises_tap_on_low_voltage():
    reg = Regulator("x", (0, 0, 0), setpoint_pu=1.0, bandwidth_pu=0.02)
    out = regulator_step(reg, [0.985, 1.0, 1.015])
    assert out.taps == (1, 0, -1)


def test_regulator_holds_inside_band():
    reg = Regulator("x", (3, -2, 0), setpoint_pu=1.0, bandwidth_pu=0.02)
    assert regulator_step(reg, [1.009, 0.991, 1.0]).taps == (3, -2, 0)


def test_regulator_saturates():
    reg = Regulator("x", (TAP_MAX, TAP_MIN, 0))
    assert regulator_step(reg, [0.9, 1.1, 1.0]).taps == (TAP_MAX, TAP_MIN, 0)


@given(st.lists(st.lists(st.floats(0.85, 1.15), min_size=3, max_size=3), min_size=1, max_size=60),
       st.tuples(*[st.integers(TAP_MIN, TAP_MAX)] * 3))
def test_taps_stay_in_bounds(volts, taps):
    reg = Regulator("x", taps)
    for v in volts:
        new = regulator_step(reg, v)
        assert all(TAP_MIN <= t <= TAP_MAX for t in new.taps)
        assert all(abs(a - b) <= 1 for a, b in zip(new.taps, reg.taps))
        reg = new
    assert np.all(reg.ratios() > 0)
