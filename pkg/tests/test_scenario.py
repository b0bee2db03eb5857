import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gridincentive.scenario import (IEEE37_PV_BUSES, NodeProfile, ParseError, ProfileShape,
                                    RunConfig, ScenarioTimeline, ValidationError, bell_curve,
                                    build_ieee37_phase_c, data_path, dump_config, dump_feeder,
                                    dump_timeline, ieee37_node_index, ieee37_nodes, load_feeder,
                                    load_scenario, load_timeline, parse_config, parse_feeder,
                                    parse_timeline, synth_profiles)


@pytest.fixture
def spec3():
    return load_feeder(data_path("fixture3.feeder.json"))


def test_bundled_fixture_loads():
    top, pool, tl, cfg = load_scenario(data_path("fixture3.feeder.json"),
                                       data_path("fixture3.static.csv"),
                                       data_path("default.cfg"))
    assert top.n == 3 and len(pool.devices) == 3
    assert tl.n_slots == 20 and tl.n == 3
    assert cfg == RunConfig()


def test_bundled_files_are_canonical(spec3):
    assert dump_feeder(spec3) == data_path("fixture3.feeder.json").read_text()
    tl = load_timeline(data_path("fixture3.static.csv"), spec3)
    assert dump_timeline(tl) == data_path("fixture3.static.csv").read_text()
    assert dump_config(RunConfig()) == data_path("default.cfg").read_text()


def test_feeder_round_trip_ieee37():
    spec = build_ieee37_phase_c()
    again = parse_feeder(dump_feeder(spec))
    assert dump_feeder(again) == dump_feeder(spec)
    np.testing.assert_allclose(again.topology.r, spec.topology.r, rtol=1e-11)
    np.testing.assert_allclose(again.pool().hi, spec.pool().hi, rtol=1e-11)


def _mutate(text, fn):
    d = json.loads(text)
    fn(d)
    return json.dumps(d)


def test_feeder_rejects_zero_impedance(spec3):
    def zero(d):
        d["lines"][0]["r_ohm"] = 0.0
        d["lines"][0]["x_ohm"] = 0.0
    with pytest.raises(ValidationError):
        parse_feeder(_mutate(dump_feeder(spec3), zero))


@pytest.mark.parametrize("mutation", [
    lambda d: d["ders"].append(dict(d["ders"][0])),
    lambda d: d["ders"][0].update(bus=9),
    lambda d: d["ders"][0].update(kind="Wind"),
    lambda d: d.pop("lines"),
    lambda d: d["ders"][0].update(eta=-1),
])
def test_feeder_validation(spec3, mutation):
    with pytest.raises(ValidationError):
        parse_feeder(_mutate(dump_feeder(spec3), mutation))


def test_feeder_parse_error_has_line():
    with pytest.raises(ParseError) as info:
        parse_feeder('{\n "base_kv": 4.8,\n oops\n}')
    assert info.value.line == 3


def test_timeline_unknown_bus(spec3):
    text = "# slot_duration=1\nslot,bus,p_load,q_load,p_av,gamma\n0,99,0.1,0.05,0.6,\n"
    with pytest.raises(ValidationError):
        parse_timeline(text, spec3)


def test_timeline_conflicting_gamma(spec3):
    text = ("# slot_duration=1\nslot,bus,p_load,q_load,p_av,gamma\n"
            "0,1,0.1,0.05,0.6,0\n0,2,0.1,0.05,0.6,1\n")
    with pytest.raises(ValidationError):
        parse_timeline(text, spec3)


def test_timeline_missing_rows_use_feeder(spec3):
    text = ("# slot_duration=60\nslot,bus,p_load,q_load,p_av,v_hi,gamma\n"
            "0,2,0.2,0.05,0.3,1.04,1\n1,1,0.1,0.05,0.6,,\n")
    tl = parse_timeline(text, spec3)
    assert tl.h == 60 and tl.n_slots == 2
    assert tl.p_load[0].tolist() == [0.1, 0.2, 0.1]
    assert tl.p_av[0].tolist() == [0.6, 0.3, 0.6]
    assert tl.gamma[0] == 1.0 and np.isnan(tl.gamma[1])
    assert tl.v_hi[0, 1] == 1.04 and np.isnan(tl.v_hi[0, 0])
    again = parse_timeline(dump_timeline(tl), spec3)
    np.testing.assert_array_equal(again.p_av, tl.p_av)


def test_timeline_rejects_negative_availability():
    with pytest.raises(ValidationError):
        ScenarioTimeline.static(2, [0.0], [0.0], [-0.1])


def test_config_parse_and_errors():
    cfg = parse_config("eps1 = 0.02  # primal\nK = 5\n\nout = runs\n")
    assert cfg.eps1 == 0.02 and cfg.K == 5 and cfg.out == "runs"
    assert parse_config(dump_config(cfg)) == cfg
    with pytest.raises(ValidationError):
        parse_config("bogus = 1\n")
    with pytest.raises(ParseError) as info:
        parse_config("K = 1\neps1 0.1\n")
    assert info.value.line == 2
    with pytest.raises(ValidationError):
        parse_config("K = 0\n")
    assert cfg.with_overrides(K=None, gamma=1.0).gamma == 1.0


def test_synth_noiseless_equals_bell():
    shape = ProfileShape(start_hour=10.0, slot_seconds=60.0)
    nodes = [NodeProfile(1, 0.5, 0.1), NodeProfile(3, 0.2)]
    tl = synth_profiles(7, 120, nodes, shape)
    hours = 10.0 + np.arange(120) / 60.0
    expect = shape.peak * bell_curve(hours, shape)
    np.testing.assert_array_equal(tl.p_av[:, 0], expect * 0.5)
    np.testing.assert_array_equal(tl.p_av[:, 1], 0.0)
    assert tl.n == 3


@given(seed=st.integers(0, 2 ** 31), vol=st.floats(0.0, 0.5))
def test_synth_deterministic_and_capped(seed, vol):
    shape = ProfileShape(cloud_volatility=vol)
    nodes = [NodeProfile(1, 0.3, 0.05), NodeProfile(2, 0.6, 0.02)]
    a = synth_profiles(seed, 50, nodes, shape)
    b = synth_profiles(seed, 50, nodes, shape)
    np.testing.assert_array_equal(a.p_av, b.p_av)
    assert np.all(a.p_av >= 0) and np.all(a.p_av <= [0.3, 0.6])


def test_synth_rejects_bad_bus():
    with pytest.raises(ValueError):
        synth_profiles(0, 5, [NodeProfile(4)], n=3)


def test_ieee37_structure():
    spec = build_ieee37_phase_c()
    assert len(spec.topology.buses) == 37
    assert len(spec.agents) == 18
    assert tuple(a.bus for a in spec.agents) == IEEE37_PV_BUSES
    assert spec.agents[2].feasible.eta == pytest.approx(300 / 2500)
    assert spec.agents[14].feasible.eta == pytest.approx(350 / 2500)
    assert spec.agents[0].feasible.eta == pytest.approx(200 / 2500)
    idx = ieee37_node_index()
    assert idx[799] == 0 and len(idx) == 37
    nodes = ieee37_nodes(spec)
    assert len(nodes) == 36 and sum(nd.pv_capacity > 0 for nd in nodes) == 18
