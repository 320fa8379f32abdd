import json
import random

import pytest

from evfleetplan.errors import ValidationError
from evfleetplan.ingest import VehicleSpec
from evfleetplan.isoprune import SyntheticGraph, WorkGraph, homogenize
from evfleetplan.multilayer import (
    CHARGE,
    GEO,
    ROAD,
    ChargingConfig,
    build_multilayer,
)


def two_loc_synth():
    wg = WorkGraph({0, 1}, {(0, 1): (100.0, 60.0, 500.0), (1, 0): (100.0, 60.0, 500.0)})
    return homogenize(wg, 100.0)


def vehicle(battery=200.0):
    return VehicleSpec("ref", 1.0, battery, 4)


def test_charging_config_validation():
    with pytest.raises(ValidationError):
        ChargingConfig(candidates=(), p_max_w=1e5, n_stations=1)
    with pytest.raises(ValidationError):
        ChargingConfig(candidates=(0,), p_max_w=-1.0, n_stations=1)
    with pytest.raises(ValidationError):
        ChargingConfig(candidates=(0,), p_max_w=1e5, n_stations=2)


def test_layer_count_formula():
    synth = two_loc_synth()
    cfg = ChargingConfig(candidates=(0,), p_max_w=1e5, n_stations=1)
    mlg = build_multilayer(synth, vehicle(battery=1000.0), [0, 1], cfg)
    assert mlg.n_layers == 11  # floor(1000 / 100) + 1


def test_two_location_one_candidate_three_layers():
    synth = two_loc_synth()
    cfg = ChargingConfig(candidates=(0,), p_max_w=1e5, n_stations=1)
    mlg = build_multilayer(synth, vehicle(battery=200.0), [0, 1], cfg)
    assert mlg.n_layers == 3
    charge = [a for a in mlg.arcs if a.kind == CHARGE]
    assert len(charge) == 2
    assert {(a.layer_tail, a.layer_head) for a in charge} == {(2, 1), (1, 0)}


def test_no_road_arc_leaves_bottom_layer():
    synth = two_loc_synth()
    cfg = ChargingConfig(candidates=(0,), p_max_w=1e5, n_stations=1)
    mlg = build_multilayer(synth, vehicle(), [0, 1], cfg)
    bottom = mlg.n_layers - 1
    assert all(a.layer_tail != bottom for a in mlg.arcs if a.kind == ROAD)


def test_road_arc_replication_count():
    synth = two_loc_synth()
    cfg = ChargingConfig(candidates=(0,), p_max_w=1e5, n_stations=1)
    mlg = build_multilayer(synth, vehicle(battery=500.0), [0, 1], cfg)
    road = [a for a in mlg.arcs if a.kind == ROAD]
    assert len(road) == len(synth.arcs) * (mlg.n_layers - 1)


def test_geo_arcs_zero_weight_both_directions():
    synth = two_loc_synth()
    cfg = ChargingConfig(candidates=(0,), p_max_w=1e5, n_stations=1)
    mlg = build_multilayer(synth, vehicle(), [0, 1], cfg)
    geo = [a for a in mlg.arcs if a.kind == GEO]
    # 2 locations x n layers x both directions.
    assert len(geo) == 2 * mlg.n_layers * 2
    assert all(a.time_s == 0.0 for a in geo)
    for loc in (0, 1):
        g = mlg.geo_id(loc)
        down = {a.head for a in geo if a.tail == g}
        up = {a.tail for a in geo if a.head == g}
        want = {mlg.layered_id(loc, l) for l in range(mlg.n_layers)}
        assert down == want and up == want


def test_charging_arc_time_from_plug_power():
    synth = two_loc_synth()
    cfg = ChargingConfig(candidates=(0,), p_max_w=1e5, n_stations=1, p_plug_w=50_000.0)
    mlg = build_multilayer(synth, vehicle(), [0, 1], cfg)
    charge = [a for a in mlg.arcs if a.kind == CHARGE]
    # 100 Wh at 50 kW -> 7.2 s per quantum.
    assert all(a.time_s == pytest.approx(7.2) for a in charge)


def test_battery_smaller_than_quantum_rejected():
    synth = two_loc_synth()
    cfg = ChargingConfig(candidates=(0,), p_max_w=1e5, n_stations=1)
    with pytest.raises(ValidationError):
        build_multilayer(synth, vehicle(battery=50.0), [0, 1], cfg)


def test_split_node_cannot_be_geo_or_station():
    wg = WorkGraph({0, 1}, {(0, 1): (250.0, 60.0, 500.0), (1, 0): (250.0, 60.0, 500.0)})
    synth = homogenize(wg, 100.0)  # nodes 2,3 are splits
    cfg = ChargingConfig(candidates=(0,), p_max_w=1e5, n_stations=1)
    with pytest.raises(ValidationError):
        build_multilayer(synth, vehicle(), [0, 1, 2], cfg)
    cfg_bad = ChargingConfig(candidates=(5,), p_max_w=1e5, n_stations=1)
    with pytest.raises(ValidationError):
        build_multilayer(synth, vehicle(), [0, 1], cfg_bad)


def test_random_walk_descends_one_layer_per_road_arc():
    wg = WorkGraph(
        {0, 1, 2},
        {
            (0, 1): (100.0, 60.0, 500.0),
            (1, 2): (100.0, 60.0, 500.0),
            (2, 0): (100.0, 60.0, 500.0),
            (1, 0): (100.0, 60.0, 500.0),
            (2, 1): (100.0, 60.0, 500.0),
            (0, 2): (100.0, 60.0, 500.0),
        },
    )
    synth = homogenize(wg, 100.0)
    cfg = ChargingConfig(candidates=(0,), p_max_w=1e5, n_stations=1)
    mlg = build_multilayer(synth, vehicle(battery=600.0), [0, 1, 2], cfg)
    road = [a for a in mlg.arcs if a.kind == ROAD]
    by_tail = {}
    for a in road:
        by_tail.setdefault(a.tail, []).append(a)
    rng = random.Random(0)
    for _ in range(50):
        node = mlg.layered_id(rng.randrange(3), 0)
        steps = 0
        while node in by_tail and steps < mlg.n_layers:
            a = rng.choice(by_tail[node])
            assert a.layer_head == a.layer_tail + 1
            node = a.head
            steps += 1


def test_dump_json(tmp_path):
    synth = two_loc_synth()
    cfg = ChargingConfig(candidates=(0,), p_max_w=1e5, n_stations=1)
    mlg = build_multilayer(synth, vehicle(), [0, 1], cfg)
    p = tmp_path / "mlg.json"
    mlg.dump_json(p)
    obj = json.loads(p.read_text())
    assert obj["n_layers"] == mlg.n_layers
    assert len(obj["arcs"]) == len(mlg.arcs)
