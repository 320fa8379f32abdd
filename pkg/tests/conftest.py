"""Shared toy-network builders for the test suite."""

from __future__ import annotations

import math

import numpy as np
import pytest

from evfleetplan.ingest import RoadArc, RoadGraph, RoadNode


def make_graph(n_nodes, arcs, lat0=40.7, lon0=-74.0):
    """Arcs as (tail, head, dist, time, energy) tuples; coords on a small grid."""
    nodes = tuple(
        RoadNode(i, lat0 + 0.01 * (i // 4), lon0 + 0.01 * (i % 4)) for i in range(n_nodes)
    )
    return RoadGraph(nodes, tuple(RoadArc(*a) for a in arcs))


def ring_graph(n=4, energy=100.0, time=60.0, dist=500.0, both_ways=True):
    arcs = []
    for i in range(n):
        j = (i + 1) % n
        arcs.append((i, j, dist, time, energy))
        if both_ways:
            arcs.append((j, i, dist, time, energy))
    return make_graph(n, arcs)


def line_graph(n=3, energy=100.0, time=60.0, dist=500.0):
    """Bidirectional path 0-1-...-(n-1)."""
    arcs = []
    for i in range(n - 1):
        arcs.append((i, i + 1, dist, time, energy))
        arcs.append((i + 1, i, dist, time, energy))
    return make_graph(n, arcs)


def grid_graph(rows, cols, energy=100.0, time=60.0, dist=500.0):
    arcs = []

    def nid(r, c):
        return r * cols + c

    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                arcs.append((nid(r, c), nid(r, c + 1), dist, time, energy))
                arcs.append((nid(r, c + 1), nid(r, c), dist, time, energy))
            if r + 1 < rows:
                arcs.append((nid(r, c), nid(r + 1, c), dist, time, energy))
                arcs.append((nid(r + 1, c), nid(r, c), dist, time, energy))
    return make_graph(rows * cols, arcs)


def random_planar_graph(n, seed=0, energy_range=(40.0, 160.0)):
    """Delaunay triangulation of random points, arcs in both directions.

    Energies and times are drawn independently, so shortest paths are
    generically unique.
    """
    from scipy.spatial import Delaunay

    rng = np.random.default_rng(seed)
    pts = rng.random((n, 2))
    tri = Delaunay(pts)
    edges = set()
    for simplex in tri.simplices:
        for a, b in ((0, 1), (1, 2), (0, 2)):
            u, v = int(simplex[a]), int(simplex[b])
            edges.add((min(u, v), max(u, v)))
    arcs = []
    for (u, v) in sorted(edges):
        length = float(np.hypot(*(pts[u] - pts[v]))) * 5000.0 + 50.0
        e = float(rng.uniform(*energy_range)) * (length / 1000.0)
        t = length / float(rng.uniform(6.0, 14.0))
        arcs.append((u, v, length, t, e))
        arcs.append((v, u, length, t, e * float(rng.uniform(0.98, 1.02))))
    nodes = tuple(
        RoadNode(i, 40.7 + 0.05 * float(pts[i][1]), -74.0 + 0.05 * float(pts[i][0]))
        for i in range(n)
    )
    return RoadGraph(nodes, tuple(RoadArc(*a) for a in arcs))


def synth_line(n=3, energy=100.0, time=60.0, dist=500.0):
    """Iso-energy synthetic line graph with every node an original node."""
    from evfleetplan.isoprune import WorkGraph, homogenize

    arcs = {}
    for i in range(n - 1):
        arcs[(i, i + 1)] = (energy, time, dist)
        arcs[(i + 1, i)] = (energy, time, dist)
    return homogenize(WorkGraph(set(range(n)), arcs), energy)


def synth_ring(n=4, energy=100.0, time=60.0, dist=500.0):
    from evfleetplan.isoprune import WorkGraph, homogenize

    arcs = {}
    for i in range(n):
        j = (i + 1) % n
        arcs[(i, j)] = (energy, time, dist)
        arcs[(j, i)] = (energy, time, dist)
    return homogenize(WorkGraph(set(range(n)), arcs), energy)


def random_instance(seed, n_geo=6, n_requests=4, n_candidates=3, battery_quanta=6,
                    p_max_w=None, n_stations=1, slack_s=None):
    """Small random ring-with-chords MILP instance for solver cross-checks."""
    from evfleetplan.ingest import Request, VehicleSpec
    from evfleetplan.isoprune import WorkGraph, homogenize
    from evfleetplan.model import assemble
    from evfleetplan.multilayer import ChargingConfig, build_multilayer

    rng = np.random.default_rng(seed)
    arcs = {}
    for i in range(n_geo):
        j = (i + 1) % n_geo
        t = float(rng.uniform(30.0, 120.0))
        arcs[(i, j)] = (100.0, t, t * 8.0)
        arcs[(j, i)] = (100.0, t, t * 8.0)
    n_chords = int(rng.integers(0, n_geo // 2 + 1))
    for _ in range(n_chords):
        u, v = rng.choice(n_geo, size=2, replace=False)
        if (int(u), int(v)) not in arcs:
            t = float(rng.uniform(30.0, 120.0))
            arcs[(int(u), int(v))] = (100.0, t, t * 8.0)
            arcs[(int(v), int(u))] = (100.0, t, t * 8.0)
    synth = homogenize(WorkGraph(set(range(n_geo)), arcs), 100.0)
    vehicle = VehicleSpec("test", 1.0, battery_quanta * 100.0, 2)
    cands = sorted(int(c) for c in rng.choice(n_geo, size=n_candidates, replace=False))
    if p_max_w is None:
        p_max_w = float(rng.uniform(2e5, 2e6))
    charging = ChargingConfig(tuple(cands), p_max_w, n_stations)
    mlg = build_multilayer(synth, vehicle, range(n_geo), charging)
    demands = []
    for _ in range(n_requests):
        o, d = rng.choice(n_geo, size=2, replace=False)
        demands.append(Request(int(o), int(d), float(rng.uniform(0.001, 0.02))))
    instance = assemble(mlg, demands, user_arc_slack_s=slack_s)
    return synth, mlg, demands, instance


def graph_to_csv(graph, path):
    lines = ["#nodes"]
    for n in graph.nodes:
        lines.append(f"{n.id},{n.lat!r},{n.lon!r}")
    lines.append("#arcs")
    for a in graph.arcs:
        lines.append(f"{a.tail},{a.head},{a.dist_m!r},{a.time_s!r},{a.energy_wh!r}")
    path.write_text("\n".join(lines) + "\n")


def write_scenario_dir(tmp_path, n_trips=40, seed=0, battery_wh=1000.0, **overrides):
    """Materialize a small ring scenario (graph, trips, vehicles, config)."""
    import json

    g = ring_graph(6)
    graph_to_csv(g, tmp_path / "graph.csv")
    by = g.node_by_id()
    rng = np.random.default_rng(seed)
    rows = ["pickup_lat,pickup_lon,dropoff_lat,dropoff_lon,pickup_epoch_s"]
    for k in range(n_trips):
        o, d = rng.choice(6, size=2, replace=False)
        rows.append(
            f"{by[int(o)].lat},{by[int(o)].lon},{by[int(d)].lat},{by[int(d)].lon},{k}"
        )
    (tmp_path / "trips.csv").write_text("\n".join(rows) + "\n")
    vehicles = [
        ("ref.json", {"name": "ref", "energy_scale": 1.0, "battery_wh": battery_wh, "seats": 4}),
        ("mid.json", {"name": "mid", "energy_scale": 0.93, "battery_wh": battery_wh, "seats": 4}),
        ("small.json", {"name": "small", "energy_scale": 0.85, "battery_wh": battery_wh, "seats": 2}),
    ]
    for fname, obj in vehicles:
        (tmp_path / fname).write_text(json.dumps(obj))
    cfg = {
        "graph": "graph.csv",
        "trips": "trips.csv",
        "vehicles": [v[0] for v in vehicles],
        "prune": {"target_wh": 100.0, "ratio": 0.34},
        "pooling_grid": [[0.0, 0.0], [600.0, 300.0]],
        "n_stations": [1, 2],
        "siting_modes": ["optimal", "betweenness"],
        "station_power_w": 1e6,
        "plug_power_w": 50000.0,
        "window_s": 3600.0,
        "output_dir": "out",
        "seed": 0,
    }
    cfg.update(overrides)
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(cfg, indent=1))
    return cfg_path


@pytest.fixture
def ring4():
    return ring_graph(4)


@pytest.fixture
def line3():
    return line_graph(3)
