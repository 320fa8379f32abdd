"""Loading of road networks, trip records and vehicle specs.

File formats:

* Road graph: CSV with two ``#``-headed sections::

      #nodes
      id,lat,lon
      #arcs
      tail,head,dist_m,time_s,energy_wh

* Trips: CSV with header
  ``pickup_lat,pickup_lon,dropoff_lat,dropoff_lon,pickup_epoch_s``.

* Vehicle spec: JSON object
  ``{name, energy_scale, battery_wh, seats, mass_scale}``.

Rates are stored in users/s internally; file formats use users/h.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConnectivityError, GraphFormatError, ValidationError

EARTH_RADIUS_M = 6_371_000.0


def haversine_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in meters."""
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dphi = phi2 - phi1
    dlam = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(a)))


@dataclass(frozen=True)
class RoadNode:
    id: int
    lat: float
    lon: float


@dataclass(frozen=True)
class RoadArc:
    tail: int
    head: int
    dist_m: float
    time_s: float
    energy_wh: float


@dataclass(frozen=True)
class RoadGraph:
    """Geographic digraph with per-arc distance, travel time and energy."""

    nodes: tuple[RoadNode, ...]
    arcs: tuple[RoadArc, ...]

    def node_ids(self) -> list[int]:
        return [n.id for n in self.nodes]

    def node_by_id(self) -> dict[int, RoadNode]:
        return {n.id: n for n in self.nodes}

    def validate(self) -> None:
        ids = set()
        for n in self.nodes:
            if n.id in ids:
                raise ValidationError(f"duplicate node id {n.id}")
            ids.add(n.id)
        for a in self.arcs:
            if a.tail not in ids:
                raise ValidationError(f"unknown node {a.tail}")
            if a.head not in ids:
                raise ValidationError(f"unknown node {a.head}")
            if a.tail == a.head:
                raise ValidationError(f"self-loop at node {a.tail}")
            if a.dist_m <= 0 or a.time_s <= 0 or a.energy_wh <= 0:
                raise ValidationError(
                    f"arc {a.tail}->{a.head} must have positive distance, time and energy"
                )
        _check_strongly_connected(ids, [(a.tail, a.head) for a in self.arcs])


def _check_strongly_connected(ids: set[int], arcs: Iterable[tuple[int, int]]) -> None:
    """Forward and backward reachability from an arbitrary root."""
    if not ids:
        raise ValidationError("graph has no nodes")
    fwd: dict[int, list[int]] = {i: [] for i in ids}
    bwd: dict[int, list[int]] = {i: [] for i in ids}
    for t, h in arcs:
        fwd[t].append(h)
        bwd[h].append(t)
    root = next(iter(ids))
    for adj, what in ((fwd, "unreachable from"), (bwd, "cannot reach")):
        seen = {root}
        stack = [root]
        while stack:
            v = stack.pop()
            for w in adj[v]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        if len(seen) != len(ids):
            missing = min(ids - seen)
            raise ConnectivityError(missing, f"({what} node {root})")


def load_road_graph(path: str | Path, format: str = "csv") -> RoadGraph:
    """Parse and validate a road graph file."""
    if format != "csv":
        raise GraphFormatError(f"unsupported graph format {format!r}")
    nodes: list[RoadNode] = []
    arcs: list[RoadArc] = []
    section = None
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                section = line[1:].strip().lower()
                if section not in ("nodes", "arcs", "nodemap"):
                    raise GraphFormatError(f"unknown section {section!r}", lineno)
                continue
            parts = line.split(",")
            try:
                if section == "nodes":
                    if len(parts) != 3:
                        raise ValueError("expected id,lat,lon")
                    nodes.append(RoadNode(int(parts[0]), float(parts[1]), float(parts[2])))
                elif section == "arcs":
                    if len(parts) != 5:
                        raise ValueError("expected tail,head,dist_m,time_s,energy_wh")
                    arcs.append(
                        RoadArc(
                            int(parts[0]),
                            int(parts[1]),
                            float(parts[2]),
                            float(parts[3]),
                            float(parts[4]),
                        )
                    )
                elif section == "nodemap":
                    continue  # synthetic-graph extension section, ignored here
                else:
                    raise ValueError("data before any #section header")
            except ValueError as exc:
                raise GraphFormatError(str(exc), lineno) from exc
    graph = RoadGraph(tuple(nodes), tuple(arcs))
    graph.validate()
    return graph


@dataclass(frozen=True)
class VehicleSpec:
    name: str
    energy_scale: float
    battery_wh: float
    seats: int
    mass_scale: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.energy_scale <= 2.0):
            raise ValidationError("energy_scale must be in (0, 2]")
        if self.battery_wh <= 0:
            raise ValidationError("battery_wh must be positive")
        if self.seats < 1:
            raise ValidationError("seats must be >= 1")


def load_vehicle_spec(path: str | Path) -> VehicleSpec:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    return VehicleSpec(
        name=str(obj["name"]),
        energy_scale=float(obj["energy_scale"]),
        battery_wh=float(obj["battery_wh"]),
        seats=int(obj["seats"]),
        mass_scale=float(obj.get("mass_scale", 1.0)),
    )


@dataclass(frozen=True)
class TripRecord:
    pickup_lat: float
    pickup_lon: float
    dropoff_lat: float
    dropoff_lon: float
    pickup_time_s: float = 0.0


def load_trips(path: str | Path) -> list[TripRecord]:
    trips: list[TripRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"pickup_lat", "pickup_lon", "dropoff_lat", "dropoff_lon"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise GraphFormatError("trips file missing required columns", 1)
        for lineno, row in enumerate(reader, start=2):
            try:
                trips.append(
                    TripRecord(
                        float(row["pickup_lat"]),
                        float(row["pickup_lon"]),
                        float(row["dropoff_lat"]),
                        float(row["dropoff_lon"]),
                        float(row.get("pickup_epoch_s", 0.0) or 0.0),
                    )
                )
            except ValueError as exc:
                raise GraphFormatError(str(exc), lineno) from exc
    return trips


@dataclass(frozen=True)
class Request:
    """Origin-destination demand at a steady rate (users/s)."""

    origin: int
    destination: int
    rate_per_s: float


@dataclass(frozen=True)
class RequestSet:
    requests: tuple[Request, ...]
    dropped_same_node: int = 0

    def total_rate(self) -> float:
        return sum(r.rate_per_s for r in self.requests)


def aggregate_requests(
    trips: Sequence[TripRecord],
    graph: RoadGraph,
    geo_nodes: Iterable[int],
    window_s: float,
) -> RequestSet:
    """Snap trips to nearest geo-nodes and merge them into rate-based requests.

    Snapping is by great-circle distance, ties broken by lowest node id.
    Trips whose endpoints snap to the same geo-node are dropped and counted.
    """
    geo = sorted(set(geo_nodes))
    if not geo:
        raise ValidationError("geo_nodes must be nonempty")
    by_id = graph.node_by_id()
    for g in geo:
        if g not in by_id:
            raise ValidationError(f"geo-node {g} not in graph")
    if window_s <= 0:
        raise ValidationError("window must be positive")

    def snap(lat: float, lon: float) -> int:
        best, best_d = geo[0], float("inf")
        for g in geo:  # sorted ids: ties resolve to the lowest id
            n = by_id[g]
            d = haversine_m(lat, lon, n.lat, n.lon)
            if d < best_d:
                best, best_d = g, d
        return best

    counts: dict[tuple[int, int], int] = {}
    dropped = 0
    for t in trips:
        o = snap(t.pickup_lat, t.pickup_lon)
        d = snap(t.dropoff_lat, t.dropoff_lon)
        if o == d:
            dropped += 1
            continue
        counts[(o, d)] = counts.get((o, d), 0) + 1
    reqs = tuple(
        Request(o, d, c / window_s) for (o, d), c in sorted(counts.items())
    )
    return RequestSet(reqs, dropped_same_node=dropped)


def scale_energy(graph: RoadGraph, vehicle: VehicleSpec) -> RoadGraph:
    """Apply the vehicle's per-distance consumption multiplier to every arc."""
    return RoadGraph(
        graph.nodes,
        tuple(replace(a, energy_wh=vehicle.energy_scale * a.energy_wh) for a in graph.arcs),
    )
