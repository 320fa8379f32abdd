"""SoC-layered network built on top of the synthetic graph.

Layer 0 is a full battery, layer ``n-1`` an empty one.  Road arcs always
descend exactly one layer (every synthetic arc costs one quantum), geo-arcs
connect a per-location super-node to all layer copies at zero weight, and
charging arcs ascend one layer at candidate stations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import ValidationError
from .ingest import VehicleSpec
from .isoprune import SyntheticGraph

ROAD = "road"
GEO = "geo"
CHARGE = "charge"

DEFAULT_PLUG_POWER_W = 50_000.0


@dataclass(frozen=True)
class ChargingConfig:
    candidates: tuple[int, ...]  # geo-locations (synthetic node ids)
    p_max_w: float  # station aggregate power cap
    n_stations: int  # max number of sited stations
    p_plug_w: float = DEFAULT_PLUG_POWER_W  # per-vehicle charging power

    def __post_init__(self):
        if not self.candidates:
            raise ValidationError("candidate set must be nonempty")
        if self.p_max_w <= 0 or self.p_plug_w <= 0:
            raise ValidationError("station and plug power must be positive")
        if not (1 <= self.n_stations <= len(self.candidates)):
            raise ValidationError("station cap must be in [1, |candidates|]")


@dataclass(frozen=True)
class MLArc:
    tail: int
    head: int
    time_s: float
    kind: str  # road / geo / charge
    dist_m: float = 0.0
    loc_tail: int = -1
    loc_head: int = -1
    layer_tail: int = -1  # -1 marks the geo super-node end of a geo-arc
    layer_head: int = -1
    station: int = -1  # candidate index for charging arcs


@dataclass(frozen=True)
class MultiLayerGraph:
    n_layers: int
    delta_e_wh: float
    n_locations: int
    geo_locations: tuple[int, ...]  # synthetic location ids that carry a geo-node
    arcs: tuple[MLArc, ...]
    charging: ChargingConfig

    @property
    def n_nodes(self) -> int:
        return self.n_locations * self.n_layers + len(self.geo_locations)

    def layered_id(self, loc: int, layer: int) -> int:
        return loc * self.n_layers + layer

    def geo_id(self, loc: int) -> int:
        return self.n_locations * self.n_layers + self.geo_locations.index(loc)

    def geo_index(self, loc: int) -> int:
        return self.geo_locations.index(loc)

    def dump_json(self, path: str | Path) -> None:
        """Debug dump of node and arc lists for visualization tooling."""
        obj = {
            "n_layers": self.n_layers,
            "delta_e_wh": self.delta_e_wh,
            "n_locations": self.n_locations,
            "geo_locations": list(self.geo_locations),
            "arcs": [
                {
                    "tail": a.tail,
                    "head": a.head,
                    "time_s": a.time_s,
                    "kind": a.kind,
                    "layer_tail": a.layer_tail,
                    "layer_head": a.layer_head,
                    "station": a.station,
                }
                for a in self.arcs
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2)
            fh.write("\n")


def build_multilayer(
    synth: SyntheticGraph,
    vehicle: VehicleSpec,
    geo_nodes: Iterable[int],
    charging: ChargingConfig,
) -> MultiLayerGraph:
    """Lift the synthetic graph into the layered SoC network.

    ``geo_nodes`` and ``charging.candidates`` are synthetic location ids;
    both must map back to original (non-split) nodes.
    """
    delta_e = synth.w_c
    if vehicle.battery_wh < delta_e:
        raise ValidationError("battery smaller than one energy quantum")
    n = math.floor(vehicle.battery_wh / delta_e) + 1

    geo = tuple(sorted(set(geo_nodes)))
    for loc in geo:
        if not (0 <= loc < synth.n_nodes):
            raise ValidationError(f"geo-node {loc} not a synthetic location")
        if synth.node_map[loc] < 0:
            raise ValidationError(f"geo-node {loc} is a synthetic split node")
    geo_set = set(geo)
    for c in charging.candidates:
        if c not in geo_set:
            raise ValidationError(f"candidate station {c} is not a geo-node")

    L = synth.n_nodes

    def nid(loc: int, layer: int) -> int:
        return loc * n + layer

    arcs: list[MLArc] = []
    # Road arcs: one copy per source layer that still has a quantum to spend.
    for (u, v, t, d) in synth.arcs:
        for layer in range(n - 1):
            arcs.append(
                MLArc(
                    tail=nid(u, layer),
                    head=nid(v, layer + 1),
                    time_s=t,
                    kind=ROAD,
                    dist_m=d,
                    loc_tail=u,
                    loc_head=v,
                    layer_tail=layer,
                    layer_head=layer + 1,
                )
            )
    # Geo-arcs: zero-weight, both directions, to every layer copy.
    for gi, loc in enumerate(geo):
        g = L * n + gi
        for layer in range(n):
            arcs.append(
                MLArc(
                    tail=g,
                    head=nid(loc, layer),
                    time_s=0.0,
                    kind=GEO,
                    loc_tail=loc,
                    loc_head=loc,
                    layer_head=layer,
                )
            )
            arcs.append(
                MLArc(
                    tail=nid(loc, layer),
                    head=g,
                    time_s=0.0,
                    kind=GEO,
                    loc_tail=loc,
                    loc_head=loc,
                    layer_tail=layer,
                )
            )
    # Charging arcs: ascend one layer, one quantum per traversal.
    t_charge = delta_e * 3600.0 / charging.p_plug_w
    for ci, c in enumerate(sorted(charging.candidates)):
        for layer in range(n - 1, 0, -1):
            arcs.append(
                MLArc(
                    tail=nid(c, layer),
                    head=nid(c, layer - 1),
                    time_s=t_charge,
                    kind=CHARGE,
                    loc_tail=c,
                    loc_head=c,
                    layer_tail=layer,
                    layer_head=layer - 1,
                    station=ci,
                )
            )

    mlg = MultiLayerGraph(
        n_layers=n,
        delta_e_wh=delta_e,
        n_locations=L,
        geo_locations=geo,
        arcs=tuple(arcs),
        charging=ChargingConfig(
            candidates=tuple(sorted(charging.candidates)),
            p_max_w=charging.p_max_w,
            n_stations=charging.n_stations,
            p_plug_w=charging.p_plug_w,
        ),
    )
    return mlg
