"""Assembly of the joint routing / charging / siting MILP.

Variables: one nonnegative user flow per (commodity, arc) pair excluding
charging arcs, one nonnegative rebalancing flow per arc, one binary per
candidate station.  Rows carry tags eq2..eq9 naming the constraint family:

* eq2  per-commodity flow conservation with rate injections
* eq3  aggregate vehicle conservation
* eq4/eq5  total geo-arc usage of user / rebalancing flows (redundant
  bookkeeping rows, aggregate form)
* eq6  SoC continuity at geo-nodes: user flow on a geo-arc equals the
  rebalancing flow on the reverse geo-arc (aggregated over commodities)
* eq7  station-count cap
* eq8  station power cap, gated by the siting binary
* eq9  users never charge (implemented by omitting those variables)

The objective prices every flow variable with its arc's travel time, so
its value equals the expected number of busy vehicles (fleet size).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import SolveError, ValidationError
from .ingest import Request, RequestSet
from .multilayer import CHARGE, GEO, ROAD, ChargingConfig, MultiLayerGraph
from .ridepool import PooledRequestSet


@dataclass(frozen=True)
class Row:
    name: str
    tag: str
    sense: str  # 'E' equality, 'L' <=
    rhs: float
    coeffs: dict[int, float]


@dataclass
class MilpInstance:
    mlg: MultiLayerGraph | None  # None for instances re-imported from LP files
    commodities: tuple[Request, ...]  # merged (o, d, rate) triples
    var_names: list[str]
    objective: np.ndarray
    rows: list[Row]
    xm_cols: dict[tuple[int, int], int]  # (commodity, arc) -> column
    xr_cols: dict[int, int]  # arc -> column
    kappa_cols: list[int]

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    @property
    def n_flow_vars(self) -> int:
        return self.n_vars - len(self.kappa_cols)

    def objective_value(self, values: np.ndarray) -> float:
        return float(self.objective @ values)

    def user_flow_per_arc(self, values: np.ndarray) -> np.ndarray:
        out = np.zeros(len(self.mlg.arcs))
        for (_, a), col in self.xm_cols.items():
            out[a] += values[col]
        return out

    def reb_flow_per_arc(self, values: np.ndarray) -> np.ndarray:
        out = np.zeros(len(self.mlg.arcs))
        for a, col in self.xr_cols.items():
            out[a] = values[col]
        return out

    def kappa_values(self, values: np.ndarray) -> np.ndarray:
        return values[self.kappa_cols] if self.kappa_cols else np.zeros(0)


def _merge_demands(demands) -> tuple[Request, ...]:
    if isinstance(demands, (RequestSet, PooledRequestSet)):
        items = demands.requests
    else:
        items = tuple(demands)
    merged: dict[tuple[int, int], float] = {}
    for r in items:
        if r.rate_per_s <= 0:
            continue
        key = (r.origin, r.destination)
        merged[key] = merged.get(key, 0.0) + r.rate_per_s
    return tuple(Request(o, d, a) for (o, d), a in sorted(merged.items()))


def _time_csr(mlg: MultiLayerGraph, arc_ok, reverse: bool = False) -> csr_matrix:
    rows, cols, vals = [], [], []
    for i, a in enumerate(mlg.arcs):
        if not arc_ok(a):
            continue
        t, h = (a.head, a.tail) if reverse else (a.tail, a.head)
        rows.append(t)
        cols.append(h)
        vals.append(a.time_s)
    n = mlg.n_nodes
    # Parallel arcs between layered nodes cannot occur; geo arcs are unique.
    return csr_matrix((vals, (rows, cols)), shape=(n, n))


def _allowed_user_arcs(
    mlg: MultiLayerGraph, commodities: Sequence[Request], slack_s: float
) -> list[set[int]]:
    """Per-commodity arc sets within a travel-time budget of the shortest path.

    Charging arcs are excluded for users outright (eq9); the budget is the
    commodity's shortest time plus ``slack_s``.
    """
    user_ok = lambda a: a.kind != CHARGE
    fwd = _time_csr(mlg, user_ok)
    bwd = _time_csr(mlg, user_ok, reverse=True)
    origins = sorted({mlg.geo_id(r.origin) for r in commodities})
    dests = sorted({mlg.geo_id(r.destination) for r in commodities})
    d_from = {o: d for o, d in zip(origins, dijkstra(fwd, indices=origins))}
    d_to = {t: d for t, d in zip(dests, dijkstra(bwd, indices=dests))}
    out: list[set[int]] = []
    tol = 1e-9
    for r in commodities:
        src = d_from[mlg.geo_id(r.origin)]
        dst = d_to[mlg.geo_id(r.destination)]
        budget = src[mlg.geo_id(r.destination)] + slack_s + tol
        keep = {
            i
            for i, a in enumerate(mlg.arcs)
            if a.kind != CHARGE and src[a.tail] + a.time_s + dst[a.head] <= budget
        }
        out.append(keep)
    return out


def assemble(
    mlg: MultiLayerGraph,
    demands,
    charging: ChargingConfig | None = None,
    user_arc_slack_s: float | None = 0.0,
    per_commodity_soc: bool = False,
    emit_geo_totals: bool = True,
) -> MilpInstance:
    """Build the full instance over the layered graph and the demand set.

    ``user_arc_slack_s=None`` disables the per-commodity arc restriction.
    ``per_commodity_soc`` switches eq6 to its literal per-commodity variant
    (for comparison only; it over-constrains shared rebalancing flow).
    """
    charging = charging or mlg.charging
    if tuple(sorted(charging.candidates)) != tuple(mlg.charging.candidates):
        raise ValidationError("charging override must keep the graph's candidate set")
    commodities = _merge_demands(demands)
    geo_set = set(mlg.geo_locations)
    for r in commodities:
        if r.origin not in geo_set or r.destination not in geo_set:
            raise ValidationError(
                f"demand endpoint ({r.origin}, {r.destination}) is not a geo-node"
            )
    arcs = mlg.arcs
    n_arcs = len(arcs)
    if user_arc_slack_s is None:
        allowed = [
            {i for i, a in enumerate(arcs) if a.kind != CHARGE}
            for _ in commodities
        ]
    else:
        allowed = _allowed_user_arcs(mlg, commodities, user_arc_slack_s)

    var_names: list[str] = []
    xm_cols: dict[tuple[int, int], int] = {}
    for m in range(len(commodities)):
        for a in sorted(allowed[m]):
            xm_cols[(m, a)] = len(var_names)
            var_names.append(f"xm{m}_a{a}")
    xr_cols: dict[int, int] = {}
    for a in range(n_arcs):
        xr_cols[a] = len(var_names)
        var_names.append(f"xr_a{a}")
    kappa_cols: list[int] = []
    candidates = charging.candidates
    for c in range(len(candidates)):
        kappa_cols.append(len(var_names))
        var_names.append(f"k{c}")

    obj = np.zeros(len(var_names))
    for (m, a), col in xm_cols.items():
        obj[col] = arcs[a].time_s
    for a, col in xr_cols.items():
        obj[col] = arcs[a].time_s

    in_arcs: list[list[int]] = [[] for _ in range(mlg.n_nodes)]
    out_arcs: list[list[int]] = [[] for _ in range(mlg.n_nodes)]
    for i, a in enumerate(arcs):
        out_arcs[a.tail].append(i)
        in_arcs[a.head].append(i)

    rows: list[Row] = []

    # eq2: per-commodity conservation with injections at origin/destination.
    for m, r in enumerate(commodities):
        o_id = mlg.geo_id(r.origin)
        d_id = mlg.geo_id(r.destination)
        ok = allowed[m]
        for v in range(mlg.n_nodes):
            coeffs: dict[int, float] = {}
            for a in in_arcs[v]:
                if a in ok:
                    coeffs[xm_cols[(m, a)]] = coeffs.get(xm_cols[(m, a)], 0.0) + 1.0
            for a in out_arcs[v]:
                if a in ok:
                    coeffs[xm_cols[(m, a)]] = coeffs.get(xm_cols[(m, a)], 0.0) - 1.0
            rhs = r.rate_per_s * ((1.0 if v == d_id else 0.0) - (1.0 if v == o_id else 0.0))
            rows.append(Row(f"eq2_m{m}_n{v}", "eq2", "E", rhs, coeffs))

    # eq3: aggregate vehicle conservation at every node.
    for v in range(mlg.n_nodes):
        coeffs = {}
        for a in in_arcs[v]:
            coeffs[xr_cols[a]] = coeffs.get(xr_cols[a], 0.0) + 1.0
            for m in range(len(commodities)):
                if a in allowed[m]:
                    col = xm_cols[(m, a)]
                    coeffs[col] = coeffs.get(col, 0.0) + 1.0
        for a in out_arcs[v]:
            coeffs[xr_cols[a]] = coeffs.get(xr_cols[a], 0.0) - 1.0
            for m in range(len(commodities)):
                if a in allowed[m]:
                    col = xm_cols[(m, a)]
                    coeffs[col] = coeffs.get(col, 0.0) - 1.0
        rows.append(Row(f"eq3_n{v}", "eq3", "E", 0.0, coeffs))

    geo_arc_idx = [i for i, a in enumerate(arcs) if a.kind == GEO]
    total_rate = sum(r.rate_per_s for r in commodities)

    if emit_geo_totals:
        # eq4/eq5: each demand uses the geo layer exactly twice (in and out).
        coeffs = {}
        for a in geo_arc_idx:
            for m in range(len(commodities)):
                if a in allowed[m]:
                    col = xm_cols[(m, a)]
                    coeffs[col] = coeffs.get(col, 0.0) + 1.0
        rows.append(Row("eq4", "eq4", "E", 2.0 * total_rate, coeffs))
        coeffs = {xr_cols[a]: 1.0 for a in geo_arc_idx}
        rows.append(Row("eq5", "eq5", "E", 2.0 * total_rate, coeffs))

    # eq6: SoC continuity through geo-nodes, paired with the reverse geo-arc.
    rev_geo: dict[int, int] = {}
    by_ends = {(arcs[i].tail, arcs[i].head): i for i in geo_arc_idx}
    for i in geo_arc_idx:
        rev_geo[i] = by_ends[(arcs[i].head, arcs[i].tail)]
    for i in geo_arc_idx:
        if per_commodity_soc:
            for m in range(len(commodities)):
                if i in allowed[m]:
                    coeffs = {xm_cols[(m, i)]: 1.0, xr_cols[rev_geo[i]]: -1.0}
                    rows.append(Row(f"eq6_m{m}_a{i}", "eq6", "E", 0.0, coeffs))
        else:
            coeffs = {xr_cols[rev_geo[i]]: -1.0}
            for m in range(len(commodities)):
                if i in allowed[m]:
                    col = xm_cols[(m, i)]
                    coeffs[col] = coeffs.get(col, 0.0) + 1.0
            rows.append(Row(f"eq6_a{i}", "eq6", "E", 0.0, coeffs))

    # eq7: station-count cap.
    if kappa_cols:
        rows.append(
            Row("eq7", "eq7", "L", float(charging.n_stations), {c: 1.0 for c in kappa_cols})
        )

    # eq8: station power cap gated by siting.  Flow (veh/s) times the quantum
    # (Wh) is Wh/s; the 3600 factor converts the cap comparison to watts.
    for ci in range(len(candidates)):
        coeffs = {}
        for i, a in enumerate(arcs):
            if a.kind == CHARGE and a.station == ci:
                coeffs[xr_cols[i]] = 3600.0 * mlg.delta_e_wh
        coeffs[kappa_cols[ci]] = -charging.p_max_w
        rows.append(Row(f"eq8_c{ci}", "eq8", "L", 0.0, coeffs))

    return MilpInstance(
        mlg=mlg,
        commodities=commodities,
        var_names=var_names,
        objective=obj,
        rows=rows,
        xm_cols=xm_cols,
        xr_cols=xr_cols,
        kappa_cols=kappa_cols,
    )


@dataclass(frozen=True)
class Diagnostics:
    max_residual_by_tag: dict[str, float]
    bound_violation: float
    ok: bool


def validate_solution(
    instance: MilpInstance, values: np.ndarray, tol: float = 1e-6
) -> Diagnostics:
    """Recompute every constraint residual independently of the solver."""
    values = np.asarray(values, dtype=float)
    if values.shape != (instance.n_vars,):
        raise SolveError(
            f"solution has {values.shape} values, instance expects {instance.n_vars}"
        )
    worst: dict[str, float] = {}
    for row in instance.rows:
        lhs = sum(coef * values[col] for col, coef in row.coeffs.items())
        if row.sense == "E":
            resid = abs(lhs - row.rhs)
        else:
            resid = max(0.0, lhs - row.rhs)
        if resid > worst.get(row.tag, 0.0):
            worst[row.tag] = resid
    bound = float(max(0.0, -values.min())) if values.size else 0.0
    ok = bound <= tol and all(v <= tol for v in worst.values())
    return Diagnostics(max_residual_by_tag=worst, bound_violation=bound, ok=ok)
