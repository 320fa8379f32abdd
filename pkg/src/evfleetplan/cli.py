"""Command-line entry point (``plan``).

Exit codes: 0 full success, 1 hard error, 2 partial grid failure.
Set ``PLAN_THREADS`` to cap parallel grid-point workers.
"""

from __future__ import annotations

import csv
import sys
from pathlib import Path

import click

from .errors import PlanError
from .ingest import Request, RequestSet, load_road_graph
from .isoprune import PruneConfig, prune, save_synthetic_graph
from .ridepool import PoolingConfig, pool_requests
from .scenarios import ScenarioConfig, compare_vehicles, run_scenario, travel_time_matrix
from .solve import OPTIMAL, branch_and_bound, parse_lp_file, write_solution_file


@click.group()
def main():
    """Planning toolkit for electric robo-taxi fleets with ride-pooling."""


@main.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def run_cmd(config_path: str):
    """Run the full scenario sweep described by a JSON config."""
    try:
        config = ScenarioConfig.from_json(config_path)
        report = run_scenario(config)
    except PlanError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"{len(report.records)} grid points, {report.n_failed} failed")
    click.echo(f"reports written to {config.output_dir}")
    if report.n_failed:
        sys.exit(2)


@main.command("prune")
@click.option("--graph", "graph_path", required=True, type=click.Path(exists=True))
@click.option("--target-wh", required=True, type=float)
@click.option("--ratio", required=True, type=float)
@click.option("--batch", default=32, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--out-graph", default="synthetic.csv", type=click.Path())
@click.option("--out-report", default="prune_report.json", type=click.Path())
def prune_cmd(graph_path, target_wh, ratio, batch, seed, out_graph, out_report):
    """Contract a road graph into an iso-energy synthetic graph."""
    try:
        graph = load_road_graph(graph_path)
        cfg = PruneConfig(target_weight_wh=target_wh, compression_ratio=ratio, candidate_batch=batch)
        synth, report = prune(graph, cfg, seed=seed)
    except PlanError as exc:
        raise click.ClickException(str(exc))
    save_synthetic_graph(synth, out_graph)
    report.to_json(out_report)
    click.echo(
        f"{report.original_nodes} -> {report.synthetic_nodes} nodes, "
        f"mean error {report.mean_abs_error_wh:.3f} Wh"
    )


@main.command("pool")
@click.option("--requests", "requests_path", required=True, type=click.Path(exists=True))
@click.option("--graph", "graph_path", required=True, type=click.Path(exists=True))
@click.option("--twait", required=True, type=float, help="max waiting time [s]")
@click.option("--tdelay", required=True, type=float, help="max detour delay [s]")
@click.option("--out", "out_path", default="pooled.csv", type=click.Path())
def pool_cmd(requests_path, graph_path, twait, tdelay, out_path):
    """Transform a request CSV (origin,destination,rate_per_h) for pooling."""
    try:
        graph = load_road_graph(graph_path)
        reqs = _load_requests_csv(requests_path)
        nodes = sorted({r.origin for r in reqs.requests} | {r.destination for r in reqs.requests})
        tt = _road_travel_times(graph, nodes)
        pooled = pool_requests(reqs, tt, PoolingConfig(twait, tdelay))
    except PlanError as exc:
        raise click.ClickException(str(exc))
    pooled.to_csv(out_path)
    kept = sum(1 for r in pooled.requests if not r.provenance.startswith("solo"))
    click.echo(f"{len(reqs.requests)} requests -> {len(pooled.requests)} equivalent "
               f"({kept} pooled legs), written to {out_path}")


def _road_travel_times(graph, nodes):
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import dijkstra

    ids = sorted(graph.node_ids())
    idx = {v: i for i, v in enumerate(ids)}
    mat = csr_matrix(
        (
            [a.time_s for a in graph.arcs],
            ([idx[a.tail] for a in graph.arcs], [idx[a.head] for a in graph.arcs]),
        ),
        shape=(len(ids), len(ids)),
    )
    dist = dijkstra(mat, indices=[idx[n] for n in nodes])
    return {(a, b): float(dist[i, idx[b]]) for i, a in enumerate(nodes) for b in nodes}


def _load_requests_csv(path: str) -> RequestSet:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(
                Request(int(row["origin"]), int(row["destination"]), float(row["rate_per_h"]) / 3600.0)
            )
    return RequestSet(tuple(out))


@main.command("solve")
@click.option("--instance", "instance_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", default=None, type=click.Path())
@click.option("--gap-tol", default=1e-6, type=float)
def solve_cmd(instance_path, out_path, gap_tol):
    """Solve an LP-file instance and write a `name value` solution file."""
    try:
        instance = parse_lp_file(instance_path)
        sol = branch_and_bound(instance, gap_tol=gap_tol)
    except PlanError as exc:
        raise click.ClickException(str(exc))
    if sol.status != OPTIMAL:
        raise click.ClickException(f"solver status: {sol.status}")
    out_path = out_path or str(Path(instance_path).with_suffix(".sol"))
    write_solution_file(instance, sol, out_path)
    click.echo(f"objective {sol.objective!r} ({sol.nodes} nodes), solution in {out_path}")


@main.command("compare-vehicles")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def compare_cmd(config_path):
    """Per-vehicle energy and distance comparison at fixed siting."""
    try:
        config = ScenarioConfig.from_json(config_path)
        report = compare_vehicles(config)
    except PlanError as exc:
        raise click.ClickException(str(exc))
    for rec in report.sorted_records():
        if rec["error"]:
            click.echo(f"{rec['vehicle']}: FAILED ({rec['error']})")
        else:
            click.echo(
                f"{rec['vehicle']}: user {rec['user_energy_wh_per_h']:.1f} Wh/h, "
                f"rebalancing {rec['reb_energy_wh_per_h']:.1f} Wh/h"
            )
    if report.n_failed:
        sys.exit(2)


if __name__ == "__main__":
    main()
