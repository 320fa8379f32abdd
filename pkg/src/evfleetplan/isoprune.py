"""Contraction of a road network into an iso-energy synthetic network.

The loop repeatedly merges adjacent node pairs (keeping the merge whose
sampled shortest-path energy error is smallest) until the requested
fraction of nodes is gone, then rounds every arc to an integer number of
energy quanta and splits it into that many unit arcs.

Merge rule: the pair's surviving node inherits the removed node's arcs
with the internal arc's energy/time/distance chained on, so shortest
paths between surviving nodes that ran through the removed node keep
their exact cost whenever they also visited the survivor.  Parallel arcs
collapse to the minimum-energy one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import MergeRejectedError, ValidationError
from .ingest import RoadGraph

ArcData = tuple[float, float, float]  # (energy_wh, time_s, dist_m)


def quantum_multiplicity(energy_wh: float, w_c: float) -> int:
    """Nearest positive integer multiple of ``w_c``; exact half ties round down."""
    q = energy_wh / w_c
    k = math.floor(q)
    if q - k > 0.5:
        k += 1
    return max(1, k)


@dataclass(frozen=True)
class PruneConfig:
    target_weight_wh: float
    compression_ratio: float
    candidate_batch: int = 32
    sample_sources: int = 16
    sample_targets: int = 16

    def __post_init__(self):
        if self.target_weight_wh <= 0:
            raise ValidationError("target weight must be positive")
        if not (0.0 < self.compression_ratio < 1.0):
            raise ValidationError("compression ratio must be in (0, 1)")
        if self.candidate_batch < 1:
            raise ValidationError("candidate batch must be >= 1")


@dataclass(frozen=True)
class MergeCandidate:
    keep: int
    drop: int
    score: float


class WorkGraph:
    """Mutable digraph used during the contraction loop (original node ids)."""

    def __init__(self, nodes: Iterable[int], arcs: dict[tuple[int, int], ArcData]):
        self.nodes: set[int] = set(nodes)
        self.arcs: dict[tuple[int, int], ArcData] = dict(arcs)
        self.out: dict[int, set[int]] = {v: set() for v in self.nodes}
        self.inc: dict[int, set[int]] = {v: set() for v in self.nodes}
        for (u, v) in self.arcs:
            self.out[u].add(v)
            self.inc[v].add(u)

    @classmethod
    def from_road_graph(cls, graph: RoadGraph) -> "WorkGraph":
        arcs: dict[tuple[int, int], ArcData] = {}
        for a in graph.arcs:
            key = (a.tail, a.head)
            data = (a.energy_wh, a.time_s, a.dist_m)
            # Parallel input arcs: keep the minimum-energy one.
            if key not in arcs or data[0] < arcs[key][0]:
                arcs[key] = data
        return cls((n.id for n in graph.nodes), arcs)

    def copy(self) -> "WorkGraph":
        return WorkGraph(self.nodes, self.arcs)

    def adjacent_pairs(self) -> set[tuple[int, int]]:
        pairs = set()
        for (u, v) in self.arcs:
            pairs.add((min(u, v), max(u, v)))
        return pairs

    def incident_arcs(self, u: int, v: int) -> list[tuple[int, int]]:
        keys = set()
        for x in (u, v):
            keys.update((x, w) for w in self.out[x])
            keys.update((w, x) for w in self.inc[x])
        return sorted(keys)

    def is_strongly_connected(self) -> bool:
        if not self.nodes:
            return False
        root = next(iter(self.nodes))
        for adj in (self.out, self.inc):
            seen = {root}
            stack = [root]
            while stack:
                x = stack.pop()
                for w in adj[x]:
                    if w not in seen:
                        seen.add(w)
                        stack.append(w)
            if len(seen) != len(self.nodes):
                return False
        return True


def compose_candidates(wg: WorkGraph, w_c: float, batch: int) -> list[MergeCandidate]:
    """Adjacent pairs scored by total deviation of incident arcs from quanta."""
    if len(wg.nodes) < 2:
        raise ValidationError("graph must have at least 2 nodes")
    cands = []
    for (a, b) in sorted(wg.adjacent_pairs()):
        score = 0.0
        for key in wg.incident_arcs(a, b):
            e = wg.arcs[key][0]
            score += abs(e - quantum_multiplicity(e, w_c) * w_c)
        cands.append(MergeCandidate(keep=a, drop=b, score=score))
    cands.sort(key=lambda c: (c.score, c.keep, c.drop))
    return cands[:batch]


def shrink_merge(wg: WorkGraph, candidate: MergeCandidate) -> WorkGraph:
    """Merge ``candidate.drop`` into ``candidate.keep``; pure (returns a copy).

    Inherited arcs of the dropped node chain the internal arc on, so e.g. a
    degree-2 series node a->u->b contracts to a->b with summed energy/time/
    distance.  Raises ``MergeRejectedError`` if the result is not strongly
    connected (cannot happen when contracting an adjacent pair of a strongly
    connected graph, but guards artificial inputs).
    """
    s, w = candidate.keep, candidate.drop
    if s not in wg.nodes or w not in wg.nodes:
        raise ValidationError(f"merge pair ({s}, {w}) not in graph")
    if w not in wg.out[s] and s not in wg.out[w]:
        raise ValidationError(f"merge pair ({s}, {w}) not adjacent")
    int_fwd = wg.arcs.get((w, s))  # continuation dropped-node -> survivor
    int_rev = wg.arcs.get((s, w))  # continuation survivor -> dropped-node

    new_arcs: dict[tuple[int, int], ArcData] = {
        k: d for k, d in wg.arcs.items() if s not in k and w not in k
    }

    def put(key: tuple[int, int], data: ArcData) -> None:
        if key[0] == key[1]:
            return
        if key not in new_arcs or data[0] < new_arcs[key][0]:
            new_arcs[key] = data

    for (u, v), d in wg.arcs.items():
        if {u, v} == {s, w}:
            continue  # internal arc, deleted
        if v == s or u == s:
            put((u, v), d)
        elif v == w:  # a -> dropped: chain the forward continuation
            if int_fwd is not None:
                d = (d[0] + int_fwd[0], d[1] + int_fwd[1], d[2] + int_fwd[2])
            put((u, s), d)
        elif u == w:  # dropped -> x: chain the reverse continuation
            if int_rev is not None:
                d = (d[0] + int_rev[0], d[1] + int_rev[1], d[2] + int_rev[2])
            put((s, v), d)

    merged = WorkGraph(wg.nodes - {w}, new_arcs)
    if not merged.is_strongly_connected():
        raise MergeRejectedError(f"merging {w} into {s} would disconnect the graph")
    return merged


@dataclass(frozen=True)
class SyntheticGraph:
    """Digraph whose every arc consumes exactly ``w_c`` Wh (stored implicitly).

    Nodes are compact ids ``0..n_nodes-1``; ``node_map[i]`` is the original
    node id, or -1 for synthetic split nodes, whose parent arc is recorded
    in ``split_parent``.
    """

    n_nodes: int
    arcs: tuple[tuple[int, int, float, float], ...]  # (tail, head, time_s, dist_m)
    w_c: float
    node_map: tuple[int, ...]
    split_parent: dict[int, tuple[int, int]] = field(default_factory=dict)

    def original_to_synth(self) -> dict[int, int]:
        return {orig: i for i, orig in enumerate(self.node_map) if orig >= 0}

    def surviving_original_ids(self) -> list[int]:
        return [orig for orig in self.node_map if orig >= 0]


def homogenize(wg: WorkGraph, w_c: float) -> SyntheticGraph:
    """Round each arc to k quanta and split it into k unit arcs."""
    originals = sorted(wg.nodes)
    idx = {orig: i for i, orig in enumerate(originals)}
    node_map = list(originals)
    split_parent: dict[int, tuple[int, int]] = {}
    arcs: list[tuple[int, int, float, float]] = []
    next_id = len(originals)
    for (u, v) in sorted(wg.arcs):
        e, t, d = wg.arcs[(u, v)]
        k = quantum_multiplicity(e, w_c)
        chain = [idx[u]]
        for _ in range(k - 1):
            chain.append(next_id)
            node_map.append(-1)
            split_parent[next_id] = (u, v)
            next_id += 1
        chain.append(idx[v])
        for a, b in zip(chain, chain[1:]):
            arcs.append((a, b, t / k, d / k))
    return SyntheticGraph(
        n_nodes=next_id,
        arcs=tuple(arcs),
        w_c=w_c,
        node_map=tuple(node_map),
        split_parent=split_parent,
    )


def _energy_matrix(n: int, arcs: Iterable[tuple[int, int, float]]) -> csr_matrix:
    rows, cols, vals = [], [], []
    for (u, v, e) in arcs:
        rows.append(u)
        cols.append(v)
        vals.append(e)
    return csr_matrix((vals, (rows, cols)), shape=(n, n))


def _road_energy_csr(graph: RoadGraph) -> tuple[csr_matrix, dict[int, int]]:
    ids = sorted(graph.node_ids())
    idx = {v: i for i, v in enumerate(ids)}
    triples: dict[tuple[int, int], float] = {}
    for a in graph.arcs:
        key = (idx[a.tail], idx[a.head])
        if key not in triples or a.energy_wh < triples[key]:
            triples[key] = a.energy_wh
    return _energy_matrix(len(ids), [(u, v, e) for (u, v), e in triples.items()]), idx


def _pruned_energy_csr(pruned) -> tuple[csr_matrix, dict[int, int]]:
    """Energy-weighted CSR plus original-id -> row-index map."""
    if isinstance(pruned, WorkGraph):
        ids = sorted(pruned.nodes)
        idx = {v: i for i, v in enumerate(ids)}
        mat = _energy_matrix(
            len(ids), [(idx[u], idx[v], d[0]) for (u, v), d in pruned.arcs.items()]
        )
        return mat, idx
    if isinstance(pruned, SyntheticGraph):
        mat = _energy_matrix(
            pruned.n_nodes, [(u, v, pruned.w_c) for (u, v, _, _) in pruned.arcs]
        )
        return mat, pruned.original_to_synth()
    raise TypeError(f"unsupported pruned graph type {type(pruned)!r}")


def _rounded_view(wg: WorkGraph, w_c: float) -> WorkGraph:
    """Working graph with energies rounded to quanta.

    Path energies equal those of the homogenized graph, without building
    the split nodes; used for candidate evaluation inside the loop.
    """
    arcs = {
        k: (quantum_multiplicity(d[0], w_c) * w_c, d[1], d[2])
        for k, d in wg.arcs.items()
    }
    return WorkGraph(wg.nodes, arcs)


def evaluate_error(
    original: RoadGraph,
    pruned,
    node_map: Sequence[int] | None = None,
    pairs: tuple[Sequence[int], Sequence[int]] | None = None,
) -> float:
    """Mean absolute shortest-path energy difference over surviving node pairs.

    ``pairs`` optionally restricts to (sources, targets) given as original
    node ids; default is all ordered pairs of surviving nodes.  Any pair
    unreachable in either graph yields ``inf``.
    """
    orig_mat, orig_idx = _road_energy_csr(original)
    pr_mat, pr_idx = _pruned_energy_csr(pruned)
    if node_map is not None:
        surviving = [v for v in node_map if v >= 0]
    else:
        surviving = sorted(pr_idx)
    for v in surviving:
        if v not in orig_idx or v not in pr_idx:
            raise ValidationError(f"node {v} missing from one of the graphs")
    if pairs is None:
        sources = targets = surviving
    else:
        sources = [v for v in pairs[0]]
        targets = [v for v in pairs[1]]
    if not sources or not targets:
        raise ValidationError("empty evaluation pair set")

    d_orig = dijkstra(orig_mat, indices=[orig_idx[s] for s in sources])
    d_pr = dijkstra(pr_mat, indices=[pr_idx[s] for s in sources])
    oc = [orig_idx[t] for t in targets]
    pc = [pr_idx[t] for t in targets]
    diffs = []
    for i, s in enumerate(sources):
        for j, t in enumerate(targets):
            if s == t:
                continue
            a, b = d_orig[i, oc[j]], d_pr[i, pc[j]]
            if not (np.isfinite(a) and np.isfinite(b)):
                return float("inf")
            diffs.append(abs(a - b))
    if not diffs:
        return 0.0
    return float(np.mean(np.asarray(diffs, dtype=np.float64)))


@dataclass
class PruneReport:
    original_nodes: int
    original_arcs: int
    synthetic_nodes: int
    synthetic_arcs: int
    mean_abs_error_wh: float
    error_trace: list[float]
    stopped_early: bool = False
    infeasible: bool = False

    def to_json(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.__dict__, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _fixed_sample(all_ids: Sequence[int], cfg: PruneConfig, seed: int) -> list[int]:
    rng = np.random.default_rng(seed)
    return [all_ids[i] for i in rng.permutation(len(all_ids))]


def prune(
    graph: RoadGraph, config: PruneConfig, seed: int = 0
) -> tuple[SyntheticGraph, PruneReport]:
    """Run the contract-evaluate-commit loop and final homogenization."""
    wg = WorkGraph.from_road_graph(graph)
    n0 = len(wg.nodes)
    if config.compression_ratio * n0 < 1:
        raise ValidationError("compression ratio removes less than one node")
    target = (1.0 - config.compression_ratio) * n0
    w_c = config.target_weight_wh
    sample_order = _fixed_sample(sorted(wg.nodes), config, seed)
    trace: list[float] = []
    stopped_early = False

    while len(wg.nodes) > target and len(wg.nodes) > 1:
        surviving = [v for v in sample_order if v in wg.nodes]
        sources = surviving[: config.sample_sources]
        targets = surviving[
            config.sample_sources : config.sample_sources + config.sample_targets
        ] or sources
        best: tuple[float, WorkGraph] | None = None
        for cand in compose_candidates(wg, w_c, config.candidate_batch):
            try:
                merged = shrink_merge(wg, cand)
            except MergeRejectedError:
                continue
            src = [s for s in sources if s in merged.nodes] or sorted(merged.nodes)[:1]
            tgt = [t for t in targets if t in merged.nodes] or src
            err = evaluate_error(
                graph, _rounded_view(merged, w_c), pairs=(src, tgt)
            )
            if best is None or err < best[0]:
                best = (err, merged)
        if best is None:
            stopped_early = True
            break
        trace.append(best[0])
        wg = best[1]

    synth = homogenize(wg, w_c)
    final_err = evaluate_error(graph, synth, node_map=synth.node_map)
    report = PruneReport(
        original_nodes=n0,
        original_arcs=len(graph.arcs),
        synthetic_nodes=synth.n_nodes,
        synthetic_arcs=len(synth.arcs),
        mean_abs_error_wh=final_err,
        error_trace=trace,
        stopped_early=stopped_early,
        infeasible=not math.isfinite(final_err),
    )
    return synth, report


def save_synthetic_graph(synth: SyntheticGraph, path: str | Path) -> None:
    """CSV in the road-graph format plus a ``#nodemap`` section.

    Split nodes have no coordinates; lat/lon are written as 0.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("#nodes\n")
        for i in range(synth.n_nodes):
            fh.write(f"{i},0,0\n")
        fh.write("#arcs\n")
        for (u, v, t, d) in synth.arcs:
            fh.write(f"{u},{v},{d!r},{t!r},{synth.w_c!r}\n")
        fh.write("#nodemap\n")
        for i, orig in enumerate(synth.node_map):
            fh.write(f"{i},{orig}\n")
