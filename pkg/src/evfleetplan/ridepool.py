"""Transformation of a request set into a pooling-aware equivalent set.

Two users heading the same way can share a vehicle: the first rider's
pickup is followed by the second's, then the two dropoffs in whichever
order costs fewer vehicle-seconds, subject to a per-user detour cap.
The fraction of users that actually find a partner within the waiting
window follows from the Poisson arrival rates of the two streams.
Matches are allocated greedily in order of decreasing savings.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .errors import ValidationError
from .ingest import Request, RequestSet

TTMatrix = Mapping[tuple[int, int], float]


@dataclass(frozen=True)
class PoolingConfig:
    max_wait_s: float
    max_delay_s: float
    capacity: int = 2

    def __post_init__(self):
        if self.max_wait_s < 0 or self.max_delay_s < 0:
            raise ValidationError("waiting and delay caps must be nonnegative")
        if self.capacity != 2:
            raise ValidationError(f"capacity K={self.capacity} unsupported (only K=2)")


def pair_probability(rates: Sequence[float], max_wait_s: float) -> float:
    """Chance that a random arriving user finds one partner from every other
    stream within the waiting window, for independent Poisson streams."""
    if not rates:
        raise ValidationError("rate list must be nonempty")
    for a in rates:
        if a <= 0:
            raise ValidationError("rates must be positive")
    total = sum(rates)
    p = 0.0
    for i, ai in enumerate(rates):
        prod = 1.0
        for j, aj in enumerate(rates):
            if j != i:
                prod *= 1.0 - math.exp(-aj * max_wait_s)
        p += (ai / total) * prod
    return p


@dataclass(frozen=True)
class CandidateMatch:
    first: int  # index of the first-picked-up request
    second: int
    sequence: tuple[int, int, int, int]  # o1, o2, dropoff order
    in_vehicle_s: tuple[float, float]  # per user, from their own pickup
    delays_s: tuple[float, float]
    savings_s: float  # vehicle-seconds saved per pooled user-pair


def _tt(tt: TTMatrix, a: int, b: int) -> float:
    if a == b:
        return 0.0
    try:
        return tt[(a, b)]
    except KeyError:
        raise ValidationError(f"travel-time matrix missing pair ({a}, {b})")


def best_sequence(
    m1: Request, m2: Request, tt: TTMatrix, config: PoolingConfig, idx1: int = 0, idx2: int = 1
) -> CandidateMatch | None:
    """Best pickup o1-o2 then dropoff sequencing; None when no order fits.

    Evaluates both dropoff orders, keeps the minimum pooled vehicle time
    whose per-user detours stay under the delay cap and which actually
    saves vehicle time over serving the requests separately.
    """
    o1, d1 = m1.origin, m1.destination
    o2, d2 = m2.origin, m2.destination
    leg_oo = _tt(tt, o1, o2)
    direct1 = _tt(tt, o1, d1)
    direct2 = _tt(tt, o2, d2)
    best: CandidateMatch | None = None
    best_pooled = math.inf
    for x, y in ((d1, d2), (d2, d1)):
        leg1 = _tt(tt, o2, x)
        leg2 = _tt(tt, x, y)
        pooled = leg_oo + leg1 + leg2
        if x == d1:
            iv1 = leg_oo + leg1
            iv2 = leg1 + leg2
        else:
            iv1 = leg_oo + leg1 + leg2
            iv2 = leg1
        delay1 = iv1 - direct1
        delay2 = iv2 - direct2
        if delay1 > config.max_delay_s or delay2 > config.max_delay_s:
            continue
        savings = direct1 + direct2 - pooled
        if savings <= 0:
            continue
        cand = CandidateMatch(
            first=idx1,
            second=idx2,
            sequence=(o1, o2, x, y),
            in_vehicle_s=(iv1, iv2),
            delays_s=(delay1, delay2),
            savings_s=savings,
        )
        if pooled < best_pooled:
            best = cand
            best_pooled = pooled
    return best


def enumerate_candidates(
    requests: RequestSet, tt: TTMatrix, config: PoolingConfig
) -> list[CandidateMatch]:
    """All ordered request pairs (self-pairs included) with positive savings,
    sorted by savings descending, ties by index pair."""
    out: list[CandidateMatch] = []
    reqs = requests.requests
    for i, m1 in enumerate(reqs):
        for j, m2 in enumerate(reqs):
            cand = best_sequence(m1, m2, tt, config, idx1=i, idx2=j)
            if cand is not None:
                out.append(cand)
    out.sort(key=lambda c: (-c.savings_s, c.first, c.second))
    return out


@dataclass(frozen=True)
class EquivalentRequest(Request):
    provenance: str = "solo"


@dataclass(frozen=True)
class PooledRequestSet:
    requests: tuple[EquivalentRequest, ...]
    source: RequestSet

    def total_rate(self) -> float:
        return sum(r.rate_per_s for r in self.requests)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["origin", "destination", "rate_per_h", "provenance"])
            for r in self.requests:
                w.writerow([r.origin, r.destination, repr(r.rate_per_s * 3600.0), r.provenance])


def greedy_assign(
    candidates: Sequence[CandidateMatch],
    requests: RequestSet,
    config: PoolingConfig,
) -> PooledRequestSet:
    """Walk candidates in savings order, matching what probability allows.

    Cross pairs match ``min(rho1, rho2) * P(rho1, rho2)`` of the remaining
    rates and emit three leg requests at that rate.  A self-pair splits its
    remaining stream in two and collapses to a single request carrying both
    users at half the matched user rate.  Residual rates are emitted as solo
    requests afterwards.
    """
    reqs = requests.requests
    remaining = [r.rate_per_s for r in reqs]
    out: list[EquivalentRequest] = []
    for cand in candidates:
        i, j = cand.first, cand.second
        o1, o2, x, y = cand.sequence
        if i == j:
            rho = remaining[i]
            if rho <= 0:
                continue
            half = rho / 2.0
            p = pair_probability((rho, rho), config.max_wait_s)
            matched = half * p  # per half-stream; two users consumed per match
            if matched <= 0:
                continue
            remaining[i] = rho - 2.0 * matched
            # o1==o2 and x==y: the three legs collapse to one vehicle request.
            out.append(
                EquivalentRequest(reqs[i].origin, reqs[i].destination, matched, f"self:{i}")
            )
        else:
            rho1, rho2 = remaining[i], remaining[j]
            if rho1 <= 0 or rho2 <= 0:
                continue
            p = pair_probability((rho1, rho2), config.max_wait_s)
            matched = min(rho1, rho2) * p
            if matched <= 0:
                continue
            remaining[i] = rho1 - matched
            remaining[j] = rho2 - matched
            prov = f"match:{i}-{j}"
            for a, b in ((o1, o2), (o2, x), (x, y)):
                if a != b:  # degenerate zero-length legs are never emitted
                    out.append(EquivalentRequest(a, b, matched, prov))
    for k, rho in enumerate(remaining):
        if rho > 0:
            out.append(EquivalentRequest(reqs[k].origin, reqs[k].destination, rho, f"solo:{k}"))
    return PooledRequestSet(tuple(out), source=requests)


def pool_requests(
    requests: RequestSet, tt: TTMatrix, config: PoolingConfig
) -> PooledRequestSet:
    """Full transformation: enumerate, rank and greedily allocate matches."""
    cands = enumerate_candidates(requests, tt, config)
    return greedy_assign(cands, requests, config)


def in_vehicle_vht(pooled: PooledRequestSet, tt: TTMatrix) -> float:
    """Vehicle-seconds per second spent with users on board, routing every
    equivalent request on its shortest path."""
    return sum(r.rate_per_s * _tt(tt, r.origin, r.destination) for r in pooled.requests)


def unpooled_vht(requests: RequestSet, tt: TTMatrix) -> float:
    return sum(r.rate_per_s * _tt(tt, r.origin, r.destination) for r in requests.requests)
