"""Feasibility pruning and one-relay path stitching.

A relay is worth measuring for an endpoint pair only if a detour through
it could beat the direct path even on an idealized speed-of-light fiber:

    2 * [t(n1, f) + t(f, n2)] <= RTT(n1, n2)

with t the one-way geodesic propagation delay. The check uses geometry
only, never measured relay RTTs, so a relay that is infeasible by position
stays excluded even when link measurements for it exist.

Stitching infers a relayed path's RTT as the sum of the two endpoint-relay
median RTTs of the same round; relay forwarding overhead is assumed zero,
a deliberate optimism of the pure RTT-sum model. Pair-rounds are
independent work units with no shared mutable state, so callers may fan
them out across workers and merge results by (pair, round) key.
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .data import MeasurementRound, NodeRecord, Pair, canonical_pair
from .errors import InputError
from .geo import DEFAULT_CONSTANTS, PropagationConstants, propagation_delay

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RelayedPath:
    """A stitched one-relay overlay path compared against the direct path."""

    pair: Pair
    relay: str
    relay_type: str
    round_id: int
    stitched_rtt: float
    direct_rtt: float

    @property
    def improvement(self) -> float:
        """Latency saved vs. the direct path; negative when the detour loses."""
        return self.direct_rtt - self.stitched_rtt


def detour_bound(n1: NodeRecord, relay: NodeRecord, n2: NodeRecord,
                 constants: PropagationConstants = DEFAULT_CONSTANTS) -> float:
    """Round-trip geodesic lower bound of the detour via ``relay``, in ms."""
    return 2.0 * (propagation_delay(n1.coord, relay.coord, constants)
                  + propagation_delay(relay.coord, n2.coord, constants))


def feasible_relays(
    n1: NodeRecord,
    n2: NodeRecord,
    direct_rtt: float,
    relays: Iterable[NodeRecord],
    constants: PropagationConstants = DEFAULT_CONSTANTS,
) -> list[NodeRecord]:
    """Relays whose speed-of-light detour bound does not exceed the direct RTT.

    Relays without coordinates cannot be bounded and are conservatively
    excluded (with a warning).
    """
    if n1.coord is None or n2.coord is None:
        raise InputError(f"endpoints {n1.node_id}, {n2.node_id} must be geotagged")
    if not (math.isfinite(direct_rtt) and direct_rtt > 0):
        raise InputError(f"direct_rtt must be positive, got {direct_rtt}")
    kept = []
    for relay in relays:
        if relay.coord is None:
            logger.warning("relay %s has no coordinates; excluded from feasibility", relay.node_id)
            continue
        if detour_bound(n1, relay, n2, constants) <= direct_rtt:
            kept.append(relay)
    return kept


def stitch(pair: Pair, relay: NodeRecord, rnd: MeasurementRound) -> Optional[RelayedPath]:
    """Stitch one relayed path from the round's medians.

    Returns None when either endpoint-relay link median is absent (too few
    valid pings). Raises when the pair has no direct median in this round:
    without a synchronous direct measurement the comparison is undefined
    and the pair-round must be skipped entirely.
    """
    direct = rnd.direct_medians.get(canonical_pair(*pair))
    if direct is None:
        raise InputError(f"pair {pair} has no direct median in round {rnd.round_id}")
    m1 = rnd.link_median(pair[0], relay.node_id)
    m2 = rnd.link_median(pair[1], relay.node_id)
    if m1 is None or m2 is None:
        return None
    return RelayedPath(
        pair=canonical_pair(*pair),
        relay=relay.node_id,
        relay_type=relay.relay_type,
        round_id=rnd.round_id,
        stitched_rtt=m1.median_ms + m2.median_ms,
        direct_rtt=direct.median_ms,
    )


def enumerate_paths(
    rnd: MeasurementRound,
    nodes_by_id: dict[str, NodeRecord],
    require_feasible: bool = True,
    constants: PropagationConstants = DEFAULT_CONSTANTS,
) -> list[RelayedPath]:
    """All stitched paths of a round: every measured pair x every usable relay.

    A (pair, round) participates only when its direct median was measured.
    With ``require_feasible`` (the default) relays that fail the geometric
    bound for a pair are skipped even if their link medians exist.
    """
    relay_ids = sorted(set().union(*rnd.relays_by_type.values())) if rnd.relays_by_type else []
    relays = [nodes_by_id[r] for r in relay_ids if r in nodes_by_id]
    delay_cache: dict[tuple[str, str], float] = {}

    def one_way(e: NodeRecord, r: NodeRecord) -> float:
        key = (e.node_id, r.node_id)
        if key not in delay_cache:
            delay_cache[key] = propagation_delay(e.coord, r.coord, constants)
        return delay_cache[key]

    paths: list[RelayedPath] = []
    for pair in sorted(rnd.direct_medians):
        direct = rnd.direct_medians[pair]
        e1, e2 = nodes_by_id[pair[0]], nodes_by_id[pair[1]]
        for relay in relays:
            if require_feasible:
                if relay.coord is None:
                    logger.warning("relay %s has no coordinates; excluded", relay.node_id)
                    continue
                bound = 2.0 * (one_way(e1, relay) + one_way(e2, relay))
                if bound > direct.median_ms:
                    continue
            path = stitch(pair, relay, rnd)
            if path is not None:
                paths.append(path)
    return paths


def best_relay_per_type(
    pair: Pair, rnd: MeasurementRound, relays: Iterable[NodeRecord]
) -> dict[str, RelayedPath]:
    """Minimum-latency stitched path per relay type for one pair-round.

    Ties break on the lexicographically smallest relay node_id so reports
    are reproducible.
    """
    best: dict[str, RelayedPath] = {}
    for relay in relays:
        path = stitch(pair, relay, rnd)
        if path is None:
            continue
        cur = best.get(path.relay_type)
        if cur is None or (path.stitched_rtt, path.relay) < (cur.stitched_rtt, cur.relay):
            best[path.relay_type] = path
    return best


def best_paths(paths: Iterable[RelayedPath]) -> list[RelayedPath]:
    """Reduce stitched paths to the best one per (pair, round, relay type)."""
    best: dict[tuple[Pair, int, str], RelayedPath] = {}
    for p in paths:
        key = (p.pair, p.round_id, p.relay_type)
        cur = best.get(key)
        if cur is None or (p.stitched_rtt, p.relay) < (cur.stitched_rtt, cur.relay):
            best[key] = p
    return [best[k] for k in sorted(best)]


# ---------------------------------------------------------------------------
# Serialization: JSON lines of RelayedPath, the analytics input format
# ---------------------------------------------------------------------------

def save_paths(paths: Iterable[RelayedPath], path: str | Path) -> None:
    with open(path, "w") as fh:
        for p in paths:
            fh.write(json.dumps({
                "pair": list(p.pair),
                "relay": p.relay,
                "relay_type": p.relay_type,
                "round_id": p.round_id,
                "stitched_rtt": p.stitched_rtt,
                "direct_rtt": p.direct_rtt,
                "improvement": p.improvement,
            }, sort_keys=True) + "\n")


def load_paths(path: str | Path) -> list[RelayedPath]:
    paths = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            paths.append(RelayedPath(
                pair=canonical_pair(*obj["pair"]),
                relay=obj["relay"],
                relay_type=obj["relay_type"],
                round_id=int(obj["round_id"]),
                stitched_rtt=float(obj["stitched_rtt"]),
                direct_rtt=float(obj["direct_rtt"]),
            ))
    return paths
