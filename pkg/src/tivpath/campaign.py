"""Round planning and execution.

A campaign repeats a four-step workflow every cadence interval (12 h by
default): (1) sample the round's endpoints, (2) ping every endpoint pair
directly and take medians, (3) keep only the geometrically feasible
relays per pair based on those medians, (4) ping endpoint-relay links
(re-measuring each direct pair in the same window so the comparison is
synchronous) and aggregate medians again.

Each measurement window lasts 30 minutes with 6 pings per pair at
5-minute offsets; a pair needs at least 3 replies for a median. Failed
pings are not retried, the >=3-valid rule already tolerates them.

Backends answer individual pings. The simulator and the file replay are
the tested paths; a thin live-platform client exists behind the same
interface but is never required. Measurement tasks are independent, so an
executor may fan them out concurrently and merge the answers by
(pair, slot) key; this implementation simply walks them in order.
"""

import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from itertools import combinations
from pathlib import Path
from typing import Callable, Iterable, Optional, Protocol

from ._util import derive_seed
from .data import (
    MeasurementRound,
    NodeRecord,
    Pair,
    RELAY_TYPES,
    RttSample,
    aggregate_median,
    canonical_pair,
)
from .engine import feasible_relays
from .errors import BackendError, InputError, InvalidSpecError
from .selection import sample_endpoints, sample_relays

DEFAULT_EPOCH = datetime(2024, 1, 1, tzinfo=timezone.utc)


@dataclass(frozen=True)
class CampaignPlan:
    """Cadence and window parameters plus the master sampling seed."""

    seed: int = 0
    cadence_hours: float = 12.0
    window_min: float = 30.0
    interval_min: float = 5.0
    pings_per_pair: int = 6
    epoch: datetime = DEFAULT_EPOCH

    def __post_init__(self):
        from .data import PINGS_PER_WINDOW

        if not 1 <= self.pings_per_pair <= PINGS_PER_WINDOW:
            raise InvalidSpecError(
                f"pings_per_pair must be in [1, {PINGS_PER_WINDOW}], got {self.pings_per_pair}"
            )
        if self.pings_per_pair * self.interval_min > self.window_min + self.interval_min:
            raise InvalidSpecError(
                f"{self.pings_per_pair} pings at {self.interval_min}-minute intervals "
                f"do not fit a {self.window_min}-minute window"
            )
        if self.cadence_hours * 60.0 < self.window_min:
            raise InvalidSpecError("cadence must be at least one measurement window")

    def slot_offsets_min(self) -> list[float]:
        return [slot * self.interval_min for slot in range(self.pings_per_pair)]

    def endpoint_seed(self, round_id: int) -> int:
        return derive_seed(self.seed, "round", round_id, "endpoints")

    def relay_seed(self, round_id: int, relay_type: str) -> int:
        return derive_seed(self.seed, "round", round_id, "relays", relay_type)


@dataclass(frozen=True)
class Task:
    """One step of a round; ping tasks carry the pair, slot and offset."""

    kind: str  # select-endpoints | ping-direct | compute-feasible | ping-path
    src: Optional[str] = None
    dst: Optional[str] = None
    slot: Optional[int] = None
    offset_min: Optional[float] = None
    seed: Optional[int] = None

    def to_json(self) -> dict:
        return {k: v for k, v in {
            "kind": self.kind, "src": self.src, "dst": self.dst,
            "slot": self.slot, "offset_min": self.offset_min, "seed": self.seed,
        }.items() if v is not None}


@dataclass
class RoundPlan:
    round_id: int
    start_time: datetime
    plan: CampaignPlan
    endpoints: list[str]
    relays_by_type: dict[str, list[str]]
    tasks: list[Task]


def plan_round(plan: CampaignPlan, nodes: Iterable[NodeRecord], round_id: int) -> RoundPlan:
    """Lay out one round as an ordered task list.

    Sampling happens here (deterministically from the plan seed and round
    id) so the task list is concrete. Step 4 lists a synchronous direct
    re-measurement for every pair plus one ping series per
    (endpoint, relay) link; links whose relay turns out infeasible for
    every pair are skipped at execution time.
    """
    inventory = list(nodes)
    endpoints = sorted(sample_endpoints(inventory, plan.endpoint_seed(round_id)))
    relays_by_type = {
        relay_type: sorted(sample_relays(inventory, relay_type,
                                         plan.relay_seed(round_id, relay_type)))
        for relay_type in RELAY_TYPES
    }
    offsets = plan.slot_offsets_min()
    tasks: list[Task] = [Task(kind="select-endpoints", seed=plan.endpoint_seed(round_id))]
    for a, b in combinations(endpoints, 2):
        for slot, off in enumerate(offsets):
            tasks.append(Task(kind="ping-direct", src=a, dst=b, slot=slot, offset_min=off))
    tasks.append(Task(kind="compute-feasible"))
    for a, b in combinations(endpoints, 2):
        for slot, off in enumerate(offsets):
            tasks.append(Task(kind="ping-path", src=a, dst=b, slot=slot, offset_min=off))
    all_relays = sorted(set().union(*relays_by_type.values())) if relays_by_type else []
    for endpoint in endpoints:
        for relay in all_relays:
            for slot, off in enumerate(offsets):
                tasks.append(Task(kind="ping-path", src=endpoint, dst=relay,
                                  slot=slot, offset_min=off))
    start = plan.epoch + timedelta(hours=plan.cadence_hours * round_id)
    return RoundPlan(round_id=round_id, start_time=start, plan=plan,
                     endpoints=endpoints, relays_by_type=relays_by_type, tasks=tasks)


class Backend(Protocol):
    def measure(self, src: str, dst: str, round_id: int, slot: int) -> Optional[float]:
        """RTT of one ping in milliseconds, or None when the ping was lost."""


class FileReplayBackend:
    """Answers pings from a previously persisted sample set."""

    def __init__(self, samples: Iterable[RttSample]):
        self._table: dict[tuple[Pair, int, int], Optional[float]] = {}
        for s in samples:
            self._table[(s.pair, s.round_id, s.slot)] = s.rtt_ms

    def measure(self, src: str, dst: str, round_id: int, slot: int) -> Optional[float]:
        # absent rows count as lost: a replay of partial data still executes
        return self._table.get((canonical_pair(src, dst), round_id, slot))


class LivePlatformClient:
    """Thin client for a real measurement platform, behind the backend interface.

    The transport is a callable (src, dst, round_id, slot) -> rtt or None;
    production would wrap an HTTP API here, tests inject canned responses
    via :func:`mock_transport`. Acceptance flows never require network
    access.
    """

    def __init__(self, transport: Optional[Callable[[str, str, int, int], Optional[float]]] = None):
        self._transport = transport

    def measure(self, src: str, dst: str, round_id: int, slot: int) -> Optional[float]:
        if self._transport is None:
            raise BackendError("live platform client has no transport configured")
        try:
            return self._transport(src, dst, round_id, slot)
        except Exception as exc:  # noqa: BLE001 - backend faults become BackendError
            raise BackendError(f"live measurement failed for {src}->{dst}: {exc}") from exc


def mock_transport(fixtures: dict) -> Callable[[str, str, int, int], Optional[float]]:
    """Build a canned transport from ``{"a|b|round|slot": rtt-or-null}`` fixtures."""

    def transport(src, dst, round_id, slot):
        a, b = canonical_pair(src, dst)
        return fixtures.get(f"{a}|{b}|{round_id}|{slot}")

    return transport


@dataclass
class RoundResult:
    round: MeasurementRound
    samples: list[RttSample]


def execute_plan(
    round_plan: RoundPlan,
    backend: Backend,
    nodes: Iterable[NodeRecord],
) -> RoundResult:
    """Run one planned round against a backend.

    Partial data is tolerated: pairs with fewer than 3 valid replies simply
    produce no median. The direct re-measurement of step 4 queries the
    same (pair, round, slot) keys as step 2, so a deterministic backend
    answers identically and each sample is recorded once.
    """
    plan = round_plan.plan
    nodes_by_id = {n.node_id: n for n in nodes}
    if not nodes_by_id:
        raise InputError("execute_plan requires the node inventory for feasibility checks")

    rnd = MeasurementRound(
        round_id=round_plan.round_id,
        start_time=round_plan.start_time,
        endpoints=set(round_plan.endpoints),
        relays_by_type={t: set(ids) for t, ids in round_plan.relays_by_type.items()},
    )
    samples: dict[tuple[Pair, int], RttSample] = {}

    def ping_window(a: str, b: str) -> list[RttSample]:
        pair = canonical_pair(a, b)
        window = []
        for slot in range(plan.pings_per_pair):
            key = (pair, slot)
            if key not in samples:
                rtt = backend.measure(pair[0], pair[1], round_plan.round_id, slot)
                samples[key] = RttSample(src=pair[0], dst=pair[1],
                                         round_id=round_plan.round_id, slot=slot, rtt_ms=rtt)
            window.append(samples[key])
        return window

    # step 2: direct pings and medians
    pairs = list(combinations(round_plan.endpoints, 2))
    for a, b in pairs:
        median = aggregate_median(ping_window(a, b))
        if median is not None:
            rnd.add_direct_median(median)

    # step 3: feasible relays per pair, from the step-2 medians
    relay_records = [nodes_by_id[r] for ids in round_plan.relays_by_type.values()
                     for r in sorted(ids) if r in nodes_by_id]
    to_measure: set[tuple[str, str]] = set()
    for a, b in pairs:
        direct = rnd.direct_median(a, b)
        if direct is None:
            continue  # unmeasurable pair-round; skipped entirely
        for relay in feasible_relays(nodes_by_id[a], nodes_by_id[b],
                                     direct.median_ms, relay_records):
            to_measure.add((a, relay.node_id))
            to_measure.add((b, relay.node_id))

    # step 4: synchronous direct re-measurement plus the feasible links
    for a, b in pairs:
        if rnd.direct_median(a, b) is not None:
            ping_window(a, b)
    for endpoint, relay in sorted(to_measure):
        median = aggregate_median(ping_window(endpoint, relay))
        if median is not None:
            rnd.add_link_median(median)

    ordered = [samples[key] for key in sorted(samples)]
    return RoundResult(round=rnd, samples=ordered)


def run_campaign(
    plan: CampaignPlan,
    nodes: list[NodeRecord],
    backend: Backend,
    n_rounds: int,
) -> tuple[list[MeasurementRound], list[RttSample]]:
    """Execute ``n_rounds`` rounds and collect rounds plus raw samples."""
    rounds: list[MeasurementRound] = []
    samples: list[RttSample] = []
    for round_id in range(n_rounds):
        result = execute_plan(plan_round(plan, nodes, round_id), backend, nodes)
        rounds.append(result.round)
        samples.extend(result.samples)
    return rounds, samples


def backend_from_args(
    kind: str,
    world_spec_path: Optional[str] = None,
    samples_path: Optional[str] = None,
    fixtures_path: Optional[str] = None,
) -> Backend:
    """Construct a backend from CLI-style arguments."""
    from .data import load_samples
    from .synth import World, load_world_spec

    if kind == "simulator":
        if not world_spec_path:
            raise BackendError("simulator backend requires --spec")
        return World(load_world_spec(world_spec_path))
    if kind == "file-replay":
        if not samples_path:
            raise BackendError("file-replay backend requires --samples")
        return FileReplayBackend(load_samples(samples_path))
    if kind == "live-mock":
        if not fixtures_path:
            raise BackendError("live-mock backend requires --fixtures")
        with open(fixtures_path) as fh:
            return LivePlatformClient(mock_transport(json.load(fh)))
    raise BackendError(f"unknown backend {kind!r}")


# ---------------------------------------------------------------------------
# Round persistence (JSON lines, one round per line)
# ---------------------------------------------------------------------------

def save_rounds(rounds: Iterable[MeasurementRound], path: str | Path) -> None:
    with open(path, "w") as fh:
        for rnd in rounds:
            fh.write(json.dumps({
                "round_id": rnd.round_id,
                "start_time": rnd.start_time.isoformat(),
                "endpoints": sorted(rnd.endpoints),
                "relays_by_type": {t: sorted(ids) for t, ids in sorted(rnd.relays_by_type.items())},
                "direct_medians": [
                    [pair[0], pair[1], m.median_ms, m.valid_count]
                    for pair, m in sorted(rnd.direct_medians.items())
                ],
                "link_medians": [
                    [pair[0], pair[1], m.median_ms, m.valid_count]
                    for pair, m in sorted(rnd.link_medians.items())
                ],
            }, sort_keys=True) + "\n")


def load_rounds(path: str | Path) -> list[MeasurementRound]:
    from .data import MedianRtt, utc_timestamp

    rounds = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            rnd = MeasurementRound(
                round_id=int(obj["round_id"]),
                start_time=utc_timestamp(obj["start_time"]),
                endpoints=set(obj["endpoints"]),
                relays_by_type={t: set(ids) for t, ids in obj["relays_by_type"].items()},
            )
            for a, b, median, count in obj["direct_medians"]:
                rnd.add_direct_median(MedianRtt(pair=canonical_pair(a, b),
                                                round_id=rnd.round_id,
                                                median_ms=float(median),
                                                valid_count=int(count)))
            for a, b, median, count in obj["link_medians"]:
                rnd.add_link_median(MedianRtt(pair=canonical_pair(a, b),
                                              round_id=rnd.round_id,
                                              median_ms=float(median),
                                              valid_count=int(count)))
            rounds.append(rnd)
    return rounds
