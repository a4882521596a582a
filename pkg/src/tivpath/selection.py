"""Endpoint and relay candidate selection.

Covers three concerns: choosing eyeball endpoints under a user-coverage
cutoff, the five-rule filter chain that weeds stale colocation-relay
candidates, and the per-round stratified samplers (per facility, per site,
per country). Everything is pure given (inputs, seed), so relay types can
be sampled in parallel.

The filter rules consume pre-gathered evidence (pingability probes,
IP-to-AS mappings, registry membership, Looking-Glass RTTs) from input
files rather than probing live services, which keeps the chain replayable.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from ._util import derived_rng
from .data import NodeRecord
from .errors import InputError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_LG_THRESHOLD_MS = 1.0
DEFAULT_COVERAGE_CUTOFF_PCT = 10.0


@dataclass(frozen=True)
class CoverageRecord:
    """Internet user coverage of one AS within one country, in percent."""

    asn: int
    country: str
    user_coverage: float

    def __post_init__(self):
        if not 0.0 <= self.user_coverage <= 100.0:
            raise InputError(f"user_coverage {self.user_coverage} outside [0, 100]")


@dataclass(frozen=True)
class ColoCandidate:
    """A candidate colocation-relay IP together with its filter evidence."""

    ip: str
    asn_claimed: int
    candidate_facilities: frozenset[int]
    pingable: bool
    asn_current: Optional[int]
    moas: bool
    facility_member_asns: dict[int, frozenset[int]]
    lg_min_rtt: Optional[float]

    def __post_init__(self):
        if not self.candidate_facilities:
            raise InputError(f"{self.ip}: candidate_facilities must be non-empty")


@dataclass(frozen=True)
class FacilityRecord:
    """Registry metadata for one colocation facility."""

    facility_id: int
    name: str
    city: str
    country: str
    active_in_registry: bool
    net_count: int
    ixp_count: int
    cloud_services: bool

    def __post_init__(self):
        if self.net_count < 0 or self.ixp_count < 0:
            raise InputError(f"facility {self.facility_id}: counts must be non-negative")


@dataclass(frozen=True)
class CoveragePoint:
    cutoff: float
    country_count: int
    as_count: int


def eyeball_coverage_curve(
    records: Iterable[CoverageRecord], cutoffs: Sequence[float]
) -> list[CoveragePoint]:
    """Count covered (AS, country) tuples and countries per coverage cutoff.

    An (asn, country) tuple counts at cutoff theta when its coverage is
    strictly greater than theta; a country counts when it has at least one
    such AS. Both counts are nonincreasing in the cutoff.
    """
    recs = list(records)
    points = []
    for cutoff in cutoffs:
        if not 0.0 <= cutoff <= 100.0:
            raise InputError(f"cutoff {cutoff} outside [0, 100]")
        keep = [r for r in recs if r.user_coverage > cutoff]
        points.append(CoveragePoint(
            cutoff=cutoff,
            country_count=len({r.country for r in keep}),
            as_count=len({(r.asn, r.country) for r in keep}),
        ))
    return points


def _eyeball_two_step(
    by_country: dict[str, dict[int, list[str]]], rng_seed: int, stream: str
) -> set[str]:
    """Pick one AS per country, then one node from that AS.

    Only ASes that actually have at least one usable node are eligible, so
    a country is skipped only when none of its ASes has a node.
    """
    rng = derived_rng(rng_seed, stream)
    chosen: set[str] = set()
    for country in sorted(by_country):
        eligible = {asn: ids for asn, ids in by_country[country].items() if ids}
        if not eligible:
            logger.warning("country %s has no usable node in any verified AS; skipped", country)
            continue
        asn = rng.choice(sorted(eligible))
        chosen.add(rng.choice(sorted(eligible[asn])))
    return chosen


def select_eyeball_endpoints(
    records: Iterable[CoverageRecord],
    nodes: Iterable[NodeRecord],
    rng_seed: int,
) -> set[str]:
    """Sample one endpoint per country from the verified eyeball tuples.

    ``records`` must already be restricted to verified eyeball ASes (above
    the coverage cutoff); ``nodes`` provides the per-(asn, country) probe
    inventory. Deterministic for a fixed seed; at most one endpoint per
    country.
    """
    verified = {(r.asn, r.country) for r in records}
    by_country: dict[str, dict[int, list[str]]] = {}
    for r in records:
        by_country.setdefault(r.country, {}).setdefault(r.asn, [])
    for n in nodes:
        if n.role == "endpoint" and n.eyeball_verified and (n.asn, n.country) in verified:
            by_country[n.country][n.asn].append(n.node_id)
    return _eyeball_two_step(by_country, rng_seed, "endpoints")


def sample_endpoints(nodes: Iterable[NodeRecord], rng_seed: int) -> set[str]:
    """Per-round endpoint sampling straight from a verified node inventory."""
    by_country: dict[str, dict[int, list[str]]] = {}
    for n in nodes:
        if n.role == "endpoint" and n.eyeball_verified:
            by_country.setdefault(n.country, {}).setdefault(n.asn, []).append(n.node_id)
    return _eyeball_two_step(by_country, rng_seed, "endpoints")


def sample_relays(nodes: Iterable[NodeRecord], relay_type: str, rng_seed: int) -> set[str]:
    """Per-round relay sampling, stratified by what anchors each relay type.

    COR: 1 to 3 relays per facility (uniform, capped by availability) so
    every facility is covered while intra-facility variance is sampled.
    PLR: 1 to 2 per site. RAR_eye: one per country via the eyeball two-step.
    RAR_other: one per country, uniform over that country's relays.
    Empty groups are skipped. Deterministic per seed.
    """
    pool = [n for n in nodes if n.role == "relay" and n.relay_type == relay_type]
    rng = derived_rng(rng_seed, "relays", relay_type)
    chosen: set[str] = set()
    if relay_type == "COR":
        by_facility: dict[int, list[str]] = {}
        for n in pool:
            by_facility.setdefault(n.facility_id, []).append(n.node_id)
        for fid in sorted(by_facility):
            ids = sorted(by_facility[fid])
            k = min(rng.randint(1, 3), len(ids))
            chosen.update(rng.sample(ids, k))
    elif relay_type == "PLR":
        by_site: dict[str, list[str]] = {}
        for n in pool:
            by_site.setdefault(n.site_id, []).append(n.node_id)
        for site in sorted(by_site):
            ids = sorted(by_site[site])
            k = min(rng.randint(1, 2), len(ids))
            chosen.update(rng.sample(ids, k))
    elif relay_type == "RAR_eye":
        by_country: dict[str, dict[int, list[str]]] = {}
        for n in pool:
            by_country.setdefault(n.country, {}).setdefault(n.asn, []).append(n.node_id)
        chosen = _eyeball_two_step(by_country, rng_seed, f"relays/{relay_type}")
    elif relay_type == "RAR_other":
        by_country_ids: dict[str, list[str]] = {}
        for n in pool:
            by_country_ids.setdefault(n.country, []).append(n.node_id)
        for country in sorted(by_country_ids):
            chosen.add(rng.choice(sorted(by_country_ids[country])))
    else:
        raise InputError(f"unknown relay_type {relay_type!r}")
    return chosen


# ---------------------------------------------------------------------------
# Colo candidate filter chain
# ---------------------------------------------------------------------------

RULE_SINGLE_FACILITY = "Single-facility & active PeeringDB presence"
RULE_PINGABLE = "Pingability"
RULE_SAME_OWNERSHIP = "Same IP-ownership"
RULE_ACTIVE_PRESENCE = "Active Facility presence of ASN"
RULE_RTT_GEOLOCATION = "RTT-based geolocation"

FILTER_RULES = (
    RULE_SINGLE_FACILITY,
    RULE_PINGABLE,
    RULE_SAME_OWNERSHIP,
    RULE_ACTIVE_PRESENCE,
    RULE_RTT_GEOLOCATION,
)


@dataclass
class FilterChainResult:
    survivors: list[ColoCandidate]
    # survivor count after each rule, in rule order; attrition only makes
    # sense for this fixed order
    counts: list[tuple[str, int]]
    rejections: list[tuple[str, str]] = field(default_factory=list)

    @property
    def initial_count(self) -> int:
        return len(self.survivors) + len(self.rejections)


def colo_filter_chain(
    candidates: Iterable[ColoCandidate],
    facilities: Iterable[FacilityRecord],
    lg_threshold_ms: float = DEFAULT_LG_THRESHOLD_MS,
) -> FilterChainResult:
    """Apply the five staleness filters, in order, and report attrition.

    1. exactly one candidate facility, still active in the registry;
    2. the IP still answers pings;
    3. the IP's current origin AS matches the claimed one and is not MOAS;
    4. that AS is still a member of the facility per the registry;
    5. the minimum same-city Looking-Glass RTT is present and at most
       ``lg_threshold_ms`` (default 1 ms), confirming the location.

    Nothing errors out of the chain: every dropped candidate is recorded
    with the rule that rejected it.
    """
    registry = {f.facility_id: f for f in facilities}

    def single_facility(c: ColoCandidate) -> bool:
        if len(c.candidate_facilities) != 1:
            return False
        fid = next(iter(c.candidate_facilities))
        fac = registry.get(fid)
        return fac is not None and fac.active_in_registry

    def pingable(c: ColoCandidate) -> bool:
        return c.pingable

    def same_ownership(c: ColoCandidate) -> bool:
        return c.asn_current is not None and c.asn_current == c.asn_claimed and not c.moas

    def active_presence(c: ColoCandidate) -> bool:
        fid = next(iter(c.candidate_facilities))
        return c.asn_claimed in c.facility_member_asns.get(fid, frozenset())

    def rtt_geolocation(c: ColoCandidate) -> bool:
        return c.lg_min_rtt is not None and c.lg_min_rtt <= lg_threshold_ms

    rules = [
        (RULE_SINGLE_FACILITY, single_facility),
        (RULE_PINGABLE, pingable),
        (RULE_SAME_OWNERSHIP, same_ownership),
        (RULE_ACTIVE_PRESENCE, active_presence),
        (RULE_RTT_GEOLOCATION, rtt_geolocation),
    ]

    alive = list(candidates)
    counts: list[tuple[str, int]] = []
    rejections: list[tuple[str, str]] = []
    for name, predicate in rules:
        survivors = []
        for c in alive:
            if predicate(c):
                survivors.append(c)
            else:
                rejections.append((c.ip, name))
        alive = survivors
        counts.append((name, len(alive)))
    return FilterChainResult(survivors=alive, counts=counts, rejections=rejections)


# ---------------------------------------------------------------------------
# File formats
#
# coverage.csv:   asn,country,coverage_pct
# facilities.csv: facility_id,name,city,country,active,net_count,ixp_count,cloud_services
# candidates.json: array of ColoCandidate objects (field names as the type)
# ---------------------------------------------------------------------------

COVERAGE_HEADER = ["asn", "country", "coverage_pct"]
FACILITIES_HEADER = [
    "facility_id", "name", "city", "country", "active",
    "net_count", "ixp_count", "cloud_services",
]


def load_coverage(path: str | Path) -> list[CoverageRecord]:
    import csv

    records: list[CoverageRecord] = []
    problems: list[tuple[int, str]] = []
    seen: set[tuple[int, str]] = set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != COVERAGE_HEADER:
            raise ValidationError(str(path), [(1, f"bad header {reader.fieldnames}")])
        for lineno, row in enumerate(reader, start=2):
            try:
                rec = CoverageRecord(
                    asn=int(row["asn"]),
                    country=row["country"].strip(),
                    user_coverage=float(row["coverage_pct"]),
                )
                key = (rec.asn, rec.country)
                if key in seen:
                    raise InputError(f"duplicate coverage record for {key}")
                seen.add(key)
                records.append(rec)
            except (InputError, ValueError, KeyError) as exc:
                problems.append((lineno, str(exc)))
    if problems:
        raise ValidationError(str(path), problems)
    return records


def load_facilities(path: str | Path) -> list[FacilityRecord]:
    import csv

    from .data import _parse_bool

    records: list[FacilityRecord] = []
    problems: list[tuple[int, str]] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != FACILITIES_HEADER:
            raise ValidationError(str(path), [(1, f"bad header {reader.fieldnames}")])
        for lineno, row in enumerate(reader, start=2):
            try:
                records.append(FacilityRecord(
                    facility_id=int(row["facility_id"]),
                    name=row["name"].strip(),
                    city=row["city"].strip(),
                    country=row["country"].strip(),
                    active_in_registry=_parse_bool(row["active"]),
                    net_count=int(row["net_count"]),
                    ixp_count=int(row["ixp_count"]),
                    cloud_services=_parse_bool(row["cloud_services"]),
                ))
            except (InputError, ValueError, KeyError) as exc:
                problems.append((lineno, str(exc)))
    if problems:
        raise ValidationError(str(path), problems)
    return records


def load_colo_candidates(path: str | Path) -> list[ColoCandidate]:
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise ValidationError(str(path), [(1, "expected a JSON array")])
    candidates: list[ColoCandidate] = []
    problems: list[tuple[int, str]] = []
    for idx, obj in enumerate(raw):
        try:
            candidates.append(ColoCandidate(
                ip=obj["ip"],
                asn_claimed=int(obj["asn_claimed"]),
                candidate_facilities=frozenset(int(f) for f in obj["candidate_facilities"]),
                pingable=bool(obj["pingable"]),
                asn_current=None if obj.get("asn_current") is None else int(obj["asn_current"]),
                moas=bool(obj["moas"]),
                facility_member_asns={
                    int(fid): frozenset(int(a) for a in asns)
                    for fid, asns in obj.get("facility_member_asns", {}).items()
                },
                lg_min_rtt=None if obj.get("lg_min_rtt") is None else float(obj["lg_min_rtt"]),
            ))
        except (InputError, ValueError, KeyError, TypeError) as exc:
            problems.append((idx + 1, f"candidate #{idx}: {exc}"))
    if problems:
        raise ValidationError(str(path), problems)
    return candidates
