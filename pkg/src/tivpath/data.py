"""Core data model: nodes, raw ping samples, per-round medians, rounds.

Measurement pairs are unordered; ping direction was found not to matter
(see :func:`direction_symmetry_report`), so the canonical key for a pair
orders the two node ids lexicographically. Lost pings are stored rather
than dropped, which keeps the valid-reply count auditable.

Rounds are append-only while being ingested and treated as immutable by
every analysis stage, so concurrent readers need no coordination.
"""

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional

from .errors import EmptyDomainError, InputError, ValidationError
from .geo import GeoCoord

RELAY_TYPES = ("COR", "PLR", "RAR_eye", "RAR_other")
ROLES = ("endpoint", "relay")

PINGS_PER_WINDOW = 6
MIN_VALID_FOR_MEDIAN = 3

Pair = tuple[str, str]


def canonical_pair(a: str, b: str) -> Pair:
    """Order a node-id pair lexicographically; pairs are unordered keys."""
    if a == b:
        raise InputError(f"pair endpoints must differ, got {a!r} twice")
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class NodeRecord:
    """An endpoint or relay with identity, network location and geolocation."""

    node_id: str
    asn: int
    country: str
    role: str
    relay_type: str
    coord: Optional[GeoCoord]
    facility_id: Optional[int] = None
    site_id: Optional[str] = None
    eyeball_verified: bool = False

    def __post_init__(self):
        if not self.node_id:
            raise InputError("node_id must be non-empty")
        if self.asn <= 0:
            raise InputError(f"asn must be positive, got {self.asn}")
        if self.role not in ROLES:
            raise InputError(f"unknown role {self.role!r}")
        if self.role == "endpoint":
            if self.relay_type != "none":
                raise InputError("endpoints must have relay_type 'none'")
            if not self.eyeball_verified:
                raise InputError("endpoints must be verified eyeball nodes")
        else:
            if self.relay_type not in RELAY_TYPES:
                raise InputError(f"unknown relay_type {self.relay_type!r}")
        if self.relay_type == "COR" and self.facility_id is None:
            raise InputError("COR relays require facility_id")
        if self.relay_type == "PLR" and self.site_id is None:
            raise InputError("PLR relays require site_id")
        if self.facility_id is not None and self.facility_id <= 0:
            raise InputError(f"facility_id must be positive, got {self.facility_id}")


@dataclass(frozen=True)
class RttSample:
    """One ping observation; ``rtt_ms`` is None when the ping was lost."""

    src: str
    dst: str
    round_id: int
    slot: int
    rtt_ms: Optional[float]

    def __post_init__(self):
        if self.round_id < 0:
            raise InputError(f"round_id must be >= 0, got {self.round_id}")
        if not 0 <= self.slot < PINGS_PER_WINDOW:
            raise InputError(f"slot must be in [0, {PINGS_PER_WINDOW - 1}], got {self.slot}")
        if self.rtt_ms is not None and not (math.isfinite(self.rtt_ms) and self.rtt_ms > 0):
            raise InputError(f"rtt_ms must be positive or lost, got {self.rtt_ms}")

    @property
    def lost(self) -> bool:
        return self.rtt_ms is None

    @property
    def pair(self) -> Pair:
        return canonical_pair(self.src, self.dst)


@dataclass(frozen=True)
class MedianRtt:
    """Per-pair, per-round median over the valid pings of one window."""

    pair: Pair
    round_id: int
    median_ms: float
    valid_count: int

    def __post_init__(self):
        if self.valid_count < MIN_VALID_FOR_MEDIAN:
            raise InputError(f"valid_count must be >= {MIN_VALID_FOR_MEDIAN}")
        if not (math.isfinite(self.median_ms) and self.median_ms > 0):
            raise InputError(f"median_ms must be positive, got {self.median_ms}")


def aggregate_median(samples: Iterable[RttSample]) -> Optional[MedianRtt]:
    """Reduce one pair-round's samples to their median RTT.

    Returns None when fewer than three pings produced a reply; such windows
    carry too little signal for a meaningful median. The median (not the
    mean) is used so that heavy outliers, which do occur, cannot distort
    the representative value. Even counts average the two middle values.
    """
    batch = list(samples)
    if not batch:
        return None
    pair = batch[0].pair
    round_id = batch[0].round_id
    for s in batch[1:]:
        if s.pair != pair or s.round_id != round_id:
            raise InputError(
                f"samples mix pairs/rounds: {s.pair}@{s.round_id} vs {pair}@{round_id}"
            )
    valid = sorted(s.rtt_ms for s in batch if not s.lost)
    if len(valid) < MIN_VALID_FOR_MEDIAN:
        return None
    n = len(valid)
    if n % 2 == 1:
        med = valid[n // 2]
    else:
        med = (valid[n // 2 - 1] + valid[n // 2]) / 2.0
    return MedianRtt(pair=pair, round_id=round_id, median_ms=med, valid_count=n)


def direction_symmetry_report(samples: Iterable[RttSample], tolerance: float = 0.05) -> float:
    """Fraction of bidirectionally-measured pairs whose direction gap is small.

    For every unordered pair with valid replies in both directions, compare
    the per-direction medians; the pair counts as symmetric when
    ``|m_fwd - m_rev| / min(m_fwd, m_rev) <= tolerance``. A fraction near 1
    justifies treating pairs as unordered.
    """
    by_direction: dict[tuple[str, str], list[float]] = {}
    for s in samples:
        if not s.lost:
            by_direction.setdefault((s.src, s.dst), []).append(s.rtt_ms)
    evaluated = 0
    symmetric = 0
    seen: set[Pair] = set()
    for (src, dst) in sorted(by_direction):
        pair = canonical_pair(src, dst)
        if pair in seen:
            continue
        fwd = by_direction.get((pair[0], pair[1]))
        rev = by_direction.get((pair[1], pair[0]))
        if not fwd or not rev:
            continue
        seen.add(pair)
        m_fwd = _plain_median(fwd)
        m_rev = _plain_median(rev)
        evaluated += 1
        if abs(m_fwd - m_rev) / min(m_fwd, m_rev) <= tolerance:
            symmetric += 1
    if evaluated == 0:
        raise EmptyDomainError("no pair was measured in both directions")
    return symmetric / evaluated


def _plain_median(values: list[float]) -> float:
    v = sorted(values)
    n = len(v)
    return v[n // 2] if n % 2 == 1 else (v[n // 2 - 1] + v[n // 2]) / 2.0


@dataclass
class MeasurementRound:
    """One workflow iteration: sampled nodes plus the medians measured for them.

    Start times are nominally one cadence apart (12 h by default) but the
    store tolerates gaps; timestamps are metadata only and nothing
    interpolates across rounds.
    """

    round_id: int
    start_time: datetime
    endpoints: set[str] = field(default_factory=set)
    relays_by_type: dict[str, set[str]] = field(default_factory=dict)
    direct_medians: dict[Pair, MedianRtt] = field(default_factory=dict)
    link_medians: dict[Pair, MedianRtt] = field(default_factory=dict)

    def registered_nodes(self) -> set[str]:
        nodes = set(self.endpoints)
        for ids in self.relays_by_type.values():
            nodes |= ids
        return nodes

    def add_direct_median(self, median: MedianRtt) -> None:
        self._check_membership(median)
        self.direct_medians[median.pair] = median

    def add_link_median(self, median: MedianRtt) -> None:
        self._check_membership(median)
        self.link_medians[median.pair] = median

    def _check_membership(self, median: MedianRtt) -> None:
        known = self.registered_nodes()
        for node in median.pair:
            if node not in known:
                raise InputError(
                    f"median references {node!r} not registered in round {self.round_id}"
                )
        if median.round_id != self.round_id:
            raise InputError(
                f"median for round {median.round_id} added to round {self.round_id}"
            )

    def direct_median(self, a: str, b: str) -> Optional[MedianRtt]:
        return self.direct_medians.get(canonical_pair(a, b))

    def link_median(self, a: str, b: str) -> Optional[MedianRtt]:
        return self.link_medians.get(canonical_pair(a, b))


# ---------------------------------------------------------------------------
# File formats
#
# nodes.csv:   node_id,asn,country,role,relay_type,lat,lon,facility_id,site_id,eyeball_verified
# samples.csv: src,dst,round,slot,rtt_ms      (rtt_ms: positive decimal or "lost")
# ---------------------------------------------------------------------------

NODES_HEADER = [
    "node_id", "asn", "country", "role", "relay_type",
    "lat", "lon", "facility_id", "site_id", "eyeball_verified",
]
SAMPLES_HEADER = ["src", "dst", "round", "slot", "rtt_ms"]
LOST_MARKER = "lost"

_BOOL_STRINGS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _parse_bool(text: str) -> bool:
    try:
        return _BOOL_STRINGS[text.strip().lower()]
    except KeyError:
        raise InputError(f"expected a boolean, got {text!r}") from None


def load_nodes(path: str | Path) -> list[NodeRecord]:
    """Load a node inventory CSV, reporting every malformed row at once."""
    records: list[NodeRecord] = []
    problems: list[tuple[int, str]] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != NODES_HEADER:
            raise ValidationError(str(path), [(1, f"bad header {reader.fieldnames}")])
        for lineno, row in enumerate(reader, start=2):
            try:
                coord = None
                if row["lat"].strip() or row["lon"].strip():
                    coord = GeoCoord(float(row["lat"]), float(row["lon"]))
                records.append(NodeRecord(
                    node_id=row["node_id"].strip(),
                    asn=int(row["asn"]),
                    country=row["country"].strip(),
                    role=row["role"].strip(),
                    relay_type=row["relay_type"].strip(),
                    coord=coord,
                    facility_id=int(row["facility_id"]) if row["facility_id"].strip() else None,
                    site_id=row["site_id"].strip() or None,
                    eyeball_verified=_parse_bool(row["eyeball_verified"]),
                ))
            except (InputError, ValueError, KeyError, TypeError) as exc:
                problems.append((lineno, str(exc)))
    if problems:
        raise ValidationError(str(path), problems)
    return records


def save_nodes(records: Iterable[NodeRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(NODES_HEADER)
        for n in records:
            writer.writerow([
                n.node_id, n.asn, n.country, n.role, n.relay_type,
                repr(n.coord.lat) if n.coord else "",
                repr(n.coord.lon) if n.coord else "",
                n.facility_id if n.facility_id is not None else "",
                n.site_id if n.site_id is not None else "",
                "true" if n.eyeball_verified else "false",
            ])


def load_samples(path: str | Path) -> list[RttSample]:
    """Load a raw ping sample CSV, reporting every malformed row at once."""
    samples: list[RttSample] = []
    problems: list[tuple[int, str]] = []
    seen: set[tuple[str, str, int, int]] = set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SAMPLES_HEADER:
            raise ValidationError(str(path), [(1, f"bad header {reader.fieldnames}")])
        for lineno, row in enumerate(reader, start=2):
            try:
                raw = row["rtt_ms"].strip()
                rtt = None if raw == LOST_MARKER else float(raw)
                sample = RttSample(
                    src=row["src"].strip(),
                    dst=row["dst"].strip(),
                    round_id=int(row["round"]),
                    slot=int(row["slot"]),
                    rtt_ms=rtt,
                )
                key = (sample.src, sample.dst, sample.round_id, sample.slot)
                if key in seen:
                    raise InputError(f"duplicate sample for {key}")
                seen.add(key)
                samples.append(sample)
            except (InputError, ValueError, KeyError, TypeError) as exc:
                problems.append((lineno, str(exc)))
    if problems:
        raise ValidationError(str(path), problems)
    return samples


def save_samples(samples: Iterable[RttSample], path: str | Path) -> None:
    # repr() keeps full float precision so a replay reproduces medians bit-exactly
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SAMPLES_HEADER)
        for s in samples:
            writer.writerow([
                s.src, s.dst, s.round_id, s.slot,
                LOST_MARKER if s.lost else repr(s.rtt_ms),
            ])


def utc_timestamp(text: str) -> datetime:
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)
