"""Latency-improvement analysis over stitched overlay paths.

The unit of analysis is a *case*: one (endpoint pair, round) with a
measured direct median. All percentages are fractions of the total case
count, which is why the case definition is explicit here rather than
implied. A case counts as improved by a relay when the stitched path beats
the direct one by at least the improvement floor (1 ms by default);
sub-millisecond wins are treated as noise.

Analyses are pure folds over immutable path records; partial aggregates
merge associatively, so callers may parallelize and combine.
"""

import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from . import engine
from .data import MeasurementRound, NodeRecord, Pair, RELAY_TYPES
from .engine import RelayedPath
from .errors import EmptyDomainError, InputError
from .selection import FacilityRecord

DEFAULT_IMPROVEMENT_FLOOR_MS = 1.0
DEFAULT_VOIP_THRESHOLD_MS = 320.0

CaseKey = tuple[Pair, int]


@dataclass(frozen=True)
class Case:
    """One (pair, round) with a measured direct median."""

    pair: Pair
    round_id: int
    direct_rtt: float

    @property
    def key(self) -> CaseKey:
        return (self.pair, self.round_id)


def cases_from_rounds(rounds: Iterable[MeasurementRound]) -> list[Case]:
    cases = []
    for rnd in rounds:
        for pair in sorted(rnd.direct_medians):
            cases.append(Case(pair=pair, round_id=rnd.round_id,
                              direct_rtt=rnd.direct_medians[pair].median_ms))
    return cases


@dataclass
class ImprovementCdf:
    """Empirical CDF of the best-relay latency savings for one relay type."""

    relay_type: str
    points: list[tuple[float, float]]
    improved_fraction_of_total: float


@dataclass
class CoverageCurve:
    """Cumulative fraction of cases improved by the top-k relays of a type."""

    relay_type: str
    ranked_relays: list[str]
    cumulative_coverage: list[float]


@dataclass
class CountryEffect:
    """Improvement fractions conditioned on the relay changing country."""

    relay_type: str
    foreign_fraction: Optional[float]
    same_country_fraction: Optional[float]
    foreign_cases: int
    same_country_cases: int


@dataclass
class VoipReport:
    threshold_ms: float
    direct_fraction: float
    relayed_fraction: dict[str, float]


@dataclass
class StabilityEntry:
    pair: Pair
    kind: str  # "direct" | "link"
    cv: float
    n_rounds: int


@dataclass
class StabilityReport:
    entries: list[StabilityEntry]
    summary: dict[str, dict]


def _group_by_type(paths: Iterable[RelayedPath]) -> dict[str, list[RelayedPath]]:
    groups: dict[str, list[RelayedPath]] = {}
    for p in paths:
        groups.setdefault(p.relay_type, []).append(p)
    return groups


def improvement_cdf(
    paths: Iterable[RelayedPath],
    total_cases: int,
    floor_ms: float = DEFAULT_IMPROVEMENT_FLOOR_MS,
) -> dict[str, ImprovementCdf]:
    """Per type: the CDF of best-relay improvements plus the improved share.

    ``paths`` may be all stitched paths or already-best ones; they are
    reduced to the best path per (pair, round, type) either way. The
    improved fraction is over *all* cases, including those the type never
    managed to relay.
    """
    if total_cases <= 0:
        raise EmptyDomainError("no cases with a measured direct median")
    out: dict[str, ImprovementCdf] = {}
    for relay_type, group in sorted(_group_by_type(engine.best_paths(paths)).items()):
        improvements = sorted(p.improvement for p in group if p.improvement >= floor_ms)
        n = len(improvements)
        points: list[tuple[float, float]] = []
        for i, value in enumerate(improvements, start=1):
            frac = i / n
            if points and points[-1][0] == value:
                points[-1] = (value, frac)
            else:
                points.append((value, frac))
        out[relay_type] = ImprovementCdf(
            relay_type=relay_type,
            points=points,
            improved_fraction_of_total=n / total_cases,
        )
    return out


def redundancy_per_pair(
    paths: Iterable[RelayedPath],
    total_cases: int,
    floor_ms: float = DEFAULT_IMPROVEMENT_FLOOR_MS,
) -> dict[str, float]:
    """Per type: median number of improving relays per case.

    Counts every relay (not only the best) whose stitched path improves a
    case; cases with no improving relay of the type count as zero.
    """
    if total_cases <= 0:
        raise EmptyDomainError("no cases with a measured direct median")
    counts: dict[str, dict[CaseKey, int]] = {}
    for p in paths:
        if p.improvement >= floor_ms:
            per_case = counts.setdefault(p.relay_type, {})
            key = (p.pair, p.round_id)
            per_case[key] = per_case.get(key, 0) + 1
    medians: dict[str, float] = {}
    for relay_type in sorted(counts):
        values = list(counts[relay_type].values())
        values.extend([0] * (total_cases - len(values)))
        medians[relay_type] = statistics.median(values)
    return medians


def _improved_case_sets(
    paths: Iterable[RelayedPath], floor_ms: float
) -> dict[str, dict[str, set[CaseKey]]]:
    """type -> relay -> set of case keys the relay improves."""
    sets: dict[str, dict[str, set[CaseKey]]] = {}
    for p in paths:
        if p.improvement >= floor_ms:
            sets.setdefault(p.relay_type, {}).setdefault(p.relay, set()).add((p.pair, p.round_id))
    return sets


def top_relay_coverage(
    paths: Iterable[RelayedPath],
    total_cases: int,
    max_k: int = 100,
    floor_ms: float = DEFAULT_IMPROVEMENT_FLOOR_MS,
    method: str = "frequency",
) -> dict[str, CoverageCurve]:
    """Per type: fraction of all cases improved by the k best relays.

    Relays rank by how many distinct cases they improve ("frequency", the
    default). The alternative "greedy" method picks, at each step, the
    relay adding the most not-yet-covered cases; it is available for
    comparison but is not used by the standard reports.
    """
    if total_cases <= 0:
        raise EmptyDomainError("no cases with a measured direct median")
    if method not in ("frequency", "greedy"):
        raise InputError(f"unknown ranking method {method!r}")
    curves: dict[str, CoverageCurve] = {}
    for relay_type, by_relay in sorted(_improved_case_sets(paths, floor_ms).items()):
        ranked: list[str] = []
        coverage: list[float] = []
        covered: set[CaseKey] = set()
        if method == "frequency":
            order = sorted(by_relay, key=lambda r: (-len(by_relay[r]), r))[:max_k]
            for relay in order:
                ranked.append(relay)
                covered |= by_relay[relay]
                coverage.append(len(covered) / total_cases)
        else:
            remaining = dict(by_relay)
            while remaining and len(ranked) < max_k:
                relay = min(remaining, key=lambda r: (-len(remaining[r] - covered), r))
                if not remaining[relay] - covered:
                    # nothing new to gain; keep deterministic order anyway
                    relay = min(remaining)
                ranked.append(relay)
                covered |= remaining.pop(relay)
                coverage.append(len(covered) / total_cases)
        curves[relay_type] = CoverageCurve(relay_type, ranked, coverage)
    return curves


def threshold_coverage(
    paths: Iterable[RelayedPath],
    total_cases: int,
    thresholds: Sequence[float],
    relay_subset: Optional[dict[str, set[str]]] = None,
    floor_ms: float = DEFAULT_IMPROVEMENT_FLOOR_MS,
) -> dict[str, list[tuple[float, float]]]:
    """Per type: fraction of all cases whose best in-subset improvement
    meets each threshold.

    A case must first qualify as improved at all (>= floor), then clear
    the threshold, so every curve starts at the improved fraction and is
    nonincreasing in the threshold.
    """
    if total_cases <= 0:
        raise EmptyDomainError("no cases with a measured direct median")
    best_imp: dict[str, dict[CaseKey, float]] = {}
    for p in paths:
        if relay_subset is not None and p.relay not in relay_subset.get(p.relay_type, set()):
            continue
        per_case = best_imp.setdefault(p.relay_type, {})
        key = (p.pair, p.round_id)
        if key not in per_case or p.improvement > per_case[key]:
            per_case[key] = p.improvement
    out: dict[str, list[tuple[float, float]]] = {}
    for relay_type in sorted(best_imp):
        values = list(best_imp[relay_type].values())
        curve = []
        for tau in thresholds:
            bar = max(tau, floor_ms)
            curve.append((tau, sum(1 for v in values if v >= bar) / total_cases))
        out[relay_type] = curve
    return out


@dataclass
class FacilityRow:
    rank: int
    facility_id: Optional[int]
    name: str
    city: str
    country: str
    pct_improved_cases: float
    pct_improved_pairs: float
    relay_count: int
    net_count: Optional[int]
    ixp_count: Optional[int]
    cloud_services: Optional[bool]


def facility_report(
    paths: Iterable[RelayedPath],
    facilities: Iterable[FacilityRecord],
    nodes: Iterable[NodeRecord],
    top_n: int = 20,
    floor_ms: float = DEFAULT_IMPROVEMENT_FLOOR_MS,
) -> list[FacilityRow]:
    """Facilities hosting the top-n most frequently improving COR relays.

    Two denominators are reported because improved cases can be tallied
    per (pair, round) or collapsed per pair: ``pct_improved_cases`` uses
    pair-rounds, ``pct_improved_pairs`` distinct pairs. Relays without
    facility metadata land in an "unknown" row.
    """
    path_list = [p for p in paths if p.relay_type == "COR"]
    by_relay_cases: dict[str, set[CaseKey]] = {}
    by_relay_pairs: dict[str, set[Pair]] = {}
    for p in path_list:
        if p.improvement >= floor_ms:
            by_relay_cases.setdefault(p.relay, set()).add((p.pair, p.round_id))
            by_relay_pairs.setdefault(p.relay, set()).add(p.pair)
    if not by_relay_cases:
        return []
    total_cases = len(set().union(*by_relay_cases.values()))
    total_pairs = len(set().union(*by_relay_pairs.values()))
    top_relays = sorted(by_relay_cases, key=lambda r: (-len(by_relay_cases[r]), r))[:top_n]

    facility_of = {n.node_id: n.facility_id for n in nodes}
    registry = {f.facility_id: f for f in facilities}
    grouped_cases: dict[Optional[int], set[CaseKey]] = {}
    grouped_pairs: dict[Optional[int], set[Pair]] = {}
    grouped_relays: dict[Optional[int], int] = {}
    for relay in top_relays:
        fid = facility_of.get(relay)
        grouped_cases.setdefault(fid, set()).update(by_relay_cases[relay])
        grouped_pairs.setdefault(fid, set()).update(by_relay_pairs[relay])
        grouped_relays[fid] = grouped_relays.get(fid, 0) + 1

    order = sorted(
        grouped_cases,
        key=lambda fid: (-len(grouped_cases[fid]), fid is None, fid if fid is not None else 0),
    )
    rows = []
    for rank, fid in enumerate(order, start=1):
        fac = registry.get(fid) if fid is not None else None
        rows.append(FacilityRow(
            rank=rank,
            facility_id=fid,
            name=fac.name if fac else "unknown",
            city=fac.city if fac else "",
            country=fac.country if fac else "",
            pct_improved_cases=100.0 * len(grouped_cases[fid]) / total_cases,
            pct_improved_pairs=100.0 * len(grouped_pairs[fid]) / total_pairs,
            relay_count=grouped_relays[fid],
            net_count=fac.net_count if fac else None,
            ixp_count=fac.ixp_count if fac else None,
            cloud_services=fac.cloud_services if fac else None,
        ))
    return rows


def country_change_effect(
    paths: Iterable[RelayedPath],
    nodes: Iterable[NodeRecord],
    floor_ms: float = DEFAULT_IMPROVEMENT_FLOOR_MS,
) -> dict[str, CountryEffect]:
    """Per type: improvement fraction when the best relay changes country.

    Uses the minimum-latency relay per case; splits cases by whether that
    relay sits outside both endpoint countries ("foreign") or shares a
    country with one of them. Empty splits report None.
    """
    country = {n.node_id: n.country for n in nodes}
    out: dict[str, CountryEffect] = {}
    for relay_type, group in sorted(_group_by_type(engine.best_paths(paths)).items()):
        foreign_total = foreign_improved = same_total = same_improved = 0
        for p in group:
            endpoint_countries = {country[p.pair[0]], country[p.pair[1]]}
            improved = p.improvement >= floor_ms
            if country[p.relay] in endpoint_countries:
                same_total += 1
                same_improved += improved
            else:
                foreign_total += 1
                foreign_improved += improved
        out[relay_type] = CountryEffect(
            relay_type=relay_type,
            foreign_fraction=foreign_improved / foreign_total if foreign_total else None,
            same_country_fraction=same_improved / same_total if same_total else None,
            foreign_cases=foreign_total,
            same_country_cases=same_total,
        )
    return out


def voip_threshold_fraction(
    paths: Iterable[RelayedPath],
    cases: Sequence[Case],
    threshold_ms: float = DEFAULT_VOIP_THRESHOLD_MS,
) -> VoipReport:
    """Fractions of cases above a poor-quality RTT threshold.

    ``direct_fraction`` counts direct medians above the threshold;
    ``relayed_fraction[type]`` counts cases where even min(direct, best
    stitched path of the type) stays above it.
    """
    if not cases:
        raise EmptyDomainError("no cases with a measured direct median")
    best_stitched: dict[str, dict[CaseKey, float]] = {}
    for p in engine.best_paths(paths):
        best_stitched.setdefault(p.relay_type, {})[(p.pair, p.round_id)] = p.stitched_rtt
    direct_over = sum(1 for c in cases if c.direct_rtt > threshold_ms)
    relayed: dict[str, float] = {}
    for relay_type in sorted(best_stitched):
        per_case = best_stitched[relay_type]
        over = 0
        for c in cases:
            effective = min(c.direct_rtt, per_case.get(c.key, c.direct_rtt))
            if effective > threshold_ms:
                over += 1
        relayed[relay_type] = over / len(cases)
    return VoipReport(
        threshold_ms=threshold_ms,
        direct_fraction=direct_over / len(cases),
        relayed_fraction=relayed,
    )


def _cdf_median(points: list[tuple[float, float]]) -> Optional[float]:
    """Lower median read off an empirical CDF: smallest x with F(x) >= 1/2."""
    for x, f in points:
        if f >= 0.5:
            return x
    return points[-1][0] if points else None


def _quantile(sorted_values: list[float], q: float) -> float:
    """Linear-interpolation quantile over pre-sorted data (0 <= q <= 1)."""
    n = len(sorted_values)
    if n == 1:
        return sorted_values[0]
    pos = q * (n - 1)
    lo = int(pos)
    hi = min(lo + 1, n - 1)
    frac = pos - lo
    return sorted_values[lo] * (1 - frac) + sorted_values[hi] * frac


def stability_cv(
    rounds: Iterable[MeasurementRound],
    population: bool = True,
    below: float = 0.10,
) -> StabilityReport:
    """Coefficient of variation of each pair's per-round medians.

    CV = standard deviation of the medians divided by their mean, for
    every pair measured in at least two rounds. Direct pairs and
    endpoint-relay link pairs are reported separately since their
    stability can differ. Population standard deviation by default;
    ``population=False`` switches to the sample estimator.
    """
    series: dict[tuple[str, Pair], list[float]] = {}
    for rnd in rounds:
        for pair, median in rnd.direct_medians.items():
            series.setdefault(("direct", pair), []).append(median.median_ms)
        for pair, median in rnd.link_medians.items():
            series.setdefault(("link", pair), []).append(median.median_ms)
    entries: list[StabilityEntry] = []
    for (kind, pair) in sorted(series):
        values = series[(kind, pair)]
        if len(values) < 2:
            continue
        sd = statistics.pstdev(values) if population else statistics.stdev(values)
        entries.append(StabilityEntry(
            pair=pair, kind=kind, cv=sd / statistics.fmean(values), n_rounds=len(values),
        ))
    summary: dict[str, dict] = {}
    for kind in ("direct", "link"):
        cvs = sorted(e.cv for e in entries if e.kind == kind)
        if not cvs:
            summary[kind] = {"count": 0}
            continue
        summary[kind] = {
            "count": len(cvs),
            "fraction_below_10pct": sum(1 for c in cvs if c < below) / len(cvs),
            "quantiles": {
                "min": cvs[0],
                "p25": _quantile(cvs, 0.25),
                "median": _quantile(cvs, 0.50),
                "p75": _quantile(cvs, 0.75),
                "p90": _quantile(cvs, 0.90),
                "max": cvs[-1],
            },
        }
    return StabilityReport(entries=entries, summary=summary)


# ---------------------------------------------------------------------------
# Orchestration and plot-ready outputs
# ---------------------------------------------------------------------------

@dataclass
class AnalysisParams:
    improvement_floor_ms: float = DEFAULT_IMPROVEMENT_FLOOR_MS
    voip_threshold_ms: float = DEFAULT_VOIP_THRESHOLD_MS
    top_k: int = 100
    top_subset_size: int = 10
    coverage_method: str = "frequency"
    thresholds: list[float] = field(default_factory=lambda: [float(t) for t in range(0, 101)])
    facility_top_n: int = 20


@dataclass
class AnalysisResult:
    params: AnalysisParams
    total_cases: int
    cdfs: dict[str, ImprovementCdf]
    redundancy: dict[str, float]
    coverage: dict[str, CoverageCurve]
    threshold_all: dict[str, list[tuple[float, float]]]
    threshold_top: dict[str, list[tuple[float, float]]]
    facility_rows: list[FacilityRow]
    country_effect: dict[str, CountryEffect]
    voip: VoipReport
    stability: StabilityReport


def analyze_rounds(
    rounds: Sequence[MeasurementRound],
    nodes: Sequence[NodeRecord],
    facilities: Sequence[FacilityRecord] = (),
    params: AnalysisParams = AnalysisParams(),
) -> AnalysisResult:
    """Stitch every round and run the full analysis battery."""
    nodes_by_id = {n.node_id: n for n in nodes}
    paths: list[RelayedPath] = []
    for rnd in rounds:
        paths.extend(engine.enumerate_paths(rnd, nodes_by_id))
    cases = cases_from_rounds(rounds)
    total = len(cases)
    if total == 0:
        raise EmptyDomainError("no cases with a measured direct median")
    floor = params.improvement_floor_ms
    coverage = top_relay_coverage(paths, total, params.top_k, floor, params.coverage_method)
    top_subset = {
        relay_type: set(curve.ranked_relays[: params.top_subset_size])
        for relay_type, curve in coverage.items()
    }
    return AnalysisResult(
        params=params,
        total_cases=total,
        cdfs=improvement_cdf(paths, total, floor),
        redundancy=redundancy_per_pair(paths, total, floor),
        coverage=coverage,
        threshold_all=threshold_coverage(paths, total, params.thresholds, None, floor),
        threshold_top=threshold_coverage(paths, total, params.thresholds, top_subset, floor),
        facility_rows=facility_report(paths, facilities, nodes, params.facility_top_n, floor),
        country_effect=country_change_effect(paths, nodes, floor),
        voip=voip_threshold_fraction(paths, cases, params.voip_threshold_ms),
        stability=stability_cv(rounds),
    )


def _write_csv(path: Path, header: list[str], rows: Iterable[Sequence]) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def write_reports(result: AnalysisResult, out_dir: str | Path) -> list[Path]:
    """Write plot-ready CSVs plus summary.json; returns the files written.

    Output is byte-deterministic for identical inputs: rows are emitted in
    sorted order and floats with full repr precision.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def emit(name: str, header: list[str], rows) -> None:
        target = out / name
        _write_csv(target, header, rows)
        written.append(target)

    for relay_type in RELAY_TYPES:
        cdf = result.cdfs.get(relay_type)
        emit(f"cdf_{relay_type}.csv", ["improvement_ms", "fraction"],
             [(repr(x), repr(f)) for x, f in (cdf.points if cdf else [])])
        curve = result.coverage.get(relay_type)
        emit(f"coverage_{relay_type}.csv", ["k", "fraction"],
             [(k + 1, repr(f)) for k, f in enumerate(curve.cumulative_coverage)] if curve else [])
        for subset, table in (("top10", result.threshold_top), ("all", result.threshold_all)):
            rows = table.get(relay_type, [])
            emit(f"threshold_{relay_type}_{subset}.csv", ["tau_ms", "fraction"],
                 [(repr(t), repr(f)) for t, f in rows])

    emit("facilities.csv",
         ["rank", "facility_id", "name", "city", "country", "pct_improved_cases",
          "pct_improved_pairs", "relay_count", "net_count", "ixp_count", "cloud_services"],
         [(r.rank, r.facility_id if r.facility_id is not None else "", r.name, r.city,
           r.country, repr(r.pct_improved_cases), repr(r.pct_improved_pairs), r.relay_count,
           r.net_count if r.net_count is not None else "",
           r.ixp_count if r.ixp_count is not None else "",
           "" if r.cloud_services is None else ("true" if r.cloud_services else "false"))
          for r in result.facility_rows])

    emit("stability.csv", ["node_a", "node_b", "kind", "cv", "n_rounds"],
         [(e.pair[0], e.pair[1], e.kind, repr(e.cv), e.n_rounds)
          for e in result.stability.entries])

    summary = {
        "total_cases": result.total_cases,
        "improvement_floor_ms": result.params.improvement_floor_ms,
        "improved_fraction": {
            t: (result.cdfs[t].improved_fraction_of_total if t in result.cdfs else 0.0)
            for t in RELAY_TYPES
        },
        "median_improvement_ms": {
            t: (_cdf_median(result.cdfs[t].points) if t in result.cdfs else None)
            for t in RELAY_TYPES
        },
        "redundancy_median": {t: result.redundancy.get(t, 0.0) for t in RELAY_TYPES},
        "voip": {
            "threshold_ms": result.voip.threshold_ms,
            "direct_fraction": result.voip.direct_fraction,
            "relayed_fraction": {
                t: result.voip.relayed_fraction.get(t) for t in RELAY_TYPES
            },
        },
        "country_change": {
            t: ({
                "foreign_fraction": eff.foreign_fraction,
                "same_country_fraction": eff.same_country_fraction,
                "foreign_cases": eff.foreign_cases,
                "same_country_cases": eff.same_country_cases,
            } if (eff := result.country_effect.get(t)) else None)
            for t in RELAY_TYPES
        },
        "stability": result.stability.summary,
    }
    target = out / "summary.json"
    with open(target, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(target)
    return written
