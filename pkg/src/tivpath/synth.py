"""Synthetic measurement campaigns with known ground truth.

The generator builds a small planet: country centers scattered over a
sphere, eyeball endpoints near them, colocation facilities (some of them
designated hubs), research sites, and per-country relays. Every noiseless
RTT is the geodesic round-trip lower bound times a multiplicative
inflation factor >= 1, which mimics how policy routing stretches paths
without ever breaking the speed-of-light floor. Links that touch a hub
facility get their inflation discounted by ``hub_bonus``, so detours
through hubs are the cheap ones, and that is what plants triangle
inequality violations.

When ``tiv_fraction`` is set, the generator additionally pins the direct
RTT of each country pair so that exactly that fraction of pairs is
improvable through a hub relay (and no relay of any type improves the
rest). Relays inside one facility are colocated: they share the facility
coordinate and per-endpoint inflation, so any per-round sample of the
facility preserves the planted violations. Everything is deterministic
per seed; rounds derive stable sub-seeds, so they could be generated in
parallel.
"""

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ._util import derived_rng
from .data import NodeRecord, Pair, RELAY_TYPES, RttSample, canonical_pair
from .errors import InputError, InvalidSpecError
from .geo import GeoCoord, propagation_delay

# Margins used by the planting construction. Planted pairs get a direct
# RTT comfortably above the best hub detour; non-planted pairs sit at
# least this safety factor below their best detour, so 2% per-sample
# noise cannot flip a pair's improvement status.
PLANT_LIFT_REL = 0.3
PLANT_LIFT_ABS_MS = 2.0
NONPLANT_SAFETY = 0.05

PLR_NODES_PER_SITE = 2


@dataclass(frozen=True)
class InflationModel:
    """Distribution of the per-pair inflation factor over the geodesic floor.

    ``constant`` yields exactly ``value`` (1.0 gives a pure metric space);
    ``lognormal`` yields 1 + max(min_overhead, LogNormal(mu, sigma)), i.e.
    always strictly above the floor with a configurable minimum overhead.
    """

    kind: str = "lognormal"
    value: float = 1.0
    mu: float = -1.0
    sigma: float = 0.75
    min_overhead: float = 0.08

    def __post_init__(self):
        if self.kind not in ("constant", "lognormal"):
            raise InvalidSpecError(f"unknown inflation kind {self.kind!r}")
        if self.kind == "constant" and self.value < 1.0:
            raise InvalidSpecError(f"inflation factor must be >= 1, got {self.value}")
        if self.min_overhead < 0 or self.sigma < 0:
            raise InvalidSpecError("min_overhead and sigma must be non-negative")

    def draw(self, rng) -> float:
        if self.kind == "constant":
            return self.value
        return 1.0 + max(self.min_overhead, rng.lognormvariate(self.mu, self.sigma))

    def hub_floor(self) -> float:
        """Lowest factor a hub discount may reach.

        Discounted links stay on the model's support: otherwise a hub
        sitting near a pair's geodesic would pin that pair's best detour
        to the physical floor and leave no margin between "improved" and
        "not improved" for sampling noise to respect.
        """
        if self.kind == "constant":
            return 1.0
        return 1.0 + self.min_overhead

    def to_json(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "value": self.value}
        return {"kind": "lognormal", "mu": self.mu, "sigma": self.sigma,
                "min_overhead": self.min_overhead}

    @classmethod
    def from_json(cls, obj: dict) -> "InflationModel":
        return cls(**obj)


@dataclass(frozen=True)
class WorldSpec:
    """Parameters of one synthetic campaign."""

    seed: int
    n_countries: int
    endpoints_per_country: int = 1
    n_facilities: int = 6
    relays_per_facility: int = 3
    n_plr_sites: int = 6
    n_rar: int = 8
    n_hubs: int = 2
    inflation_dist: InflationModel = field(default_factory=InflationModel)
    hub_bonus: float = 0.5
    tiv_fraction: Optional[float] = None
    noise_sigma: float = 0.0
    loss_prob: float = 0.0
    n_rounds: int = 1

    def __post_init__(self):
        counts = {
            "n_countries": self.n_countries,
            "endpoints_per_country": self.endpoints_per_country,
            "n_facilities": self.n_facilities,
            "relays_per_facility": self.relays_per_facility,
            "n_plr_sites": self.n_plr_sites,
            "n_rar": self.n_rar,
            "n_hubs": self.n_hubs,
            "n_rounds": self.n_rounds,
        }
        for name, value in counts.items():
            if value < 0:
                raise InvalidSpecError(f"{name} must be >= 0, got {value}")
        if self.n_countries * self.endpoints_per_country == 0:
            raise InvalidSpecError("a world needs at least one endpoint")
        if not 0.0 < self.hub_bonus <= 1.0:
            raise InvalidSpecError(f"hub_bonus must be in (0, 1], got {self.hub_bonus}")
        if not 0.0 <= self.loss_prob < 1.0:
            raise InvalidSpecError(f"loss_prob must be in [0, 1), got {self.loss_prob}")
        if self.noise_sigma < 0:
            raise InvalidSpecError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.n_hubs > self.n_facilities:
            raise InvalidSpecError("n_hubs cannot exceed n_facilities")
        if self.tiv_fraction is not None:
            if not 0.0 <= self.tiv_fraction <= 1.0:
                raise InvalidSpecError(f"tiv_fraction must be in [0, 1], got {self.tiv_fraction}")
            if self.tiv_fraction > 0 and (self.n_hubs == 0 or self.relays_per_facility == 0):
                raise InvalidSpecError("planting violations requires at least one hub relay")

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "n_countries": self.n_countries,
            "endpoints_per_country": self.endpoints_per_country,
            "n_facilities": self.n_facilities,
            "relays_per_facility": self.relays_per_facility,
            "n_plr_sites": self.n_plr_sites,
            "n_rar": self.n_rar,
            "n_hubs": self.n_hubs,
            "inflation_dist": self.inflation_dist.to_json(),
            "hub_bonus": self.hub_bonus,
            "tiv_fraction": self.tiv_fraction,
            "noise_sigma": self.noise_sigma,
            "loss_prob": self.loss_prob,
            "n_rounds": self.n_rounds,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "WorldSpec":
        data = dict(obj)
        if "inflation_dist" in data and data["inflation_dist"] is not None:
            data["inflation_dist"] = InflationModel.from_json(data["inflation_dist"])
        try:
            return cls(**data)
        except TypeError as exc:
            raise InvalidSpecError(str(exc)) from None


def load_world_spec(path: str | Path) -> WorldSpec:
    with open(path) as fh:
        return WorldSpec.from_json(json.load(fh))


@dataclass
class PairTruth:
    """Noiseless facts for one endpoint pair."""

    direct_rtt: float
    stitched_min: dict[str, tuple[float, str]]  # type -> (rtt, relay)

    def improvement(self, relay_type: str) -> Optional[float]:
        entry = self.stitched_min.get(relay_type)
        return None if entry is None else self.direct_rtt - entry[0]


@dataclass
class GroundTruth:
    tiv_fraction: Optional[float]
    planted_country_pairs: set[tuple[str, str]]
    n_country_pairs: int
    pair_truth: dict[Pair, PairTruth]

    def planted_share(self) -> Optional[float]:
        """Exact fraction of country pairs carrying a planted violation."""
        if self.tiv_fraction is None or self.n_country_pairs == 0:
            return None
        return len(self.planted_country_pairs) / self.n_country_pairs

    def to_json(self) -> dict:
        return {
            "tiv_fraction": self.tiv_fraction,
            "n_country_pairs": self.n_country_pairs,
            "planted_country_pairs": sorted(list(p) for p in self.planted_country_pairs),
            "pairs": [
                {
                    "pair": list(pair),
                    "direct_rtt": truth.direct_rtt,
                    "per_type": {
                        t: {"stitched": s, "relay": r, "improvement": truth.direct_rtt - s}
                        for t, (s, r) in sorted(truth.stitched_min.items())
                    },
                }
                for pair, truth in sorted(self.pair_truth.items())
            ],
        }


def _jitter(rng, center: GeoCoord, spread_deg: float) -> GeoCoord:
    lat = max(-89.9, min(89.9, center.lat + rng.uniform(-spread_deg, spread_deg)))
    lon = ((center.lon + rng.uniform(-spread_deg, spread_deg)) + 180.0) % 360.0 - 180.0
    return GeoCoord(lat, lon)


def _country_codes(n: int) -> list[str]:
    letters = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    codes = []
    for i in range(n):
        codes.append(letters[i // 26] + letters[i % 26])
    return codes


class World:
    """A fully materialized synthetic world; acts as a measurement backend.

    ``measure(src, dst, round_id, slot)`` answers like a ping
    infrastructure would: the noiseless base RTT of the pair, jittered per
    sample, or None for a lost ping. Answers are memoized per (pair,
    round) so repeated queries are identical.
    """

    EYEBALL_ASN_BASE = 64500
    RELAY_ASN_BASE = 65000

    def __init__(self, spec: WorldSpec):
        self.spec = spec
        self.nodes: list[NodeRecord] = []
        self._build_inventory()
        self._nodes_by_id = {n.node_id: n for n in self.nodes}
        self._endpoint_ids = {n.node_id for n in self.nodes if n.role == "endpoint"}
        self._link_cache: dict[tuple[str, str], float] = {}
        self._delay_cache: dict[tuple[str, str], float] = {}
        self._slot_cache: dict[tuple[Pair, int], list[Optional[float]]] = {}
        self._plant_pairs()
        self._build_direct_table()

    # -- inventory ----------------------------------------------------------

    def _build_inventory(self):
        spec = self.spec
        rng = derived_rng(spec.seed, "geometry")
        self.countries = _country_codes(spec.n_countries)
        self.country_center: dict[str, GeoCoord] = {}
        for cc in self.countries:
            lat = math.degrees(math.asin(rng.uniform(-0.95, 0.95)))
            lon = rng.uniform(-180.0, 180.0)
            self.country_center[cc] = GeoCoord(lat, lon)

        for ci, cc in enumerate(self.countries):
            for i in range(spec.endpoints_per_country):
                self.nodes.append(NodeRecord(
                    node_id=f"E-{cc}-{i}",
                    asn=self.EYEBALL_ASN_BASE + ci,
                    country=cc,
                    role="endpoint",
                    relay_type="none",
                    coord=_jitter(rng, self.country_center[cc], 1.5),
                    eyeball_verified=True,
                ))

        seq = itertools.count()
        self.facility_coord: dict[int, GeoCoord] = {}
        self.facility_country: dict[int, str] = {}
        for f in range(spec.n_facilities):
            fid = f + 1
            cc = self.countries[f % len(self.countries)]
            self.facility_coord[fid] = _jitter(rng, self.country_center[cc], 3.0)
            self.facility_country[fid] = cc
            for i in range(spec.relays_per_facility):
                self.nodes.append(NodeRecord(
                    node_id=f"C-f{fid:03d}-{i}",
                    asn=self.RELAY_ASN_BASE + next(seq),
                    country=cc,
                    role="relay",
                    relay_type="COR",
                    coord=self.facility_coord[fid],
                    facility_id=fid,
                ))

        for s in range(spec.n_plr_sites):
            site = f"s{s:03d}"
            cc = self.countries[s % len(self.countries)]
            site_coord = _jitter(rng, self.country_center[cc], 3.0)
            for i in range(PLR_NODES_PER_SITE):
                self.nodes.append(NodeRecord(
                    node_id=f"P-{site}-{i}",
                    asn=self.RELAY_ASN_BASE + next(seq),
                    country=cc,
                    role="relay",
                    relay_type="PLR",
                    coord=site_coord,
                    site_id=site,
                ))

        for i in range(spec.n_rar):
            cc = self.countries[i % len(self.countries)]
            self.nodes.append(NodeRecord(
                node_id=f"Re-{cc}-{i}",
                asn=self.EYEBALL_ASN_BASE + (i % len(self.countries)),
                country=cc,
                role="relay",
                relay_type="RAR_eye",
                coord=_jitter(rng, self.country_center[cc], 1.5),
                eyeball_verified=True,
            ))
        for i in range(spec.n_rar):
            cc = self.countries[i % len(self.countries)]
            self.nodes.append(NodeRecord(
                node_id=f"Ro-{cc}-{i}",
                asn=self.RELAY_ASN_BASE + next(seq),
                country=cc,
                role="relay",
                relay_type="RAR_other",
                coord=_jitter(rng, self.country_center[cc], 1.5),
            ))

        hub_rng = derived_rng(spec.seed, "hubs")
        fids = sorted(self.facility_coord)
        self.hubs: set[int] = set(hub_rng.sample(fids, spec.n_hubs)) if fids else set()

    # -- noiseless physics ---------------------------------------------------

    def _one_way(self, a: NodeRecord, b: NodeRecord) -> float:
        key = (a.node_id, b.node_id) if a.node_id < b.node_id else (b.node_id, a.node_id)
        if key not in self._delay_cache:
            self._delay_cache[key] = propagation_delay(a.coord, b.coord)
        return self._delay_cache[key]

    def link_inflation(self, endpoint: NodeRecord, relay: NodeRecord) -> float:
        spec = self.spec
        if relay.relay_type == "COR":
            # colocated relays share the draw: same building, same upstreams
            rng = derived_rng(spec.seed, "linkinf", endpoint.node_id, "fac", relay.facility_id)
            raw = spec.inflation_dist.draw(rng)
            if relay.facility_id in self.hubs:
                return max(spec.inflation_dist.hub_floor(), raw * spec.hub_bonus)
            return raw
        a, b = canonical_pair(endpoint.node_id, relay.node_id)
        return spec.inflation_dist.draw(derived_rng(spec.seed, "linkinf", a, b))

    def base_link_rtt(self, endpoint: NodeRecord, relay: NodeRecord) -> float:
        key = (endpoint.node_id, relay.node_id)
        if key not in self._link_cache:
            rtt = 2.0 * self._one_way(endpoint, relay) * self.link_inflation(endpoint, relay)
            self._link_cache[key] = rtt
        return self._link_cache[key]

    def _plant_pairs(self):
        spec = self.spec
        self.planted: set[tuple[str, str]] = set()
        if spec.tiv_fraction is None or len(self.countries) < 2:
            return
        country_pairs = sorted(itertools.combinations(sorted(self.countries), 2))
        k = round(spec.tiv_fraction * len(country_pairs))
        rng = derived_rng(spec.seed, "plant")
        self.planted = set(rng.sample(country_pairs, k))

    def _build_direct_table(self):
        spec = self.spec
        endpoints = sorted((n for n in self.nodes if n.role == "endpoint"),
                           key=lambda n: n.node_id)
        relays = sorted((n for n in self.nodes if n.role == "relay"),
                        key=lambda n: n.node_id)
        self.direct_base: dict[Pair, float] = {}
        self.pair_truth: dict[Pair, PairTruth] = {}
        for e1, e2 in itertools.combinations(endpoints, 2):
            pair = canonical_pair(e1.node_id, e2.node_id)
            floor_rtt = 2.0 * self._one_way(e1, e2)
            mins: dict[str, tuple[float, str]] = {}
            for r in relays:
                stitched = self.base_link_rtt(e1, r) + self.base_link_rtt(e2, r)
                cur = mins.get(r.relay_type)
                if cur is None or (stitched, r.node_id) < cur:
                    mins[r.relay_type] = (stitched, r.node_id)

            if spec.tiv_fraction is None:
                draw = spec.inflation_dist.draw(derived_rng(spec.seed, "dirinf", *pair))
                direct = floor_rtt * draw
            else:
                cpair = tuple(sorted((e1.country, e2.country)))
                if cpair in self.planted:
                    direct = mins["COR"][0] * (1.0 + PLANT_LIFT_REL) + PLANT_LIFT_ABS_MS
                else:
                    m_all = min(v[0] for v in mins.values()) if mins else float("inf")
                    upper = m_all * (1.0 - NONPLANT_SAFETY)
                    if upper < floor_rtt:
                        upper = m_all
                    draw = spec.inflation_dist.draw(derived_rng(spec.seed, "dirinf", *pair))
                    direct = min(floor_rtt * draw, upper)
            self.direct_base[pair] = direct
            self.pair_truth[pair] = PairTruth(direct_rtt=direct, stitched_min=mins)

    def base_rtt(self, a: str, b: str) -> float:
        """Noiseless RTT of a measurable pair (direct or endpoint-relay link)."""
        pair = canonical_pair(a, b)
        in_a = pair[0] in self._endpoint_ids
        in_b = pair[1] in self._endpoint_ids
        if in_a and in_b:
            return self.direct_base[pair]
        if in_a or in_b:
            endpoint = self._nodes_by_id[pair[0] if in_a else pair[1]]
            relay = self._nodes_by_id[pair[1] if in_a else pair[0]]
            return self.base_link_rtt(endpoint, relay)
        raise InputError(f"relay-relay pair {pair} is never measured")

    # -- backend interface ----------------------------------------------------

    def measure(self, src: str, dst: str, round_id: int, slot: int) -> Optional[float]:
        pair = canonical_pair(src, dst)
        key = (pair, round_id)
        slots = self._slot_cache.get(key)
        if slots is None:
            base = self.base_rtt(*pair)
            rng = derived_rng(self.spec.seed, "obs", pair[0], pair[1], round_id)
            slots = []
            for _ in range(6):
                u = rng.random()
                g = rng.gauss(0.0, 1.0)
                if u < self.spec.loss_prob:
                    slots.append(None)
                else:
                    slots.append(base * max(0.05, 1.0 + self.spec.noise_sigma * g))
            self._slot_cache[key] = slots
        return slots[slot]

    def ground_truth(self) -> GroundTruth:
        n_cc = len(self.countries)
        return GroundTruth(
            tiv_fraction=self.spec.tiv_fraction,
            planted_country_pairs=set(self.planted),
            n_country_pairs=n_cc * (n_cc - 1) // 2,
            pair_truth=dict(self.pair_truth),
        )


@dataclass
class GeneratedWorld:
    nodes: list[NodeRecord]
    samples: list[RttSample]
    ground_truth: GroundTruth
    rounds: list  # list[MeasurementRound]; typed loosely to avoid an import cycle


def generate(spec: WorldSpec) -> GeneratedWorld:
    """Run the full campaign against a synthetic world and collect its output.

    Executes the standard round workflow (endpoint sampling, direct pings,
    feasibility pruning, link pings) for ``spec.n_rounds`` rounds with the
    world itself as the measurement backend, so the emitted samples are
    exactly what a file replay of the campaign would see.
    """
    from .campaign import CampaignPlan, execute_plan, plan_round

    world = World(spec)
    plan = CampaignPlan(seed=spec.seed)
    samples: list[RttSample] = []
    rounds = []
    for round_id in range(spec.n_rounds):
        round_plan = plan_round(plan, world.nodes, round_id)
        result = execute_plan(round_plan, world, world.nodes)
        rounds.append(result.round)
        samples.extend(result.samples)
    return GeneratedWorld(
        nodes=list(world.nodes),
        samples=samples,
        ground_truth=world.ground_truth(),
        rounds=rounds,
    )


def oracle_best_paths(
    nodes: list[NodeRecord], samples: list[RttSample]
) -> dict[tuple[Pair, int, str], tuple[float, str]]:
    """Exhaustive best stitched path per (pair, round, type), from raw samples.

    Deliberately independent of the stitching engine: medians come from
    ``statistics.median`` over the valid pings, feasibility is evaluated
    inline, and the minimum is a plain scan over every relay. Ties break
    on the smaller relay id.
    """
    import statistics

    by_id = {n.node_id: n for n in nodes}
    endpoint_ids = {n.node_id for n in nodes if n.role == "endpoint"}
    relay_nodes = sorted((n for n in nodes if n.role == "relay"), key=lambda n: n.node_id)

    grouped: dict[tuple[Pair, int], list[float]] = {}
    lost_only: set[tuple[Pair, int]] = set()
    for s in samples:
        key = (s.pair, s.round_id)
        if s.lost:
            lost_only.add(key)
            continue
        grouped.setdefault(key, []).append(s.rtt_ms)
    medians = {
        key: statistics.median(values)
        for key, values in grouped.items()
        if len(values) >= 3
    }

    delay_cache: dict[tuple[str, str], float] = {}

    def one_way(a: str, b: str) -> float:
        key = (a, b) if a < b else (b, a)
        if key not in delay_cache:
            delay_cache[key] = propagation_delay(by_id[a].coord, by_id[b].coord)
        return delay_cache[key]

    best: dict[tuple[Pair, int, str], tuple[float, str]] = {}
    for (pair, round_id), direct in medians.items():
        if not (pair[0] in endpoint_ids and pair[1] in endpoint_ids):
            continue
        e1, e2 = pair
        for relay in relay_nodes:
            m1 = medians.get((canonical_pair(e1, relay.node_id), round_id))
            m2 = medians.get((canonical_pair(e2, relay.node_id), round_id))
            if m1 is None or m2 is None:
                continue
            if 2.0 * (one_way(e1, relay.node_id) + one_way(relay.node_id, e2)) > direct:
                continue
            stitched = m1 + m2
            key = (pair, round_id, relay.relay_type)
            cur = best.get(key)
            if cur is None or (stitched, relay.node_id) < cur:
                best[key] = (stitched, relay.node_id)
    return best


def save_ground_truth(truth: GroundTruth, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(truth.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
