"""Discovery and evaluation of one-relay overlay shortcuts from RTT campaigns."""

from .analytics import (
    AnalysisParams,
    analyze_rounds,
    country_change_effect,
    facility_report,
    improvement_cdf,
    redundancy_per_pair,
    stability_cv,
    threshold_coverage,
    top_relay_coverage,
    voip_threshold_fraction,
    write_reports,
)
from .campaign import CampaignPlan, FileReplayBackend, LivePlatformClient, execute_plan, plan_round, run_campaign
from .data import (
    MeasurementRound,
    MedianRtt,
    NodeRecord,
    RttSample,
    aggregate_median,
    canonical_pair,
    direction_symmetry_report,
)
from .engine import RelayedPath, best_relay_per_type, enumerate_paths, feasible_relays, stitch
from .errors import BackendError, EmptyDomainError, InputError, InvalidSpecError, ValidationError
from .geo import GeoCoord, PropagationConstants, delay_from_distance, geo_distance, propagation_delay
from .selection import (
    ColoCandidate,
    CoverageRecord,
    FacilityRecord,
    colo_filter_chain,
    eyeball_coverage_curve,
    sample_endpoints,
    sample_relays,
    select_eyeball_endpoints,
)
from .synth import GroundTruth, InflationModel, World, WorldSpec, generate, oracle_best_paths

__version__ = "0.1.0"
