"""Command-line interface.

Stages compose through files so any step can be replayed or swapped:

    tivpath simulate     world spec JSON -> nodes.csv + samples.csv (+ truth)
    tivpath plan         node inventory -> one round's task list
    tivpath run          inventory + backend -> rounds.jsonl (medians)
    tivpath filter-colos candidate JSON + facility CSV -> survivors + attrition
    tivpath sample       inventory -> one round's endpoint/relay sample
    tivpath analyze      rounds.jsonl -> stitched paths JSONL
    tivpath report       rounds.jsonl -> plot-ready CSVs + summary.json

Exit codes: 0 success, 1 input validation failure, 2 runtime or backend
failure. All randomness flows from explicit --seed flags.
"""

import argparse
import json
import sys
from pathlib import Path

from . import analytics, campaign, engine, selection, synth
from .data import load_nodes, save_nodes, save_samples
from .errors import BackendError, InputError


def _add_campaign_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--cadence-hours", type=float, default=12.0,
                        help="hours between round starts (default 12)")
    parser.add_argument("--window-min", type=float, default=30.0,
                        help="measurement window length in minutes (default 30)")
    parser.add_argument("--interval-min", type=float, default=5.0,
                        help="minutes between pings of a pair (default 5)")
    parser.add_argument("--pings", type=int, default=6,
                        help="pings per pair per window (default 6)")


def _campaign_plan(args, seed: int) -> campaign.CampaignPlan:
    return campaign.CampaignPlan(
        seed=seed,
        cadence_hours=args.cadence_hours,
        window_min=args.window_min,
        interval_min=args.interval_min,
        pings_per_pair=args.pings,
    )


def cmd_simulate(args) -> int:
    spec = synth.load_world_spec(args.spec)
    if args.seed is not None:
        spec = synth.WorldSpec.from_json({**spec.to_json(), "seed": args.seed})
    if args.rounds is not None:
        spec = synth.WorldSpec.from_json({**spec.to_json(), "n_rounds": args.rounds})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    generated = synth.generate(spec)
    save_nodes(generated.nodes, out / "nodes.csv")
    save_samples(generated.samples, out / "samples.csv")
    synth.save_ground_truth(generated.ground_truth, out / "ground_truth.json")
    print(f"simulated {spec.n_rounds} round(s): {len(generated.nodes)} nodes, "
          f"{len(generated.samples)} samples -> {out}")
    return 0


def cmd_plan(args) -> int:
    nodes = load_nodes(args.nodes)
    plan = _campaign_plan(args, args.seed)
    round_plan = campaign.plan_round(plan, nodes, args.round_id)
    doc = {
        "round_id": round_plan.round_id,
        "start_time": round_plan.start_time.isoformat(),
        "endpoints": round_plan.endpoints,
        "relays_by_type": round_plan.relays_by_type,
        "tasks": [t.to_json() for t in round_plan.tasks],
    }
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def cmd_run(args) -> int:
    nodes = load_nodes(args.nodes)
    backend = campaign.backend_from_args(args.backend, args.spec, args.samples, args.fixtures)
    seed = args.seed
    if seed is None:
        if args.backend == "simulator":
            seed = synth.load_world_spec(args.spec).seed
        else:
            raise InputError(f"--seed is required with the {args.backend} backend")
    plan = _campaign_plan(args, seed)
    rounds, _ = campaign.run_campaign(plan, nodes, backend, args.rounds)
    campaign.save_rounds(rounds, args.out)
    medians = sum(len(r.direct_medians) for r in rounds)
    print(f"executed {len(rounds)} round(s), {medians} direct medians -> {args.out}")
    return 0


def cmd_filter_colos(args) -> int:
    candidates = selection.load_colo_candidates(args.candidates)
    facilities = selection.load_facilities(args.facilities)
    result = selection.colo_filter_chain(candidates, facilities, args.lg_threshold_ms)
    before = result.initial_count
    for rule, after in result.counts:
        print(f"{rule}: {before} -> {after}")
        before = after
    if args.out:
        doc = {
            "lg_threshold_ms": args.lg_threshold_ms,
            "attrition": [{"rule": rule, "survivors": n} for rule, n in result.counts],
            "survivors": [
                {"ip": c.ip, "asn": c.asn_claimed,
                 "facility_id": next(iter(c.candidate_facilities))}
                for c in result.survivors
            ],
            "rejections": [{"ip": ip, "rule": rule} for ip, rule in result.rejections],
        }
        Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_sample(args) -> int:
    nodes = load_nodes(args.nodes)
    if args.relay_type == "endpoints":
        if args.coverage:
            records = [r for r in selection.load_coverage(args.coverage)
                       if r.user_coverage > args.coverage_cutoff]
            ids = selection.select_eyeball_endpoints(records, nodes, args.seed)
        else:
            ids = selection.sample_endpoints(nodes, args.seed)
    else:
        ids = selection.sample_relays(nodes, args.relay_type, args.seed)
    text = "\n".join(sorted(ids))
    if args.out:
        Path(args.out).write_text(text + "\n" if text else "")
    else:
        print(text)
    return 0


def cmd_analyze(args) -> int:
    rounds = campaign.load_rounds(args.rounds)
    nodes_by_id = {n.node_id: n for n in load_nodes(args.nodes)}
    paths = []
    for rnd in rounds:
        paths.extend(engine.enumerate_paths(rnd, nodes_by_id))
    engine.save_paths(paths, args.out)
    improved = sum(1 for p in paths if p.improvement >= args.improvement_floor_ms)
    print(f"stitched {len(paths)} paths ({improved} improving) -> {args.out}")
    return 0


def cmd_report(args) -> int:
    rounds = campaign.load_rounds(args.rounds)
    nodes = load_nodes(args.nodes)
    facilities = selection.load_facilities(args.facilities) if args.facilities else []
    params = analytics.AnalysisParams(
        improvement_floor_ms=args.improvement_floor_ms,
        voip_threshold_ms=args.voip_threshold_ms,
        top_k=args.top_k,
        top_subset_size=args.top_subset,
        coverage_method="greedy" if args.greedy_coverage else "frequency",
    )
    result = analytics.analyze_rounds(rounds, nodes, facilities, params)
    written = analytics.write_reports(result, args.out)
    for relay_type in sorted(result.cdfs):
        frac = result.cdfs[relay_type].improved_fraction_of_total
        print(f"{relay_type}: improved {100.0 * frac:.1f}% of {result.total_cases} cases")
    print(f"wrote {len(written)} files -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tivpath",
        description="Discover and evaluate one-relay overlay shortcuts from RTT campaigns.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic campaign dataset")
    p.add_argument("--spec", required=True, help="world spec JSON")
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p.add_argument("--rounds", type=int, default=None, help="override the spec round count")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("plan", help="lay out one round's measurement tasks")
    p.add_argument("--nodes", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--round-id", type=int, default=0)
    _add_campaign_flags(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("run", help="execute measurement rounds against a backend")
    p.add_argument("--nodes", required=True)
    p.add_argument("--backend", choices=["simulator", "file-replay", "live-mock"],
                   required=True)
    p.add_argument("--spec", default=None, help="world spec JSON (simulator)")
    p.add_argument("--samples", default=None, help="samples CSV (file-replay)")
    p.add_argument("--fixtures", default=None, help="canned responses JSON (live-mock)")
    p.add_argument("--rounds", type=int, default=1)
    p.add_argument("--seed", type=int, default=None,
                   help="sampling seed (defaults to the world seed for the simulator)")
    _add_campaign_flags(p)
    p.add_argument("--out", required=True, help="rounds JSONL output")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("filter-colos", help="apply the five-rule colo candidate filter")
    p.add_argument("--candidates", required=True, help="candidate JSON array")
    p.add_argument("--facilities", required=True, help="facility registry CSV")
    p.add_argument("--lg-threshold-ms", type=float, default=selection.DEFAULT_LG_THRESHOLD_MS)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_filter_colos)

    p = sub.add_parser("sample", help="draw one round's endpoint or relay sample")
    p.add_argument("--nodes", required=True)
    p.add_argument("--relay-type", required=True,
                   choices=["endpoints", "COR", "PLR", "RAR_eye", "RAR_other"])
    p.add_argument("--coverage", default=None,
                   help="user-coverage CSV restricting endpoint selection to verified tuples")
    p.add_argument("--coverage-cutoff", type=float,
                   default=selection.DEFAULT_COVERAGE_CUTOFF_PCT,
                   help="minimum per-country user coverage in percent (default 10)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("analyze", help="stitch rounds into relayed-path records")
    p.add_argument("--rounds", required=True, help="rounds JSONL")
    p.add_argument("--nodes", required=True)
    p.add_argument("--improvement-floor-ms", type=float,
                   default=analytics.DEFAULT_IMPROVEMENT_FLOOR_MS)
    p.add_argument("--out", required=True, help="paths JSONL output")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("report", help="write the full analysis artifact set")
    p.add_argument("--rounds", required=True, help="rounds JSONL")
    p.add_argument("--nodes", required=True)
    p.add_argument("--facilities", default=None)
    p.add_argument("--improvement-floor-ms", type=float,
                   default=analytics.DEFAULT_IMPROVEMENT_FLOOR_MS)
    p.add_argument("--voip-threshold-ms", type=float,
                   default=analytics.DEFAULT_VOIP_THRESHOLD_MS)
    p.add_argument("--top-k", type=int, default=100)
    p.add_argument("--top-subset", type=int, default=10)
    p.add_argument("--greedy-coverage", action="store_true",
                   help="rank relays by marginal case coverage instead of frequency")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (BackendError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
