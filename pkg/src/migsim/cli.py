"""Command-line front end.

Subcommands: gen-trace, run, sweep, report, bootstrap-check.  File formats
and the stable exit codes are documented in FORMATS.md at the repo root.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 trace invalid
for the requested mode, 4 sweep finished with failed runs, 5 bootstrap check
failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

from .commsim import build_topology, discover_peers, load_peers_jsonl
from .errors import (
    DuplicateDeviceError,
    InvalidConfigError,
    MalformedLabelError,
    MigSimError,
    ParseError,
    TraceInvalidForModeError,
)
from .mig import ReconfigCosts
from .scheduler import MODES, Policy
from .simcore import PerfModel, Simulation
from .sweep import (
    ExperimentSpec,
    rows_from_csv,
    run_sweep,
    summarize,
    summary_to_csv,
    write_plots,
    write_sweep_outputs,
    _atomic_write,
)
from .workload import TraceConfig, generate_trace, parse_trace, serialize_trace

log = logging.getLogger("migsim")

EXIT_INVALID_CONFIG = 2
EXIT_TRACE_INVALID = 3
EXIT_SWEEP_FAILURES = 4
EXIT_BOOTSTRAP = 5


def _load_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InvalidConfigError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise InvalidConfigError(f"{path}: {exc}") from None


def _load_perf_model(path: str | None) -> tuple[PerfModel, ReconfigCosts]:
    if path is None:
        return PerfModel(), ReconfigCosts()
    doc = _load_json(path)
    costs = ReconfigCosts(**doc.pop("costs", {}))
    try:
        model = PerfModel.from_dict(doc)
    except TypeError as exc:
        raise InvalidConfigError(f"{path}: {exc}") from None
    return model, costs


def cmd_gen_trace(args: argparse.Namespace) -> int:
    config = TraceConfig.from_dict(_load_json(args.config))
    if args.seed is not None:
        config.seed = args.seed
    trace = generate_trace(config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(serialize_trace(trace))
    counts = Counter((j.kind, j.size) for j in trace.jobs)
    print(f"wrote {len(trace.jobs)} jobs to {out}")
    for (kind, size), n in sorted(counts.items()):
        print(f"  {kind:>9} size {size}: {n}")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    trace = parse_trace(Path(args.trace).read_bytes())
    model, costs = _load_perf_model(args.perf_model)
    policy = Policy(args.policy, args.backfill_depth)
    sim = Simulation(trace, args.mode, policy, model, costs, num_gpus=args.gpus)
    report = sim.run()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in sim.event_log)
    _atomic_write(out / "events.jsonl", lines.encode())
    _atomic_write(out / "report.json",
                  (json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n").encode())
    row = summarize_row = {
        "run_id": out.name,
        "size_mix": "", "type_mix": "", "duration_source": "",
        "seed": "", "mode": args.mode, "policy": policy.kind,
        "num_jobs": len(trace.jobs),
        "makespan_s": report.makespan_s,
        "avg_jct_s": report.avg_jct_s,
        "avg_wait_s": report.avg_wait_s,
        "avg_ext_frag_delay_s": report.avg_ext_frag_delay_s,
        "utilization": report.utilization,
        "reconfig_count": report.reconfig_count,
    }
    from .sweep import rows_to_csv
    _atomic_write(out / "row.csv", rows_to_csv([row]))
    print(f"mode={args.mode} policy={policy.kind} jobs={len(trace.jobs)}")
    print(f"makespan_s={report.makespan_s:.1f} avg_jct_s={report.avg_jct_s:.1f} "
          f"avg_wait_s={report.avg_wait_s:.1f} "
          f"ext_frag_s={report.avg_ext_frag_delay_s:.1f} "
          f"utilization={report.utilization:.3f} reconfigs={report.reconfig_count}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    spec = ExperimentSpec.from_dict(_load_json(args.spec))
    out_dir = Path(args.out) if args.out else Path(spec.output_dir)
    rows, failures, skipped = run_sweep(spec, out_dir, max_workers=args.jobs)
    write_sweep_outputs(out_dir, rows, failures, skipped)
    print(f"{len(rows)} runs complete, {len(failures)} failed, "
          f"{len(skipped)} skipped -> {out_dir}")
    if failures:
        for f in failures:
            print(f"FAILED {f['run_id']}: {f['error']}", file=sys.stderr)
        return EXIT_SWEEP_FAILURES
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    rows = rows_from_csv(Path(args.runs).read_bytes())
    summary = summarize(rows)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write(out_dir / "summary.json",
                  (json.dumps(summary, sort_keys=True, indent=2) + "\n").encode())
    _atomic_write(out_dir / "summary.csv", summary_to_csv(summary))
    if args.plots:
        for path in write_plots(out_dir, summary):
            print(f"wrote {path}")
    print(f"summary for {len(rows)} runs -> {out_dir}")
    return 0


def cmd_bootstrap_check(args: argparse.Namespace) -> int:
    peers = load_peers_jsonl(Path(args.peers).read_bytes())
    comm = discover_peers(peers, mig_aware=not args.legacy)
    topo = build_topology(comm)
    print(f"communicator of {comm.size} ranks")
    for node in topo.nodes:
        marker = "" if node.label == node.canonical else f" (canonical {node.canonical})"
        print(f"  rank {node.rank}: {node.label}{marker}")
    print("mig_list:")
    for bus, count in topo.mig_list:
        print(f"  {bus}: {count}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="migsim",
        description="Trace-driven simulator for MIG-partitioned GPU clusters")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-trace", help="generate a synthetic trace file")
    p.add_argument("--config", required=True, help="trace config JSON")
    p.add_argument("--out", required=True, help="output trace (JSON lines)")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.set_defaults(func=cmd_gen_trace)

    p = sub.add_parser("run", help="simulate one trace under one mode")
    p.add_argument("--trace", required=True)
    p.add_argument("--mode", required=True, choices=MODES)
    p.add_argument("--policy", default="fifo", choices=("fifo", "backfill"))
    p.add_argument("--backfill-depth", type=int, default=14)
    p.add_argument("--perf-model", default=None, help="perf model JSON")
    p.add_argument("--gpus", type=int, default=2)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a full experiment spec")
    p.add_argument("--spec", required=True, help="experiment spec JSON")
    p.add_argument("--out", default=None, help="override spec output_dir")
    p.add_argument("--jobs", type=int, default=None, help="worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="recompute summary tables from runs.csv")
    p.add_argument("--runs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plots", action="store_true", help="also emit SVG charts")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("bootstrap-check", help="validate a peer file and print topology")
    p.add_argument("--peers", required=True, help="peer records (JSON lines)")
    p.add_argument("--legacy", action="store_true",
                   help="use bus-id-only duplicate detection")
    p.set_defaults(func=cmd_bootstrap_check)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InvalidConfigError, ParseError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_CONFIG
    except TraceInvalidForModeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRACE_INVALID
    except (DuplicateDeviceError, MalformedLabelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BOOTSTRAP
    except MigSimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
