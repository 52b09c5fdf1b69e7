"""Experiment sweeps: the (trace config x seed x mode) cross product.

Each run is independent and executes in a worker pool; results are collected
and written in a fixed order so a rerun of the same spec yields byte
identical CSV and summary files regardless of worker count.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidConfigError
from .mig import ReconfigCosts
from .scheduler import MODES, Policy
from .simcore import PerfModel, Simulation
from .workload import TraceConfig, generate_trace, with_seed

log = logging.getLogger(__name__)

CSV_COLUMNS = [
    "run_id", "size_mix", "type_mix", "duration_source", "seed", "mode",
    "policy", "num_jobs", "makespan_s", "avg_jct_s", "avg_wait_s",
    "avg_ext_frag_delay_s", "utilization", "reconfig_count",
]

RATIO_METRICS = ("makespan_s", "avg_jct_s", "avg_wait_s", "utilization")
PAIRS = (("FM", "DM"), ("FM", "SM"), ("DM", "SM"))


@dataclass
class ExperimentSpec:
    trace_configs: list[TraceConfig]
    modes: list[str]
    policy: Policy
    seeds: list[int]
    perf_model: PerfModel = field(default_factory=PerfModel)
    costs: ReconfigCosts = field(default_factory=ReconfigCosts)
    output_dir: str = "sweep-out"
    num_gpus: int = 2

    def validate(self) -> None:
        if not self.trace_configs:
            raise InvalidConfigError("spec needs at least one trace config")
        if not self.modes or any(m not in MODES for m in self.modes):
            raise InvalidConfigError(f"modes must be a nonempty subset of {MODES}")
        if not self.seeds:
            raise InvalidConfigError("spec needs at least one seed")
        for cfg in self.trace_configs:
            cfg.validate()

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentSpec":
        try:
            policy = Policy(doc.get("policy", "fifo"),
                            doc.get("backfill_depth", 14))
        except ValueError as exc:
            raise InvalidConfigError(str(exc)) from None
        spec = cls(
            trace_configs=[TraceConfig.from_dict(c) for c in doc.get("trace_configs", [])],
            modes=list(doc.get("modes", [])),
            policy=policy,
            seeds=list(doc.get("seeds", [])),
            perf_model=PerfModel.from_dict(doc.get("perf_model", {})),
            costs=ReconfigCosts(**doc.get("costs", {})),
            output_dir=doc.get("output_dir", "sweep-out"),
            num_gpus=int(doc.get("num_gpus", 2)),
        )
        spec.validate()
        return spec


@dataclass
class RunTask:
    run_id: str
    config: TraceConfig
    seed: int
    mode: str
    policy: Policy
    perf_model: PerfModel
    costs: ReconfigCosts
    num_gpus: int
    run_dir: str | None  # None skips per-run file output


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def execute_run(task: RunTask) -> dict:
    """Run one simulation; used directly and as the pool worker."""
    trace = generate_trace(with_seed(task.config, task.seed))
    sim = Simulation(trace, task.mode, task.policy, task.perf_model,
                     task.costs, task.num_gpus)
    report = sim.run()
    if task.run_dir is not None:
        run_dir = Path(task.run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        lines = "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in sim.event_log)
        _atomic_write(run_dir / "events.jsonl", lines.encode())
        _atomic_write(run_dir / "report.json",
                      (json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n").encode())
    return {
        "run_id": task.run_id,
        "size_mix": task.config.size_mix,
        "type_mix": task.config.type_mix,
        "duration_source": task.config.duration_source,
        "seed": task.seed,
        "mode": task.mode,
        "policy": task.policy.kind,
        "num_jobs": len(trace.jobs),
        "makespan_s": report.makespan_s,
        "avg_jct_s": report.avg_jct_s,
        "avg_wait_s": report.avg_wait_s,
        "avg_ext_frag_delay_s": report.avg_ext_frag_delay_s,
        "utilization": report.utilization,
        "reconfig_count": report.reconfig_count,
    }


def build_tasks(spec: ExperimentSpec, out_dir: Path,
                write_runs: bool = True) -> tuple[list[RunTask], list[str]]:
    """Expand the spec cross product; SM is dropped for oversized traces."""
    tasks: list[RunTask] = []
    skipped: list[str] = []
    for ci, cfg in enumerate(spec.trace_configs):
        # A config's max size is a property of its size table, not the seed.
        probe = generate_trace(with_seed(cfg, spec.seeds[0]))
        has_oversized = probe.max_size() > 4
        for seed in spec.seeds:
            for mode in spec.modes:
                run_id = (f"c{ci:02d}__{cfg.size_mix}__{cfg.type_mix}__"
                          f"{cfg.duration_source}__seed{seed}__{mode}")
                if mode == "SM" and has_oversized:
                    skipped.append(run_id)
                    continue
                run_dir = str(out_dir / "runs" / run_id) if write_runs else None
                tasks.append(RunTask(run_id, cfg, seed, mode, spec.policy,
                                     spec.perf_model, spec.costs,
                                     spec.num_gpus, run_dir))
    if skipped:
        log.warning("SM excluded for %d runs with jobs larger than size 4", len(skipped))
    return tasks, skipped


def run_sweep(spec: ExperimentSpec, out_dir: Path, max_workers: int | None = None,
              write_runs: bool = True) -> tuple[list[dict], list[dict], list[str]]:
    """Execute every run; returns (rows, failures, skipped run ids)."""
    spec.validate()
    tasks, skipped = build_tasks(spec, out_dir, write_runs)
    rows: list[dict | None] = [None] * len(tasks)
    failures: list[dict] = []
    workers = max_workers or min(len(tasks), os.cpu_count() or 1)
    if workers <= 1 or len(tasks) <= 1:
        for i, task in enumerate(tasks):
            try:
                rows[i] = execute_run(task)
            except Exception as exc:  # noqa: BLE001 - collected into the report
                failures.append({"run_id": task.run_id, "error": f"{type(exc).__name__}: {exc}"})
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(execute_run, task): i for i, task in enumerate(tasks)}
            for future, i in futures.items():
                try:
                    rows[i] = future.result()
                except Exception as exc:  # noqa: BLE001
                    failures.append({"run_id": tasks[i].run_id,
                                     "error": f"{type(exc).__name__}: {exc}"})
    done = [r for r in rows if r is not None]
    failures.sort(key=lambda f: f["run_id"])
    return done, failures, skipped


def rows_to_csv(rows: list[dict]) -> bytes:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row[k] for k in CSV_COLUMNS})
    return buf.getvalue().encode()


def rows_from_csv(data: bytes) -> list[dict]:
    reader = csv.DictReader(io.StringIO(data.decode()))
    rows = []
    for rec in reader:
        row = dict(rec)
        for key in ("seed", "num_jobs", "reconfig_count"):
            row[key] = int(row[key])
        for key in ("makespan_s", "avg_jct_s", "avg_wait_s",
                    "avg_ext_frag_delay_s", "utilization"):
            row[key] = float(row[key])
        rows.append(row)
    return rows


def _stats(values: list[float]) -> dict:
    return {
        "mean": sum(values) / len(values),
        "min": min(values),
        "max": max(values),
        "n": len(values),
    }


def summarize(rows: list[dict]) -> dict:
    """Pairwise per-seed ratio statistics plus absolute means per cell.

    Ratios are computed per (trace cell, seed) and then aggregated, so the
    summary reports the mean/min/max of per-seed ratios, not a ratio of
    means.
    """
    by_cell: dict[tuple, dict] = {}
    for row in rows:
        key = (row["size_mix"], row["type_mix"], row["duration_source"],
               row["seed"], row["mode"])
        by_cell[key] = row

    size_mixes = sorted({row["size_mix"] for row in rows})
    modes = sorted({row["mode"] for row in rows})

    ratios: dict[str, dict] = {}
    for num, den in PAIRS:
        if num not in modes or den not in modes:
            continue
        per_mix: dict[str, dict] = {}
        for mix in size_mixes:
            per_metric: dict[str, dict] = {}
            for metric in RATIO_METRICS:
                vals = []
                for key, row in sorted(by_cell.items()):
                    if row["mode"] != num or row["size_mix"] != mix:
                        continue
                    den_key = key[:4] + (den,)
                    other = by_cell.get(den_key)
                    if other is None or other[metric] == 0:
                        continue
                    vals.append(row[metric] / other[metric])
                if vals:
                    per_metric[metric] = _stats(vals)
            if per_metric:
                per_mix[mix] = per_metric
        if per_mix:
            ratios[f"{num}/{den}"] = per_mix

    ext_frag_share: dict[str, dict] = {}
    absolute: dict[str, dict] = {}
    for mode in modes:
        ext_frag_share[mode] = {}
        absolute[mode] = {}
        for mix in size_mixes:
            sub = [r for r in rows if r["mode"] == mode and r["size_mix"] == mix]
            if not sub:
                continue
            shares = [r["avg_ext_frag_delay_s"] / r["makespan_s"] for r in sub
                      if r["makespan_s"] > 0]
            if shares:
                ext_frag_share[mode][mix] = sum(shares) / len(shares)
            absolute[mode][mix] = {
                metric: _stats([r[metric] for r in sub])
                for metric in RATIO_METRICS + ("avg_ext_frag_delay_s", "reconfig_count")
            }
    return {"ratios": ratios, "ext_frag_share": ext_frag_share, "absolute": absolute}


def summary_to_csv(summary: dict) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["kind", "subject", "size_mix", "metric", "mean", "min", "max", "n"])
    for pair in sorted(summary["ratios"]):
        for mix in sorted(summary["ratios"][pair]):
            for metric in sorted(summary["ratios"][pair][mix]):
                s = summary["ratios"][pair][mix][metric]
                writer.writerow(["ratio", pair, mix, metric,
                                 s["mean"], s["min"], s["max"], s["n"]])
    for mode in sorted(summary["ext_frag_share"]):
        for mix in sorted(summary["ext_frag_share"][mode]):
            writer.writerow(["ext_frag_share", mode, mix, "share_of_makespan",
                             summary["ext_frag_share"][mode][mix], "", "", ""])
    for mode in sorted(summary["absolute"]):
        for mix in sorted(summary["absolute"][mode]):
            for metric in sorted(summary["absolute"][mode][mix]):
                s = summary["absolute"][mode][mix][metric]
                writer.writerow(["absolute", mode, mix, metric,
                                 s["mean"], s["min"], s["max"], s["n"]])
    return buf.getvalue().encode()


def write_sweep_outputs(out_dir: Path, rows: list[dict], failures: list[dict],
                        skipped: list[str]) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = sorted(rows, key=lambda r: r["run_id"])
    summary = summarize(rows)
    _atomic_write(out_dir / "runs.csv", rows_to_csv(rows))
    _atomic_write(out_dir / "summary.json",
                  (json.dumps(summary, sort_keys=True, indent=2) + "\n").encode())
    _atomic_write(out_dir / "summary.csv", summary_to_csv(summary))
    manifest = {"failures": failures, "skipped": skipped, "num_runs": len(rows)}
    _atomic_write(out_dir / "manifest.json",
                  (json.dumps(manifest, sort_keys=True, indent=2) + "\n").encode())
    return summary


def write_plots(out_dir: Path, summary: dict) -> list[Path]:
    """Optional SVG bar charts of the mean per-seed ratios."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    for metric in RATIO_METRICS:
        pairs = sorted(summary["ratios"])
        mixes = sorted({m for p in pairs for m in summary["ratios"][p]})
        if not pairs or not mixes:
            continue
        fig, ax = plt.subplots(figsize=(6, 3.2))
        width = 0.8 / len(pairs)
        for pi, pair in enumerate(pairs):
            xs, ys = [], []
            for mi, mix in enumerate(mixes):
                stats = summary["ratios"][pair].get(mix, {}).get(metric)
                if stats is None:
                    continue
                xs.append(mi + pi * width)
                ys.append(stats["mean"])
            ax.bar(xs, ys, width=width, label=pair)
        ax.axhline(1.0, color="black", linewidth=0.8, linestyle="--")
        ax.set_xticks([i + 0.4 - width / 2 for i in range(len(mixes))])
        ax.set_xticklabels(mixes, fontsize=8)
        ax.set_ylabel(f"{metric} ratio")
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / f"ratio_{metric}.svg"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    return written
