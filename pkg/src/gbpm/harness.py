"""Experiment orchestration: single runs, parallel sweeps, and reports.

Seeding: a sweep point ``p`` (index into the cartesian product, in the
fixed order eta x horizon x dim x kind) and seed index ``s`` get the run
seed ``SeedSequence([master, p, s]).generate_state(1)[0]`` where ``master``
is ``algorithm.seed`` of the base config. Seeds depend only on these
counters, never on which worker finishes first.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, build_run_config, config_hash
from .drivers import RunAborted, run
from .persist import (SUMMARY_FILE, _clean, _dump_json, ensure_dir, persist_run,
                      read_summary, write_snapshot)

SWEEP_SUMMARY = "sweep_summary.json"
PROGRESS_LOG = "progress.log"
REPORT_METRICS = ("mbr", "abr", "an", "mn", "mbr_unreg", "o2b_gap", "final_gap")


def derive_seed(master: int, point: int, seed_index: int) -> int:
    return int(np.random.SeedSequence([master, point, seed_index]).generate_state(1)[0])


def execute_run(cfg: ExperimentConfig, out_dir, extra: dict | None = None) -> dict:
    """Snapshot, run, persist. A failed run still leaves its prefix on disk."""
    h = config_hash(cfg)
    write_snapshot(out_dir, cfg.canonical(), h)
    rc = build_run_config(cfg)
    fmt, stride = cfg.output.formats, cfg.output.gap_stride
    try:
        rec = run(rc)
    except RunAborted as exc:
        persist_run(exc.record, out_dir, h, gap_stride=stride, formats=fmt, extra=extra)
        raise
    return persist_run(rec, out_dir, h, gap_stride=stride, formats=fmt, extra=extra)


# ---------------------------------------------------------------- sweeps

_AXES = (("eta", "regularizer", "eta"), ("horizon", "algorithm", "horizon"),
         ("dim", "world", "dim"), ("kind", "regularizer", "kind"))


def sweep_points(cfg: ExperimentConfig) -> list[dict]:
    """Cartesian product of the sweep lists; axes left unset contribute one point."""
    axes = []
    for name, _, _ in _AXES:
        values = getattr(cfg.sweep, name)
        axes.append([(name, v) for v in values] if values else [None])
    return [dict(p for p in combo if p is not None) for combo in itertools.product(*axes)]


def point_config(cfg: ExperimentConfig, point: dict, seed: int) -> ExperimentConfig:
    blocks = {"world": cfg.world.model_dump(), "regularizer": cfg.regularizer.model_dump(),
              "algorithm": cfg.algorithm.model_dump()}
    for name, block, field in _AXES:
        if name in point:
            blocks[block][field] = point[name]
    blocks["algorithm"]["seed"] = seed
    return ExperimentConfig(output=cfg.output, sweep=type(cfg.sweep)(), **blocks)


def _job(args):
    cfg, out_dir, extra, log_path = args
    t0 = time.perf_counter()
    status = "ok"
    try:
        summary = execute_run(cfg, out_dir, extra)
    except RunAborted as exc:
        summary, status = {"error": str(exc)}, "aborted"
    with open(log_path, "a") as fh:  # one short line per write, appended atomically
        fh.write(json.dumps({"run": Path(out_dir).name, "status": status,
                             "seconds": round(time.perf_counter() - t0, 3)}) + "\n")
    return Path(out_dir).name, status, summary


def run_sweep(cfg: ExperimentConfig, root, workers: int = 1) -> dict:
    """Run every (point, seed) pair; writes one directory per run plus an aggregate."""
    root = ensure_dir(root)
    master = cfg.algorithm.seed
    points = sweep_points(cfg)
    jobs = []
    for p, point in enumerate(points):
        for s in range(cfg.sweep.seeds):
            seed = derive_seed(master, p, s)
            name = f"point{p:03d}_seed{s:03d}"
            extra = {"point": _clean(point), "point_index": p, "seed_index": s, "seed": seed}
            jobs.append((point_config(cfg, point, seed), root / name, extra, root / PROGRESS_LOG))
    _dump_json({"master_seed": master, "points": _clean(points), "seeds": cfg.sweep.seeds,
                "config_hash": config_hash(cfg), "config": cfg.canonical()}, root / "sweep_config.json")
    if workers <= 1:
        results = [_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_job, jobs))
    runs = sorted(({"run": n, "status": st} for n, st, _ in results), key=lambda r: r["run"])
    agg = {"master_seed": master, "n_runs": len(runs), "runs": runs,
           "report": build_report(root, write=False)["points"]}
    _dump_json(_clean(agg), root / SWEEP_SUMMARY)
    return agg


# ---------------------------------------------------------------- reports

def _metrics(summary: dict) -> dict:
    reg = summary.get("regrets", {})
    out = {k: reg.get(k) for k in ("mbr", "abr", "an", "mn", "mbr_unreg")}
    out["o2b_gap"] = summary.get("o2b_gap")
    out["final_gap"] = summary.get("final", {}).get("dual_gap_max")
    return out


def _stats(values) -> dict:
    vals = [v for v in values if isinstance(v, (int, float)) and math.isfinite(v)]
    if not vals:
        return {"n": 0}
    return {"n": len(vals), "mean": statistics.fmean(vals), "median": statistics.median(vals),
            "std": statistics.pstdev(vals), "min": min(vals), "max": max(vals)}


def build_report(root, write: bool = True) -> dict:
    """Group run summaries under ``root`` by sweep point and tabulate regret statistics.

    Also writes ``report_long.csv`` (one row per run and metric), which is the
    plot-ready format.
    """
    root = Path(root)
    files = sorted(p for p in root.rglob(SUMMARY_FILE))
    groups: dict[str, dict] = {}
    long_rows = []
    for f in files:
        s = read_summary(f)
        point = s.get("point", {})
        key = json.dumps(point, sort_keys=True)
        g = groups.setdefault(key, {"point": point, "runs": [], "metrics": {m: [] for m in REPORT_METRICS}})
        run_name = str(f.parent.relative_to(root)) if f.parent != root else "."
        g["runs"].append(run_name)
        for m, v in _metrics(s).items():
            g["metrics"][m].append(v)
            long_rows.append((run_name, key, m, v))
    points = []
    for key in sorted(groups):
        g = groups[key]
        points.append({"point": g["point"], "runs": g["runs"],
                       "stats": {m: _stats(v) for m, v in g["metrics"].items()}})
    report = {"root": str(root), "n_runs": len(files), "points": points}
    if write:
        _dump_json(_clean(report), root / "report.json")
        (root / "report.md").write_text(report_markdown(report))
        with (root / "report_long.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("run", "point", "metric", "value"))
            for run_name, key, m, v in long_rows:
                w.writerow((run_name, key, m, "" if v is None else repr(float(v))))
    return _clean(report)


def report_markdown(report: dict) -> str:
    cols = ("mbr", "abr", "o2b_gap", "final_gap")
    lines = ["| point | runs | " + " | ".join(f"{c} (median)" for c in cols) + " |",
             "|---|---|" + "---|" * len(cols)]
    for p in report["points"]:
        label = ", ".join(f"{k}={v}" for k, v in p["point"].items()) or "-"
        cells = []
        for c in cols:
            st = p["stats"][c]
            cells.append(f"{st['median']:.4g}" if st.get("n") else "n/a")
        lines.append(f"| {label} | {len(p['runs'])} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
