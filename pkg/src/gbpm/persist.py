"""On-disk artifacts of a run: config snapshot, trace CSV, summary JSON."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .drivers import RunRecord, online_to_batch, regret_suite

TRACE_HEADER = ("t", "dual_gap_max", "dual_gap_min", "cum_mbr", "cum_abr",
                "est_frob_err", "est_op_err")
TRACE_FILE = "trace.csv"
SUMMARY_FILE = "summary.json"
SNAPSHOT_FILE = "config.json"


def _fmt(x) -> str:
    # repr of a Python float is the shortest string that round-trips exactly
    return repr(float(x))


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    probe = p / ".write-probe"
    probe.write_text("")
    probe.unlink()
    return p


def write_snapshot(out_dir, config: dict, config_hash: str) -> Path:
    """Written before any computation so partial runs stay attributable."""
    out = ensure_dir(out_dir)
    path = out / SNAPSHOT_FILE
    _dump_json({"config_hash": config_hash, "config": config}, path)
    return path


def write_trace(record: RunRecord | None, path, gap_stride: int = 1) -> Path:
    """Per-round trace; rows are thinned by ``gap_stride`` but the last round is always kept."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        if record is None or record.rounds == 0:
            return path
        cols = (record.gap_max, record.gap_min, record.cum_mbr, record.cum_abr,
                record.round_frob_err, record.round_op_err)
        T = record.rounds
        rows = np.arange(gap_stride - 1, T, gap_stride)
        if rows.size == 0 or rows[-1] != T - 1:
            rows = np.append(rows, T - 1)
        for i in rows:
            w.writerow([str(int(i) + 1)] + [_fmt(c[i]) for c in cols])
    return path


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isnan(x) or math.isinf(x):
            return str(x)
        return x
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def summarize(record: RunRecord, config_hash: str, extra: dict | None = None) -> dict:
    regrets = regret_suite(record)
    if record.rounds:
        o2b = online_to_batch(record)
        o2b_gap, o2b_bound = o2b["gap"], o2b["bound"]
    else:
        o2b_gap = o2b_bound = 0.0
    final = {}
    if record.rounds:
        final = {"dual_gap_max": float(record.gap_max[-1]),
                 "est_frob_err": float(record.round_frob_err[-1]),
                 "est_op_err": float(record.round_op_err[-1])}
    out = {
        "config_hash": config_hash,
        "rounds": record.rounds,
        "horizon": record.config.horizon,
        "regrets": regrets,
        "o2b_gap": o2b_gap,
        "o2b_bound": o2b_bound,
        "final": final,
        "n_policies": int(len(record.policies)),
        "max_solver_residual": float(np.nanmax(record.solver_residuals))
        if np.isfinite(record.solver_residuals).any() else None,
        "meta": record.meta,
        "timing": record.timing,
        "error": record.error,
    }
    if extra:
        out.update(extra)
    return _clean(out)


def persist_run(record: RunRecord, out_dir, config_hash: str, *, gap_stride: int = 1,
                formats=("csv", "json"), extra: dict | None = None) -> dict:
    """Write the trace and summary for ``record``; returns the summary dict."""
    out = ensure_dir(out_dir)
    summary = summarize(record, config_hash, extra)
    if "csv" in formats:
        write_trace(record, out / TRACE_FILE, gap_stride)
    if "json" in formats:
        _dump_json(summary, out / SUMMARY_FILE)
    return summary


def read_summary(path) -> dict:
    return json.loads(Path(path).read_text())


def read_trace(path) -> dict[str, np.ndarray]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not body:
        return {h: np.zeros(0) for h in header}
    arr = np.array(body, dtype=float)
    return {h: arr[:, i] for i, h in enumerate(header)}
