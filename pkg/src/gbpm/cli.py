"""Command line entry point: ``gbpm {run,sweep,verify,t0,report}``.

Exit codes: 0 ok, 1 a verification check failed, 2 bad configuration,
3 filesystem error, 4 numerical failure (solver or estimator). Errors are
written to stderr as one JSON object with ``error`` and ``message`` keys.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, build_run_config, config_hash, load_config, worker_count
from .drivers import T0Mode, RunAborted, choose_T0, t0_params
from .estimators import EstimationError
from .game import SolverError
from .persist import _clean

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3, 4


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", nargs="?", help="YAML config file (defaults used when omitted)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="BLOCK.FIELD=VALUE",
                   help="override one config field, e.g. --set regularizer.eta=4 (repeatable)")
    p.add_argument("--seed", type=int, help="shortcut for --set algorithm.seed=N")
    p.add_argument("--eta", help="shortcut for --set regularizer.eta=X")
    p.add_argument("--horizon", type=int, help="shortcut for --set algorithm.horizon=T")
    p.add_argument("--out", help="output directory (overrides output.directory and the env var)")


def _load(args) -> "object":
    ov = list(args.overrides)
    for flag, key in (("seed", "algorithm.seed"), ("eta", "regularizer.eta"),
                      ("horizon", "algorithm.horizon")):
        val = getattr(args, flag, None)
        if val is not None:
            ov.append(f"{key}={val}")
    cfg = load_config(args.config, ov)
    if getattr(args, "out", None):
        cfg.output.directory = args.out
    return cfg


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gbpm", description="Regularized preference-game simulator.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one configuration")
    _add_config_args(p)

    p = sub.add_parser("sweep", help="cartesian sweep over the config's sweep block")
    _add_config_args(p)
    p.add_argument("--workers", type=int, help="process count (default: $GBPM_WORKERS or 1)")

    p = sub.add_parser("verify", help="run the inequality checks; nonzero exit on any failure")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--full", action="store_true", help="larger instance counts")
    p.add_argument("--json", dest="json_path", help="also write the JSON report to this file")

    p = sub.add_parser("t0", help="print exploration lengths for both schedules")
    _add_config_args(p)
    p.add_argument("--horizons", type=float, nargs="+", help="horizons to evaluate (default: config horizon)")

    p = sub.add_parser("report", help="summarize run directories into JSON and markdown tables")
    p.add_argument("root", help="directory containing run outputs")
    return ap


def _cmd_run(args) -> int:
    from .harness import execute_run
    cfg = _load(args)
    out = Path(cfg.output.directory) / f"run_{config_hash(cfg)[:12]}"
    if args.out:
        out = Path(args.out)
    summary = execute_run(cfg, out)
    print(json.dumps({"output": str(out), "config_hash": summary["config_hash"],
                      "regrets": summary["regrets"], "o2b_gap": summary["o2b_gap"]}, indent=2))
    return EXIT_OK


def _cmd_sweep(args) -> int:
    from .harness import run_sweep
    cfg = _load(args)
    root = Path(args.out) if args.out else Path(cfg.output.directory) / f"sweep_{config_hash(cfg)[:12]}"
    agg = run_sweep(cfg, root, worker_count(args.workers))
    bad = [r["run"] for r in agg["runs"] if r["status"] != "ok"]
    print(json.dumps({"output": str(root), "n_runs": agg["n_runs"], "aborted": bad}, indent=2))
    return EXIT_NUMERIC if bad else EXIT_OK


def _cmd_verify(args) -> int:
    from .theory import verify_all
    reports = verify_all(seed=args.seed, quick=not args.full)
    for r in reports:
        print(r.line(), file=sys.stderr)
    ok = all(r.passed for r in reports)
    payload = _clean({"passed": ok, "checks": [r.to_dict() for r in reports]})
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.json_path:
        Path(args.json_path).write_text(text + "\n")
    print(text)
    return EXIT_OK if ok else EXIT_VERIFY


def _cmd_t0(args) -> int:
    cfg = _load(args)
    rc = build_run_config(cfg)
    params = t0_params(rc)
    horizons = [int(h) for h in (args.horizons or [cfg.algorithm.horizon])]
    rows = [{"T": T,
             "eta_aware": choose_T0(T, T0Mode.ETA_AWARE, params, cfg.algorithm.t0_constant),
             "eta_free": choose_T0(T, T0Mode.ETA_FREE, params, cfg.algorithm.t0_constant)}
            for T in horizons]
    print(json.dumps(_clean({"params": vars(params), "constant": cfg.algorithm.t0_constant,
                             "rows": rows}), indent=2))
    return EXIT_OK


def _cmd_report(args) -> int:
    from .harness import build_report, report_markdown
    root = Path(args.root)
    if not root.is_dir():
        raise FileNotFoundError(f"no such directory: {root}")
    report = build_report(root)
    print(report_markdown(report), end="")
    return EXIT_OK


_COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "verify": _cmd_verify, "t0": _cmd_t0,
             "report": _cmd_report}


def _fail(code: int, category: str, message: str, **extra) -> int:
    print(json.dumps({"error": category, "message": message, **extra}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc), field=exc.field)
    except OSError as exc:
        return _fail(EXIT_IO, "io", str(exc))
    except (RunAborted, SolverError, EstimationError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, "numerical", str(exc))
    except ValueError as exc:
        # domain validation inside the library (e.g. a reference with zero mass)
        return _fail(EXIT_CONFIG, "config", str(exc))


if __name__ == "__main__":
    sys.exit(main())
