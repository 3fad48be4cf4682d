"""Command line: ``collbreak run|bounds|sweep|verify``.

Exit codes: 0 completed, 1 configuration error, 2 blow-up detected (an
expected outcome), 3 verification failure, 4 solver gave up (step floor or
step budget).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import config as C
from . import experiments as E
from .diagnostics import moment
from .discretization import project_initial, write_snapshot
from .model import ConfigurationError

logger = logging.getLogger("collbreak")

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_VERIFY, EXIT_SOLVER = 0, 1, 2, 3, 4
STATUS_EXIT = {"completed": EXIT_OK, "blowup_detected": EXIT_BLOWUP,
               "step_floor_hit": EXIT_SOLVER, "max_steps_hit": EXIT_SOLVER}
TREND_SLACK = 1e-6


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_run(exp: E.Experiment, out: Path) -> dict:
    """Emit ``moments.csv``, snapshots, tables and ``summary.json`` into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    cfg, res = exp.config, exp.result
    files = []
    (out / "config.yaml").write_text(C.dump(cfg))
    files.append("config.yaml")
    res.diagnostics.write_csv(out / "moments.csv")
    files.append("moments.csv")
    snap_dir = out / "snapshots"
    snap_dir.mkdir(exist_ok=True)
    for k, st in enumerate(res.snapshots):
        rel = f"snapshots/snapshot_{k:04d}.txt"
        write_snapshot(out / rel, st)
        files.append(rel)

    summary = {"name": cfg.name, "status": res.status, "events": dict(res.event_times)}
    if cfg.diagnostics.oracle:
        rows = E.oracle_rows(exp)
        with open(out / "oracle.csv", "w") as fh:
            fh.write("time,m,simulated,oracle,rel_dev,in_window\n")
            for r in rows:
                fh.write(f"{r['time']:.12g},{r['m']:g},{r['simulated']:.12g},{r['oracle']:.12g},"
                         f"{r['rel_dev']:.6e},{int(r['in_window'])}\n")
        files.append("oracle.csv")
        summary["oracle_max_deviation"] = E.oracle_max_deviation(exp)
    bounds = E.bound_checks(exp)
    if "T_shatter_upper" in bounds and "table" in bounds["T_shatter_upper"]:
        with open(out / "shatter_table.csv", "w") as fh:
            fh.write("m,T_shatter_upper\n")
            for m, v in bounds["T_shatter_upper"]["table"]:
                fh.write(f"{m:g},{v:.12g}\n")
        files.append("shatter_table.csv")
    summary["bounds"] = bounds
    final = res.snapshots[-1] if res.snapshots else res.final
    summary.update({
        "wall_time": exp.wall_time,
        "method": res.method,
        "steps": res.steps,
        "rejected_steps": res.rejected,
        "final_time": res.final.time,
        "final_moments": {f"M_{m:g}": moment(final, m) for m in cfg.diagnostics.moment_orders},
        "escaped_mass": res.escaped_mass,
        "escaped_number": res.escaped_number,
        "clipped_mass": res.clipped_mass,
        "ledger_drift": res.ledger_drift,
        "max_mass_residual": max(res.diagnostics.mass_residual, default=0.0),
        "projection_loss": exp.prepared.projection_loss,
        "config": cfg.to_dict(),
        "files": {rel: sha256(out / rel) for rel in files},
    })
    summary = _jsonable(summary)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=False) + "\n")
    return summary


def _say(args, text=""):
    if not args.quiet:
        print(text)


def cmd_run(args) -> int:
    cfg = C.load(args.config)
    out = Path(args.out or Path("runs") / cfg.name)
    exp = E.run(cfg)
    summary = write_run(exp, out)
    _say(args, f"{cfg.name}: {summary['status']} at t={summary['final_time']:.6g} "
               f"({summary['steps']} steps, {summary['wall_time']:.2f} s)")
    for kind, ev in summary["events"].items():
        _say(args, f"  event {kind} at t={ev:.6g}")
    _say(args, f"  max mass residual {summary['max_mass_residual']:.3g}, "
               f"ledger drift {summary['ledger_drift']:.3g}")
    if "oracle_max_deviation" in summary:
        _say(args, "  oracle max deviation: " + ", ".join(
            f"{k} {v:.3g}" for k, v in summary["oracle_max_deviation"].items()))
    _say(args, f"  wrote {out}")
    return STATUS_EXIT[summary["status"]]


def bounds_report(cfg: C.ExperimentConfig) -> list[str]:
    grid = cfg.grid.build()
    state, _ = project_initial(grid, cfg.initial.build())
    lines = [f"bounds for {cfg.name}: alpha={cfg.kernel.alpha:g} beta={cfg.kernel.beta:g} "
             f"lambda={cfg.kernel.lam:g} nu={cfg.daughter.nu:g}",
             f"  projected data: rho={moment(state, 1.0):.6g} M0={moment(state, 0.0):.6g}"]
    labels = {"T0": "T₀", "M0_envelope_sub": "M0 sub-envelope blow-up time",
              "M0_envelope_super": "M0 super-envelope growth rate",
              "M_lambda_lower": "M_lambda comparison blow-up time",
              "M_lambda_lower_rate2": "M_lambda comparison blow-up time (rate 2)",
              "T_exist_upper_rate2": "T_exist_upper (rate 2)"}
    for row in E.bound_values(cfg, state):
        label = labels.get(row["kind"], row["kind"])
        if row["value"] is None and row["reason"]:
            lines.append(f"  {label}: not applicable ({row['reason']})")
            continue
        lines.append(f"  {label} = {row['value']:.6g}")
        if row["kind"] == "T_shatter_upper":
            lines.append("    m        T_shatter_upper")
            for m, v in row["parameters"]["table"]:
                lines.append(f"    {m:<8.4g} {v:.6g}")
    rep = E.certification(cfg)
    lines.append(f"  assumption certification (p={rep.p:g}, lambda={rep.lam:g}, "
                 f"tol={rep.tolerance:g}): {'pass' if rep.all_pass else 'FAIL'}")
    for name, num, ana in rep.rows():
        lines.append(f"    {name:<10} numeric {num:.12g}  analytic {ana:.12g}")
    lines.append(f"    daughter mass residual {rep.mass_moment_residual:.3g}")
    return lines


def cmd_bounds(args) -> int:
    cfg = C.load(args.config)
    print("\n".join(bounds_report(cfg)))
    return EXIT_OK


def _sweep_point(job):
    data, out, probe = job
    cfg = C.from_dict(data)
    exp = E.run(cfg, extra_times=[probe])
    summary = write_run(exp, Path(out))
    row = {"status": exp.result.status,
           "shatter_onset": exp.result.event_times.get("shatter", math.nan),
           "small_fraction": E.small_fraction(exp, probe)}
    if cfg.diagnostics.oracle:
        row["oracle_max_deviation"] = max(summary["oracle_max_deviation"].values())
    return _jsonable(row)


def cmd_sweep(args) -> int:
    cfg = C.load(args.config)
    if cfg.sweep is None:
        raise C.ConfigError(f"{args.config}:1: no sweep section")
    out = Path(args.out or Path("runs") / cfg.name)
    out.mkdir(parents=True, exist_ok=True)
    probe = cfg.sweep.probe_time if cfg.sweep.probe_time is not None else cfg.time.t_end
    jobs = []
    for k, value in enumerate(cfg.sweep.values):
        point = cfg.with_value(cfg.sweep.parameter, value)
        jobs.append((point.to_dict(), str(out / f"point_{k:02d}"), probe))
    if args.threads > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(job) for job in jobs]
    for value, row in zip(cfg.sweep.values, rows):
        row["value"] = value
    report = trend_report(cfg, rows, probe)
    cols = ["value", "status", "shatter_onset", "small_fraction"]
    if cfg.diagnostics.oracle:
        cols.append("oracle_max_deviation")
    with open(out / "trend.csv", "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(row[c] if c == "status" else f"{row[c]:.12g}" for c in cols) + "\n")
    (out / "trend.json").write_text(json.dumps(_jsonable(report), indent=2) + "\n")
    _say(args, f"sweep {cfg.name} over {cfg.sweep.parameter} (probe t={probe:g}, "
               f"eps={E.shatter_size(cfg):g})")
    _say(args, "  " + "  ".join(f"{c:>20}" for c in cols))
    for row in rows:
        _say(args, "  " + "  ".join(f"{row[c]:>20}" if c == "status" else f"{row[c]:>20.12g}"
                                     for c in cols))
    for key, verdict in report["verdicts"].items():
        _say(args, f"  {key}: {verdict}")
    _say(args, f"  small_fraction spread {report['small_fraction_spread']:.3g}")
    _say(args, f"  wrote {out}")
    return EXIT_SOLVER if any(STATUS_EXIT[r["status"]] == EXIT_SOLVER for r in rows) else EXIT_OK


def trend_report(cfg: C.ExperimentConfig, rows: list[dict], probe: float) -> dict:
    verdicts = {key: E.trend_verdict([r[key] for r in rows], TREND_SLACK)
                for key in ("shatter_onset", "small_fraction", "oracle_max_deviation")
                if key in rows[0]}
    fr = [r["small_fraction"] for r in rows]
    return {"parameter": cfg.sweep.parameter, "probe_time": probe,
            "shatter_size": E.shatter_size(cfg), "slack": TREND_SLACK, "points": rows,
            "verdicts": verdicts, "small_fraction_spread": max(fr) - min(fr)}


def cmd_verify(args) -> int:
    from .verification import run_suite

    results = run_suite(fault=args.inject_fault,
                        on_check=None if args.quiet else lambda c: print(c.line(), flush=True))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify.txt").write_text("".join(c.line() + "\n" for c in results))
    failed = [c for c in results if not c.passed]
    if failed:
        print(f"verify failed: {failed[0].name}", file=sys.stderr)
        return EXIT_VERIFY
    _say(args, f"verify passed: {len(results)} invariants")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")
    common.add_argument("--quiet", action="store_true", help="only print errors")
    parser = argparse.ArgumentParser(prog="collbreak", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fun, helptext in (("run", cmd_run, "run one simulation"),
                                ("bounds", cmd_bounds, "print analytic bounds"),
                                ("sweep", cmd_sweep, "run a parameter sweep")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("config", help="experiment YAML file or preset name")
        p.set_defaults(func=fun)
    p = sub.add_parser("verify", parents=[common], help="run the invariant suite on the presets")
    p.add_argument("--inject-fault", choices=["gain"], default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)
    return parser


def _resolve(path: str) -> str:
    """Accept a preset name where a config path is expected."""
    if Path(path).exists() or path.endswith((".yaml", ".yml")):
        return path
    try:
        return str(C.preset_path(path))
    except ConfigurationError:
        return path


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    if hasattr(args, "config"):
        args.config = _resolve(args.config)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
