"""Command-line runner.

Subcommands:

    run <config> [--out DIR] [--snapshot-every N]
        Integrate the configured system, streaming the diagnostics CSV as
        records arrive (partial output survives a mid-run failure), then
        write the final-state snapshot, the verdict, and the manifest.
    verify <diagnostics.csv>
        Offline re-evaluation of every verdict check from a CSV alone.
    oracle <n0> <m0> <c0> <t>
        Print the homogeneous benchmark solution "n m c" at time t.
    mms-convergence [--levels K]
        Manufactured-solution convergence orders of the diffusion and
        advection stencils on K doubling 2D grids (default 3: 16/32/64).
    report <diagnostics.csv> [--out DIR]
        Render time-series figures (PNG) from a diagnostics CSV.

Exit codes: 0 success / all checks pass, 1 invariant or convergence-order
failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, emit_config, parse_config
from .diagnostics import offline_verdict, record, verdict
from .fields import Grid, ScalarField, lp_norm
from .operators import advect_conservative, laplacian_neumann
from .oracle import HomogeneousIC, homogeneous_solution, mms_sources
from .output import (
    DiagnosticsCsvWriter,
    read_diagnostics_csv,
    write_manifest,
    write_snapshot,
)
from .stepping import run as run_simulation

USAGE_ERROR = 2
CHECK_FAILED = 1

# acceptance windows for the manufactured-solution convergence orders
DIFFUSION_ORDER_RANGE = (1.7, 2.3)
ADVECTION_ORDER_RANGE = (0.8, 1.3)


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="coralsim",
        description="Chemotaxis–fluid fertilization simulator with "
                    "self-verifying diagnostics.")
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="integrate a configured system")
    p_run.add_argument("config", help="path to the INI run configuration")
    p_run.add_argument("--out", default=".", help="output directory")
    p_run.add_argument("--snapshot-every", type=int, default=0, metavar="N",
                       help="write a binary snapshot every N records")

    p_ver = sub.add_parser("verify", help="offline verdict from a CSV")
    p_ver.add_argument("csv", help="diagnostics CSV to audit")

    p_or = sub.add_parser("oracle", help="homogeneous benchmark solution")
    p_or.add_argument("n0", type=float)
    p_or.add_argument("m0", type=float)
    p_or.add_argument("c0", type=float)
    p_or.add_argument("t", type=float)

    p_mms = sub.add_parser("mms-convergence",
                           help="stencil convergence orders")
    p_mms.add_argument("--levels", type=int, default=3,
                       help="number of doubling grid levels from 16^2")

    p_rep = sub.add_parser("report", help="render figures from a CSV")
    p_rep.add_argument("csv", help="diagnostics CSV to plot")
    p_rep.add_argument("--out", default=".", help="output directory")
    return ap


def _cmd_run(args) -> int:
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return USAGE_ERROR
    try:
        settings = parse_config(text)
        cfg = settings.sim_config()
    except (ConfigError, ValueError) as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return USAGE_ERROR
    if args.snapshot_every < 0:
        print("error: --snapshot-every must be >= 0", file=sys.stderr)
        return USAGE_ERROR

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    csv_path = out / "diagnostics.csv"
    records = []

    failure = None
    with open(csv_path, "w", encoding="ascii") as stream:
        writer = DiagnosticsCsvWriter(stream, meta={
            "kappa": repr(settings.kappa),
            "tol_conv": "none" if settings.tol_conv is None
            else repr(settings.tol_conv),
            "p": repr(settings.p),
        })

        def sink(state):
            rec = record(state, cfg, p=settings.p)
            writer.write_row(rec)
            records.append(rec)
            idx = len(records) - 1
            if args.snapshot_every > 0 and idx % args.snapshot_every == 0:
                write_snapshot(state, out / f"snap_{idx:05d}.bin")

        try:
            final_state = run_simulation(cfg, sink)
        except RuntimeError as exc:
            failure = str(exc)

    if failure is None:
        write_snapshot(final_state, out / "final.bin")
        if len(records) >= 2:
            v = verdict(records, cfg)
            lines = v.lines()
            passed = v.passed
        else:
            lines = ["[SKIPPED] verdict: fewer than 2 records"]
            passed = True
        status = "pass" if passed else "fail"
    else:
        lines = [f"[FAIL   ] run aborted: {failure}"]
        passed = False
        status = "aborted"

    verdict_path = out / "verdict.txt"
    verdict_path.write_text(
        "\n".join(lines + [f"RESULT: {'PASS' if passed else 'FAIL'}"]) + "\n",
        encoding="utf-8")
    write_manifest({
        "version": __version__,
        "config_ini": emit_config(settings),
        "grid": [settings.nx, settings.ny, settings.nz],
        "extent": [settings.lx, settings.ly, settings.lz],
        "scheme": {"diffusion": "central", "advection": settings.advection,
                   "chemotaxis": "upwind"},
        "started_utc": started,
        "finished_utc": datetime.now(timezone.utc).isoformat(),
        "records": len(records),
        "csv": csv_path.name,
        "verdict": verdict_path.name,
        "status": status,
    }, out / "manifest.json")

    for line in lines:
        print(line)
    print(f"RESULT: {'PASS' if passed else 'FAIL'}")
    return 0 if passed else CHECK_FAILED


def _cmd_verify(args) -> int:
    try:
        records, meta = read_diagnostics_csv(args.csv)
        kappa = float(meta.get("kappa", "1.0"))
        tol_raw = meta.get("tol_conv", "none")
        tol_conv = None if tol_raw == "none" else float(tol_raw)
        v = offline_verdict(records, kappa=kappa, tol_conv=tol_conv)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    for line in v.lines():
        print(line)
    print(f"RESULT: {'PASS' if v.passed else 'FAIL'}")
    return 0 if v.passed else CHECK_FAILED


def _cmd_oracle(args) -> int:
    try:
        ic = HomogeneousIC(args.n0, args.m0, args.c0)
        n, m, c = homogeneous_solution(ic, args.t)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    print(f"{n:.17g} {m:.17g} {c:.17g}")
    return 0


def mms_convergence_orders(levels: int = 3) -> dict[str, dict]:
    """L2 errors and fitted order for each manufactured stencil case.

    Grids are 2D, 16*2^i cells per side.  The diffusion case compares
    -lap_h(target) against the exact source; the advection case compares the
    upwind flux divergence against the exact div(u q).
    """
    if levels < 2:
        raise ValueError("need at least 2 levels to fit an order")
    sizes = [16 * 2 ** i for i in range(levels)]
    out = {}
    for case_name in ("diffusion", "advection"):
        errs = []
        for nx in sizes:
            grid = Grid((nx, nx, 1), (1.0, 1.0, 1.0))
            case = mms_sources(case_name, grid)
            if case_name == "diffusion":
                approx = -laplacian_neumann(case.target).values
            else:
                approx = advect_conservative(case.velocity, case.target).values
            errs.append(lp_norm(ScalarField(grid, approx - case.source.values),
                                2.0))
        slope = -float(np.polyfit(np.log(sizes), np.log(errs), 1)[0])
        out[case_name] = {"sizes": sizes, "errors": errs, "order": slope}
    return out


def _cmd_mms(args) -> int:
    try:
        study = mms_convergence_orders(args.levels)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    ok = True
    for case_name, window in (("diffusion", DIFFUSION_ORDER_RANGE),
                              ("advection", ADVECTION_ORDER_RANGE)):
        data = study[case_name]
        passed = window[0] <= data["order"] <= window[1]
        ok = ok and passed
        errs = "  ".join(f"{e:.3e}" for e in data["errors"])
        print(f"[{'PASS' if passed else 'FAIL'}] {case_name}: order "
              f"{data['order']:.3f} (window {window[0]}..{window[1]}); "
              f"L2 errors {errs}")
    print(f"RESULT: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else CHECK_FAILED


def _cmd_report(args) -> int:
    from .report import render_report
    try:
        records, meta = read_diagnostics_csv(args.csv)
        paths = render_report(records, meta, Path(args.out))
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    for p in paths:
        print(p)
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {
        "run": _cmd_run,
        "verify": _cmd_verify,
        "oracle": _cmd_oracle,
        "mms-convergence": _cmd_mms,
        "report": _cmd_report,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
