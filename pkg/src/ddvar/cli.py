"""Command-line front end: ``ddvar {validate,twin,run-dd,run-global,perf}``.

Every command reads one TOML configuration (``--config``) with optional
``--set section.key=value`` overrides, writes its outputs atomically into the
output directory (``--output``, else ``$DDVAR_OUTPUT_DIR``, else
``output.directory``) and records a manifest. Wall-clock timings go to a
separate ``timings.json`` so that all other files are byte-reproducible.

Exit codes: 0 success, 1 validation failure, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
from importlib import metadata

import numpy as np

from . import io as dio
from . import perfmodel, validate
from .config import load_config
from .errors import ConfigurationError, DdvarError
from .experiment import build_twin
from .orchestrator import convergence_history, run_dd, run_global
from .solver import LOG_FIELDS

EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3
OUTPUT_ENV = "DDVAR_OUTPUT_DIR"
FAULT_ENV = "DDVAR_INJECT_FAULT"


def version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def host_descriptor():
    return {"system": platform.system(), "machine": platform.machine(),
            "python": platform.python_version(), "numpy": np.__version__}


class Run:
    """Output directory bookkeeping: manifest, written files, timings."""

    def __init__(self, command, cfg, outdir):
        self.command = command
        self.cfg = cfg
        self.outdir = outdir
        self.files = []
        self.timings = {}
        self.start = time.perf_counter()
        os.makedirs(outdir, exist_ok=True)
        self._manifest("running")

    def path(self, name):
        return os.path.join(self.outdir, name)

    def json(self, name, doc):
        dio.write_json(self.path(name), doc)
        self.files.append(name)

    def csv(self, name, rows, fields=None):
        dio.write_csv(self.path(name), rows, fields)
        self.files.append(name)

    def snapshot(self, name, states, grid, params):
        dio.write_snapshot(self.path(name), states, grid, params)
        self.files.append(name)

    def _manifest(self, status, exit_code=None):
        doc = {"command": self.command, "status": status, "exit_code": exit_code,
               "version": version(), "seed": self.cfg["assimilation"]["seed"],
               "config": self.cfg.to_dict(), "host": host_descriptor(),
               "outputs": [{"file": f, "sha256": dio.file_digest(self.path(f))}
                           for f in sorted(set(self.files))]}
        dio.write_json(self.path("manifest.json"), doc)

    def finish(self, exit_code, workers):
        self.timings["wall_clock_s"] = time.perf_counter() - self.start
        self.timings["workers"] = workers
        dio.write_json(self.path("timings.json"), self.timings)
        self._manifest("ok" if exit_code == EXIT_OK else "failed", exit_code)


def _report_rows(report):
    rows = []
    for rnd, costs in enumerate(report.local_costs, start=1):
        for key, total in costs.items():
            rows.append({"round": rnd, "j": key[0], "i": key[1], "J_local": total,
                         "change": report.changes[rnd - 1]})
    return rows


def _emit_report(run, name, report, twin):
    run.csv(f"{name}_convergence.csv", report.log_rows, LOG_FIELDS)
    run.csv(f"{name}_rounds.csv", _report_rows(report),
            ("round", "j", "i", "J_local", "change"))
    rows, monotone = convergence_history(report)
    if rows:
        run.csv(f"{name}_errors.csv", rows, ("round", "j", "i", "E"))
    summary = report.summary()
    summary["error_monotone_fraction"] = monotone
    summary["rmse"] = {"background": twin.rmse(report.background),
                       "analysis": twin.rmse(report.analysis)}
    run.json(f"{name}_report.json", summary)
    run.timings[name] = report.timings
    if run.cfg["output"]["snapshots"]:
        run.snapshot(f"{name}_analysis.bin", report.analysis, twin.grid, twin.params)
    return summary


def _rmse_rows(twin, background, analysis):
    bg, an = twin.rmse_by_level(background), twin.rmse_by_level(analysis)
    rows = []
    for k in range(twin.grid.M):
        for v, name in enumerate(("u", "v", "h")):
            rows.append({"level": k, "variable": name, "background_rmse": bg[k, v],
                         "analysis_rmse": an[k, v]})
    return rows


def comparison(dd, glob):
    """DD-versus-global cost comparison and the iteration-count claim."""
    j_dd, j_g = dd.analysis_cost.total, glob.analysis_cost.total
    gathered = dd.gather_cost.total
    slack = 1e-8 * (1 + j_g)
    return {"J_DD": j_dd, "J_G": j_g, "relative_gap": abs(j_dd - j_g) / abs(j_g),
            "J_gathered": gathered,
            "minimum_property": bool(j_g <= j_dd + slack and j_g <= gathered + slack),
            "rho_G": glob.rho_dd, "rho_DD": dd.rho_dd,
            "rho_claim_holds": bool(dd.rho_dd <= glob.rho_dd)}


def cmd_validate(cfg, run, workers):
    v = cfg.validation()
    results = validate.run_checks(n=v["n"], M=v["M"], pairs=v["pairs"], seed=v["seed"],
                                  adjoint_tol=v["adjoint_tol"], taylor_order=v["taylor_order"],
                                  oracle_tol=v["oracle_tol"], params=cfg.params())
    rows = [r.row() for r in results]
    for r in rows:
        run.timings[f"check_{r['check']}_s"] = r.pop("seconds")
    run.csv("checks.csv", rows, [f for f in validate.CHECK_FIELDS if f != "seconds"])
    ok = all(r.passed for r in results)
    run.json("validate_report.json", {"passed": ok, "checks": rows})
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.metric} = {r.value:.6g} "
              f"(tolerance {r.tolerance:g})")
    return EXIT_OK if ok else EXIT_VALIDATION


def _write_inputs(run, twin):
    run.json("observations.json", twin.setup.observations.to_dict())
    run.json("decomposition.json", run.cfg.run_config().decomposition(twin.grid).to_dict())
    if run.cfg["output"]["snapshots"]:
        run.snapshot("truth.bin", twin.truth.states, twin.grid, twin.params)
        run.snapshot("background.bin", twin.setup.background[None], twin.grid, twin.params)


def cmd_twin(cfg, run, workers):
    twin = build_twin(cfg)
    _write_inputs(run, twin)
    rc = cfg.run_config()
    dd = run_dd(twin.setup, rc, reference=twin.truth.states, workers=workers)
    summary = _emit_report(run, "dd", dd, twin)
    doc = {"rmse_background": summary["rmse"]["background"],
           "rmse_analysis": summary["rmse"]["analysis"],
           "skill_ratio": summary["rmse"]["analysis"] / summary["rmse"]["background"]}
    if dd.decomposition.QP > 1:
        glob = run_global(twin.setup, rc, reference=twin.truth.states, workers=workers)
        _emit_report(run, "global", glob, twin)
        doc["comparison"] = comparison(dd, glob)
        if not doc["comparison"]["rho_claim_holds"]:
            print(f"notice: rho_DD = {dd.rho_dd} exceeds rho_G = {glob.rho_dd}")
    run.csv("rmse.csv", _rmse_rows(twin, dd.background, dd.analysis),
            ("level", "variable", "background_rmse", "analysis_rmse"))
    run.json("twin_report.json", doc)
    print(f"background RMSE {doc['rmse_background']:.6g}, analysis RMSE "
          f"{doc['rmse_analysis']:.6g} (ratio {doc['skill_ratio']:.4f})")
    return EXIT_OK


def cmd_run(cfg, run, workers, undecomposed):
    twin = build_twin(cfg)
    _write_inputs(run, twin)
    rc = cfg.run_config()
    runner = run_global if undecomposed else run_dd
    name = "global" if undecomposed else "dd"
    report = runner(twin.setup, rc, reference=twin.truth.states, workers=workers)
    summary = _emit_report(run, name, report, twin)
    print(f"{name}: J = {summary['analysis_cost']['total']:.10g} after {report.rounds} "
          f"round(s), rho = {report.rho_dd}")
    return EXIT_OK


def _load_timings(path):
    with open(path) as fh:
        doc = json.load(fh)
    try:
        return {int(qp): tuple(float(x) for x in vals) for qp, vals in doc.items()}
    except (TypeError, ValueError) as exc:
        raise ConfigurationError("timings file must map QP to [T_global, T_flop, T_oh]",
                                 key="perf.timings") from exc


def cmd_perf(cfg, run, workers):
    p = cfg.perf()
    poly = perfmodel.ComplexityPoly(p["coefficients"])
    notices = []
    timings = None
    if p["timings"]:
        if not os.path.exists(p["timings"]):
            raise ConfigurationError(f"file {p['timings']!r} not found", key="perf.timings")
        timings = _load_timings(p["timings"])
    else:
        notices.append("no timing source given; modeled times used")
    rho_g, rho_dd = p["rho_G"], p["rho_DD"]
    if not (rho_g > 0 and rho_dd > 0):
        notices.append("iteration products not given; rho_G / rho_DD = 1 assumed")
        rho_g = rho_dd = 1.0
    n_loc = 3 * p["n_loc"] ** 2
    model = perfmodel.MemoryModel.calibrate()
    memory = perfmodel.memory_table(model)
    speedup = perfmodel.speedup_table(p["sv_ratio"])
    weak = perfmodel.weak_scaling_table(n_loc, p["qps"], poly, rho_g, rho_dd,
                                        reference=p["reference"], timings=timings)
    strong = perfmodel.strong_scaling_table(n_loc * max(p["qps"]), (1,) + tuple(p["qps"]),
                                            poly, rho_G=rho_g, rho_DD=rho_dd)
    run.csv("memory.csv", memory)
    run.csv("speedup.csv", speedup)
    run.csv("weak_scaling.csv", weak)
    run.csv("strong_scaling.csv", strong)
    run.json("perf_report.json", {
        "memory_model": {"c4_bytes": model.c4, "c0_bytes": model.c0,
                         "max_relative_error": max(r["relative_error"] for r in memory),
                         "ratio_diagnostic": perfmodel.memory_ratio_diagnostic()},
        "complexity": list(poly.coefficients), "rho_G": rho_g, "rho_DD": rho_dd,
        "notices": notices})
    for n in notices:
        print(f"notice: {n}")
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "twin": cmd_twin,
    "run-dd": lambda cfg, run, w: cmd_run(cfg, run, w, undecomposed=False),
    "run-global": lambda cfg, run, w: cmd_run(cfg, run, w, undecomposed=True),
    "perf": cmd_perf,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="ddvar", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML configuration file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one configuration key (repeatable)")
        p.add_argument("--output", help=f"output directory (overrides ${OUTPUT_ENV})")
        p.add_argument("--workers", type=int, default=1, help="threads for local solves")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    fault = os.environ.get(FAULT_ENV)
    if fault:
        validate.FAULTS.add(fault)
    try:
        cfg = load_config(args.config, overrides=args.set)
        if args.workers < 1:
            raise ConfigurationError("need --workers >= 1", key="workers")
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    outdir = args.output or os.environ.get(OUTPUT_ENV) or cfg["output"]["directory"]
    run = Run(args.command, cfg, outdir)
    try:
        code = COMMANDS[args.command](cfg, run, args.workers)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    except (DdvarError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = EXIT_NUMERICAL
    finally:
        if fault:
            validate.FAULTS.discard(fault)
    run.finish(code, args.workers)
    return code
