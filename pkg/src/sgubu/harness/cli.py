"""Command-line entry point.

    sgubu [global flags] {sweep,spike,blr,bounds,verify} [command flags]

Exit codes: 0 success, 2 configuration or regime error, 3 numeric failure,
4 verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from ..errors import NumericError, ParameterError, SgubuError
from .config import ConfigError, ExperimentConfig, load_config
from .experiments import bounds_report, bounds_rows, run_bias_sweep, run_blr, run_spike_table
from .io import write_csv, write_manifest
from .verify import FAULTS, report_json, run_verify

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_VERIFY = 4

log = logging.getLogger("sgubu")


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    default = argparse.SUPPRESS if suppress else None
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=default, help="TOML configuration file")
    p.add_argument("--seed", type=int, default=default, help="master seed (unsigned 64-bit)")
    p.add_argument("--threads", type=int, default=default, help="worker threads for experiment cells")
    p.add_argument("--out", default=default, help="output directory")
    p.add_argument("--allow-out-of-regime", action="store_true", default=argparse.SUPPRESS if suppress else False,
                   help="run cells violating h < 1/(2 gamma), tagging their rows")
    p.add_argument("--backend", choices=("cython", "python"), default=default, help="step-kernel backend")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgubu", description=__doc__.split("\n\n")[0],
                                     parents=[_global_flags(False)])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    child = [_global_flags(True)]
    sub.add_parser("sweep", parents=child, help="W1 bias versus step size on the toy target")
    sub.add_parser("spike", parents=child, help="f_k bias under spike, Gaussian and no gradient noise")
    sub.add_parser("blr", parents=child, help="mean-potential error for Bayesian logistic regression")
    b = sub.add_parser("bounds", parents=child, help="evaluate the bias bound; optionally certify a sample")
    b.add_argument("--format", choices=("json", "text"), default=None)
    b.add_argument("--certificate", metavar="POINTS",
                   help="text file of points (one per row); writes a coupling certificate for them")
    b.add_argument("--p", type=int, choices=(1, 2), default=None, help="Wasserstein order")
    v = sub.add_parser("verify", parents=child, help="run the verification suites")
    v.add_argument("--inject-fault", choices=FAULTS, default=None)
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg.experiment = args.command
    for name in ("seed", "threads", "out", "backend"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if args.allow_out_of_regime:
        cfg.allow_out_of_regime = True
    if args.command == "bounds":
        if args.format:
            cfg.bounds["format"] = args.format
        if args.p:
            cfg.bounds["p"] = args.p
    if args.command == "verify" and args.inject_fault:
        cfg.verify["inject_fault"] = args.inject_fault
    return cfg.validate()


def _timings(rows) -> dict:
    return {"|".join(str(k) for k in r.key): r.wall_time for r in rows if r.wall_time}


def _run(cfg, args) -> int:
    out = Path(cfg.out)
    t0 = time.perf_counter()
    if cfg.experiment in ("sweep", "spike", "blr"):
        driver = {"sweep": run_bias_sweep, "spike": run_spike_table, "blr": run_blr}[cfg.experiment]
        rows = driver(cfg)
        csv_path = write_csv(rows, out / f"{cfg.experiment}.csv")
        write_manifest(cfg, out, files=[csv_path.name],
                       timings={"total": time.perf_counter() - t0, "cells": _timings(rows)})
        print(csv_path)
        return EXIT_OK
    if cfg.experiment == "bounds":
        report = bounds_report(cfg)
        files = [write_csv(bounds_rows(cfg, report), out / "bounds.csv").name]
        if args.certificate:
            from ..coupling import center_atoms, chain_certificate
            from ..rng import cell_seed, generator

            points = np.loadtxt(args.certificate, ndmin=2)
            if points.shape[0] % 2:
                points = points[:-1]
            cert = chain_certificate(center_atoms(points, cfg.bounds["p"]),
                                     rng=generator(cell_seed(cfg.seed, "certificate")))
            (out / "certificate.json").write_text(cert.to_json() + "\n")
            files.append("certificate.json")
            report["certificate_total"] = cert.total
        (out / "bounds.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        files.append("bounds.json")
        write_manifest(cfg, out, files=files, timings={"total": time.perf_counter() - t0})
        if cfg.bounds["format"] == "json":
            print(json.dumps(report, indent=2, sort_keys=True))
        else:
            for key in sorted(report):
                print(f"{key:32s} {report[key]}")
        return EXIT_OK
    results = run_verify(cfg)
    text = report_json(results)
    out.mkdir(parents=True, exist_ok=True)
    (out / "verify_report.json").write_text(text)
    write_manifest(cfg, out, files=["verify_report.json"], timings={"total": time.perf_counter() - t0})
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name} ({r.violations} violations, {r.seconds:.2f}s)")
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        return _run(cfg, args)
    except (ConfigError, ParameterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SgubuError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
