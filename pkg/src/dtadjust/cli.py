"""Command-line entry point: ``analyze``, ``simulate``, ``oracle``, ``selftest``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from ._accel import resolve_threads
from .bootstrap import BootstrapConfig
from .errors import ConfigError, DTAError

log = logging.getLogger("dtadjust")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="master random seed")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: $DTE_THREADS or 1)")
    p.add_argument("--bootstrap", choices=("multinomial", "bayesian"), default=None)
    p.add_argument("--replicate-formula", choices=("augmented", "plugin"), default=None)
    p.add_argument("--ci", choices=("normal", "percentile"), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dtadjust",
        description="Regression-adjusted distributional treatment effects with bootstrap inference.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="run an analysis described by a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--link", choices=("logit", "linear"), default=None)
    p.add_argument("--out", default=None, help="output directory (overrides the config)")
    _common(p)

    p = sub.add_parser("simulate", help="Monte Carlo study on DGP1-DGP4")
    p.add_argument("--dgp", type=int, choices=(1, 2, 3, 4), required=True)
    p.add_argument("--pi1", type=float, default=0.5)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--reps", type=int, default=None, help="replications (default 1000)")
    p.add_argument("--boot-reps", type=int, default=None, help="bootstrap replicates (default 200)")
    p.add_argument("--oracle-size", type=int, default=1_000_000)
    p.add_argument("--full-profile", action="store_true",
                   help="10,000 replications with 1,000 bootstrap draws each")
    p.add_argument("--noise-covariates", action="store_true",
                   help="hand the estimators covariates unrelated to the outcome")
    p.add_argument("--out", default=None, help="result CSV (default: stdout)")
    _common(p)

    p = sub.add_parser("oracle", help="large-sample truth for a DGP")
    p.add_argument("--dgp", type=int, choices=(1, 2, 3, 4), required=True)
    p.add_argument("--size", type=int, default=1_000_000)
    p.add_argument("--pi1", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)

    sub.add_parser("selftest", help="run the built-in invariant checks")
    return parser


def _boot_overrides(cfg: BootstrapConfig, args) -> BootstrapConfig:
    changes = {}
    if args.bootstrap:
        changes["scheme"] = args.bootstrap
    if args.replicate_formula:
        changes["replicate_formula"] = args.replicate_formula
    if args.ci:
        changes["ci_kind"] = args.ci
    return replace(cfg, **changes) if changes else cfg


def cmd_analyze(args) -> int:
    from .io import AnalysisConfig, emit_outputs, run_analysis

    cfg = AnalysisConfig.load(args.config, seed=args.seed)
    cfg = replace(cfg, bootstrap=_boot_overrides(cfg.bootstrap, args))
    if args.link:
        cfg = replace(cfg, link=args.link)
    result = run_analysis(cfg, threads=resolve_threads(args.threads))
    for path in emit_outputs(result, args.out):
        print(path)
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .simulation import DgpSpec, run_study

    if args.seed is None:
        raise ConfigError("simulate requires --seed")
    reps = args.reps or (10_000 if args.full_profile else 1000)
    boot = args.boot_reps or (1000 if args.full_profile else 200)
    spec = DgpSpec(args.dgp, pi1=args.pi1, n=args.n, seed=args.seed,
                   covariates="noise" if args.noise_covariates else "informative")
    cfg = _boot_overrides(BootstrapConfig(replicates=boot), args)
    result = run_study(spec, reps, config=cfg, oracle_size=args.oracle_size,
                       threads=resolve_threads(args.threads))
    if result.failures:
        log.warning("%d replications excluded after fit failures", result.failures)
    if args.out:
        result.write_csv(args.out)
        print(args.out)
    else:
        from .simulation import STUDY_COLUMNS, _fmt

        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(STUDY_COLUMNS)
        for row in result.rows():
            writer.writerow([_fmt(row[c]) for c in STUDY_COLUMNS])
    return EXIT_OK


def cmd_oracle(args) -> int:
    from .simulation import DgpSpec, oracle_truth

    spec = DgpSpec(args.dgp, pi1=args.pi1, seed=args.seed)
    truth = oracle_truth(spec, size=args.size, seed=args.seed)
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("dgp", "y", "cdf0", "cdf1", "dte", "size"))
        for y, f0, f1 in zip(truth.grid.values, truth.cdf0.values, truth.cdf1.values):
            writer.writerow((spec.id, repr(float(y)), repr(float(f0)), repr(float(f1)),
                             repr(float(f1 - f0)), truth.size))
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return EXIT_OK if run_selftest() else EXIT_NUMERIC


COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate, "oracle": cmd_oracle,
            "selftest": cmd_selftest}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except DTAError as exc:
        print(f"dtadjust: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (np.linalg.LinAlgError, FloatingPointError, OverflowError) as exc:
        print(f"dtadjust: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"dtadjust: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
