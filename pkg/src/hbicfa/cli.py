"""Command-line front end.

Subcommands: ``fit``, ``select``, ``mask``, ``simulate`` and ``scree``.
Options may also come from an INI file given with ``--config``; keys in its
``[hbicfa]`` section use the long option names with dashes or underscores
(``max-iter = 300``), and flags given on the command line win.

Exit codes: 0 success, 2 usage or parse error, 3 numerical failure.
"""

import argparse
import configparser
import csv
import json
import logging
import sys

import numpy as np

from .criteria import ALL_CRITERIA, CriterionKind, select_k
from .estimation import Algorithm, EstimationError, FitConfig, fit
from .missing import (
    DEFAULT_MISSING_TOKENS,
    CsvParseError,
    MissingDataError,
    MissingRates,
    apply_mcar_mask,
    read_csv,
    write_csv,
)
from .model import NotPositiveDefiniteError, k_max
from .simulation import DEFAULT_M_GRID, StudyAbortedError, build_design, run_study, scree_eigenvalues

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3

log = logging.getLogger("hbicfa")


class UsageError(Exception):
    pass


def _float_list(text):
    try:
        return [float(v) for v in str(text).replace(" ", "").split(",") if v != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _criteria_list(text):
    try:
        return [CriterionKind(v.strip().upper()) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"unknown criterion in {text!r}; choose from {', '.join(c.value for c in ALL_CRITERIA)}"
        ) from None


def _k_range(text):
    parts = str(text).split(":")
    try:
        if len(parts) == 1:
            return int(parts[0]), int(parts[0])
        if len(parts) == 2:
            return int(parts[0]), int(parts[1])
    except ValueError:
        pass
    raise argparse.ArgumentTypeError(f"k range must look like 'K' or 'KMIN:KMAX', got {text!r}")


def _add_csv_options(p):
    p.add_argument("--input", "-i", required=True, help="input CSV file")
    p.add_argument("--header", action=argparse.BooleanOptionalAction, default=False,
                   help="first row holds column names")
    p.add_argument("--missing-token", action="append", default=[], metavar="TOKEN",
                   help="extra token read as missing (empty, NA, NaN always are)")


def _add_fit_options(p):
    p.add_argument("--algorithm", type=str.upper, choices=[a.value for a in Algorithm], default="ECME")
    p.add_argument("--tol", type=float, default=1e-8, help="relative log-likelihood change for convergence")
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--eta", type=float, default=0.005, help="lower bound on uniquenesses")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hbicfa",
        description="Factor analysis with incomplete data and selection of the number of factors.",
    )
    parser.add_argument("--config", help="INI file with a [hbicfa] section of defaults")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a k-factor model")
    _add_csv_options(p)
    _add_fit_options(p)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--output", "-o", required=True, help="JSON file for the fitted model")

    p = sub.add_parser("select", help="choose k by AIC/BIC/CAIC/HBIC")
    _add_csv_options(p)
    _add_fit_options(p)
    p.add_argument("--k-range", type=_k_range, default=None, help="KMIN:KMAX (default 1:k_max(d))")
    p.add_argument("--k-ceiling", type=int, default=None, help="cap on the default upper end of the k range")
    p.add_argument("--criteria", type=_criteria_list, default=list(ALL_CRITERIA))
    p.add_argument("--output", "-o", required=True, help="JSON file for the selection report")
    p.add_argument("--curves", help="CSV file of criterion values against k")

    p = sub.add_parser("mask", help="delete cells completely at random")
    _add_csv_options(p)
    p.add_argument("--rates", type=_float_list, help="per-variable missing rates")
    p.add_argument("--design", help="use the rate vector of a named design (low, high)")
    p.add_argument("--m", type=float, default=1.0, help="rate multiplier with --design")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o", required=True)

    p = sub.add_parser("simulate", help="replicated selection study on a synthetic design")
    p.add_argument("--design", required=True, help="low or high")
    p.add_argument("--m", type=_float_list, default=list(DEFAULT_M_GRID), help="comma-separated rate multipliers")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k-range", type=_k_range, default=None, help="KMIN:KMAX (default 1:true_k+3)")
    p.add_argument("--criteria", type=_criteria_list, default=list(ALL_CRITERIA))
    p.add_argument("--threads", type=int, default=1, help="worker processes")
    p.add_argument("--output", "-o", help="JSON file for the study report")
    p.add_argument("--table", help="CSV file in U/S/O table layout")
    _add_fit_options(p)

    p = sub.add_parser("scree", help="eigenvalues of the correlation matrix")
    _add_csv_options(p)
    p.add_argument("--output", "-o", required=True)
    return parser


def _coerce(cp, key, raw, action):
    if isinstance(action, argparse.BooleanOptionalAction):
        return cp.getboolean("hbicfa", key)
    if action.type is None:
        return raw
    try:
        return action.type(raw)
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise UsageError(f"config key {key!r}: {exc}") from None


def _apply_config(parser, argv):
    """Parse ``argv`` with defaults taken from the ``--config`` file, if any."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return parser.parse_args(argv)
    cp = configparser.ConfigParser()
    if not cp.read(known.config):
        raise UsageError(f"cannot read config file {known.config}")
    if not cp.has_section("hbicfa"):
        raise UsageError(f"config file {known.config} has no [hbicfa] section")
    subparsers = parser._subparsers._group_actions[0].choices
    for key, raw in cp.items("hbicfa"):
        dest = key.replace("-", "_")
        matched = False
        for sub_parser in subparsers.values():
            for action in sub_parser._actions:
                if action.dest == dest and action.option_strings:
                    sub_parser.set_defaults(**{dest: _coerce(cp, key, raw, action)})
                    action.required = False
                    matched = True
        if not matched:
            raise UsageError(f"unknown config key {key!r}")
    return parser.parse_args(argv)


def _fit_config(args):
    try:
        return FitConfig(tol=args.tol, max_iter=args.max_iter, eta_floor=args.eta,
                         algorithm=Algorithm(args.algorithm))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load(args):
    tokens = tuple(DEFAULT_MISSING_TOKENS) + tuple(args.missing_token)
    try:
        return read_csv(args.input, header=args.header, missing_tokens=tokens)
    except OSError as exc:
        raise UsageError(f"cannot read {args.input}: {exc.strerror}") from None


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def cmd_fit(args):
    data, names = _load(args)
    d = data.n_vars
    if not 0 <= args.k <= k_max(d):
        raise UsageError(f"k={args.k} exceeds the bound k_max(d={d})={k_max(d)}" if args.k > 0
                         else f"k must be nonnegative, got {args.k}")
    result = fit(data, args.k, _fit_config(args))
    doc = {"input": args.input, "columns": names, "n_rows": data.n_rows,
           "n_obs_per_var": data.n_obs_per_var.tolist(), **result.to_dict()}
    _write_json(args.output, doc)
    log.info("k=%d loglik=%.6f iterations=%d converged=%s", args.k, result.loglik,
             result.iterations, result.converged)
    return EXIT_OK


def cmd_select(args):
    data, names = _load(args)
    d = data.n_vars
    if args.k_range is None:
        hi = k_max(d) if args.k_ceiling is None else min(k_max(d), args.k_ceiling)
        k_range = (min(1, hi), hi)
    else:
        k_range = args.k_range
    lo, hi = k_range
    if lo > hi:
        raise UsageError(f"empty k range {lo}:{hi}")
    if lo < 0 or hi > k_max(d):
        raise UsageError(f"k range {lo}:{hi} outside 0:{k_max(d)} (k_max for d={d})")
    report = select_k(data, k_range, _fit_config(args), args.criteria)
    doc = {"input": args.input, "columns": names, "n_rows": data.n_rows,
           "n_obs_per_var": data.n_obs_per_var.tolist(), **report.to_dict()}
    _write_json(args.output, doc)
    if args.curves:
        with open(args.curves, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "loglik"] + [c.value for c in report.chosen_k])
            for row in report.curve_rows():
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    for c, k in report.chosen_k.items():
        print(f"{c.value}: k={k}")
    return EXIT_OK


def cmd_mask(args):
    data, names = _load(args)
    if args.rates is not None and args.design:
        raise UsageError("give either --rates or --design, not both")
    if args.design:
        try:
            _, rates = build_design(args.design, args.m)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    elif args.rates is not None:
        try:
            rates = MissingRates(args.rates)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    else:
        raise UsageError("mask needs --rates or --design")
    if len(rates) != data.n_vars:
        raise UsageError(f"{len(rates)} rates given for {data.n_vars} columns")
    masked = apply_mcar_mask(data.filled(0.0), rates, args.seed)
    # cells already missing stay missing
    masked = type(masked)(masked.values, masked.mask & data.mask)
    write_csv(args.output, masked, names)
    return EXIT_OK


def cmd_scree(args):
    data, _ = _load(args)
    eig = scree_eigenvalues(data)
    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eigenvalue"])
        for v in eig:
            w.writerow([repr(float(v))])
    print(" ".join(f"{v:.4f}" for v in eig))
    return EXIT_OK


def cmd_simulate(args):
    if args.reps < 1:
        raise UsageError("--reps must be at least 1")
    try:
        design, _ = build_design(args.design)
        for m in args.m:
            design.rates(m)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.k_range is not None:
        lo, hi = args.k_range
        if lo > hi or lo < 0 or hi > k_max(design.dims.d):
            raise UsageError(f"invalid k range {lo}:{hi}")
    report = run_study(design, args.m, args.reps, args.k_range, _fit_config(args),
                       base_seed=args.seed, kinds=args.criteria, workers=max(1, args.threads))
    if args.output:
        report.write_json(args.output)
    if args.table:
        report.write_csv(args.table)
    print(report.format_table())
    print(f"# {report.replications} replications per cell, {report.failures} failed, "
          f"{report.runtime:.1f}s", file=sys.stderr)
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "select": cmd_select, "mask": cmd_mask,
            "simulate": cmd_simulate, "scree": cmd_scree}


def main(argv=None):
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    except UsageError as exc:
        print(f"hbicfa: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, CsvParseError) as exc:
        print(f"hbicfa: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MissingDataError, EstimationError, NotPositiveDefiniteError, StudyAbortedError, np.linalg.LinAlgError) as exc:
        print(f"hbicfa: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
