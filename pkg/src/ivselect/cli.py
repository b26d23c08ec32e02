"""Command-line entry points: ``ivselect select`` and ``ivselect simulate``.

Exit codes are 0 on success, 2 for usage or validation errors and 3 for
numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import backend_name
from .alasso import AdaptiveWeights, build_ztilde, lars_weighted_path
from .data import load_blocks, load_csv, partial_out_covariates
from .errors import IVSelectError, NumericalError, StudyError, ValidationError
from .median import (
    alpha_from_beta,
    block_median_of_medians,
    enumerate_just_identified,
    median_of_medians,
)
from .selection import cv_select, default_p_threshold, downward_testing
from .simulate import ESTIMATORS, load_config, preset, preset_estimators, run_study

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 2, 3


class UsageError(ValidationError):
    """Bad command-line input, reported against the offending flag."""

    def __init__(self, flag, message):
        super().__init__(f"{flag}: {message}")
        self.flag = flag


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on its own errors, which matches our contract
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _columns(text):
    return [c.strip() for c in text.split(",") if c.strip()] if text else []


def _clean(obj):
    """Make numpy scalars/arrays JSON friendly; NaN becomes null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return None if math.isnan(v) or math.isinf(v) else v
    return obj


def _write_json(path, payload):
    Path(path).write_text(json.dumps(_clean(payload), indent=2) + "\n", encoding="utf-8")


def _resolve_seed(seed):
    if seed is not None:
        return int(seed), False
    return int(np.random.SeedSequence().entropy % (2**63)), True


# ---------------------------------------------------------------------------
# select
# ---------------------------------------------------------------------------


def _check_columns(path, flags):
    """Fail early, naming the flag, when a listed column is absent."""
    p = Path(path)
    if not p.is_file():
        raise UsageError("--data", f"file not found: {path}")
    with p.open(newline="", encoding="utf-8") as fh:
        header = [h.strip() for h in next(csv.reader(fh), [])]
    seen = {}
    for flag, cols in flags.items():
        missing = [c for c in cols if c not in header]
        if missing:
            raise UsageError(flag, f"column(s) not found in {p.name}: {', '.join(missing)}")
        for c in cols:
            if c in seen:
                raise UsageError(flag, f"column {c!r} is already used by {seen[c]}")
            seen[c] = flag


def _p_threshold(text, n):
    if text == "auto":
        return default_p_threshold(n)
    try:
        p = float(text)
    except ValueError:
        raise UsageError("--p-threshold", f"expected 'auto' or a number, got {text!r}") from None
    if not 0 < p < 1:
        raise UsageError("--p-threshold", f"must lie in (0, 1), got {p}")
    return p


def cmd_select(args):
    started = time.perf_counter()
    seed, drawn = _resolve_seed(args.seed)
    outcome = args.outcome
    exposures = _columns(args.exposures)
    instruments = _columns(args.instruments)
    covariates = _columns(args.covariates)
    if not exposures:
        raise UsageError("--exposures", "at least one exposure column is required")
    if not instruments:
        raise UsageError("--instruments", "at least one instrument column is required")
    if not args.nu > 0:
        raise UsageError("--nu", f"must be positive, got {args.nu}")
    _check_columns(
        args.data,
        {"--outcome": [outcome], "--exposures": exposures, "--instruments": instruments, "--covariates": covariates},
    )
    roles = {outcome: "outcome"}
    roles.update({c: "exposure" for c in exposures})
    roles.update({c: "instrument" for c in instruments})
    roles.update({c: "covariate" for c in covariates})
    raw = load_csv(args.data, roles)
    data = partial_out_covariates(raw)
    p = _p_threshold(args.p_threshold, data.n)

    blocks = None
    if args.blocks:
        try:
            blocks = load_blocks(args.blocks, data)
        except ValidationError as exc:
            raise UsageError("--blocks", str(exc)) from None
    table = enumerate_just_identified(data, blocks)
    if blocks is not None:
        mm = block_median_of_medians(table, blocks)
    else:
        mm = median_of_medians(table)
    weights = AdaptiveWeights.from_initial(alpha_from_beta(data, mm.beta_mm), args.nu)
    max_active = data.k_z - data.k_x
    path = lars_weighted_path(build_ztilde(data), data.y, weights, max_active)
    if args.method == "sargan-dt":
        res = downward_testing(data, path, p)
    else:
        rule = "min" if args.method == "cv-min" else "one_se"
        res = cv_select(data, weights, folds=args.folds, rule=rule, seed=seed, path=path)

    zl, xl = data.instrument_labels, data.exposure_labels
    fit = res.post_fit
    report = {
        "command": "select",
        "argv": args.argv,
        "version": __version__,
        "backend": backend_name(),
        "config": {
            "data": str(args.data),
            "outcome": outcome,
            "exposures": exposures,
            "instruments": instruments,
            "covariates": covariates,
            "blocks": blocks.to_mapping(zl, xl) if blocks is not None else None,
            "method": args.method,
            "p_threshold": p,
            "p_threshold_arg": args.p_threshold,
            "nu": args.nu,
            "folds": args.folds,
            "seed": seed,
            "seed_drawn": drawn,
            "n": data.n,
        },
        "result": {
            "method": res.method,
            "invalid_instruments": [zl[j] for j in res.invalid_set],
            "valid_instruments": [zl[j] for j in res.valid_set],
            "beta": dict(zip(xl, fit.beta_hat)),
            "beta_se": dict(zip(xl, fit.beta_se)),
            "alpha": dict(zip([zl[j] for j in fit.invalid_set], fit.alpha_hat)),
            "sargan": {"statistic": res.sargan.statistic, "df": res.sargan.df, "p_value": res.sargan.p_value},
            "path_step": res.path_step,
            "lambda": res.lam,
            "beta_mm": dict(zip(xl, mm.beta_mm)),
            "just_identified_estimates": table.n_estimated,
        },
        "path": [
            {
                "lambda": float(bp.lam),
                "event": list(bp.event) if bp.event else None,
                "active_set": sorted(zl[j] for j in bp.active_set),
            }
            for bp in path.breakpoints
        ],
        "warnings": list(res.warnings) + [f"skipped subset {s}: {why}" for s, why in table.skipped],
        "wall_time_s": time.perf_counter() - started,
    }
    out = Path(args.out)
    _write_json(out.with_suffix(".json"), report)
    with out.with_suffix(".csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["term", "role", "estimate", "se"])
        for q, lab in enumerate(xl):
            w.writerow([lab, "exposure", repr(float(fit.beta_hat[q])), repr(float(fit.beta_se[q]))])
        for i, j in enumerate(fit.invalid_set):
            w.writerow([zl[j], "invalid_instrument", repr(float(fit.alpha_hat[i])), repr(float(fit.alpha_se[i]))])

    print(f"n = {data.n}, k_x = {data.k_x}, k_z = {data.k_z}, method = {args.method}, p threshold = {p:.4g}")
    print(f"{'exposure':<16}{'beta_mm':>12}{'beta_post':>12}{'se':>12}")
    for q, lab in enumerate(xl):
        print(f"{lab:<16}{mm.beta_mm[q]:>12.4f}{fit.beta_hat[q]:>12.4f}{fit.beta_se[q]:>12.4f}")
    print(f"invalid ({len(res.invalid_set)}): {', '.join(zl[j] for j in res.invalid_set) or '-'}")
    print(f"Sargan = {res.sargan.statistic:.3f}, df = {res.sargan.df}, p = {res.sargan.p_value:.4g}")
    for msg in report["warnings"]:
        print(f"warning: {msg}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _format_table(result):
    head = f"{'estimator':<26}{'MAE':>9}{'SD':>9}{'#inv':>9}{'allinv':>9}{'oracle':>9}{'fail':>6}"
    lines = [head]
    for r in result.rows:
        cells = [r.mae, r.sd, r.mean_invalid, r.freq_all_invalid, r.freq_oracle]
        txt = "".join(f"{'':>9}" if math.isnan(v) else f"{v:>9.4f}" for v in cells)
        lines.append(f"{r.estimator:<26}{txt}{r.failures:>6}")
    return "\n".join(lines)


def cmd_simulate(args):
    started = time.perf_counter()
    if args.config:
        config = load_config(args.config)
        source = {"config_file": str(args.config)}
    else:
        config = preset(args.preset)
        source = {"preset": args.preset}
    seed, drawn = _resolve_seed(args.seed)
    changes = {"seed": seed}
    if args.n is not None:
        changes["n"] = args.n
    if args.fix_pi:
        changes["fix_pi"] = True
    config = type(config)(**{**config.to_dict(), **changes})
    if args.estimators:
        estimators = _columns(args.estimators)
        bad = [e for e in estimators if e not in ESTIMATORS]
        if bad:
            raise UsageError("--estimators", f"unknown estimator(s) {', '.join(bad)}; choose from {', '.join(ESTIMATORS)}")
    else:
        estimators = list(preset_estimators(args.preset or ""))
        if config.blocks is not None and not args.preset:
            estimators = list(preset_estimators("table4"))
    if args.reps < 1:
        raise UsageError("--reps", "must be at least 1")
    if args.workers < 1:
        raise UsageError("--workers", "must be at least 1")
    result = run_study(config, args.reps, estimators, workers=args.workers)

    out = Path(args.out)
    out.with_suffix(".csv").write_text(result.to_csv(), encoding="utf-8")
    report = {
        "command": "simulate",
        "argv": args.argv,
        "version": __version__,
        "backend": backend_name(),
        **source,
        "seed_drawn": drawn,
        "workers": args.workers,
        **result.to_dict(),
        "wall_time_s": time.perf_counter() - started,
    }
    _write_json(out.with_suffix(".json"), report)
    print(f"n = {config.n}, reps = {args.reps}, seed = {seed}")
    print(_format_table(result))
    for msg in result.warnings:
        print(f"warning: {msg}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="ivselect", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("select", help="select valid instruments in a CSV dataset")
    s.add_argument("--data", required=True, help="CSV file with a header row")
    s.add_argument("--outcome", required=True)
    s.add_argument("--exposures", required=True, help="comma-separated column names")
    s.add_argument("--instruments", required=True, help="comma-separated column names")
    s.add_argument("--covariates", default="", help="comma-separated columns partialled out with an intercept")
    s.add_argument("--blocks", help="JSON object mapping each instrument to the exposures it is relevant for")
    s.add_argument("--method", choices=("sargan-dt", "cv-min", "cv-1se"), default="sargan-dt")
    s.add_argument("--p-threshold", default="auto", help="'auto' for 0.1/log(n), or a number in (0, 1)")
    s.add_argument("--nu", type=float, default=1.0, help="adaptive weight exponent")
    s.add_argument("--folds", type=int, default=10, help="folds for the cv methods")
    s.add_argument("--seed", type=int, help="seed for fold assignment")
    s.add_argument("--out", default="ivselect_report", help="output prefix for .json and .csv")
    s.set_defaults(func=cmd_select)

    m = sub.add_parser("simulate", help="run a Monte Carlo study")
    src = m.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="JSON config file (keys of SimConfig, optional 'preset')")
    src.add_argument("--preset", choices=("table3", "table4"))
    m.add_argument("--n", type=int)
    m.add_argument("--reps", type=int, required=True)
    m.add_argument("--seed", type=int)
    m.add_argument("--estimators", help=f"comma-separated subset of {','.join(ESTIMATORS)}")
    m.add_argument("--workers", type=int, default=1)
    m.add_argument("--fix-pi", action="store_true", help="draw the first-stage coefficients once per study")
    m.add_argument("--out", default="ivselect_study", help="output prefix for .json and .csv")
    m.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, StudyError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        cols = getattr(exc, "columns", None)
        if cols:
            print(f"  dependent columns: {', '.join(map(str, cols))}", file=sys.stderr)
        ratio = getattr(exc, "ratio", None)
        if ratio is not None and not math.isnan(ratio):
            print(f"  singular value ratio: {ratio:.3g}", file=sys.stderr)
        return EXIT_NUMERICAL
    except IVSelectError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
