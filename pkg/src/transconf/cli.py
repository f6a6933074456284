"""Command-line interface.

Every command writes plot-ready data: CSV for curves (first line is a
versioned ``#`` header echoing the configuration) and JSON for scalar
summaries. Re-running a command with the same flags reproduces its output
byte for byte.

Exit codes: 0 success, 1 usage error, 2 data error, 3 verification failure.
The default seed comes from the ``TRANSCONF_SEED`` environment variable.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import warnings
from fractions import Fraction

import numpy as np

from . import __version__, _rng, bounds, novelty, oracle, prediction, templates
from ._grid import grid_floor
from .polya import PolyaLaw
from .scores import EmptySectionError, ScoreError, break_ties, conformal_pvalues, read_scores_csv

SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- argument types ---------------------------------------------------------


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _open_unit(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"expected a value in (0, 1), got {text}")
    return v


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# -- output helpers ---------------------------------------------------------


def _num(x):
    """JSON/CSV-friendly scalar: Fractions and numpy types become floats/ints."""
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating, Fraction)):
        x = float(x)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")
    return x


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    return _num(obj)


def _dump_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _csv_text(command: str, config: dict, columns: list[str], rows) -> str:
    buf = io.StringIO()
    header = json.dumps(_jsonable(config), sort_keys=True, separators=(",", ":"))
    buf.write(f"# transconf {command} schema={SCHEMA_VERSION} config={header}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v):
    v = _num(v)
    return repr(v) if isinstance(v, float) else v


def _emit(text: str, path):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


# -- commands ---------------------------------------------------------------


def cmd_pvalues(args) -> int:
    scores = read_scores_csv(args.input, args.test) if args.test else read_scores_csv(args.input)
    ties = scores.has_ties()
    if ties:
        scores = break_ties(scores, args.seed)
    pv = conformal_pvalues(scores)
    config = {"input": args.input, "test": args.test, "seed": args.seed, "n": pv.n, "m": pv.m, "ties_broken": ties}
    rows = [(i + 1, int(r), Fraction(int(r), pv.n + 1)) for i, r in enumerate(pv.ranks)]
    _emit(_csv_text("pvalues", config, ["index", "rank", "pvalue"], rows), args.output)
    return EXIT_OK


def cmd_bound(args) -> int:
    n, m, delta = args.n, args.m, args.delta
    out = {"mode": args.mode, "n": n, "m": m, "delta": delta, "tau": bounds.tau(n, m), "seed": args.seed}
    if args.mode == "analytic":
        lam = bounds.lambda_dkw(bounds.DkwParams(n, m, delta, args.r))
        out.update(r=args.r, reps=None, **{"lambda": lam, "bound_at_lambda": bounds.b_dkw(lam, n, m)})
    elif args.mode == "full":
        lam = bounds.lambda_dkw_full(n, m, delta)
        out.update(r=None, reps=None, **{"lambda": lam, "bound_at_lambda": bounds.b_dkw_full(lam, n, m)})
    else:
        res = bounds.lambda_numerical(PolyaLaw(n, m), delta, args.seed, args.reps)
        out.update(
            r=None,
            reps=args.reps,
            mc_stderr=res.mc_stderr,
            order_index=res.index,
            **{"lambda": res.value, "bound_at_lambda": res.tail_at_value},
        )
        out["lambda_analytic"] = bounds.lambda_dkw(bounds.DkwParams(n, m, delta, args.r))
    _emit(_dump_json(out), args.output)
    return EXIT_OK


def cmd_calibrate_template(args) -> int:
    tmpl = templates.make_template(args.template, args.m, args.k_set)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        env = templates.calibrate_template(PolyaLaw(args.n, args.m), tmpl, args.delta, args.seed, args.reps, args.index)
    out = {
        "template": args.template,
        "n": args.n,
        "m": args.m,
        "delta": args.delta,
        "seed": args.seed,
        "reps": args.reps,
        "index": args.index,
        "k_set": list(tmpl.k_set),
        "lambda_star": env.lambda_star,
        "thresholds": list(env.thresholds),
        "vacuous": env.vacuous,
        "warnings": [str(w.message) for w in caught],
    }
    _emit(_dump_json(out), args.output)
    return EXIT_OK


def cmd_calibrate_level(args) -> int:
    law = PolyaLaw(args.n, args.m)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        level = prediction.calibrate_level(law, args.alpha, args.delta)
    out = {
        "n": args.n,
        "m": args.m,
        "delta": args.delta,
        "target_fcp": args.alpha,
        "level": level,
        "level_fraction": str(level),
        "all_reals_band": level == 0,
        "level_zero_explicit": str(prediction.level_zero_explicit(args.n, args.m, args.delta)),
    }
    _emit(_dump_json(out), args.output)
    return EXIT_OK


def _regression_config(args) -> prediction.RegressionConfig:
    return prediction.RegressionConfig(
        n_train=args.n_train,
        n=args.n,
        m=args.m,
        sigma=args.sigma,
        mean=args.mean,
        k_neighbors=args.k_neighbors,
        seed=args.seed,
    )


def cmd_pi_run(args) -> int:
    config = _regression_config(args)
    predictors = args.predictor or list(prediction.PREDICTORS)
    rows, coverage = [], {}
    for pred in predictors:
        rep = prediction.prediction_report(config, pred, args.delta, args.grid, args.radius)
        a = rep.alpha_curve
        for i in range(a.grid.size):
            level = Fraction(grid_floor(a.grid[i], config.n), config.n + 1)
            rows.append((pred, "alpha", a.grid[i], level, a.fcp[i], a.bound_dkw[i], a.bound_simes[i], a.radius[i]))
        c = rep.radius_curve
        for i, L in enumerate(rep.radius_grid):
            rows.append((pred, "L", L, c.grid[i], c.fcp[i], c.bound_dkw[i], c.bound_simes[i], c.radius[i]))
        if args.reps > 0:
            s = prediction.coverage_experiment(config, pred, args.delta, args.reps)
            coverage[pred] = {
                "violation_dkw": s.violation_dkw,
                "violation_simes": s.violation_simes,
                "marginal_miscoverage": s.marginal_miscoverage,
                "identity_holds": s.identity_holds,
                "mc_sigma": s.mc_sigma,
            }
    echo = {**config.to_dict(), "delta": args.delta, "reps": args.reps, "predictors": predictors}
    cols = ["predictor", "kind", "alpha_or_L", "alpha_effective", "fcp", "bound_dkw", "bound_simes", "radius"]
    _emit(_csv_text("pi", echo, cols, rows), args.output)
    if args.summary:
        _emit(_dump_json({"config": echo, "seed": args.seed, "coverage": coverage}), args.summary)
    return EXIT_OK


def cmd_nd_run(args) -> int:
    shifts = args.shift or [3.0]
    rows, summary = [], {}
    for shift in shifts:
        config = novelty.NDConfig(args.n, args.m0, args.m1, shift, args.seed)
        rep = novelty.novelty_report(config, args.delta, args.alpha)
        m = config.m
        md, ms = rep.m0_dkw.value, rep.m0_simes.value
        ells = range(1, config.n + 1)
        if args.grid:
            ells = sorted({grid_floor(t, config.n) for t in args.grid} - {0})
        cv, cm = rep.curve, rep.curve_m
        for ell in ells:
            i = ell - 1
            rows.append((shift, "t", cv.grid[i], cv.reject_counts[i], cv.fdp[i], cv.tdp[i],
                         cv.bound_dkw[i], cv.bound_simes[i], cm.bound_dkw[i], cm.bound_simes[i], md, ms, m))
        b = rep.bh
        for i, a in enumerate(rep.alphas):
            rows.append((shift, "alpha", a, b["k_hat"][i], b["fdp"][i], b["tdp"][i],
                         b["bound_dkw"][i], b["bound_simes"][i], b["bound_dkw_m"][i], b["bound_simes_m"][i], md, ms, m))
        entry = {"m0_dkw": md, "m0_simes": ms}
        if args.reps > 0:
            s = novelty.coverage_experiment(config, args.delta, args.reps, args.bh_alpha)
            entry.update({k: v for k, v in s.__dict__.items() if k not in ("reps", "delta")})
            entry["mc_sigma"] = math.sqrt(args.delta * (1 - args.delta) / args.reps)
        summary[str(shift)] = entry
    echo = {"n": args.n, "m0": args.m0, "m1": args.m1, "shifts": shifts, "delta": args.delta,
            "seed": args.seed, "reps": args.reps, "bh_alpha": args.bh_alpha}
    cols = ["shift", "kind", "t_or_alpha", "n_reject", "fdp", "tdp", "bound_dkw", "bound_simes",
            "bound_dkw_with_m", "bound_simes_with_m", "m0_hat_dkw", "m0_hat_simes", "m"]
    _emit(_csv_text("nd", echo, cols, rows), args.output)
    if args.summary:
        _emit(_dump_json({"config": echo, "seed": args.seed, "channels": summary}), args.summary)
    return EXIT_OK


def cmd_oracle_verify(args) -> int:
    hook = (lambda p: p * Fraction(1_000_001, 1_000_000)) if args.inject_fault else None
    results = oracle.verify_suite(args.max_size, pmf_hook=hook)
    _emit(oracle.format_report(results) + "\n", args.output)
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


# -- parser -----------------------------------------------------------------


def build_parser() -> ArgumentParser:
    p = ArgumentParser(prog="transconf", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    seed = _rng.default_seed()

    def common(sp, reps=None):
        sp.add_argument("--seed", type=int, default=seed, help="master seed (default: $TRANSCONF_SEED or 0)")
        sp.add_argument("--output", default=None, help="output path (default: stdout)")
        if reps is not None:
            sp.add_argument("--reps", type=int, default=reps, help="Monte-Carlo replicates")

    sp = sub.add_parser("pvalues", help="conformal p-values from a score CSV")
    sp.add_argument("--input", required=True, help="CSV with columns score,role (or calibration scores with --test)")
    sp.add_argument("--test", default=None, help="CSV of test scores (column score)")
    common(sp)
    sp.set_defaults(func=cmd_pvalues)

    sp = sub.add_parser("bound", help="envelope constant lambda for the p-value ecdf")
    sp.add_argument("--n", type=_positive_int, required=True)
    sp.add_argument("--m", type=_positive_int, required=True)
    sp.add_argument("--delta", type=_open_unit, required=True)
    sp.add_argument("--mode", choices=("analytic", "full", "numerical"), default="analytic")
    sp.add_argument("--r", type=_positive_int, default=bounds.DEFAULT_ITERATIONS, help="fixed-point iterations")
    common(sp, reps=10_000)
    sp.set_defaults(func=cmd_bound)

    cal = sub.add_parser("calibrate", help="calibration commands").add_subparsers(dest="what", required=True)
    sp = cal.add_parser("template", help="Monte-Carlo calibration of a template envelope")
    sp.add_argument("--template", choices=("linear", "beta"), required=True)
    sp.add_argument("--k-set", type=_int_list, default=None, help="comma-separated indices (default depends on template)")
    sp.add_argument("--index", choices=("k", "k+1"), default="k")
    sp.add_argument("--n", type=_positive_int, required=True)
    sp.add_argument("--m", type=_positive_int, required=True)
    sp.add_argument("--delta", type=_open_unit, required=True)
    common(sp, reps=10_000)
    sp.set_defaults(func=cmd_calibrate_template)

    sp = cal.add_parser("level", help="exact level with FCP <= alpha at confidence 1-delta")
    sp.add_argument("--n", type=_positive_int, required=True)
    sp.add_argument("--m", type=_positive_int, required=True)
    sp.add_argument("--delta", type=_open_unit, required=True)
    sp.add_argument("--alpha", type=float, required=True, help="target FCP in [0, 1)")
    common(sp)
    sp.set_defaults(func=cmd_calibrate_level)

    pi = sub.add_parser("pi", help="prediction-interval experiments").add_subparsers(dest="what", required=True)
    sp = pi.add_parser("run", help="FCP curves and bounds on synthetic regression data")
    sp.add_argument("--n", type=_positive_int, default=75)
    sp.add_argument("--m", type=_positive_int, default=75)
    sp.add_argument("--n-train", type=_positive_int, default=5000)
    sp.add_argument("--sigma", type=float, default=0.1)
    sp.add_argument("--mean", choices=sorted(prediction.MEAN_FUNCTIONS), default="cos")
    sp.add_argument("--k-neighbors", type=_positive_int, default=25)
    sp.add_argument("--predictor", action="append", choices=prediction.PREDICTORS, help="repeatable (default: all)")
    sp.add_argument("--delta", type=_open_unit, default=0.2)
    sp.add_argument("--grid", type=_float_list, default=None, help="alpha levels (default: full grid)")
    sp.add_argument("--radius", type=_float_list, default=None, help="radius grid L")
    sp.add_argument("--summary", default=None, help="JSON summary path")
    common(sp, reps=0)
    sp.set_defaults(func=cmd_pi_run)

    nd = sub.add_parser("nd", help="novelty-detection experiments").add_subparsers(dest="what", required=True)
    sp = nd.add_parser("run", help="FDP curves and bounds on synthetic novelty data")
    sp.add_argument("--n", type=_positive_int, default=1000)
    sp.add_argument("--m0", type=int, default=500)
    sp.add_argument("--m1", type=int, default=260)
    sp.add_argument("--shift", type=float, action="append", help="novelty mean shift, repeatable (default: 3)")
    sp.add_argument("--delta", type=_open_unit, default=0.2)
    sp.add_argument("--alpha", type=_float_list, default=None, help="BH levels (default: 0.05..0.95)")
    sp.add_argument("--bh-alpha", type=_open_unit, default=0.1, help="BH level for the replicate summary")
    sp.add_argument("--grid", type=_float_list, default=None, help="thresholds t (default: full grid)")
    sp.add_argument("--summary", default=None, help="JSON summary path")
    common(sp, reps=0)
    sp.set_defaults(func=cmd_nd_run)

    orc = sub.add_parser("oracle", help="exact enumeration checks").add_subparsers(dest="what", required=True)
    sp = orc.add_parser("verify", help="run every exact-equality check")
    sp.add_argument("--max-size", type=int, default=oracle.SIZE_GUARD, help=f"largest n+m (<= {oracle.SIZE_CAP})")
    sp.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    sp.add_argument("--output", default=None)
    sp.set_defaults(func=cmd_oracle_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "max_size", 2) > oracle.SIZE_CAP or getattr(args, "max_size", 2) < 2:
        parser.error(f"--max-size must lie in [2, {oracle.SIZE_CAP}]")
    if getattr(args, "reps", 0) < 0:
        parser.error("--reps must be nonnegative")
    try:
        return args.func(args)
    except EmptySectionError as e:
        print(f"transconf: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ScoreError, OSError) as e:
        print(f"transconf: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"transconf: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
