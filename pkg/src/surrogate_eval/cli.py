"""Command-line interface: ``surrogate-eval {analyze,threshold,simulate,heatmap}``.

Exit codes: 0 success, 1 computation or data failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import re
import secrets
import sys
import time
from pathlib import Path

from . import __version__
from .analytics import heatmap_grid, write_heatmap_csv
from .bayes import bayes_test
from .core import AUTO, AnalysisConfig, TrialDataError, load_trial_csv
from .rank import rank_test
from .simlab import METHODS, run_campaign, write_campaign_csv, write_detail_csv
from .stats_math import RngStream
from .threshold import InfeasiblePowerError, ThresholdConfig, select_threshold

REPORT_VERSION = 1
_RANGE_RE = re.compile(r"^\s*(-?[0-9.eE+-]+)\s*:\s*(-?[0-9.eE+-]+)\s*$")


class CommandError(Exception):
    """Computation failure reported with exit code 1."""


def _open_unit(name: str):
    def parse(text: str) -> float:
        try:
            v = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be a number") from None
        if not 0 < v < 1:
            raise argparse.ArgumentTypeError(f"{name} must lie in (0, 1), got {text}")
        return v

    return parse


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return v


def _nonneg_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text!r}")
    return v


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}") from None
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _threshold(text: str):
    if text == AUTO:
        return AUTO
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"threshold must be a number or {AUTO!r}, got {text!r}") from None
    if not math.isfinite(v):
        raise argparse.ArgumentTypeError("threshold must be finite")
    return v


def _range(text: str) -> tuple[float, float]:
    m = _RANGE_RE.match(text)
    if not m:
        raise argparse.ArgumentTypeError(f"range must look like lo:hi, got {text!r}")
    try:
        lo, hi = float(m.group(1)), float(m.group(2))
    except ValueError:
        raise argparse.ArgumentTypeError(f"range must look like lo:hi, got {text!r}") from None
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        raise argparse.ArgumentTypeError(f"range needs finite lo < hi, got {text!r}")
    return lo, hi


def _add_seed(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=_seed, default=None,
                   help="64-bit seed; a fresh one is generated and printed to stderr when omitted")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="surrogate-eval", description="Evaluate surrogate markers in randomized trials.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="test surrogate validity on a trial CSV")
    p.add_argument("--input", required=True, help="CSV with header id,y,s,z[,x1..xd]")
    p.add_argument("--method", choices=METHODS, default="rank")
    p.add_argument("--alpha", type=_open_unit("alpha"), default=0.05)
    p.add_argument("--beta", type=_open_unit("beta"), default=0.2, help="type II error used by --threshold auto")
    p.add_argument("--threshold", type=_threshold, default=AUTO, help="epsilon (rank) or eta (bayes), or 'auto'")
    p.add_argument("--iters", type=_positive_int, default=500)
    p.add_argument("--burnin", type=_nonneg_int, default=125)
    _add_seed(p)
    p.add_argument("--out", required=True, help="JSON report path")
    p.add_argument("--draws-out", default=None, help="optional CSV of posterior draws (bayes methods)")
    p.add_argument("--timings", action="store_true", help="include wall-clock timings (breaks byte-reproducibility)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("threshold", help="calibrate the Bayes-factor threshold")
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--alpha", type=_open_unit("alpha"), default=0.05)
    p.add_argument("--beta", type=_open_unit("beta"), default=0.2)
    p.add_argument("--a", type=_positive_float, default=1.0)
    p.add_argument("--b", type=_positive_float, default=1.0)
    p.add_argument("--v-y", dest="v_y", type=float, default=None)
    p.add_argument("--table", action="store_true", help="include the full (x_k, P0(k)) table")
    p.add_argument("--out", default=None, help="JSON path; stdout when omitted")
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("simulate", help="run replication campaigns")
    p.add_argument("--setting", type=int, nargs="+", required=True, choices=range(1, 6), metavar="{1..5}")
    p.add_argument("--method", nargs="+", choices=METHODS, default=list(METHODS))
    p.add_argument("--reps", type=_positive_int, default=500)
    p.add_argument("--n", type=_positive_int, default=50)
    p.add_argument("--alpha", type=_open_unit("alpha"), default=0.05)
    p.add_argument("--beta", type=_open_unit("beta"), default=0.2)
    p.add_argument("--threshold", type=_threshold, default=AUTO)
    p.add_argument("--iters", type=_positive_int, default=500)
    p.add_argument("--burnin", type=_nonneg_int, default=125)
    _add_seed(p)
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.add_argument("--out", required=True, help="campaign CSV path")
    p.add_argument("--detail-out", default=None, help="optional per-replication CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("heatmap", help="|theta - delta| grid for a perfect surrogate")
    p.add_argument("--delta", type=float, required=True, help="treatment effect on the control-mean scale")
    p.add_argument("--range", dest="d_range", type=_range, required=True, help="lo:hi for both axes")
    p.add_argument("--step", type=_positive_float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_heatmap)
    return parser


def _config(args, seed: int) -> AnalysisConfig:
    if args.burnin >= args.iters:
        raise _UsageError(f"--burnin must be smaller than --iters (got {args.burnin} >= {args.iters})")
    return AnalysisConfig(alpha=args.alpha, beta=args.beta, threshold=args.threshold, iters=args.iters,
                          burnin=args.burnin, seed=seed)


class _UsageError(Exception):
    pass


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    seed = secrets.randbits(63)
    print(f"seed: {seed}", file=sys.stderr)
    return seed


def _write_json(obj, path) -> None:
    text = json.dumps(obj, indent=2, allow_nan=False) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _finite(v):
    return None if v is None or not math.isfinite(v) else v


def cmd_analyze(args) -> None:
    # the rank test is deterministic, so only the samplers need a seed
    seed = args.seed if args.method == "rank" else _resolve_seed(args)
    config = _config(args, 0 if seed is None else seed)
    try:
        data = load_trial_csv(args.input)
    except OSError as err:
        raise CommandError(f"cannot read {args.input}: {err}") from None
    t0 = time.perf_counter()
    report = {
        "version": REPORT_VERSION,
        "method": args.method,
        "n": data.n,
        "n1": data.n1,
        "n0": data.n0,
        "alpha": args.alpha,
        "seed": seed,
    }
    if args.method == "rank":
        if args.draws_out:
            raise _UsageError("--draws-out only applies to the bayes methods")
        res = rank_test(data, args.threshold, alpha=args.alpha, beta=args.beta)
        report["estimates"] = {"u_y": res.u_y, "u_s": res.u_s, "delta_hat": res.delta_hat, "variance": res.variance}
        report["bound"] = res.ci_upper
        report["threshold"] = res.epsilon
        report["threshold_mode"] = "auto" if args.threshold == AUTO else "fixed"
        report["decision"] = res.decision
    else:
        model = "covariates" if args.method == "bayes-cov" else "no-covariates"
        if model == "covariates" and data.d == 0:
            raise CommandError("bayes-cov needs covariate columns x1..xd in the input")
        res, draws, thr = bayes_test(data, config, model=model, stream=RngStream(seed, (0,)))
        post = slice(config.burnin, None)
        report["estimates"] = {
            "v_y_mean": res.posterior_mean_v_y,
            "v_s_mean": res.posterior_mean_v_s,
            "theta_mean": res.posterior_mean_theta,
            "theta_sd": float(draws.theta[post].std(ddof=1)) if draws.theta[post].size > 1 else 0.0,
        }
        report["bound"] = res.theta_quantile
        report["threshold"] = res.eta
        report["threshold_mode"] = "auto" if args.threshold == AUTO else "fixed"
        if thr is not None:
            report["threshold_result"] = thr.to_dict()
        report["decision"] = res.decision
        report["sampler"] = {"iters": config.iters, "burnin": config.burnin, "model": model,
                             "acceptance": draws.accept_rates}
        if args.draws_out:
            draws.to_csv(args.draws_out)
    if args.timings:
        report["timings"] = {"seconds": time.perf_counter() - t0}
    _write_json(report, args.out)


def cmd_threshold(args) -> None:
    if args.v_y is not None and not 0 <= args.v_y <= 1:
        raise _UsageError("--v-y must lie in [0, 1]")
    result = select_threshold(ThresholdConfig(n=args.n, alpha=args.alpha, beta=args.beta, a=args.a, b=args.b),
                              v_y=args.v_y)
    out = result.to_dict(table=args.table)
    out = {k: (_finite(v) if isinstance(v, float) else v) for k, v in out.items()}
    _write_json(out, args.out)


def cmd_simulate(args) -> None:
    seed = _resolve_seed(args)
    config = _config(args, seed)
    results = []
    for setting in args.setting:
        for method in args.method:
            if method == "bayes-cov" and setting != 5:
                raise _UsageError("bayes-cov needs a covariate; only setting 5 emits one")
            res = run_campaign(setting, method, args.reps, args.n, config, jobs=args.jobs)
            print(f"setting {setting} {method}: coverage={res.coverage:.3f} power={res.power:.3f} "
                  f"failures={res.failures}", file=sys.stderr)
            results.append(res)
    write_campaign_csv(results, args.out)
    if args.detail_out:
        write_detail_csv(results, args.detail_out)


def cmd_heatmap(args) -> None:
    d_y, d_s, values = heatmap_grid(args.delta, args.d_range, args.step)
    write_heatmap_csv(args.out, d_y, d_s, values)


def _join_negative_values(argv: list[str]) -> list[str]:
    # argparse treats "-40:40" as an option; glue it onto its flag
    out = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok == "--range" and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"--range={argv[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = _join_negative_values(list(sys.argv[1:] if argv is None else argv))
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except _UsageError as err:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {err}", file=sys.stderr)
        return 2
    except (CommandError, TrialDataError, InfeasiblePowerError, ArithmeticError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # any other computation failure
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
