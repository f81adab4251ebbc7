"""mweight command-line interface: estimate, balance, mirror-hist, simulate, summary."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import Any, NoReturn, Sequence

import numpy as np

from ._config import WORKERS_ENV, get_config, resolve_workers, scoped
from .balance import MOMENTS, balance_report, mirror_histogram, render_mirror_svg
from .data import INTERCEPT, ObservationalDataset, dataset_summary, ingest_csv
from .estimators import ESTIMATORS, resolve_propensity
from .exceptions import ConfigError, MWeightError, error_record
from .project_config import ProjectConfig
from .serialization import dumps
from .simulation import FORMATTERS, TABLE3_SIZES, TABLE3_THETAS, run_table1, run_table2, run_table3
from .weights import SmoothWeightConfig, att_weights, effective_sample_sizes, ipw_weights, matching_weights

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2


class UsageError(Exception):
    """Bad command line; reported on stderr with exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _names(raw: str | None) -> list[str] | None:
    """Comma-separated names; None when the option was not given."""
    if raw is None:
        return None
    return [part.strip() for part in raw.split(",") if part.strip()]


def _build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--config", default=None, help="Path to mweight.toml (default ./mweight.toml)")
    common.add_argument("--output", default=None, help="Write results here instead of stdout")
    common.add_argument("--format", default="json", choices=["json", "text"])

    data = _Parser(add_help=False)
    data.add_argument("--data", required=True, help="CSV file with a header row")
    data.add_argument("--outcome", required=True)
    data.add_argument("--treatment", required=True)
    data.add_argument("--covariates", default="", help="Comma-separated covariate columns")
    data.add_argument("--no-intercept", action="store_true", dest="no_intercept")

    ps = _Parser(add_help=False)
    ps.add_argument(
        "--ps-covariates", default=None, dest="ps_covariates",
        help="Covariates in the propensity model (default: all; empty: intercept only)",
    )
    ps.add_argument("--delta", type=float, default=None, help="Half-width of the smoothed weight patch")
    ps.add_argument("--raw", action="store_true", help="Use the unsmoothed matching weight")

    parser = _Parser(prog="mweight", description="Matching weight propensity-score analysis")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", parents=[common, data, ps], help="Estimate a treatment effect")
    est.add_argument("--estimator", default="mw", choices=sorted(ESTIMATORS))
    est.add_argument("--outcome-covariates", default=None, dest="outcome_covariates")
    est.add_argument("--caliper", type=float, default=None, help="Caliper as a multiple of SD(logit e)")
    est.add_argument("--strata", type=int, default=None)

    bal = sub.add_parser("balance", parents=[common, data, ps], help="Balance tests of weighted moments")
    bal.add_argument("--test-covariates", default=None, dest="test_covariates")
    bal.add_argument("--moments", default="mean", help=f"Comma-separated subset of {list(MOMENTS)}")

    mh = sub.add_parser("mirror-hist", parents=[common, data, ps], help="Mirror histogram of propensity scores")
    mh.add_argument("--bins", type=int, default=None)
    mh.add_argument("--weights", default="mw", choices=["mw", "att", "ipw", "none"])
    mh.add_argument("--svg", default=None, help="Also render the histogram to this SVG file")

    sim = sub.add_parser("simulate", parents=[common], help="Run a Monte Carlo table")
    sim.add_argument("--table", type=int, required=True, choices=[1, 2, 3])
    sim.add_argument("--scenario", default="1,2,3", help="Comma-separated scenario ids (tables 1 and 2)")
    sim.add_argument("--theta", default=",".join(f"{t:g}" for t in TABLE3_THETAS))
    sim.add_argument("--n", type=int, default=None, help="Sample size")
    sim.add_argument("--n-values", default=None, dest="n_values", help="Comma-separated sample sizes (table 3)")
    sim.add_argument("--reps", type=int, default=None)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--workers", type=int, default=None)

    sub.add_parser("summary", parents=[common, data], help="Per-arm covariate summary")
    return parser


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _load_dataset(args: argparse.Namespace) -> ObservationalDataset:
    return ingest_csv(
        args.data,
        args.outcome,
        args.treatment,
        _names(args.covariates) or [],
        add_intercept=not args.no_intercept,
    )


def _model_columns(d: ObservationalDataset, raw: str | None) -> list[str] | None:
    """Column selection for a model; the intercept is always included when present."""
    names = _names(raw)
    if names is None:
        return None
    if INTERCEPT in d.covariate_names and INTERCEPT not in names:
        names = [INTERCEPT, *names]
    return names


def _check_ps_options(args: argparse.Namespace) -> None:
    if args.delta is not None and not 0.0 < args.delta < 0.5:
        raise UsageError(f"mweight {args.command}: --delta must be in (0, 0.5), got {args.delta:g}")


def _weight_cfg(args: argparse.Namespace) -> SmoothWeightConfig | None:
    if args.raw:
        return None
    return SmoothWeightConfig.from_delta(args.delta)


def _emit(text: str, output: str | None) -> None:
    if not text.endswith("\n"):
        text += "\n"
    if output is None:
        sys.stdout.write(text)
    else:
        Path(output).write_text(text, encoding="utf-8")


def _require_json(args: argparse.Namespace) -> None:
    if args.format != "json":
        raise UsageError(f"mweight {args.command}: --format text is only available for simulate")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_estimate(args: argparse.Namespace) -> Any:
    _require_json(args)
    _check_ps_options(args)
    if args.caliper is not None and not args.caliper > 0:
        raise UsageError(f"mweight estimate: --caliper must be positive, got {args.caliper:g}")
    if args.strata is not None and args.strata < 1:
        raise UsageError(f"mweight estimate: --strata must be at least 1, got {args.strata}")
    d = _load_dataset(args)
    ps_columns = _model_columns(d, args.ps_covariates)
    outcome_columns = _model_columns(d, args.outcome_covariates)
    name = args.estimator
    kwargs: dict[str, Any] = {}
    if name in ("mw", "dr-mw"):
        kwargs["cfg"] = _weight_cfg(args)
        kwargs["raw"] = args.raw
    if name in ("dr-mw", "dr-ipw"):
        kwargs["outcome_columns"] = outcome_columns
    if name == "matched":
        kwargs["caliper_multiplier"] = args.caliper
    if name == "stratified":
        kwargs["n_strata"] = args.strata
    if name == "ols":
        return ESTIMATORS[name](d, outcome_columns)
    return ESTIMATORS[name](d, ps_columns, **kwargs)


def _cmd_balance(args: argparse.Namespace) -> Any:
    _require_json(args)
    _check_ps_options(args)
    d = _load_dataset(args)
    moments = _names(args.moments) or ["mean"]
    unknown = [m for m in moments if m not in MOMENTS]
    if unknown:
        raise UsageError(f"mweight balance: unknown moment(s) {unknown}; valid: {list(MOMENTS)}")
    tested = _names(args.test_covariates)
    if tested is None:
        tested = [c for c in d.covariate_names if c != INTERCEPT]
    return balance_report(
        d, _model_columns(d, args.ps_covariates), tested, moments,
        _weight_cfg(args), raw=args.raw,
    )


def _cmd_mirror_hist(args: argparse.Namespace) -> Any:
    _require_json(args)
    _check_ps_options(args)
    d = _load_dataset(args)
    bins = get_config()["bins"] if args.bins is None else args.bins
    if bins < 1:
        raise UsageError(f"mweight mirror-hist: --bins must be at least 1, got {bins}")
    e = resolve_propensity(d, _model_columns(d, args.ps_covariates), None).scores
    z = d.treatments
    if args.weights == "mw":
        w = matching_weights(e, z, _weight_cfg(args))
    elif args.weights == "att":
        w = att_weights(e, z)
    elif args.weights == "ipw":
        w = ipw_weights(e, z)
    else:
        w = np.ones(d.n)
    h = mirror_histogram(d, e, w, bins)
    if args.svg is not None:
        render_mirror_svg(h, args.svg, {"title": f"Propensity scores ({args.weights} weights)"})
    ess = effective_sample_sizes(d, w)
    return {"weights": args.weights, "histogram": h.to_dict(), "ess": ess._asdict()}


def _cmd_simulate(args: argparse.Namespace, project: ProjectConfig) -> Any:
    seed = args.seed if args.seed is not None else project.simulate_default("seed", 0)
    reps = args.reps if args.reps is not None else project.simulate_default("reps", 1000)
    n = args.n if args.n is not None else project.simulate_default("n", 1000)
    flag = args.workers
    if flag is None and not os.environ.get(WORKERS_ENV):
        flag = project.simulate.get("n_jobs")
    n_jobs = resolve_workers(flag)
    if n_jobs == 0:
        raise UsageError("mweight simulate: --workers must not be 0")

    try:
        if args.table == 3:
            thetas = [float(t) for t in _names(args.theta) or []]
            n_values = [int(v) for v in _names(args.n_values) or []] or (
                [args.n] if args.n is not None else list(TABLE3_SIZES)
            )
            summary = run_table3(thetas, n_values, reps, seed, n_jobs=n_jobs)
        else:
            scenarios = [int(s) for s in _names(args.scenario) or []]
            run = run_table1 if args.table == 1 else run_table2
            summary = run(scenarios, n, reps, seed, n_jobs=n_jobs)
    except ValueError as exc:
        raise UsageError(f"mweight simulate: {exc}") from exc

    if args.format == "text":
        return FORMATTERS[args.table](summary)
    return summary


def _cmd_summary(args: argparse.Namespace) -> Any:
    _require_json(args)
    return dataset_summary(_load_dataset(args))


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------

def _report(record: dict[str, Any]) -> None:
    sys.stderr.write(dumps(record) + "\n")


def run(argv: Sequence[str] | None = None) -> int:
    """
    Run one subcommand and return the process exit code.

    0 on success, 1 on a usage or configuration error (message on stderr),
    2 on a data or model error (structured error JSON on stderr).
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _build_parser().parse_args(argv)
        project = ProjectConfig.load(args.config)
        # mweight.toml defaults apply to this invocation only
        with scoped():
            project.apply()
            if args.command == "simulate":
                result = _cmd_simulate(args, project)
            else:
                handler = {
                    "estimate": _cmd_estimate,
                    "balance": _cmd_balance,
                    "mirror-hist": _cmd_mirror_hist,
                    "summary": _cmd_summary,
                }[args.command]
                result = handler(args)
        _emit(result if isinstance(result, str) else dumps(result), args.output)
    except SystemExit as exc:
        # --help and --version exit through argparse
        return int(exc.code or 0)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\nRun 'mweight --help' for usage.\n")
        return EXIT_USAGE
    except ConfigError as exc:
        sys.stderr.write(f"mweight: {exc}\n")
        return EXIT_USAGE
    except MWeightError as exc:
        _report(error_record(exc))
        return EXIT_FAILURE
    except OSError as exc:
        _report({"error_type": "IoError", "message": str(exc)})
        return EXIT_FAILURE
    return EXIT_OK


def main() -> None:
    """Console-script entry point."""
    sys.exit(run())


if __name__ == "__main__":
    main()
