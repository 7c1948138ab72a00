from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass
from typing import List, Optional, Sequence, Text

import numpy as np
import pandas as pd
import structlog
from dotenv import load_dotenv
from pydantic import ValidationError
from rich import print

from ebsc import TOOL_NAME, __version__
from ebsc.config import SUPPORTED_ORDERS, FitConfig, ScenarioConfig
from ebsc.credible import DEFAULT_ALPHA, DEFAULT_NUM_DRAWS, credible_set
from ebsc.driver import FitResult, fit, fit_fixed_q
from ebsc.exceptions import DataParseError, DataValidationError, EbscException, ScenarioError
from ebsc.noise_model import parse_noise
from ebsc.reporting import (
    autocorr_frame,
    bands_frame,
    curve_frame,
    print_statistics,
    read_json,
    residuals_frame,
    save_distributions,
    spectrum_frame,
    tq_frame,
    write_csv,
    write_json,
)
from ebsc.simulation import STANDARD_NOISES, coverage_study, run_config, run_table

logger = logging.getLogger(__name__)
structlogger = structlog.get_logger()

SEED_ENV = "EBSC_SEED"
EQUIDISTANT_TOL = 1e-6
INTERPOLATED_MISSING = "interpolated-missing"
STRICT_EXIT_CODE = 4
DELIMITERS = r"\s*[,;\t]\s*|\s+"
DESK_SCALE_M = 50
FULL_SCALE_M = 500


@dataclass(frozen=True)
class DataFile:
    """Parsed observations; ``t`` is None when the file has no design column."""

    y: np.ndarray
    t: Optional[np.ndarray] = None
    interpolated: int = 0

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def has_design(self) -> bool:
        return self.t is not None


def _is_number(text: Text) -> bool:
    try:
        float(text)
    except (TypeError, ValueError):
        return False
    return True


def read_data_file(path: Text, interpolate_missing: bool = False) -> DataFile:
    """Reads one column (y) or two columns (t, y) of delimited text.

    A non-numeric first row is taken as a header. Empty fields and NA markers
    count as missing values.
    """
    try:
        raw = pd.read_csv(
            path, sep=DELIMITERS, engine="python", header=None, dtype=str, skip_blank_lines=False
        )
    except pd.errors.EmptyDataError:
        raise DataParseError(f"{path}: file is empty")
    except pd.errors.ParserError as e:
        raise DataParseError(f"{path}: {e}")
    except OSError as e:
        raise DataParseError(f"{path}: cannot read file: {e}")

    first_line = 1
    first_row = raw.iloc[0].dropna().str.strip() if len(raw) else pd.Series(dtype=str)
    if len(first_row) and not all(_is_number(value) for value in first_row):
        raw = raw.iloc[1:]
        first_line = 2
    raw = raw.loc[: raw.last_valid_index()] if raw.last_valid_index() is not None else raw.iloc[:0]
    if raw.empty:
        raise DataParseError(f"{path}: no data rows")
    if raw.shape[1] > 2:
        raise DataParseError(f"{path}: expected one or two columns, found {raw.shape[1]}")

    columns = []
    for column in raw.columns:
        text = raw[column].str.strip()
        values = pd.to_numeric(text, errors="coerce")
        invalid = text.notna() & (text != "") & values.isna() & ~text.str.lower().isin(["na", "nan"])
        if invalid.any():
            position = int(np.flatnonzero(invalid.to_numpy())[0])
            raise DataParseError(
                f"{path}: line {first_line + position}: cannot parse '{text.iloc[position]}' as a number"
            )
        columns.append(values.astype(float).reset_index(drop=True))

    y = columns[-1]
    t = columns[0].to_numpy() if len(columns) == 2 else None
    if t is not None:
        _check_design(t)

    missing = int(y.isna().sum())
    if missing and not interpolate_missing:
        raise DataValidationError(
            f"{path}: {missing} missing observations, use --interpolate-missing to fill them"
        )
    if missing:
        logger.warning(f"Filling {missing} missing observations by linear interpolation")
        y = y.interpolate(method="linear", limit_direction="both")
    return DataFile(y=y.to_numpy(), t=t, interpolated=missing)


def _check_design(t: np.ndarray) -> None:
    if np.isnan(t).any():
        raise DataValidationError("design column contains missing values")
    spacing = np.diff(t)
    if t.size > 1 and np.any(spacing <= 0):
        raise DataValidationError("design column must be strictly increasing")
    if t.size > 2:
        mean_spacing = float(np.mean(spacing))
        if np.max(np.abs(spacing - mean_spacing)) > EQUIDISTANT_TOL * mean_spacing:
            raise DataValidationError("design column must be equidistant")


def resolve_seed(seed: Optional[int]) -> int:
    if seed is not None:
        return seed
    value = os.environ.get(SEED_ENV)
    if value is None or value.strip() == "":
        return 0
    try:
        return int(value)
    except ValueError:
        raise EbscException(f"{SEED_ENV} must be an integer, got '{value}'", exit_code=2)


def _fit_config(args: argparse.Namespace) -> FitConfig:
    overrides = {
        "delta": args.delta,
        "max_iter": args.max_iter,
        "tol_lambda": args.tol_lambda,
        "tol_rho": args.tol_rho,
        "exact_eta": args.exact_eta or None,
        "lambda_grid": {
            key: value
            for key, value in (
                ("min", args.lambda_min),
                ("max", args.lambda_max),
                ("points", args.lambda_points),
            )
            if value is not None
        },
    }
    if args.fixed_q is not None:
        overrides["q_set"] = [args.fixed_q]
    elif args.q_max is not None:
        overrides["q_set"] = list(range(1, args.q_max + 1))
    if getattr(args, "command", None) == "fit" and args.threads is not None:
        overrides["workers"] = args.threads
    try:
        return FitConfig.from_overrides(overrides)
    except ValidationError as e:
        raise EbscException(f"invalid fit configuration: {e}", exit_code=2)


def _finish(flags: Sequence[Text], strict: bool) -> int:
    if flags:
        print(f"[yellow]Flags: {', '.join(flags)}[/yellow]")
        if strict:
            return STRICT_EXIT_CODE
    return 0


def cmd_fit(args: argparse.Namespace) -> int:
    config = _fit_config(args)
    seed = resolve_seed(args.seed)
    data = read_data_file(args.input, interpolate_missing=args.interpolate_missing)
    if args.fixed_q is not None:
        result = fit_fixed_q(data.y, args.fixed_q, config)
    else:
        result = fit(data.y, config)
    if data.interpolated:
        result = dataclasses.replace(result, flags=(*result.flags, INTERPOLATED_MISSING))

    bands = credible_set(
        result, alpha=args.alpha, L=args.L, num_draws=args.draws, seed=seed, keep_draws=False
    )
    config_hash = config.config_hash()
    out = args.out
    write_json(result.to_dict(), os.path.join(out, "fit.json"), config_hash, seed)
    design = data.t if data.has_design else None
    write_csv(curve_frame(result, bands, design), os.path.join(out, "curve.csv"), config_hash, seed)
    write_csv(spectrum_frame(result), os.path.join(out, "spectrum.csv"), config_hash, seed)
    write_csv(autocorr_frame(result), os.path.join(out, "autocorr.csv"), config_hash, seed)
    write_csv(tq_frame(result), os.path.join(out, "tq.csv"), config_hash, seed)
    write_csv(residuals_frame(result), os.path.join(out, "residuals.csv"), config_hash, seed)

    structlogger.info("cli.fit.written", out=out, n=result.n, q_hat=result.q_hat)
    print(
        f"q_hat={result.q_hat} lambda_hat={result.lambda_hat:.4e} "
        f"sigma2hat={result.sigma2hat:.4e} edf={result.edf:.2f}"
    )
    return _finish(result.flags, args.strict)


def _scenario_config(args: argparse.Namespace, noise_text: Text) -> ScenarioConfig:
    M = args.M if args.M is not None else (FULL_SCALE_M if args.full else DESK_SCALE_M)
    try:
        return ScenarioConfig(
            function=args.f,
            noise=parse_noise(noise_text),
            n=args.n,
            M=M,
            q_mode="fixed" if args.fixed_q is not None else "adaptive",
            fixed_q=args.fixed_q if args.fixed_q is not None else 2,
            seed=resolve_seed(args.seed),
            workers=args.threads or os.cpu_count() or 1,
            fit=_fit_config(args),
        )
    except ValidationError as e:
        raise ScenarioError(f"invalid scenario: {e}")


def cmd_simulate(args: argparse.Namespace) -> int:
    noise_text = "iid" if args.noise == "all" else args.noise
    config = _scenario_config(args, noise_text)
    config_hash = config.config_hash()
    out = args.out

    if args.noise == "all":
        table, results = run_table(
            config.function,
            n=config.n,
            M=config.M,
            q_mode=config.q_mode,
            seed=config.seed,
            fixed_q=config.fixed_q,
            workers=config.workers,
            fit_config=config.fit,
            noises=STANDARD_NOISES,
        )
        write_csv(table, os.path.join(out, "noise_table.csv"), config_hash, config.seed)
    else:
        results = [run_config(config)]
        result = results[0]
        row = pd.DataFrame(
            [
                {
                    "noise": result.noise.label,
                    "A_f_1e3": 1e3 * result.A_f,
                    "A_R_1e3": 1e3 * result.A_R,
                    "q_recovery": np.nan if result.q_recovery is None else result.q_recovery,
                }
            ]
        )
        write_csv(row, os.path.join(out, "table1_row.csv"), config_hash, config.seed)

    scenario = {
        "config": json.loads(config.model_dump_json(exclude={"workers"})),
        "results": [result.to_dict() for result in results],
    }
    distributions = {
        f"{result.noise.label}.{name}": values
        for result in results
        for name, values in result.distributions().items()
    }
    for result in results:
        if result.records["flags"].str.len().gt(0).any():
            flagged = int(result.records["flags"].str.len().gt(0).sum())
            logger.warning(f"{flagged} of {result.M} replications under {result.noise.label} raised flags")

    if args.coverage:
        coverage = coverage_study(
            config.function,
            config.noise,
            n=config.n,
            M=config.M,
            alpha=args.alpha,
            L=args.L,
            num_draws=args.draws,
            seed=config.seed,
            q_mode=config.q_mode,
            fixed_q=config.fixed_q,
            workers=config.workers,
            fit_config=config.fit,
        )
        scenario["coverage"] = coverage.to_dict()
        distributions["coverage_ratio"] = coverage.ratios.tolist()

    write_json(scenario, os.path.join(out, "scenario.json"), config_hash, config.seed)
    save_distributions(distributions, os.path.join(out, "distributions.json"), config_hash, config.seed)
    for result in results:
        print_statistics(result.distributions(), f"{result.function} under {result.noise.label}")
    structlogger.info("cli.simulate.written", out=out, scenarios=len(results))
    return 0


def cmd_credible(args: argparse.Namespace) -> int:
    payload = read_json(args.fit_json)
    result = FitResult.from_dict(payload)
    seed = resolve_seed(args.seed)
    fit_hash = str(payload.get("meta", {}).get("config_hash", ""))
    settings = json.dumps({"fit": fit_hash, "alpha": args.alpha, "L": args.L, "draws": args.draws})
    config_hash = hashlib.sha256(settings.encode("utf-8")).hexdigest()[:16]

    bands = credible_set(
        result, alpha=args.alpha, L=args.L, num_draws=args.draws, seed=seed, keep_draws=False
    )
    out = args.out
    write_json(bands.to_dict(), os.path.join(out, "credible.json"), config_hash, seed)
    write_csv(bands_frame(bands), os.path.join(out, "bands.csv"), config_hash, seed)
    print(f"radius={bands.radius:.6e} s_n={bands.s_n:.4f} retained={bands.retained}/{bands.num_draws}")
    return 0


def _add_fit_arguments(parser: argparse.ArgumentParser) -> None:
    orders = parser.add_mutually_exclusive_group()
    orders.add_argument("--fixed-q", type=int, choices=SUPPORTED_ORDERS, help="Fix the penalty order.")
    orders.add_argument("--q-max", type=int, choices=SUPPORTED_ORDERS, help="Largest order tried.")
    parser.add_argument("--delta", type=float, help="Spectral truncation level.")
    parser.add_argument(
        "--lambda-min",
        type=float,
        help="Smallest grid bandwidth lambda^(1/(2q)) in units of 1/(n-1); not a lambda value.",
    )
    parser.add_argument(
        "--lambda-max", type=float, help="Largest grid bandwidth lambda^(1/(2q)); not a lambda value."
    )
    parser.add_argument("--lambda-points", type=int, help="Number of grid points.")
    parser.add_argument("--tol-lambda", type=float, help="Relative tolerance on lambda.")
    parser.add_argument("--tol-rho", type=float, help="Tolerance on the spectral update.")
    parser.add_argument("--max-iter", type=int, help="Inner iteration cap.")
    parser.add_argument("--exact-eta", action="store_true", help="Use exact penalty eigenvalues (n <= 512).")


def _add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, help=f"Random seed (falls back to ${SEED_ENV}, then 0).")
    parser.add_argument("--out", default=".", help="Output directory.")
    parser.add_argument("--verbose", action="store_true", help="Debug logging.")


def _add_credible_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help="Credible level complement.")
    parser.add_argument("--L", type=float, default=1.0, help="Radius multiplier.")
    parser.add_argument("--draws", type=int, default=DEFAULT_NUM_DRAWS, help="Posterior draws.")


def create_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=TOOL_NAME,
        description="Empirical-Bayes smoothing splines under stationary correlated noise.",
    )
    parser.add_argument("--version", action="version", version=f"{TOOL_NAME} {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    fit_parser = subparsers.add_parser("fit", help="Fit a smoothing spline to a data file.")
    fit_parser.add_argument("input", help="Delimited text with y or (t, y) columns.")
    _add_fit_arguments(fit_parser)
    _add_common_arguments(fit_parser)
    _add_credible_arguments(fit_parser)
    fit_parser.add_argument("--threads", type=int, help="Threads across penalty orders.")
    fit_parser.add_argument("--strict", action="store_true", help="Exit with 4 when any flag is raised.")
    fit_parser.add_argument(
        "--interpolate-missing", action="store_true", help="Fill missing y by linear interpolation."
    )
    fit_parser.set_defaults(handler=cmd_fit)

    simulate_parser = subparsers.add_parser("simulate", help="Run the Monte-Carlo study.")
    simulate_parser.add_argument("--f", default="f1", help="Test signal: f1, f2 or f3.")
    simulate_parser.add_argument(
        "--noise", default="iid", help="iid, ar1:PHI, ma1:THETA, arma22[:P1,P2,T1,T2], gp or all."
    )
    simulate_parser.add_argument("--n", type=int, default=500, help="Sample size.")
    simulate_parser.add_argument("--M", type=int, help=f"Replications (default {DESK_SCALE_M}).")
    simulate_parser.add_argument(
        "--full", action="store_true", help=f"Use {FULL_SCALE_M} replications."
    )
    simulate_parser.add_argument("--threads", type=int, help="Worker processes (default: all cores).")
    simulate_parser.add_argument(
        "--coverage", action="store_true", help="Also run the credible-set coverage study."
    )
    _add_fit_arguments(simulate_parser)
    _add_common_arguments(simulate_parser)
    _add_credible_arguments(simulate_parser)
    simulate_parser.set_defaults(handler=cmd_simulate)

    credible_parser = subparsers.add_parser("credible", help="Credible set from a saved fit.")
    credible_parser.add_argument("fit_json", help="fit.json written by the fit command.")
    _add_common_arguments(credible_parser)
    _add_credible_arguments(credible_parser)
    credible_parser.set_defaults(handler=cmd_credible)
    return parser


def configure_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger(TOOL_NAME).setLevel(level)
    structlog.configure(wrapper_class=structlog.make_filtering_bound_logger(level))


def main(argv: Optional[List[Text]] = None) -> int:
    load_dotenv()
    parser = create_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)
    try:
        return args.handler(args)
    except EbscException as e:
        print(f"[red]Error: {e.message}[/red]")
        structlogger.error("cli.failed", command=args.command, error=e.message, exit_code=e.exit_code)
        return e.exit_code
