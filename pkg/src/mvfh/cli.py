"""Command line interface.

Three subcommands: fit (coefficients and covariance estimates from data
files), predict (EBLUPs with MSEM estimates), and simulate (Monte Carlo
risk tables for the grouped designs). Each writes its report into --out as
CSV or JSON, plus a PNG figure unless --no-figures.

Exit codes: 0 success, 2 validation or input error, 3 numeric failure.
"""

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

from . import dataio, figures
from .covariance import estimate_covariance
from .errors import NumericError, ValidationError
from .msem import msem_estimate_all
from .prediction import beta_inference, eblup_all, gls_beta
from .simulation import SimulationDesign, prial_from_result, relative_bias_from_result, run_design

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3


@dataclass(frozen=True)
class RunConfig:
    """Parsed invocation; fields not used by the chosen command stay None."""

    command: str
    areas: str | None = None
    cov: str | None = None
    psi: str = "PR0"
    out: str = "."
    format: str = "csv"
    seed: int = 1
    k: int = 2
    m: int = 30
    rho: float = 0.5
    pattern: str = "a"
    reps: int = 1000
    workers: int = 1
    render_figures: bool = True


def _add_io_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", required=True, help="output directory (created if missing)")
    p.add_argument("--format", choices=("csv", "json"), default="csv", help="report format")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--areas", required=True, help="areas CSV: area_id,y_1..y_k,x_1_1..x_k_s")
    p.add_argument("--cov", required=True, help="covariance CSV: area_id,d_1_1..d_k_k")
    p.add_argument("--psi", choices=("pr0", "pr1"), default="pr0", help="covariance estimator variant")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvfh",
        description="Multivariate Fay-Herriot small area estimation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="estimate coefficients and the effect covariance")
    _add_data_flags(p_fit)
    _add_io_flags(p_fit)

    p_pred = sub.add_parser("predict", help="EBLUPs with second-order MSEM estimates")
    _add_data_flags(p_pred)
    _add_io_flags(p_pred)

    p_sim = sub.add_parser("simulate", help="Monte Carlo risk tables for a grouped design")
    p_sim.add_argument("--k", type=int, default=2, help="response dimension")
    p_sim.add_argument("--m", type=int, default=30, help="number of areas (multiple of 5)")
    p_sim.add_argument("--rho", type=float, default=0.5, help="effect correlation")
    p_sim.add_argument("--pattern", choices=("a", "b"), default="a", help="sampling variance pattern")
    p_sim.add_argument("--reps", type=int, default=1000, help="Monte Carlo replications")
    p_sim.add_argument("--seed", type=int, default=1, help="base seed for the replication streams")
    p_sim.add_argument("--workers", type=int, default=1, help="worker processes")
    p_sim.add_argument("--psi", choices=("pr0", "pr1"), default="pr0", help="variant for the MSEM estimator study")
    _add_io_flags(p_sim)

    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    fields = {
        "command": args.command,
        "out": args.out,
        "format": args.format,
        "psi": args.psi.upper(),
        "render_figures": not args.no_figures,
    }
    if args.command in ("fit", "predict"):
        fields.update(areas=args.areas, cov=args.cov)
    else:
        fields.update(
            seed=args.seed,
            k=args.k,
            m=args.m,
            rho=args.rho,
            pattern=args.pattern,
            reps=args.reps,
            workers=args.workers,
        )
    return RunConfig(**fields)


def cmd_fit(cfg: RunConfig) -> list[Path]:
    data = dataio.load_dataset(cfg.areas, cfg.cov)
    estimates = {v: estimate_covariance(data, v) for v in ("PR0", "PR1")}
    fit = gls_beta(estimates[cfg.psi].projected, data)
    table = beta_inference(fit)
    payload = dataio.fit_report(data, estimates, fit, table, cfg.psi)
    out_dir = _ensure_out(cfg)
    paths = _emit(cfg, out_dir, payload, dataio.write_fit_csv, "fit.json")
    if cfg.render_figures:
        paths.append(figures.render_fit_figure(payload, out_dir))
    return paths


def cmd_predict(cfg: RunConfig) -> list[Path]:
    data = dataio.load_dataset(cfg.areas, cfg.cov)
    predictions = eblup_all(data, cfg.psi)
    reports = msem_estimate_all(data, cfg.psi)
    payload = dataio.predict_report(data, predictions, reports, cfg.psi)
    out_dir = _ensure_out(cfg)
    paths = _emit(cfg, out_dir, payload, dataio.write_predict_csv, "predict.json")
    if cfg.render_figures:
        paths.append(figures.render_predict_figure(payload, out_dir))
    return paths


def cmd_simulate(cfg: RunConfig) -> list[Path]:
    design = SimulationDesign(
        k=cfg.k,
        m=cfg.m,
        rho=cfg.rho,
        d_pattern=cfg.pattern,
        reps=cfg.reps,
        seed=cfg.seed,
    )
    result = run_design(design, workers=cfg.workers, estimate_variant=cfg.psi)
    prial_rep = prial_from_result(result)
    relbias = relative_bias_from_result(result)
    payload = dataio.simulate_report(result, prial_rep, relbias)
    out_dir = _ensure_out(cfg)
    paths = _emit(cfg, out_dir, payload, dataio.write_simulate_csv, "simulate.json")
    if cfg.render_figures:
        paths.append(figures.render_simulate_figure(payload, out_dir))
    return paths


def _ensure_out(cfg: RunConfig) -> Path:
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _emit(cfg: RunConfig, out_dir: Path, payload: dict, csv_writer, json_name: str) -> list[Path]:
    if cfg.format == "json":
        path = out_dir / json_name
        dataio.write_json_report(path, payload)
        return [path]
    return list(csv_writer(out_dir, payload))


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "simulate": cmd_simulate}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = config_from_args(args)
    try:
        paths = COMMANDS[cfg.command](cfg)
    except (ValidationError, OSError) as exc:
        print(f"mvfh: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericError as exc:
        print(f"mvfh: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
