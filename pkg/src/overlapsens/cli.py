"""Command-line entry point: ``overlapsens {analyze,contour,benchmark,simulate}``."""

from __future__ import annotations

import argparse
import logging
import sys
import traceback
from pathlib import Path

from .errors import ConfigError, OverlapSensError
from .report import RunConfig, analyze, contour_only, simulate

log = logging.getLogger("overlapsens")

EXIT_OK = 0


def _c_sigma_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad --c-sigma list {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("--c-sigma needs at least one value")
    return values


def _b_star(text: str):
    try:
        return float(text)
    except ValueError:
        return text


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML or JSON run configuration")
    common.add_argument("--out", type=Path, help="output directory (overrides config)")
    common.add_argument("--seed", type=int, help="root seed (overrides config)")
    common.add_argument("--workers", type=int, help="worker threads for bootstrap/simulation")
    common.add_argument("--weights-column", help="experimental column holding precomputed weights")
    common.add_argument("--b-star", type=_b_star, help="threshold: number, frac:X or sig")
    common.add_argument("--c-sigma", type=_c_sigma_list, help="comma-separated C_sigma values; first is primary")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="overlapsens",
        description="Sensitivity of transported treatment effects to overlap violations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("analyze", parents=[common], help="full report: estimates, ORV/MVE, contours, benchmarks")
    c = sub.add_parser("contour", parents=[common], help="bias contour CSV + SVG")
    c.add_argument("--tau-hat", type=float, help="use a cached estimate instead of running the pipeline")
    c.add_argument("--var-w", type=float, help="cached upper bound on effect variance (with --tau-hat)")
    c.add_argument("--resolution", type=int, default=None)
    c.add_argument("--name", default="manual")
    sub.add_parser("benchmark", parents=[common], help="benchmark table only")
    sub.add_parser("simulate", parents=[common], help="Monte Carlo oracle on synthetic populations")
    return parser


def _config(args) -> RunConfig:
    if args.config is None:
        cfg = RunConfig.from_dict({})
    else:
        cfg = RunConfig.load(args.config)
    return cfg.with_overrides(
        seed=args.seed,
        workers=args.workers,
        weights_column=args.weights_column,
        b_star=args.b_star,
        c_sigma=args.c_sigma,
        out=str(args.out) if args.out else None,
    )


def _origin(exc: BaseException) -> str:
    """Module of the innermost package frame that raised ``exc``."""
    origin = "overlapsens"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        mod = frame.f_globals.get("__name__", "")
        if mod.startswith("overlapsens.") and mod not in ("overlapsens.cli", "overlapsens.errors"):
            origin = mod
    return origin


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "contour" and args.tau_hat is not None:
            if args.var_w is None:
                raise ConfigError("--tau-hat needs --var-w")
            b = args.b_star if args.b_star is not None else 0.0
            if isinstance(b, str):
                raise ConfigError("with cached estimates --b-star must be a number")
            grid = contour_only(
                args.tau_hat, args.var_w, b, (args.c_sigma or [1.0])[0], args.resolution or 201,
                args.out or Path("."), args.name,
            )
            print(f"ORV = {grid.orv:.4f}; killer share = {grid.killer.mean():.4f}")
            return EXIT_OK

        cfg = _config(args)
        if args.command == "contour" and args.resolution:
            cfg = cfg.with_overrides(resolution=args.resolution)
        out = Path(args.out) if args.out else None
        if args.command == "simulate":
            rep = simulate(cfg, out)
            for sc in rep["scenarios"]:
                chk = sc["checks"]["bias_gap"]
                print(f"{sc['spec']['name']:>16}  gap z = {chk['z']:+.2f}  {sc['verdict']}")
            print(f"overall: {rep['verdict']}")
            return EXIT_OK

        rep = analyze(cfg, out, strict_benchmarks=args.command == "benchmark")
        for row in rep["summary_table"]:
            o = row["orv"]
            print(
                f"{row['outcome']:>20}  within {row['within_site'][0]:.4g} ({row['within_site'][1]:.3g})"
                f"  weighted {row['weighted'][0]:.4g} ({row['weighted'][1]:.3g})"
                f"  ORV {'n/a' if o is None else f'{o:.2f}'}"
            )
        if args.command == "benchmark":
            for name, block in rep["outcomes"].items():
                for b in block["benchmarks"]:
                    m = b["mrob"] if isinstance(b["mrob"], str) else f"{b['mrob']:.2f}"
                    print(
                        f"{name:>20}  {b['name']:<24} R2 {b['r2_hat']:.2f}  p {b['p_hat']:.2f}"
                        f"  bias {b['bias']:.4g}  MROB {m}  {b['sign']}"
                    )
        return EXIT_OK
    except OverlapSensError as e:
        print(f"error ({type(e).__name__} in {_origin(e)}): {e}", file=sys.stderr)
        return e.exit_code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
