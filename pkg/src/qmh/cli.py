"""``qmh`` command-line entry point.

Exit codes: 0 success, 2 validation failure (or bad input), 3 resource cap
exceeded, 4 empty postselection branch.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, apply_overrides, load_config
from .sim import EmptyPostselectionError, SimulationCapError

EXIT_OK, EXIT_VALIDATION, EXIT_CAP, EXIT_EMPTY = 0, 2, 3, 4


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--m", help="precision list, e.g. 1,2,3,4 or 3..11")
    p.add_argument("--varphi", type=float, help="penalty phase in radians")
    p.add_argument("--mode", choices=("coherent", "semiclassical", "oracle"))
    p.add_argument("--no-penalty", dest="penalised", action="store_false", default=None,
                   help="filter with the plain walk instead of the penalised one")
    p.add_argument("--out", help="results JSON path (a CSV table is written next to it)")
    p.add_argument("--sim-cap", dest="sim_cap", type=int)
    p.add_argument("--dense-cap", dest="dense_cap", type=int)
    p.add_argument("--jobs", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qmh", description="Filtered quantum walk sampling experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    dw = sub.add_parser("doublewell", help="double-well table over m")
    _common(dw)
    dw.add_argument("--temperature", type=float)
    dw.add_argument("--grid-side", dest="grid_side", type=int)
    dw.add_argument("--compare-unpenalised", dest="compare_unpenalised", action="store_true", default=None,
                    help="also run the unpenalised m=5 comparison")

    ising = sub.add_parser("ising", help="Ising sweep over (beta, m)")
    _common(ising)
    ising.add_argument("--beta", help="start:stop:step or comma list")
    ising.add_argument("--n-spins", dest="n_spins", type=int)
    ising.add_argument("--J", type=float)
    ising.add_argument("--h", type=float)

    val = sub.add_parser("validate", help="run the invariant checks")
    val.add_argument("--varphi", type=float, default=1.0472)

    rep = sub.add_parser("report", help="emit plot-data CSVs from a results file")
    rep.add_argument("results")
    rep.add_argument("--outdir")
    return ap


def _config(args, command: str) -> ExperimentConfig:
    base = ExperimentConfig(instance="double-well" if command == "doublewell" else "ising")
    if command == "ising":
        base.m = tuple(range(3, 12))
        base.mode = "oracle"
    cfg = load_config(args.config, base) if args.config else base
    keys = ("m", "varphi", "mode", "penalised", "out", "sim_cap", "dense_cap", "jobs", "temperature",
            "grid_side", "compare_unpenalised", "beta", "n_spins", "J", "h")
    return apply_overrides(cfg, {k: getattr(args, k, None) for k in keys}).validate()


def _print_table(header, rows) -> None:
    from .experiments import fmt
    print(",".join(header))
    for r in rows:
        print(",".join(fmt(v) for v in r))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    from . import experiments as ex
    log = (lambda s: print(s, file=sys.stderr)) if args.verbose else (lambda s: None)
    try:
        if args.command == "validate":
            checks = ex.cmd_validate(args.varphi)
            failed = [c for c in checks if not c.ok]
            print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
            return EXIT_VALIDATION if failed else EXIT_OK
        if args.command == "report":
            for p in ex.cmd_report(args.results, args.outdir):
                print(p)
            return EXIT_OK
        cfg = _config(args, args.command)
        if args.command == "doublewell":
            header = ex.DW_HEADER
            rows, results = ex.cmd_doublewell(cfg, log)
            extra = None
        else:
            header, rows, results, spectra = ex.cmd_ising(cfg, log)
            extra = {"spectra": spectra}
        _print_table(header, rows)
        if cfg.out:
            ex.write_results(cfg.out, args.command, cfg, results, extra)
            ex.write_csv(Path(cfg.out).with_suffix(".csv"), header, rows)
        return EXIT_OK
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SimulationCapError, MemoryError) as exc:
        print(f"resource cap: {exc}", file=sys.stderr)
        return EXIT_CAP
    except EmptyPostselectionError as exc:
        print(f"empty postselection: {exc}", file=sys.stderr)
        return EXIT_EMPTY


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
