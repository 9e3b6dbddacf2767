"""Penalised double-well table (m = 1..4) plus the unpenalised m = 5 comparison.

    python3 scripts/run_doublewell.py [--mode coherent|semiclassical|oracle] [--outdir results]

Coherent m = 4 needs about 4 GB and a few minutes; semiclassical mode gives
the same numbers with a 24-qubit register.
"""
import argparse
import sys
from pathlib import Path

from qmh.cli import main

ap = argparse.ArgumentParser()
ap.add_argument("--mode", default="semiclassical", choices=("coherent", "semiclassical", "oracle"))
ap.add_argument("--outdir", default="results")
args = ap.parse_args()
out = Path(args.outdir)
out.mkdir(parents=True, exist_ok=True)
rc = main(["-v", "doublewell", "--m", "1,2,3,4", "--mode", args.mode, "--compare-unpenalised",
           "--out", str(out / "doublewell.json")])
if rc == 0:
    rc = main(["report", str(out / "doublewell.json"), "--outdir", str(out / "doublewell_plots")])
sys.exit(rc)
