"""Ising beta sweep over m = 3..11 with the plot-data CSVs.

    python3 scripts/run_ising.py [--jobs N] [--outdir results]
"""
import argparse
import sys
from pathlib import Path

from qmh.cli import main

ap = argparse.ArgumentParser()
ap.add_argument("--jobs", default="1")
ap.add_argument("--beta", default="0.1:4.0:0.1")
ap.add_argument("--outdir", default="results")
args = ap.parse_args()
out = Path(args.outdir)
out.mkdir(parents=True, exist_ok=True)
rc = main(["-v", "ising", "--beta", args.beta, "--m", "3..11", "--mode", "oracle", "--jobs", args.jobs,
           "--out", str(out / "ising.json")])
if rc == 0:
    rc = main(["report", str(out / "ising.json"), "--outdir", str(out / "ising_plots")])
sys.exit(rc)
