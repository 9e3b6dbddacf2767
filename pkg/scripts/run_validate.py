"""Invariant checks on the reduced and full instances; exit status 2 on any failure."""
import sys

from qmh.cli import main

sys.exit(main(["validate"] + sys.argv[1:]))
