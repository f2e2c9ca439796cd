"""Finite-difference check of the analytic varifold gradient on random curve pairs.

    python scripts/gradcheck.py [--n 100] [--seed 0]
"""

import sys

from varigrad.cli import main

if __name__ == "__main__":
    sys.exit(main(["gradcheck", *sys.argv[1:]]))
