#!/usr/bin/env python3
# End-to-end pipeline on the shipped samples: Delaunay data, gluing, solve, verify, sweeps

import sys
import os

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.cli.main import main as cli

STEPS = [
    ["delaunay", "--n", "3", "--eps", "0.3"],
    ["modes", "--n", "3", "--eps", "0.3", "--jmax", "2"],
    ["glue", "configs/dipole.json"],
    ["solve", "configs/dipole.json"],
    ["verify"],
    ["sweep", "configs/sweep_n3.json"],
    ["sweep", "configs/sweep_n4.json"],
]


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "runs"
    failures = 0
    for step in STEPS:
        code = cli(["--out", out] + step)
        print(f"{' '.join(step)} -> exit {code}")
        failures += code != 0
    print(f"Pipeline finished with {failures} failing step(s); artifacts in {out}/")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
