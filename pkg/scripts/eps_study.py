"""Distances between solutions at consecutive mollification scales.

    python3 scripts/eps_study.py [--config configs/eps_study_32.json]
"""

import argparse
from dataclasses import replace
from pathlib import Path

from mhdlab.config import parse_config
from mhdlab.evolution import epsilon_convergence_study

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "eps_study_32.json"))
    args = ap.parse_args()
    rc = parse_config(args.config)
    L = rc.sim.grid.box_length
    fracs = rc.blocks["eps_study"]["eps_fractions"]
    res = epsilon_convergence_study(replace(rc.sim, ledger_gammas=()), [f * L for f in fracs])
    for (a, b), d in zip(zip(fracs, fracs[1:]), res["distances"]):
        print(f"eps {a:g}L -> {b:g}L   distance {d:.6e}")
    print("strictly decreasing:", res["monotone_decreasing"])


if __name__ == "__main__":
    main()
