"""Calibrate the existence-time constant c and write configs/calibration.json.

For each battery case the Picard horizon T* at which the measured
contraction reaches 0.9 is bisected; c = min over cases of T* ||U0||^2 / eps^3.

    python3 scripts/calibrate_constants.py [--target 0.9] [--out configs/calibration.json]
"""

import argparse
import json
import math
from pathlib import Path

from mhdlab.evolution import DEFAULT_EXISTENCE_CONSTANT, calibrate_existence_constant


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--target", type=float, default=0.9)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "configs" / "calibration.json"))
    args = ap.parse_args()
    res = calibrate_existence_constant(target=args.target)
    # round down to four significant digits so the shipped default stays conservative
    c = res["c"]
    digits = 3 - int(math.floor(math.log10(c)))
    res["c_rounded"] = math.floor(c * 10**digits) / 10**digits
    res["shipped_default"] = DEFAULT_EXISTENCE_CONSTANT
    Path(args.out).write_text(json.dumps(res, indent=2, sort_keys=True) + "\n")
    for row in res["cases"]:
        print(f"{row['case']}\n    T*={row['T_star']}  c={row['c']}")
    print(f"c = {c:.6g} (rounded {res['c_rounded']:g}, default {DEFAULT_EXISTENCE_CONSTANT:g})")


if __name__ == "__main__":
    main()
