"""Frequency shift lambda^2 - lambda0^2 against eps^2 at fixed p0, with the
fitted slope and the leading-order prediction. Writes a CSV for plotting.

    python3 scripts/frequency_law.py --config configs/reference.toml --out out/frequency_law.csv
"""

import argparse
import math
import os

import numpy as np

from cwbnlw.config import load_config
from cwbnlw.outputs import write_csv
from cwbnlw.q_solver import solve_coupled


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/reference.toml")
    ap.add_argument("--eps", type=float, nargs="+", default=[1e-4, 2e-4, 5e-4, 1e-3])
    ap.add_argument("--p0", type=float, nargs="+", default=[1.0, 1.5, 2.0])
    ap.add_argument("--out", default="out/frequency_law.csv")
    args = ap.parse_args()
    cfg = load_config(args.config, "solve")
    base = cfg.problem
    bracket = math.sqrt(1 + sum(k * k for k in base.m0))
    rows = []
    for p0 in args.p0:
        shifts = []
        for e in args.eps:
            params = base.replace(eps=e)
            sol = solve_coupled(p0, params, cfg.schedule)
            shifts.append(sol.lam ** 2 - params.lambda0_sq)
            rows.append((p0, e, sol.lam, shifts[-1]))
        slope = np.polyfit(np.square(args.eps), shifts, 1)[0]
        target = 0.75 * bracket ** base.alpha * p0 ** 2
        print(f"p0={p0:.3f}  slope={slope:.8f}  predicted={target:.8f}  rel={abs(slope - target) / target:.2e}")
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    write_csv(args.out, ("p0", "eps", "lambda", "lambda_sq_shift"), rows, cfg.source_hash)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
