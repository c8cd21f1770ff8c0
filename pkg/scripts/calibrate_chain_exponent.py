"""Fit the chain-length exponent C'' on calibration seeds disjoint from the
acceptance seed, then print the value to freeze in the config.

    python3 scripts/calibrate_chain_exponent.py --config configs/reference.toml
"""

import argparse
import dataclasses
import math

from cwbnlw.cli import chain_study, gdc_lambda_samples
from cwbnlw.config import load_config


def calibrate(cfg, seeds):
    rows = []
    for s in seeds:
        c = dataclasses.replace(cfg, seed=s)
        lambdas, _ = gdc_lambda_samples(c)
        study = chain_study(c, lambdas)
        rows.append((s, study["worst"], study["fitted_exponent"], study["control"].k_max))
    return rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/reference.toml")
    ap.add_argument("--seeds", type=int, nargs="+", default=[101, 102, 103, 104, 105])
    args = ap.parse_args()
    cfg = load_config(args.config, "separation")
    rows = calibrate(cfg, args.seeds)
    for s, worst, fit, ctrl in rows:
        print(f"seed {s}: worst chain bound {worst}, fitted exponent {fit:.4f}, lambda=1 control {ctrl}")
    frozen = math.ceil(10 * max(r[2] for r in rows)) / 10
    print(f"chain_exponent = {frozen}")


if __name__ == "__main__":
    main()
