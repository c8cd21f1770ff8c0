"""Excluded p0 fraction per eps on a denser grid than the acceptance scan,
optionally with a process pool.

    python3 scripts/scan_excluded.py --config configs/reference.toml --samples 256 --workers 4
"""

import argparse
import dataclasses

from cwbnlw.cli import scan_p0
from cwbnlw.config import load_config


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/reference.toml")
    ap.add_argument("--eps", type=float, nargs="+")
    ap.add_argument("--samples", type=int, default=256)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    cfg = load_config(args.config, "scan")
    cfg = dataclasses.replace(cfg, workers=args.workers, scan=dataclasses.replace(cfg.scan, samples=args.samples))
    rep = scan_p0(cfg, eps_grid=args.eps)
    for e, f in zip(rep["eps_grid"], rep["excluded_fraction"]):
        reasons = sorted({r["reason"] for r in rep["rows"] if r["eps"] == e and not r["included"]})
        print(f"eps={e:.1e}  excluded={f:.4f}  reasons={reasons or '-'}")
    print("nonincreasing:", rep["nonincreasing"])


if __name__ == "__main__":
    main()
