"""Run a grid config and print the LML-versus-diffusion comparison.

    python3 scripts/run_grid.py configs/se_grid.json [--out DIR] [--jobs N]
"""

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from meshdiff.config import load_config
from meshdiff.experiment import DIFFUSION, LML, lengthscale_cv
from meshdiff.results import run_and_write_grid


def compare(results):
    """Per-init rmse_diffusion of both methods, paired by kernel and init."""
    pairs = {}
    for r in results:
        # run ids are "<method>-<kernel>-<inits>"; the tail identifies the init
        pairs.setdefault(r.run_id.split("-", 1)[1], {})[r.method] = r
    rows = []
    for p in pairs.values():
        if LML in p and DIFFUSION in p and p[LML].ok and p[DIFFUSION].ok:
            lml, diff = p[LML], p[DIFFUSION]
            rows.append((diff.run_id, lml.final_loss.rmse_diffusion, diff.final_loss.rmse_diffusion))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--out")
    ap.add_argument("--jobs", type=int)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING)
    config = load_config(args.config)
    out = Path(args.out or config.output_dir)
    results = run_and_write_grid(config, out, jobs=args.jobs)
    print(f"{len(results)} runs in {out}")
    rows = compare(results)
    for rid, lml, diff in rows:
        print(f"{rid:32s} LML {lml:.4g}  diffusion {diff:.4g}  ratio {diff / lml:.3g}")
    if rows:
        gmean = math.exp(float(np.mean([math.log(d / m) for _, m, d in rows])))
        print(f"geometric-mean ratio {gmean:.3g}")
    for kind in config.kernels:
        by = {m: [r for r in results if r.kernel == kind and r.method == m and r.ok] for m in (LML, DIFFUSION)}
        if all(by.values()):
            print(f"{kind}: lengthscale CV  LML {lengthscale_cv(by[LML]):.3g}  diffusion {lengthscale_cv(by[DIFFUSION]):.3g}")
    return 0 if all(r.ok for r in results) else 2


if __name__ == "__main__":
    sys.exit(main())
