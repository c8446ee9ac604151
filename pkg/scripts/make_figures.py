"""Write every SVG chart for a finished results directory.

    python3 scripts/make_figures.py results/se_grid
"""

import sys
from pathlib import Path

from meshdiff.plotting import PLOT_KINDS, PlotError, plot_results
from meshdiff.results import load_results


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print(__doc__, file=sys.stderr)
        return 1
    out = Path(argv[0])
    figs = out / "figures"
    figs.mkdir(exist_ok=True)
    for kind in ("lengthscales", "losses"):
        print(plot_results(out, kind, figs / f"{kind}.svg"))
    for r in load_results(out):
        for kind in ("convergence", "slice"):
            try:
                print(plot_results(out, kind, figs / f"{kind}_{r['run_id']}.svg", run_id=r["run_id"]))
            except PlotError as err:
                print(f"skipped {kind} for {r['run_id']}: {err}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
