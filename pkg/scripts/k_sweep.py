"""Sweep over the number of averaged horizons K at H = 15, with plots.

    python scripts/k_sweep.py --out runs/k [--parallel 1]

Produces per-K learning curves and mean-selected-horizon curves (SVG) and
prints the seed-mean final return and mean selected horizon for each K.
"""

import argparse
from pathlib import Path

import numpy as np

from dmve.plotting import plot_metrics
from dmve.sweep import load_sweep_spec, run_sweep

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs/k")
    parser.add_argument("--parallel", type=int, default=1)
    args = parser.parse_args()
    out = Path(args.out)
    results = run_sweep(load_sweep_spec(CONFIGS / "sweep_k.spec"), out, parallel=args.parallel)
    by_k = {}
    for r in results:
        by_k.setdefault(r.value, []).append(r)
    for k, rs in by_k.items():
        ret = np.mean([r.final_return for r in rs])
        msh = np.mean([r.mean_selected_horizon for r in rs if r.mean_selected_horizon is not None])
        print(f"K={k} final_return={ret:.1f} mean_selected_horizon={msh:.2f}")
    metrics = sorted(out.glob("*/metrics.csv"))
    plot_metrics(metrics, out / "returns.svg", group_by="num_horizons")
    plot_metrics(metrics, out / "selected_horizon.svg", metric="mean_selected_horizon", group_by="num_horizons")


if __name__ == "__main__":
    main()
