"""Horizon sweep for the adaptive and the fixed-horizon estimators, with plots.

    python scripts/horizon_sweep.py --out runs/horizon [--parallel 1]

Writes one run directory per (estimator, H, seed), a summary.csv per
estimator, learning-curve SVGs grouped by H, and prints the spread of the
seed-mean final return across H for each estimator.
"""

import argparse
from pathlib import Path

import numpy as np

from dmve.plotting import plot_metrics
from dmve.sweep import load_sweep_spec, run_sweep

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs/horizon")
    parser.add_argument("--parallel", type=int, default=1)
    args = parser.parse_args()
    out = Path(args.out)
    for estimator in ("dmve", "mve"):
        spec = load_sweep_spec(CONFIGS / f"sweep_h_{estimator}.spec")
        results = run_sweep(spec, out / estimator, parallel=args.parallel)
        means = {}
        for r in results:
            means.setdefault(r.value, []).append(r.final_return)
        per_h = {h: float(np.mean(v)) for h, v in means.items()}
        spread = max(per_h.values()) - min(per_h.values())
        print(estimator, " ".join(f"H{h}={m:.1f}" for h, m in per_h.items()), f"spread={spread:.1f}")
        metrics = sorted((out / estimator).glob("*/metrics.csv"))
        plot_metrics(metrics, out / f"{estimator}_returns.svg", group_by="horizon")


if __name__ == "__main__":
    main()
