"""Train (or reuse) every run the acceptance experiments need and print a summary.

    python scripts/run_acceptance.py [--cache DIR]

Runs are cached exactly as ``tests/test_acceptance.py`` caches them, so running
this first makes the slow acceptance tests read finished results.
"""

import argparse
import logging
import os
import time
from pathlib import Path

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np  # noqa: E402

from dmve.config import load_config  # noqa: E402
from dmve.experiments import cached_run  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
SEEDS = (0, 1, 2, 3, 4)


def cells():
    for h in (5, 15, 30):
        for est in ("dmve", "mve"):
            for s in SEEDS:
                yield dict(estimator=est, horizon=h, seed=s)
    for k in (1, 5):
        for s in SEEDS:
            yield dict(estimator="dmve", horizon=15, num_horizons=k, seed=s)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--cache", default=os.environ.get("DMVE_ACCEPTANCE_CACHE", ROOT / ".acceptance_cache"))
    parser.add_argument("--config", default=ROOT / "configs" / "acceptance.cfg")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    base = load_config(args.config)
    results = {}
    start = time.time()
    for changes in cells():
        t = time.time()
        r = cached_run(base.replace(**changes), args.cache)
        key = (changes["estimator"], changes["horizon"], changes.get("num_horizons", base.num_horizons))
        results.setdefault(key, []).append(r.final_return)
        print(
            f"{changes} final={r.final_return:.1f} msh={r.mean_selected_horizon} "
            f"{'cached' if r.cached else f'{time.time() - t:.0f}s'} total={time.time() - start:.0f}s",
            flush=True,
        )
    print("\nestimator horizon K mean_final_return std")
    for (est, h, k), rets in sorted(results.items()):
        print(f"{est} {h} {k} {np.mean(rets):.2f} {np.std(rets):.2f}")


if __name__ == "__main__":
    main()
