"""Cached training runs for long experiments.

A run is stored under a key derived from its full configuration text and a
digest of the package source, so editing either invalidates the cache while
re-running unchanged code reuses finished runs.
"""

from __future__ import annotations

import csv
import hashlib
import shutil
from dataclasses import dataclass
from pathlib import Path

from .config import TrainConfig, load_config
from .training import run_training

PACKAGE_DIR = Path(__file__).resolve().parent


def source_digest() -> str:
    h = hashlib.sha256()
    for path in sorted(PACKAGE_DIR.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


def run_key(config: TrainConfig) -> str:
    return hashlib.sha256((source_digest() + config.to_text()).encode()).hexdigest()[:16]


@dataclass
class RunSummary:
    config: TrainConfig
    out_dir: Path
    final_return: float
    final_return_std: float
    seed_return: float
    mean_selected_horizon: float | None
    cached: bool

    @property
    def metrics_path(self) -> Path:
        return self.out_dir / "metrics.csv"


def _read_summary(out: Path, config: TrainConfig, cached: bool) -> RunSummary:
    with open(out / "summary.csv", newline="") as fh:
        row = next(csv.DictReader(fh))
    msh = row["mean_selected_horizon"]
    return RunSummary(
        config,
        out,
        float(row["final_return"]),
        float(row["final_return_std"]),
        float(row["seed_return"]),
        float(msh) if msh else None,
        cached,
    )


def cached_run(config: TrainConfig, cache_root: str | Path) -> RunSummary:
    """Train ``config`` unless an identical run (same code, same config) is already cached."""
    out = Path(cache_root) / run_key(config)
    if (out / "summary.csv").exists() and load_config(out / "config.txt") == config:
        return _read_summary(out, config, cached=True)
    if out.exists():
        shutil.rmtree(out)
    tmp = out.with_name(out.name + ".partial")
    if tmp.exists():
        shutil.rmtree(tmp)
    art = run_training(config, tmp)
    _, final, final_std = art.eval_history[-1]
    with open(tmp / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["final_return", "final_return_std", "seed_return", "mean_selected_horizon"])
        msh = "" if art.mean_selected_horizon is None else repr(art.mean_selected_horizon)
        writer.writerow([repr(final), repr(final_std), repr(art.seed_return), msh])
    tmp.rename(out)
    return _read_summary(out, config, cached=False)
