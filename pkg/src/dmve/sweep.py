"""Horizon / selected-horizon-count sweeps over seeds."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

from .config import ConfigError, TrainConfig, load_config, parse_config_text
from .training import run_training

log = logging.getLogger(__name__)

AXES = {"H": "horizon", "K": "num_horizons"}
SUMMARY_COLUMNS = ["axis", "value", "seed", "final_return", "final_return_std", "mean_selected_horizon", "status", "error"]


class SweepSpecError(ConfigError):
    pass


def _int_list(key: str, raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in raw.replace(",", " ").split())
    except ValueError:
        raise SweepSpecError(f"{key}: expected a list of integers, got {raw!r}", key) from None


@dataclass(frozen=True)
class SweepSpec:
    base: TrainConfig
    axis: str
    values: tuple[int, ...]
    seeds: tuple[int, ...]
    overrides: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.axis not in AXES:
            raise SweepSpecError(f"axis: must be one of {sorted(AXES)}, got {self.axis!r}", "axis")
        if not self.values:
            raise SweepSpecError("values: empty", "values")
        if not self.seeds:
            raise SweepSpecError("seeds: empty", "seeds")
        if len(set(self.seeds)) != len(self.seeds):
            raise SweepSpecError(f"seeds: must be distinct, got {self.seeds}", "seeds")
        for value in self.values:
            self.cell_config(value, self.seeds[0])  # validates K <= H for every cell

    def cell_config(self, value: int, seed: int) -> TrainConfig:
        try:
            return self.base.replace(**{AXES[self.axis]: value, "seed": seed})
        except ConfigError as exc:
            raise SweepSpecError(f"values: {self.axis}={value} is invalid ({exc})", "values") from None

    def cell_name(self, value: int, seed: int) -> str:
        return f"{self.axis}{value}_seed{seed}"


def parse_sweep_spec(text: str, root: Path = Path(".")) -> SweepSpec:
    """``key = value`` lines: base_config, axis, values, seeds; any other key overrides the base config."""
    entries: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SweepSpecError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        entries[key] = raw
    for key in ("axis", "values", "seeds"):
        if key not in entries:
            raise SweepSpecError(f"{key}: missing", key)
    base = TrainConfig()
    if "base_config" in entries:
        path = Path(entries.pop("base_config"))
        base = load_config(path if path.is_absolute() else root / path)
    axis, values, seeds = entries.pop("axis"), _int_list("values", entries.pop("values")), _int_list("seeds", entries.pop("seeds"))
    known = {f.name for f in fields(TrainConfig)}
    for key in entries:
        if key not in known:
            raise SweepSpecError(f"{key}: unknown sweep or configuration key", key)
    base = parse_config_text("\n".join(f"{k} = {v}" for k, v in entries.items()), base)
    return SweepSpec(base, axis, values, seeds, entries)


def load_sweep_spec(path: str | Path) -> SweepSpec:
    path = Path(path)
    if not path.is_file():
        raise SweepSpecError(f"sweep spec not found: {path}")
    return parse_sweep_spec(path.read_text(), path.parent)


@dataclass
class CellResult:
    axis: str
    value: int
    seed: int
    final_return: float = float("nan")
    final_return_std: float = float("nan")
    mean_selected_horizon: float | None = None
    status: str = "ok"
    error: str = ""

    def row(self) -> list[str]:
        msh = "" if self.mean_selected_horizon is None else repr(self.mean_selected_horizon)
        return [self.axis, str(self.value), str(self.seed), repr(self.final_return), repr(self.final_return_std),
                msh, self.status, self.error]


def run_cell(spec: SweepSpec, value: int, seed: int, out_dir: Path) -> CellResult:
    result = CellResult(spec.axis, value, seed)
    try:
        art = run_training(spec.cell_config(value, seed), out_dir / spec.cell_name(value, seed))
    except Exception as exc:  # one failing cell must not stop the sweep
        log.exception("cell %s failed", spec.cell_name(value, seed))
        result.status = "failed"
        result.error = f"{type(exc).__name__}: {exc}".replace("\n", " ")
        return result
    _, result.final_return, result.final_return_std = art.eval_history[-1]
    result.mean_selected_horizon = art.mean_selected_horizon
    return result


def run_sweep(spec: SweepSpec, out_dir: str | Path, parallel: int = 1) -> list[CellResult]:
    """Run every (value, seed) cell and write ``summary.csv``; rows follow the order of values then seeds."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = [(v, s) for v in spec.values for s in spec.seeds]
    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(lambda c: run_cell(spec, c[0], c[1], out), cells))
    else:
        results = [run_cell(spec, v, s, out) for v, s in cells]
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        writer.writerows(r.row() for r in results)
    return results
