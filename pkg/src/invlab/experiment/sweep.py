"""Experiment sweeps over methods, bias ratios, seeds and further axes."""

from __future__ import annotations

import copy
import itertools
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from ..config.configreader import ConfigReader
from ..config.const import AXIS_ALIASES, THREADS_ENV
from ..config.experiment import ExperimentConfig
from ..config.schemas import SWEEP_SCHEMA
from ..pipelines.rundir import is_complete, load_run
from .manager import ExperimentManager

_LOGGER = logging.getLogger(__name__)

SUMMARY_FILE = "summary.csv"
STATUS_FILE = "cells.csv"
SUMMARY_COLUMNS = ["method", "rho", "metric", "mean", "std", "n_seeds"]


def _set_path(config: dict[str, Any], path: str, value: Any) -> None:
    *sections, key = path.split(".")
    node = config
    for section in sections:
        node = node.setdefault(section, {})
    node[key] = value


def _label(value: Any) -> str:
    return str(value).replace("/", "_")


@dataclass(frozen=True)
class SweepCell:
    """One point of the run matrix, as configuration key path to value."""

    values: tuple[tuple[str, Any], ...]

    @property
    def settings(self) -> dict[str, Any]:
        """Axis values keyed by configuration path."""
        return dict(self.values)

    @property
    def method(self) -> str:
        """Method of the cell."""
        return str(self.settings[AXIS_ALIASES["method"]])

    @property
    def rho(self) -> float:
        """Bias ratio of the cell."""
        return float(self.settings[AXIS_ALIASES["rho"]])

    @property
    def seed(self) -> int:
        """Method seed of the cell."""
        return int(self.settings[AXIS_ALIASES["seed"]])

    @property
    def extra(self) -> dict[str, Any]:
        """Values of axes beyond method, bias ratio and seed."""
        known = set(AXIS_ALIASES.values())
        return {path: value for path, value in self.values if path not in known}

    @property
    def relative_dir(self) -> Path:
        """Run directory relative to the sweep output."""
        parts = [self.method, f"rho={self.rho}"]
        parts += [f"{path}={_label(value)}" for path, value in self.extra.items()]
        return Path(*parts, f"seed={self.seed}")


@dataclass(frozen=True)
class SweepSpec:
    """Base configuration plus axes; the run matrix is their cartesian product.

    :param base: Validated base configuration.
    :param axes: Configuration key path to the values it takes.
    :param summary_metrics: Selected-epoch metrics aggregated in the summary.
    :param n_jobs: Requested parallel cells.
    """

    base: dict[str, Any]
    axes: dict[str, list[Any]]
    summary_metrics: tuple[str, ...]
    n_jobs: int = 1

    @classmethod
    def from_config(cls, config: ExperimentConfig) -> SweepSpec:
        """Build from an experiment configuration; a missing ``sweep:`` section sweeps seeds only."""
        base = config.to_dict()
        section = base.pop("sweep", None) or SWEEP_SCHEMA({})
        axes = {
            AXIS_ALIASES["method"]: section.get("methods", [base["method"]["name"]]),
            AXIS_ALIASES["rho"]: section.get("bias_ratios", [base["data"]["bias_ratio"]]),
        }
        for axis, values in section["axes"].items():
            path = AXIS_ALIASES.get(axis, axis)
            if path in axes or path == AXIS_ALIASES["seed"]:
                msg = f"Sweep axis {axis} duplicates a built-in axis"
                raise ValueError(msg)
            axes[path] = list(values)
        axes[AXIS_ALIASES["seed"]] = section["seeds"]
        return cls(
            base=base,
            axes=axes,
            summary_metrics=tuple(section["summary_metrics"]),
            n_jobs=section["n_jobs"],
        )

    @property
    def cells(self) -> list[SweepCell]:
        """The run matrix in axis order."""
        paths = list(self.axes)
        return [
            SweepCell(tuple(zip(paths, combo, strict=True)))
            for combo in itertools.product(*self.axes.values())
        ]

    def cell_config(self, cell: SweepCell) -> ExperimentConfig:
        """Validated configuration of one cell."""
        config = copy.deepcopy(self.base)
        for path, value in cell.values:
            _set_path(config, path, value)
        return ExperimentConfig.from_mapping(ConfigReader(config).config)


def max_workers(requested: int) -> int:
    """Cap ``requested`` by the ``INVLAB_THREADS`` environment variable."""
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return requested
    try:
        cap = int(raw)
    except ValueError as exc:
        msg = f"{THREADS_ENV} must be a positive integer, got {raw!r}"
        raise ValueError(msg) from exc
    if cap < 1:
        msg = f"{THREADS_ENV} must be a positive integer, got {cap}"
        raise ValueError(msg)
    return min(requested, cap)


def run_cell(spec: SweepSpec, cell: SweepCell, out_dir: Path, *, force: bool = False) -> dict[str, Any]:
    """Train one cell unless its run directory is complete.

    Failures are logged and reported, never raised.
    """
    run_dir = out_dir / cell.relative_dir
    status: dict[str, Any] = {
        "run_dir": cell.relative_dir.as_posix(),
        "method": cell.method,
        "rho": cell.rho,
        "seed": cell.seed,
        "error": "",
    }
    if is_complete(run_dir) and not force:
        _LOGGER.info("Skipping completed cell %s", cell.relative_dir)
        return {**status, "status": "skipped"}
    try:
        config = spec.cell_config(cell)
        ExperimentManager(config).train(run_dir, force=True)
    except Exception as exc:  # noqa: BLE001
        _LOGGER.exception("Sweep cell %s failed", cell.relative_dir)
        return {**status, "status": "failed", "error": f"{type(exc).__name__}: {exc}"}
    return {**status, "status": "ok"}


def summarize(spec: SweepSpec, out_dir: Path) -> pd.DataFrame:
    """Mean and population standard deviation of selected metrics over seeds.

    Only completed cells contribute; ``n_seeds`` counts them per group.
    """
    rows = []
    for cell in spec.cells:
        run_dir = out_dir / cell.relative_dir
        if not is_complete(run_dir):
            continue
        selected = load_run(run_dir).selected
        for metric in spec.summary_metrics:
            if metric not in selected:
                msg = f"Run {run_dir} has no selected metric {metric}. Available: {sorted(selected)}"
                raise KeyError(msg)
            value = selected[metric]
            rows.append(
                {
                    "method": cell.method,
                    "rho": cell.rho,
                    **{path: _label(v) for path, v in cell.extra.items()},
                    "metric": metric,
                    "value": float("nan") if value is None else float(value),
                }
            )
    extra = [path for path in spec.axes if path not in AXIS_ALIASES.values()]
    keys = ["method", "rho", *extra, "metric"]
    columns = [*SUMMARY_COLUMNS[:2], *extra, *SUMMARY_COLUMNS[2:]]
    if not rows:
        return pd.DataFrame(columns=columns)
    frame = pd.DataFrame(rows)
    summary = (
        frame.groupby(keys, sort=False)["value"]
        .agg(mean="mean", std=lambda values: values.std(ddof=0), n_seeds="count")
        .reset_index()
    )
    return summary[columns]


def run_sweep(spec: SweepSpec, out_dir: Path, *, force: bool = False) -> pd.DataFrame:
    """Run every cell, then write ``cells.csv`` and ``summary.csv``.

    :param spec: Sweep to run.
    :param out_dir: Root of the run directories.
    :param force: Retrain cells that are already complete.
    :return: The summary table.
    """
    cells = spec.cells
    n_jobs = max_workers(spec.n_jobs)
    _LOGGER.info("Running %d sweep cells with %d parallel jobs", len(cells), n_jobs)
    out_dir.mkdir(parents=True, exist_ok=True)

    jobs = Parallel(n_jobs=n_jobs, batch_size=1, return_as="generator")(
        delayed(run_cell)(spec, cell, out_dir, force=force) for cell in cells
    )
    statuses = list(
        tqdm(jobs, total=len(cells), desc="sweep", disable=not sys.stderr.isatty())
    )
    status = pd.DataFrame(statuses)
    status.to_csv(out_dir / STATUS_FILE, index=False, lineterminator="\n")
    failed = status[status["status"] == "failed"]
    if not failed.empty:
        _LOGGER.warning("%d of %d sweep cells failed, see %s", len(failed), len(cells), STATUS_FILE)

    summary = summarize(spec, out_dir)
    summary.to_csv(out_dir / SUMMARY_FILE, index=False, lineterminator="\n")
    _LOGGER.info("Wrote %d summary rows to %s", len(summary), out_dir / SUMMARY_FILE)
    return summary
