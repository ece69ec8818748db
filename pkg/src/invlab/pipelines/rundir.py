"""Self-describing run directories.

A run directory holds::

    manifest.json         configuration, seed, code version, selected metrics
    metrics.csv           epoch,split,metric,value
    weights.csv           sample_id,ce_main,ce_bias,weight,provenance (reweighting methods)
    checkpoints/<name>.json

``manifest.json`` is written last, so its presence marks a completed run.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path
from typing import Any

import pandas as pd
import voluptuous as vol

from ..autodiff.checkpoint import save_checkpoint
from ..losses.weights import WeightTable
from .bundle import METRIC_COLUMNS, Method, RunRecord

_LOGGER = logging.getLogger(__name__)

RUN_FORMAT = "invlab-run"
RUN_VERSION = 1
MANIFEST_FILE = "manifest.json"
METRICS_FILE = "metrics.csv"
WEIGHTS_FILE = "weights.csv"
CHECKPOINT_DIR = "checkpoints"

_PACKAGE_ROOT = Path(__file__).resolve().parents[1]

MANIFEST_SCHEMA = vol.Schema(
    {
        vol.Required("format"): RUN_FORMAT,
        vol.Required("version"): RUN_VERSION,
        vol.Required("method"): vol.In([str(m) for m in Method]),
        vol.Required("seed"): int,
        vol.Required("code_version"): str,
        vol.Required("config"): dict,
        vol.Required("selected"): {str: vol.Any(int, float, None)},
        vol.Required("trained"): [str],
        vol.Required("checkpoints"): {str: str},
        vol.Required("weights"): vol.Any(None, str),
        vol.Required("wall_clock_seconds"): vol.Coerce(float),
        vol.Required("extras"): dict,
    },
    extra=vol.PREVENT_EXTRA,
)


def _blob_sha1(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data, usedforsecurity=False).hexdigest()


def source_digest(root: Path = _PACKAGE_ROOT) -> str:
    """Digest over the relative paths and blob hashes of the package sources."""
    digest = hashlib.sha1(usedforsecurity=False)
    for path in sorted(root.rglob("*.py")):
        digest.update(path.relative_to(root).as_posix().encode())
        digest.update(_blob_sha1(path.read_bytes()).encode())
    return digest.hexdigest()


def code_version() -> str:
    """Installed package version plus a digest of the source tree."""
    try:
        version = metadata.version("invlab")
    except metadata.PackageNotFoundError:
        version = "0+unknown"
    return f"{version}+{source_digest()[:12]}"


def _plain(value: Any) -> Any:
    if isinstance(value, float) and math.isnan(value):
        return None
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if hasattr(value, "item"):
        return _plain(value.item())
    return value


def is_complete(run_dir: Path) -> bool:
    """Whether ``run_dir`` holds a finished run."""
    return (run_dir / MANIFEST_FILE).is_file()


def write_run(
    record: RunRecord,
    run_dir: Path,
    *,
    config: dict[str, Any],
    force: bool = False,
) -> Path:
    """Persist a run record.

    :param record: Finished training run.
    :param run_dir: Target directory.
    :param config: Full experiment configuration that produced the run.
    :param force: Overwrite an existing non-empty directory.
    :return: Path of the written manifest.
    """
    if run_dir.exists() and any(run_dir.iterdir()) and not force:
        msg = f"Run directory {run_dir} is not empty; use --force to overwrite."
        raise FileExistsError(msg)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / MANIFEST_FILE).unlink(missing_ok=True)

    record.metrics.to_csv(run_dir / METRICS_FILE, index=False, lineterminator="\n")

    weights_file = None
    if record.weights is not None:
        record.weights.to_csv(run_dir / WEIGHTS_FILE)
        weights_file = WEIGHTS_FILE

    checkpoints = {}
    for name in record.trained:
        path = save_checkpoint(
            record.bundle.component(name), run_dir / CHECKPOINT_DIR / f"{name}.json"
        )
        record.checkpoints[name] = path
        checkpoints[name] = path.relative_to(run_dir).as_posix()

    manifest = MANIFEST_SCHEMA(
        {
            "format": RUN_FORMAT,
            "version": RUN_VERSION,
            "method": str(record.config.method),
            "seed": record.config.seed,
            "code_version": code_version(),
            "config": config,
            "selected": _plain(record.selected),
            "trained": list(record.trained),
            "checkpoints": checkpoints,
            "weights": weights_file,
            "wall_clock_seconds": record.wall_clock,
            "extras": _plain(record.extras),
        }
    )
    manifest_path = run_dir / MANIFEST_FILE
    manifest_path.write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    _LOGGER.info(
        "Wrote %s run to %s (selected epoch %s)",
        record.config.method,
        run_dir,
        record.selected.get("epoch"),
    )
    return manifest_path


@dataclass(frozen=True)
class LoadedRun:
    """A run read back from disk."""

    run_dir: Path
    manifest: dict[str, Any]
    metrics: pd.DataFrame
    weights: WeightTable | None

    @property
    def method(self) -> Method:
        """Training method of the run."""
        return Method(self.manifest["method"])

    @property
    def selected(self) -> dict[str, Any]:
        """Metrics of the selected epoch."""
        return self.manifest["selected"]

    def checkpoint(self, name: str) -> Path:
        """Path of a component checkpoint.

        :raises KeyError: If the run did not train ``name``.
        """
        try:
            return self.run_dir / self.manifest["checkpoints"][name]
        except KeyError as exc:
            msg = (
                f"Run {self.run_dir} has no checkpoint for {name}. "
                f"Available: {sorted(self.manifest['checkpoints'])}"
            )
            raise KeyError(msg) from exc


def load_run(run_dir: Path) -> LoadedRun:
    """Read manifest, metrics and weights of a completed run."""
    manifest_path = run_dir / MANIFEST_FILE
    if not manifest_path.is_file():
        msg = f"Run manifest {manifest_path} not found."
        raise FileNotFoundError(msg)
    try:
        manifest = MANIFEST_SCHEMA(json.loads(manifest_path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, vol.Invalid) as exc:
        msg = f"Run manifest {manifest_path} is invalid: {exc}"
        raise ValueError(msg) from exc

    metrics = pd.read_csv(run_dir / METRICS_FILE, float_precision="round_trip")
    if list(metrics.columns) != METRIC_COLUMNS:
        msg = f"{run_dir / METRICS_FILE} has columns {list(metrics.columns)}"
        raise ValueError(msg)
    weights = (
        None
        if manifest["weights"] is None
        else WeightTable.from_csv(run_dir / manifest["weights"])
    )
    return LoadedRun(run_dir=run_dir, manifest=manifest, metrics=metrics, weights=weights)
