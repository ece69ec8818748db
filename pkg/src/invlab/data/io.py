"""Dataset files: one JSON header line followed by CSV rows.

Example::

    {"bias_ratio": 0.99, "format": "invlab-dataset", "seed": 0, "spec": {...}, "split": "train", "version": 1}
    id,y,c,x0,x1,...
    0,3,3,0.8123...,...

Floats are written in shortest round-trip form and read back with
``float_precision="round_trip"``, so a write/read cycle is bit-exact.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd
import voluptuous as vol

from .const import DATASET_FORMAT, DATASET_HEADER_SCHEMA, DATASET_VERSION, SPLIT_FILES
from .dataset import Batch, DatasetSplits, Split, SyntheticDataset
from .factors import FactorSpec

_LOGGER = logging.getLogger(__name__)

MANIFEST_FILE = "dataset.json"
ID_COLUMNS = ["id", "y", "c"]


def _header(dataset: SyntheticDataset) -> dict:
    return {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "spec": dataset.spec.to_dict(),
        "bias_ratio": float(dataset.bias_ratio),
        "seed": int(dataset.seed),
        "split": str(dataset.split),
    }


def dataset_frame(batch: Batch) -> pd.DataFrame:
    """Rows ``id, y, c, x0 .. x{d-1}`` of a batch."""
    frame = pd.DataFrame(batch.x, columns=[f"x{i}" for i in range(batch.x.shape[1])])
    frame.insert(0, "c", batch.c)
    frame.insert(0, "y", batch.y)
    frame.insert(0, "id", batch.ids)
    return frame


def write_dataset(dataset: SyntheticDataset, path: Path) -> Path:
    """Write one split to ``path``.

    :param dataset: The split to export.
    :param path: Destination file; parent directories are created.
    :return: The written path.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        handle.write(json.dumps(_header(dataset), sort_keys=True) + "\n")
        dataset_frame(dataset.data).to_csv(handle, index=False, lineterminator="\n")
    _LOGGER.debug("Wrote %d %s samples to %s", len(dataset), dataset.split, path)
    return path


def read_dataset(path: Path) -> SyntheticDataset:
    """Read a split written by :func:`write_dataset`."""
    if not path.is_file():
        msg = f"Dataset file {path} not found."
        raise FileNotFoundError(msg)
    with path.open(encoding="utf-8") as handle:
        try:
            header = DATASET_HEADER_SCHEMA(json.loads(handle.readline()))
        except (json.JSONDecodeError, vol.Invalid) as exc:
            msg = f"Dataset file {path} has an invalid header: {exc}"
            raise ValueError(msg) from exc
        frame = pd.read_csv(
            handle,
            float_precision="round_trip",
            dtype={column: np.int64 for column in ID_COLUMNS},
        )

    x_columns = [column for column in frame.columns if column not in ID_COLUMNS]
    batch = Batch(
        ids=frame["id"].to_numpy(),
        x=frame[x_columns].to_numpy(dtype=np.float64).reshape(len(frame), len(x_columns)),
        y=frame["y"].to_numpy(),
        c=frame["c"].to_numpy(),
    )
    spec = FactorSpec.from_dict(header["spec"])
    if batch.x.shape[1] != spec.observation_dim:
        msg = (
            f"Dataset file {path} stores {batch.x.shape[1]} observation columns, "
            f"its spec renders {spec.observation_dim}"
        )
        raise ValueError(msg)
    return SyntheticDataset(
        spec=spec,
        split=Split(header["split"]),
        bias_ratio=header["bias_ratio"],
        seed=header["seed"],
        data=batch,
    )


def write_splits(
    splits: DatasetSplits, out_dir: Path, *, force: bool = False
) -> list[Path]:
    """Write all three splits plus a ``dataset.json`` manifest.

    :param splits: Generated splits.
    :param out_dir: Target directory.
    :param force: Allow writing into a non-empty directory.
    :return: Paths of the written files.
    """
    if out_dir.exists() and any(out_dir.iterdir()) and not force:
        msg = f"Output directory {out_dir} is not empty; use --force to overwrite."
        raise FileExistsError(msg)
    out_dir.mkdir(parents=True, exist_ok=True)

    written = [
        write_dataset(dataset, out_dir / SPLIT_FILES[dataset.split])
        for dataset in splits
    ]
    manifest = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "bias_ratio": float(splits.train.bias_ratio),
        "seed": int(splits.train.seed),
        "sizes": {str(ds.split): len(ds) for ds in splits},
        "files": {str(ds.split): SPLIT_FILES[ds.split] for ds in splits},
        "spec": splits.train.spec.to_dict(),
    }
    manifest_path = out_dir / MANIFEST_FILE
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    written.append(manifest_path)
    _LOGGER.info("Wrote dataset (bias ratio %s) to %s", manifest["bias_ratio"], out_dir)
    return written


def read_splits(data_dir: Path) -> DatasetSplits:
    """Read the three splits written by :func:`write_splits`."""
    if not data_dir.is_dir():
        msg = f"Dataset directory {data_dir} not found."
        raise FileNotFoundError(msg)
    return DatasetSplits(
        **{split: read_dataset(data_dir / name) for split, name in SPLIT_FILES.items()}
    )
