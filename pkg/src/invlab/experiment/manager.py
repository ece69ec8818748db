"""Experiment manager."""

from __future__ import annotations

import json
import logging
from collections.abc import Sequence
from pathlib import Path

from ..autodiff.checkpoint import load_mlp
from ..autodiff.nn import Mlp
from ..config.experiment import ExperimentConfig
from ..data.dataset import DatasetSplits
from ..data.io import MANIFEST_FILE as DATASET_MANIFEST
from ..data.io import read_splits, write_splits
from ..evaluation.probe import (
    ProbeKind,
    ProbeReport,
    ProbeTarget,
    bias_head_probe,
    embedding_margins,
    export_embeddings,
)
from ..pipelines.bundle import RunRecord
from ..pipelines.rundir import MANIFEST_FILE, load_run, write_run
from ..pipelines.trainers import run_method

_LOGGER = logging.getLogger(__name__)

# components probed by default, in order of preference
PROBE_COMPONENTS = ("phi_t", "phi_c")
EMBEDDINGS_FILE = "embeddings.csv"
MARGINS_FILE = "embedding_margins.json"


class ExperimentManager:
    """Interface between a configuration and the data, training and probe components.

    This class is responsible for:
     - Generating the dataset or loading it from ``data.path``
     - Training the configured method and writing its run directory
     - Probing frozen feature extractors of finished runs
    """

    def __init__(self, config: ExperimentConfig) -> None:
        """Class constructor."""
        self._config = config
        self._splits: DatasetSplits | None = None
        _LOGGER.debug("Experiment initialized with config: \n%s", config)

    @property
    def config(self) -> ExperimentConfig:
        """The experiment configuration."""
        return self._config

    @property
    def splits(self) -> DatasetSplits:
        """Dataset of the experiment, loaded or generated on first access."""
        if self._splits is None:
            self._splits = self._load_data()
        return self._splits

    def _load_data(self) -> DatasetSplits:
        path = self._config.data_path
        if path is None or not (path / DATASET_MANIFEST).is_file():
            if path is not None:
                _LOGGER.warning("No dataset at %s, generating it in memory", path)
            return self._config.generate()

        splits = read_splits(path)
        if splits.train.bias_ratio != self._config.bias_ratio:
            msg = (
                f"Dataset at {path} has bias ratio {splits.train.bias_ratio}, "
                f"configuration asks for {self._config.bias_ratio}"
            )
            raise ValueError(msg)
        _LOGGER.info("Loaded dataset from %s", path)
        return splits

    def gen_data(self, out_dir: Path, *, force: bool = False) -> list[Path]:
        """Generate the configured dataset and write it to ``out_dir``."""
        splits = self._config.generate()
        written = write_splits(splits, out_dir, force=force)
        self._splits = splits
        return written

    def train(self, run_dir: Path, *, force: bool = False) -> RunRecord:
        """Train the configured method and write its run directory.

        :param run_dir: Run directory to create.
        :param force: Overwrite an existing run.
        :return: The run record.
        """
        if (run_dir / MANIFEST_FILE).is_file() and not force:
            msg = f"Run directory {run_dir} already holds a finished run; use --force to overwrite."
            raise FileExistsError(msg)
        record = run_method(
            self.splits,
            self._config.method,
            strict_balance=self._config.eval["strict_balance"],
        )
        write_run(record, run_dir, config=self._config.to_dict(), force=force)
        return record

    def probe(
        self,
        checkpoint: Path,
        out_dir: Path,
        *,
        targets: Sequence[ProbeTarget | str] = tuple(ProbeTarget),
        kind: ProbeKind | str | None = None,
        embeddings: bool = False,
    ) -> list[ProbeReport]:
        """Probe a frozen feature extractor and write the reports.

        :param checkpoint: Extractor checkpoint file, or a run directory whose
            context extractor (or, failing that, main extractor) is probed.
        :param out_dir: Directory receiving JSON reports and curve CSVs.
        :param targets: Labels to probe for.
        :param kind: Verdict rule applied to every target; defaults per target.
        :param embeddings: Also export test-split embeddings and their cluster margins.
        :return: One report per target.
        """
        phi = self._load_extractor(checkpoint)
        phi.freeze()
        settings = self._config.probe_settings
        reports = []
        for target in targets:
            report = bias_head_probe(
                phi,
                self.splits.train,
                self.splits.test,
                target,
                kind=kind,
                settings=settings,
            )
            report.write(out_dir)
            reports.append(report)
        if embeddings:
            path = export_embeddings(phi, self.splits.test, out_dir / EMBEDDINGS_FILE)
            margins = embedding_margins(path)
            (out_dir / MARGINS_FILE).write_text(
                json.dumps(margins, sort_keys=True, indent=2) + "\n", encoding="utf-8"
            )
            _LOGGER.info(
                "Embedding cluster margin: context %.4f, class %.4f",
                margins["context_margin"],
                margins["class_margin"],
            )
        return reports

    @staticmethod
    def _load_extractor(checkpoint: Path) -> Mlp:
        if checkpoint.is_dir():
            run = load_run(checkpoint)
            for name in PROBE_COMPONENTS:
                if name in run.manifest["checkpoints"]:
                    _LOGGER.info("Probing %s of run %s", name, checkpoint)
                    return load_mlp(run.checkpoint(name))
            msg = f"Run {checkpoint} has no feature extractor checkpoint"
            raise KeyError(msg)
        return load_mlp(checkpoint)
