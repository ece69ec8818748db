"""Typed view of a validated experiment configuration."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from ..data.dataset import DatasetSplits, SplitSizes, generate
from ..data.factors import FactorSpec
from ..data.renderers import build_factor_spec
from ..evaluation.probe import ProbeSettings
from ..pipelines.bundle import TrainConfig
from .configreader import ConfigReader

_LOGGER = logging.getLogger(__name__)

# keys of the data section that are not generator options
_DATA_KEYS = ("generator", "num_classes", "num_contexts", "noise_std", "bias_ratio", "sizes", "seed", "path")


@dataclass(frozen=True)
class ExperimentConfig:
    """Data, method, evaluation and output settings of one experiment.

    :param data: Validated ``data:`` section.
    :param method: Training hyperparameters.
    :param eval: Validated ``eval:`` section.
    :param output: Root directory of run artifacts.
    :param sweep: Validated ``sweep:`` section, if present.
    """

    data: dict[str, Any]
    method: TrainConfig
    eval: dict[str, Any]
    output: Path
    sweep: dict[str, Any] | None = None

    @classmethod
    def from_mapping(cls, config: dict[str, Any]) -> ExperimentConfig:
        """Build from a configuration validated by :class:`ConfigReader`."""
        return cls(
            data=copy.deepcopy(config["data"]),
            method=TrainConfig.from_mapping(config["method"]),
            eval=dict(config["eval"]),
            output=Path(config["output"]),
            sweep=copy.deepcopy(config.get("sweep")),
        )

    @classmethod
    def load(cls, source: Path | dict, overrides: tuple[str, ...] = ()) -> ExperimentConfig:
        """Read, override and validate a configuration."""
        return cls.from_mapping(ConfigReader(source, overrides).config)

    def to_dict(self) -> dict[str, Any]:
        """Plain configuration that :meth:`from_mapping` accepts again."""
        config: dict[str, Any] = {
            "data": copy.deepcopy(self.data),
            "method": self.method.to_dict(),
            "eval": dict(self.eval),
            "output": str(self.output),
        }
        if self.sweep is not None:
            config["sweep"] = copy.deepcopy(self.sweep)
        return config

    @property
    def bias_ratio(self) -> float:
        """Aligned fraction of the train split."""
        return self.data["bias_ratio"]

    @property
    def sizes(self) -> SplitSizes:
        """Sample count per split."""
        return SplitSizes.from_mapping(self.data["sizes"])

    @property
    def data_path(self) -> Path | None:
        """Directory of a pre-generated dataset, if configured."""
        return None if self.data["path"] is None else Path(self.data["path"])

    @property
    def probe_settings(self) -> ProbeSettings:
        """Probe head settings, seeded by the method seed."""
        return ProbeSettings.from_eval_section(self.eval, seed=self.method.seed)

    def build_spec(self) -> FactorSpec:
        """Draw the factor prototypes from the data seed."""
        options = {key: value for key, value in self.data.items() if key not in _DATA_KEYS}
        return build_factor_spec(
            self.data["generator"],
            num_classes=self.data["num_classes"],
            num_contexts=self.data["num_contexts"],
            noise_std=self.data["noise_std"],
            seed=self.data["seed"],
            **options,
        )

    def generate(self) -> DatasetSplits:
        """Generate the three splits described by the data section."""
        _LOGGER.info(
            "Generating %s data (bias ratio %s, seed %d)",
            self.data["generator"],
            self.bias_ratio,
            self.data["seed"],
        )
        return generate(self.build_spec(), self.bias_ratio, self.sizes, self.data["seed"])
