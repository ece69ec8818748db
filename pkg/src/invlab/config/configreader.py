"""Reads experiment configuration from a YAML file."""

from __future__ import annotations

import copy
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import voluptuous as vol
import yaml

from .schemas import EXPERIMENT_SCHEMA

_LOGGER = logging.getLogger(__name__)


def parse_override(override: str) -> tuple[list[str], Any]:
    """Split ``a.b.c=value`` into a key path and a YAML-typed value."""
    key, sep, raw = override.partition("=")
    path = key.strip().split(".")
    if not sep or not all(path):
        msg = f"Override {override!r} must look like section.key=value"
        raise vol.Invalid(msg)
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        msg = f"Override {override!r} has an unparsable value"
        raise vol.Invalid(msg) from exc
    return path, value


def apply_overrides(config: dict[str, Any], overrides: Sequence[str]) -> dict[str, Any]:
    """Return a copy of ``config`` with dotted overrides applied.

    Missing intermediate sections are created; the schema later rejects paths
    it does not know.
    """
    result = copy.deepcopy(config)
    for override in overrides:
        path, value = parse_override(override)
        node = result
        for depth, key in enumerate(path[:-1]):
            child = node.setdefault(key, {})
            if not isinstance(child, dict):
                msg = f"Override {override!r}: {'.'.join(path[: depth + 1])} is not a section"
                raise vol.Invalid(msg)
            node = child
        node[path[-1]] = value
        _LOGGER.debug("Override %s = %r", ".".join(path), value)
    return result


@dataclass
class ConfigReader:
    """Reads and validates experiment configuration.

    :param config_file: YAML file or an already parsed dictionary.
    :param overrides: Dotted ``section.key=value`` overrides applied before validation.
    """

    _config: dict[str, Any] = field(init=False, repr=False)
    config_file: Path | dict = field(init=True, repr=True)
    overrides: Sequence[str] = field(default=(), repr=True)

    def __post_init__(self) -> None:
        """Initialize the class."""
        if isinstance(self.config_file, Path):
            if not self.config_file.exists():
                msg = f"Configuration file {self.config_file} not found."
                raise FileNotFoundError(msg)

            with self.config_file.open(encoding="utf-8") as config_file:
                try:
                    config = yaml.safe_load(config_file)
                except yaml.YAMLError as exc:
                    msg = (
                        f"Error parsing {self.config_file.name} with message: {exc}.\n"
                        "Please check the file for syntax errors."
                    )
                    _LOGGER.exception(msg)
                    raise yaml.YAMLError(msg) from exc
        elif isinstance(self.config_file, dict):
            # if config is a dict, we assume it is already parsed
            config = self.config_file
        else:
            msg = (
                f"Configuration file {self.config_file} is not a valid path "
                "or dictionary."
            )
            raise TypeError(msg)

        if config is None:
            config = {}
        if not isinstance(config, dict):
            msg = f"Configuration must be a mapping, got {type(config).__name__}"
            raise vol.Invalid(msg)

        self._config = EXPERIMENT_SCHEMA(apply_overrides(config, self.overrides))

    @property
    def config(self) -> dict[str, Any]:
        """The validated configuration with defaults filled in.

        :return: The configuration as a dictionary.
        """
        return self._config
