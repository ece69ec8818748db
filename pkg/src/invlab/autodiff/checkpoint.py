"""Lossless JSON checkpoints of named float64 parameters.

Layout::

    {
      "format": "invlab-checkpoint",
      "version": 1,
      "parameters": [
        {"name": "phi_t.0.weight", "shape": [16, 64], "values": [...]},
        ...
      ]
    }

``values`` are row-major. Floats are written with Python's shortest
round-trip representation, so loading reproduces every value bit for bit.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Mapping
from pathlib import Path

import numpy as np
import voluptuous as vol

from .nn import Mlp, Module, mlp_from_state

_LOGGER = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "invlab-checkpoint"
CHECKPOINT_VERSION = 1

CHECKPOINT_SCHEMA = vol.Schema(
    {
        vol.Required("format"): CHECKPOINT_FORMAT,
        vol.Required("version"): CHECKPOINT_VERSION,
        vol.Required("parameters"): [
            {
                vol.Required("name"): vol.All(str, vol.Length(min=1)),
                vol.Required("shape"): [vol.All(int, vol.Range(min=0))],
                vol.Required("values"): [vol.Coerce(float)],
            }
        ],
    },
    extra=vol.PREVENT_EXTRA,
)


def save_checkpoint(
    source: Module | Mapping[str, np.ndarray], path: Path
) -> Path:
    """Write parameters to ``path``.

    :param source: A module or an ordered mapping of name to array.
    :param path: Destination file; parent directories are created.
    :return: The written path.
    """
    state = source.state_dict() if isinstance(source, Module) else source
    document = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "parameters": [
            {
                "name": name,
                "shape": list(np.shape(values)),
                "values": np.asarray(values, dtype=np.float64).reshape(-1).tolist(),
            }
            for name, values in state.items()
        ],
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document), encoding="utf-8")
    _LOGGER.debug("Wrote checkpoint with %d tensors to %s", len(state), path)
    return path


def load_state(path: Path) -> dict[str, np.ndarray]:
    """Read a checkpoint into an ordered name-to-array mapping."""
    if not path.is_file():
        msg = f"Checkpoint {path} not found."
        raise FileNotFoundError(msg)
    try:
        document = CHECKPOINT_SCHEMA(json.loads(path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, vol.Invalid) as exc:
        msg = f"Checkpoint {path} is not a valid invlab checkpoint: {exc}"
        raise ValueError(msg) from exc

    state: dict[str, np.ndarray] = {}
    for entry in document["parameters"]:
        values = np.asarray(entry["values"], dtype=np.float64)
        shape = tuple(entry["shape"])
        if values.size != int(np.prod(shape)):
            msg = (
                f"Parameter {entry['name']} declares shape {shape} "
                f"but stores {values.size} values"
            )
            raise ValueError(msg)
        state[entry["name"]] = values.reshape(shape)
    return state


def load_checkpoint(module: Module, path: Path) -> Module:
    """Load a checkpoint into an existing module in place."""
    module.load_state_dict(load_state(path))
    return module


def load_mlp(path: Path) -> Mlp:
    """Rebuild an MLP, architecture included, from its checkpoint."""
    return mlp_from_state(load_state(path))
