"""Linear probes on frozen feature extractors and embedding export."""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import voluptuous as vol

from ..autodiff.nn import Linear, Module
from ..autodiff.optim import Adam
from ..autodiff.tensor import Tape, Tensor, as_tensor
from ..data.dataset import SyntheticDataset
from ..losses.objectives import cross_entropy
from .metrics import EVAL_CHUNK

_LOGGER = logging.getLogger(__name__)

DEFAULT_PROBE_EPOCHS = 50
DEFAULT_PROBE_LR = 0.001
DEFAULT_PROBE_BATCH_SIZE = 128
DEFAULT_CONTEXT_THRESHOLD = 0.9
DEFAULT_CLASS_LEAK_MARGIN = 0.1
# leakage verdict tolerance in binomial standard errors around chance
LEAKAGE_STANDARD_ERRORS = 3.0

CURVE_COLUMNS = ["epoch", "split", "accuracy"]


class ProbeTarget(StrEnum):
    """Label the probe head predicts."""

    CLASS = "class"
    CONTEXT = "context"


class ProbeKind(StrEnum):
    """How the final test accuracy is judged."""

    BIAS_HEAD = "bias_head"
    CONTEXT_RECOVERY = "context_recovery"
    CLASS_LEAKAGE = "class_leakage"


DEFAULT_KIND = {ProbeTarget.CLASS: ProbeKind.BIAS_HEAD, ProbeTarget.CONTEXT: ProbeKind.CONTEXT_RECOVERY}

PROBE_REPORT_SCHEMA = vol.Schema(
    {
        vol.Required("kind"): vol.In([str(k) for k in ProbeKind]),
        vol.Required("target"): vol.In([str(t) for t in ProbeTarget]),
        vol.Required("chance"): vol.All(vol.Coerce(float), vol.Range(min=0.0, max=1.0)),
        vol.Required("threshold"): vol.Coerce(float),
        vol.Required("train_accuracy"): [vol.Coerce(float)],
        vol.Required("test_accuracy"): [vol.Coerce(float)],
        vol.Required("final_test_accuracy"): vol.Coerce(float),
        vol.Required("num_test"): vol.All(int, vol.Range(min=1)),
        vol.Required("verdict"): vol.In(["pass", "fail"]),
        vol.Required("settings"): dict,
        vol.Required("extractor_hash"): vol.Any(None, str),
    },
    extra=vol.PREVENT_EXTRA,
)


@dataclass(frozen=True)
class ProbeSettings:
    """Probe head training and verdict thresholds; see the ``eval:`` config section."""

    epochs: int = DEFAULT_PROBE_EPOCHS
    lr: float = DEFAULT_PROBE_LR
    batch_size: int = DEFAULT_PROBE_BATCH_SIZE
    seed: int = 0
    context_threshold: float = DEFAULT_CONTEXT_THRESHOLD
    class_leak_margin: float = DEFAULT_CLASS_LEAK_MARGIN

    @classmethod
    def from_eval_section(cls, section: dict[str, Any], seed: int = 0) -> ProbeSettings:
        """Build from a validated ``eval:`` section."""
        return cls(
            epochs=section["probe_epochs"],
            lr=section["probe_lr"],
            batch_size=section["probe_batch_size"],
            seed=seed,
            context_threshold=section["context_threshold"],
            class_leak_margin=section["class_leak_margin"],
        )


@dataclass
class ProbeReport:
    """Accuracy curves and verdict of one probe.

    ``threshold`` is the bound the final test accuracy was compared with:
    a lower bound for context recovery, an upper bound for the bias head
    and the half-width around chance for class leakage.
    """

    kind: ProbeKind
    target: ProbeTarget
    chance: float
    threshold: float
    train_accuracy: list[float]
    test_accuracy: list[float]
    num_test: int
    settings: ProbeSettings
    extractor_hash: str | None = None
    passed: bool = field(init=False)

    def __post_init__(self) -> None:
        self.passed = judge(self.kind, self.final_test_accuracy, self.chance, self.threshold)

    @property
    def final_test_accuracy(self) -> float:
        """Test accuracy after the last epoch."""
        return self.test_accuracy[-1]

    @property
    def verdict(self) -> str:
        """``pass`` or ``fail``."""
        return "pass" if self.passed else "fail"

    def to_dict(self) -> dict[str, Any]:
        """JSON document validated by :data:`PROBE_REPORT_SCHEMA`."""
        return PROBE_REPORT_SCHEMA(
            {
                "kind": str(self.kind),
                "target": str(self.target),
                "chance": self.chance,
                "threshold": self.threshold,
                "train_accuracy": list(self.train_accuracy),
                "test_accuracy": list(self.test_accuracy),
                "final_test_accuracy": self.final_test_accuracy,
                "num_test": self.num_test,
                "verdict": self.verdict,
                "settings": {
                    "epochs": self.settings.epochs,
                    "lr": self.settings.lr,
                    "batch_size": self.settings.batch_size,
                    "seed": self.settings.seed,
                    "context_threshold": self.settings.context_threshold,
                    "class_leak_margin": self.settings.class_leak_margin,
                },
                "extractor_hash": self.extractor_hash,
            }
        )

    @property
    def curves(self) -> pd.DataFrame:
        """``epoch, split, accuracy`` rows."""
        rows = [
            (epoch, split, value)
            for split, curve in (("train", self.train_accuracy), ("test", self.test_accuracy))
            for epoch, value in enumerate(curve, start=1)
        ]
        return pd.DataFrame(rows, columns=CURVE_COLUMNS)

    def write(self, out_dir: Path, stem: str | None = None) -> tuple[Path, Path]:
        """Write ``<stem>.json`` and ``<stem>_curves.csv`` into ``out_dir``."""
        stem = stem or f"probe_{self.target}"
        out_dir.mkdir(parents=True, exist_ok=True)
        json_path = out_dir / f"{stem}.json"
        csv_path = out_dir / f"{stem}_curves.csv"
        json_path.write_text(
            json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        self.curves.to_csv(csv_path, index=False, lineterminator="\n")
        _LOGGER.info("Wrote %s probe report to %s", self.kind, json_path)
        return json_path, csv_path

    @classmethod
    def read(cls, path: Path) -> ProbeReport:
        """Read a report JSON written by :meth:`write`."""
        if not path.is_file():
            msg = f"Probe report {path} not found."
            raise FileNotFoundError(msg)
        try:
            document = PROBE_REPORT_SCHEMA(json.loads(path.read_text(encoding="utf-8")))
        except (json.JSONDecodeError, vol.Invalid) as exc:
            msg = f"Probe report {path} is invalid: {exc}"
            raise ValueError(msg) from exc
        return cls(
            kind=ProbeKind(document["kind"]),
            target=ProbeTarget(document["target"]),
            chance=document["chance"],
            threshold=document["threshold"],
            train_accuracy=document["train_accuracy"],
            test_accuracy=document["test_accuracy"],
            num_test=document["num_test"],
            settings=ProbeSettings(**document["settings"]),
            extractor_hash=document["extractor_hash"],
        )


def leakage_tolerance(chance: float, num_test: int) -> float:
    """Three binomial standard errors of an accuracy estimate at ``chance``."""
    return LEAKAGE_STANDARD_ERRORS * math.sqrt(chance * (1.0 - chance) / num_test)


def judge(kind: ProbeKind, accuracy: float, chance: float, threshold: float) -> bool:
    """Verdict of a final test accuracy."""
    if kind is ProbeKind.CONTEXT_RECOVERY:
        return accuracy >= threshold
    if kind is ProbeKind.BIAS_HEAD:
        return accuracy <= threshold
    return abs(accuracy - chance) <= threshold


def _features(phi: Callable[[Any], Tensor], x: np.ndarray) -> np.ndarray:
    chunks = [
        as_tensor(phi(x[start : start + EVAL_CHUNK])).numpy()
        for start in range(0, len(x), EVAL_CHUNK)
    ]
    return np.concatenate(chunks)


def _labels(dataset: SyntheticDataset, target: ProbeTarget) -> tuple[np.ndarray, int]:
    if target is ProbeTarget.CLASS:
        return dataset.data.y, dataset.num_classes
    return dataset.data.c, dataset.num_contexts


def _accuracy(head: Linear, features: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(head(features).data, axis=-1) == labels))


def bias_head_probe(
    phi: Module | Callable[[Any], Tensor],
    train_ds: SyntheticDataset,
    test_ds: SyntheticDataset,
    target: ProbeTarget | str,
    *,
    kind: ProbeKind | str | None = None,
    settings: ProbeSettings | None = None,
) -> ProbeReport:
    """Train a fresh affine head on frozen features and report its accuracy curves.

    :param phi: Feature extractor; never updated.
    :param train_ds: Data the head is fitted on.
    :param test_ds: Balanced data the head is judged on.
    :param target: ``class`` or ``context`` labels.
    :param kind: Verdict rule; defaults to ``bias_head`` for class targets and
        ``context_recovery`` for context targets.
    :param settings: Head training settings and thresholds.
    :return: The probe report.
    """
    target = ProbeTarget(target)
    kind = DEFAULT_KIND[target] if kind is None else ProbeKind(kind)
    settings = settings or ProbeSettings()
    before = phi.parameter_hash() if isinstance(phi, Module) else None

    train_x = _features(phi, train_ds.data.x)
    test_x = _features(phi, test_ds.data.x)
    train_y, num_labels = _labels(train_ds, target)
    test_y, _ = _labels(test_ds, target)
    chance = 1.0 / num_labels

    rng = np.random.default_rng(np.random.SeedSequence([settings.seed, 7]))
    head = Linear(train_x.shape[1], num_labels, rng=rng, name="probe")
    optimizer = Adam(head.parameters(), settings.lr)
    train_curve, test_curve = [], []
    for epoch in range(1, settings.epochs + 1):
        order = rng.permutation(len(train_x))
        for start in range(0, len(order), settings.batch_size):
            idx = order[start : start + settings.batch_size]
            with Tape() as tape:
                loss = cross_entropy(head(train_x[idx]), train_y[idx]).mean()
            optimizer.step(tape.backward(loss, optimizer.params))
        train_curve.append(_accuracy(head, train_x, train_y))
        test_curve.append(_accuracy(head, test_x, test_y))
        _LOGGER.debug(
            "Probe epoch %d: train %.4f, test %.4f", epoch, train_curve[-1], test_curve[-1]
        )

    if before is not None and phi.parameter_hash() != before:
        msg = "Probed feature extractor changed during probe training"
        raise RuntimeError(msg)

    if kind is ProbeKind.CONTEXT_RECOVERY:
        threshold = settings.context_threshold
    elif kind is ProbeKind.BIAS_HEAD:
        threshold = chance + settings.class_leak_margin
    else:
        threshold = leakage_tolerance(chance, len(test_y))
    report = ProbeReport(
        kind=kind,
        target=target,
        chance=chance,
        threshold=threshold,
        train_accuracy=train_curve,
        test_accuracy=test_curve,
        num_test=len(test_y),
        settings=settings,
        extractor_hash=before,
    )
    _LOGGER.info(
        "%s probe on %s: test accuracy %.4f (chance %.4f, threshold %.4f) -> %s",
        kind,
        target,
        report.final_test_accuracy,
        chance,
        threshold,
        report.verdict,
    )
    return report


def export_embeddings(
    phi: Callable[[Any], Tensor], dataset: SyntheticDataset, path: Path
) -> Path:
    """Write ``sample_id, y, c, e0, e1, ...`` rows of ``phi`` over ``dataset``."""
    embeddings = _features(phi, dataset.data.x)
    frame = pd.DataFrame(
        embeddings, columns=[f"e{k}" for k in range(embeddings.shape[1])]
    )
    frame.insert(0, "c", dataset.data.c)
    frame.insert(0, "y", dataset.data.y)
    frame.insert(0, "sample_id", dataset.data.ids)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    _LOGGER.debug("Exported %d embeddings of width %d to %s", *embeddings.shape, path)
    return path


def read_embeddings(path: Path) -> pd.DataFrame:
    """Read an embedding export, floats bit-exact."""
    if not path.is_file():
        msg = f"Embedding file {path} not found."
        raise FileNotFoundError(msg)
    return pd.read_csv(path, float_precision="round_trip")


def embedding_cluster_margin(embeddings: np.ndarray, labels: np.ndarray) -> float:
    """Mean cosine similarity within labels minus mean cosine similarity across labels.

    Pairs of a sample with itself are excluded.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    norms = np.linalg.norm(embeddings, axis=1, keepdims=True)
    unit = embeddings / np.maximum(norms, 1e-12)
    cosine = unit @ unit.T
    same = labels[:, None] == labels[None, :]
    off_diagonal = ~np.eye(len(labels), dtype=bool)
    intra = cosine[same & off_diagonal]
    inter = cosine[~same]
    if intra.size == 0 or inter.size == 0:
        msg = "Cluster margin needs at least two labels and a label with two samples"
        raise ValueError(msg)
    return float(intra.mean() - inter.mean())


def embedding_margins(path: Path) -> dict[str, float]:
    """Cluster margins of an embedding export by context and by class label."""
    frame = read_embeddings(path)
    embeddings = frame.filter(regex=r"^e\d+$").to_numpy()
    return {
        "context_margin": embedding_cluster_margin(embeddings, frame["c"].to_numpy()),
        "class_margin": embedding_cluster_margin(embeddings, frame["y"].to_numpy()),
    }
