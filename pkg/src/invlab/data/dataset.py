"""Biased and balanced synthetic datasets with ground-truth factor labels."""

from __future__ import annotations

import dataclasses
import logging
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass
from enum import StrEnum
from typing import NamedTuple, Self

import numpy as np

from . import color_grid, vector_concat  # noqa: F401  registers the renderers
from .const import DEFAULT_SIZES
from .factors import FactorSpec
from .renderers import RENDERER_FACTORY, Renderer

_LOGGER = logging.getLogger(__name__)


class Split(StrEnum):
    """Dataset split tags."""

    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class EnvKind(StrEnum):
    """How samples are grouped into environments."""

    BY_CONTEXT = "by_context"
    BY_CLASS = "by_class"


@dataclass(frozen=True)
class Sample:
    """One labeled observation."""

    id: int
    x: np.ndarray
    y: int
    c: int
    num_classes: int

    @property
    def one_hot_y(self) -> np.ndarray:
        """Length-``n`` indicator of the class label."""
        return np.eye(self.num_classes)[self.y]


@dataclass(frozen=True, eq=False)
class Batch:
    """Column-oriented set of samples.

    :param ids: Global sample ids, shape ``(N,)``.
    :param x: Observations, shape ``(N, d)``.
    :param y: Class labels, shape ``(N,)``.
    :param c: Ground-truth context labels, shape ``(N,)``.
    """

    ids: np.ndarray
    x: np.ndarray
    y: np.ndarray
    c: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "ids", np.asarray(self.ids, dtype=np.int64))
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.float64))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=np.int64))
        object.__setattr__(self, "c", np.asarray(self.c, dtype=np.int64))
        n = len(self.ids)
        if self.x.ndim != 2 or not (len(self.x) == len(self.y) == len(self.c) == n):
            msg = (
                f"Inconsistent batch columns: ids {self.ids.shape}, x {self.x.shape}, "
                f"y {self.y.shape}, c {self.c.shape}"
            )
            raise ValueError(msg)

    def __len__(self) -> int:
        return len(self.ids)

    def take(self, indices: Sequence[int] | np.ndarray) -> Self:
        """Rows at ``indices`` (repeats allowed), keeping any extra fields."""
        idx = np.asarray(indices, dtype=np.int64)
        return dataclasses.replace(
            self, ids=self.ids[idx], x=self.x[idx], y=self.y[idx], c=self.c[idx]
        )

    @property
    def aligned(self) -> np.ndarray:
        """Mask of bias-aligned samples (``c == y``)."""
        return self.c == self.y


@dataclass(frozen=True, eq=False)
class EnvironmentBatch(Batch):
    """Samples sharing one environment id."""

    env_id: int = 0
    env_kind: EnvKind = EnvKind.BY_CLASS

    def __post_init__(self) -> None:
        super().__post_init__()
        labels = self.c if self.env_kind is EnvKind.BY_CONTEXT else self.y
        if np.any(labels != self.env_id):
            msg = f"Samples outside environment {self.env_id} ({self.env_kind})"
            raise ValueError(msg)


@dataclass(frozen=True)
class SplitSizes:
    """Number of samples per split."""

    train: int = DEFAULT_SIZES["train"]
    val: int = DEFAULT_SIZES["val"]
    test: int = DEFAULT_SIZES["test"]

    @classmethod
    def from_mapping(cls, sizes: Mapping[str, int]) -> SplitSizes:
        """Build from a ``{"train": .., "val": .., "test": ..}`` mapping."""
        return cls(**{split: int(count) for split, count in sizes.items()})

    def as_dict(self) -> dict[str, int]:
        """Return the sizes keyed by split name."""
        return dataclasses.asdict(self)


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    """One split of a generated dataset.

    :param spec: Factor spec used for rendering.
    :param split: Split tag.
    :param bias_ratio: Fraction of class-aligned contexts in the train split.
    :param seed: Generation seed.
    :param data: The samples.
    """

    spec: FactorSpec
    split: Split
    bias_ratio: float
    seed: int
    data: Batch

    def __len__(self) -> int:
        return len(self.data)

    def __iter__(self) -> Iterator[Sample]:
        for index in range(len(self)):
            yield self.sample(index)

    def sample(self, index: int) -> Sample:
        """Return row ``index`` as a :class:`Sample`."""
        data = self.data
        return Sample(
            id=int(data.ids[index]),
            x=data.x[index],
            y=int(data.y[index]),
            c=int(data.c[index]),
            num_classes=self.num_classes,
        )

    @property
    def num_classes(self) -> int:
        """Number of classes of the generating spec."""
        return self.spec.num_classes

    @property
    def num_contexts(self) -> int:
        """Number of contexts of the generating spec."""
        return self.spec.num_contexts

    def cell_counts(self) -> np.ndarray:
        """Sample count per ``(class, context)`` cell."""
        return cell_counts(self.data, self.num_classes, self.num_contexts)

    def aligned_fraction(self) -> float:
        """Empirical ``P(c == y)``."""
        return float(self.data.aligned.mean()) if len(self) else 0.0

    def is_balanced(self) -> bool:
        """Whether every class spreads its samples evenly over contexts."""
        return is_balanced(self.data, self.num_classes, self.num_contexts)


class DatasetSplits(NamedTuple):
    """Train, validation and test splits generated together."""

    train: SyntheticDataset
    val: SyntheticDataset
    test: SyntheticDataset


def cell_counts(batch: Batch, num_classes: int, num_contexts: int) -> np.ndarray:
    """Count samples per ``(class, context)`` cell."""
    counts = np.zeros((num_classes, num_contexts), dtype=np.int64)
    np.add.at(counts, (batch.y, batch.c), 1)
    return counts


def is_balanced(batch: Batch, num_classes: int, num_contexts: int) -> bool:
    """Whether per-class context counts differ by at most one."""
    counts = cell_counts(batch, num_classes, num_contexts)
    return bool(np.all(counts.max(axis=1) - counts.min(axis=1) <= 1))


def _class_sizes(total: int, num_classes: int) -> list[int]:
    return [total // num_classes + (k < total % num_classes) for k in range(num_classes)]


def _biased_contexts(size: int, label: int, num_contexts: int, ratio: float) -> list[int]:
    """Contexts of one class: ``round(ratio * size)`` aligned, the rest round-robin."""
    aligned = int(np.floor(ratio * size + 0.5))
    others = [j for j in range(num_contexts) if j != label]
    rest = [others[i % len(others)] for i in range(size - aligned)] if others else []
    return [label] * aligned + rest


def _balanced_contexts(size: int, num_contexts: int) -> list[int]:
    return [i % num_contexts for i in range(size)]


def _build_split(
    renderer: Renderer,
    split: Split,
    total: int,
    ratio: float,
    offset: int,
    rng: np.random.Generator,
) -> Batch:
    spec = renderer.spec
    ys: list[int] = []
    cs: list[int] = []
    for label, size in enumerate(_class_sizes(total, spec.num_classes)):
        if split is Split.TRAIN:
            contexts = _biased_contexts(size, label, spec.num_contexts, ratio)
        else:
            contexts = _balanced_contexts(size, spec.num_contexts)
        ys.extend([label] * size)
        cs.extend(contexts)

    order = rng.permutation(total)
    y = np.asarray(ys, dtype=np.int64)[order]
    c = np.asarray(cs, dtype=np.int64)[order]
    x = renderer.render(y, c, rng)
    return Batch(ids=offset + np.arange(total), x=x, y=y, c=c)


def generate(
    spec: FactorSpec,
    bias_ratio: float,
    sizes: SplitSizes | Mapping[str, int],
    seed: int,
) -> DatasetSplits:
    """Generate a biased train split and balanced validation and test splits.

    Class ``k`` is aligned with context ``k``. In the train split each class
    keeps ``round(bias_ratio * size)`` aligned samples and spreads the rest
    round-robin over the other contexts. Ids are unique across the three
    splits.

    :param spec: Factor spec; must have as many contexts as classes.
    :param bias_ratio: Aligned fraction, in ``[1/m, 1]``.
    :param sizes: Sample count per split.
    :param seed: Seed of labels, ordering and rendering noise.
    :return: The three splits.
    """
    if spec.num_classes != spec.num_contexts:
        msg = (
            "Aligned pairing needs as many contexts as classes, got "
            f"{spec.num_classes} classes and {spec.num_contexts} contexts"
        )
        raise ValueError(msg)
    lower = 1.0 / spec.num_contexts
    if not lower - 1e-12 <= bias_ratio <= 1.0:
        msg = f"bias_ratio must be in [{lower:.6g}, 1], got {bias_ratio}"
        raise ValueError(msg)
    if not isinstance(sizes, SplitSizes):
        sizes = SplitSizes.from_mapping(sizes)

    renderer = RENDERER_FACTORY.get_renderer(spec)
    streams = np.random.SeedSequence(seed).spawn(len(Split))
    datasets: dict[str, SyntheticDataset] = {}
    offset = 0
    for split, stream in zip(Split, streams, strict=True):
        total = getattr(sizes, split.value)
        batch = _build_split(
            renderer, split, total, bias_ratio, offset, np.random.default_rng(stream)
        )
        offset += total
        datasets[split.value] = SyntheticDataset(
            spec=spec, split=split, bias_ratio=bias_ratio, seed=seed, data=batch
        )
        _LOGGER.debug(
            "Generated %s split: %d samples, aligned fraction %.4f",
            split,
            total,
            datasets[split.value].aligned_fraction(),
        )
    return DatasetSplits(**datasets)


def split_environments(
    source: SyntheticDataset | Batch, kind: EnvKind
) -> list[EnvironmentBatch]:
    """Partition samples into environments sorted by id.

    :param source: Dataset or batch to partition.
    :param kind: ``BY_CONTEXT`` groups by ground-truth context, ``BY_CLASS`` by class.
    :return: One batch per distinct label, in ascending label order.
    """
    batch = source.data if isinstance(source, SyntheticDataset) else source
    if len(batch) == 0:
        msg = "Cannot split an empty dataset into environments"
        raise ValueError(msg)
    kind = EnvKind(kind)
    labels = batch.c if kind is EnvKind.BY_CONTEXT else batch.y
    envs = []
    for env_id in np.unique(labels):
        idx = np.flatnonzero(labels == env_id)
        envs.append(
            EnvironmentBatch(
                ids=batch.ids[idx],
                x=batch.x[idx],
                y=batch.y[idx],
                c=batch.c[idx],
                env_id=int(env_id),
                env_kind=kind,
            )
        )
    return envs
