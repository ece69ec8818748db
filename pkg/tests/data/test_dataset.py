"""Test the synthetic data generators, datasets and environment splits."""

from __future__ import annotations

import numpy as np
import pytest
from src.invlab.data.dataset import (
    Batch,
    DatasetSplits,
    EnvironmentBatch,
    EnvKind,
    Split,
    cell_counts,
    generate,
    split_environments,
)
from src.invlab.data.factors import FactorSpec, GeneratorKind
from src.invlab.data.renderers import RENDERER_FACTORY, build_factor_spec


class TestFactorSpec:
    """Test prototype drawing and validation."""

    def test_build_is_deterministic(self, tiny_spec: FactorSpec) -> None:
        """Test that the same seed draws the same prototypes."""
        again = build_factor_spec(
            "vector_concat",
            num_classes=3,
            num_contexts=3,
            noise_std=0.1,
            seed=3,
            class_dim=4,
            context_dim=4,
        )
        np.testing.assert_array_equal(again.class_prototypes, tiny_spec.class_prototypes)
        np.testing.assert_array_equal(again.context_prototypes, tiny_spec.context_prototypes)
        assert tiny_spec.observation_dim == 8

    def test_too_close_prototypes(self) -> None:
        """Test that prototypes within 4 noise stds are rejected."""
        with pytest.raises(ValueError, match="too close"):
            FactorSpec(
                kind=GeneratorKind.VECTOR_CONCAT,
                class_prototypes=np.array([[0.0, 0.0], [0.1, 0.0]]),
                context_prototypes=np.eye(2),
                noise_std=0.1,
            )

    def test_prototypes_read_only(self, tiny_spec: FactorSpec) -> None:
        """Test that a spec cannot be mutated through its arrays."""
        with pytest.raises(ValueError, match="read-only"):
            tiny_spec.class_prototypes[0, 0] = 1.0

    def test_dict_roundtrip(self, tiny_spec: FactorSpec) -> None:
        """Test serialization to plain types and back."""
        restored = FactorSpec.from_dict(tiny_spec.to_dict())
        assert restored.kind is GeneratorKind.VECTOR_CONCAT
        np.testing.assert_array_equal(restored.class_prototypes, tiny_spec.class_prototypes)

    def test_color_grid_spec(self) -> None:
        """Test glyph and color prototypes of the image generator."""
        spec = build_factor_spec(
            "color_grid", num_classes=4, num_contexts=4, noise_std=0.02, seed=1, image_size=5
        )
        assert spec.class_dim == 25
        assert spec.context_dim == 3
        assert spec.observation_dim == 75
        assert set(np.unique(spec.class_prototypes)) <= {0.0, 1.0}
        assert np.all(spec.class_prototypes[:, 12] == 1.0)

    def test_unknown_generator(self) -> None:
        """Test the renderer registry error message."""
        with pytest.raises(ValueError, match="Unknown generator"):
            build_factor_spec("waveform", num_classes=2, num_contexts=2, noise_std=0.1, seed=0)
        assert set(RENDERER_FACTORY.get_renderer_list_str()) == {"vector_concat", "color_grid"}


class TestRenderers:
    """Test rendering and flipping of both generators."""

    def test_vector_concat_blocks(self, tiny_spec: FactorSpec, rng: np.random.Generator) -> None:
        """Test that each block is centred on its prototype."""
        renderer = RENDERER_FACTORY.get_renderer(tiny_spec)
        y = np.full(2000, 1)
        c = np.full(2000, 2)
        x = renderer.render(y, c, rng)
        assert x.shape == (2000, 8)
        np.testing.assert_allclose(x[:, :4].mean(axis=0), tiny_spec.class_prototypes[1], atol=0.02)
        np.testing.assert_allclose(x[:, 4:].mean(axis=0), tiny_spec.context_prototypes[2], atol=0.02)

    def test_vector_concat_flip(self, tiny_spec: FactorSpec) -> None:
        """Test that the flip reverses each block and is an involution."""
        renderer = RENDERER_FACTORY.get_renderer(tiny_spec)
        x = np.arange(8.0)
        np.testing.assert_array_equal(renderer.flip(x), [3, 2, 1, 0, 7, 6, 5, 4])
        np.testing.assert_array_equal(renderer.flip(renderer.flip(x)), x)

    def test_color_grid_render_and_flip(self, rng: np.random.Generator) -> None:
        """Test that a noiseless image is the glyph tinted by the color."""
        spec = build_factor_spec(
            "color_grid", num_classes=2, num_contexts=2, noise_std=0.0, seed=0, image_size=3
        )
        renderer = RENDERER_FACTORY.get_renderer(spec)
        x = renderer.render(np.array([0]), np.array([1]), rng)
        expected = np.outer(spec.class_prototypes[0], spec.context_prototypes[1]).reshape(-1)
        np.testing.assert_allclose(x[0], expected)

        image = x[0].reshape(3, 3, 3)
        np.testing.assert_array_equal(renderer.flip(x)[0].reshape(3, 3, 3), image[:, ::-1, :])

    def test_renderer_kind_mismatch(self, tiny_spec: FactorSpec) -> None:
        """Test that a renderer refuses specs of another generator."""
        grid_class = RENDERER_FACTORY.get_renderer_class("color_grid")
        with pytest.raises(ValueError, match="cannot render"):
            grid_class(tiny_spec)


class TestGenerate:
    """Test biased and balanced split generation."""

    def test_split_sizes_and_ids(self, tiny_splits: DatasetSplits) -> None:
        """Test sizes, split tags and globally unique ids."""
        assert [len(ds) for ds in tiny_splits] == [120, 60, 60]
        assert [ds.split for ds in tiny_splits] == [Split.TRAIN, Split.VAL, Split.TEST]
        ids = np.concatenate([ds.data.ids for ds in tiny_splits])
        assert len(np.unique(ids)) == 240

    def test_train_bias_ratio(self, tiny_splits: DatasetSplits) -> None:
        """Test that each class keeps round(rho * size) aligned samples."""
        counts = tiny_splits.train.cell_counts()
        np.testing.assert_array_equal(np.diag(counts), [36, 36, 36])
        np.testing.assert_array_equal(counts.sum(axis=1), [40, 40, 40])
        assert tiny_splits.train.aligned_fraction() == pytest.approx(0.9)
        assert not tiny_splits.train.is_balanced()

    def test_eval_splits_balanced(self, tiny_splits: DatasetSplits) -> None:
        """Test that validation and test splits spread contexts evenly."""
        assert tiny_splits.val.is_balanced()
        assert tiny_splits.test.is_balanced()

    @pytest.mark.parametrize("bias_ratio", [0.95, 0.99, 0.999])
    def test_high_bias_ratios(self, tiny_spec: FactorSpec, bias_ratio: float) -> None:
        """Test the aligned fraction for the usual bias ratios."""
        splits = generate(tiny_spec, bias_ratio, {"train": 3000, "val": 30, "test": 30}, 0)
        assert abs(splits.train.aligned_fraction() - bias_ratio) < 1e-3

    def test_deterministic(self, tiny_spec: FactorSpec, tiny_splits: DatasetSplits) -> None:
        """Test that the same seed reproduces the same samples."""
        again = generate(tiny_spec, 0.9, {"train": 120, "val": 60, "test": 60}, 3)
        np.testing.assert_array_equal(again.train.data.x, tiny_splits.train.data.x)
        np.testing.assert_array_equal(again.test.data.c, tiny_splits.test.data.c)

    def test_invalid_ratio(self, tiny_spec: FactorSpec) -> None:
        """Test that ratios below 1/m are rejected."""
        with pytest.raises(ValueError, match="bias_ratio"):
            generate(tiny_spec, 0.2, {"train": 30, "val": 30, "test": 30}, 0)

    def test_class_context_mismatch(self) -> None:
        """Test that aligned pairing needs n == m."""
        spec = build_factor_spec(
            "vector_concat", num_classes=2, num_contexts=3, noise_std=0.1, seed=0
        )
        with pytest.raises(ValueError, match="as many contexts as classes"):
            generate(spec, 0.9, {"train": 30, "val": 30, "test": 30}, 0)

    def test_samples(self, tiny_splits: DatasetSplits) -> None:
        """Test per-sample access and the one-hot label."""
        sample = tiny_splits.val.sample(0)
        assert sample.id == tiny_splits.val.data.ids[0]
        np.testing.assert_array_equal(sample.one_hot_y, np.eye(3)[sample.y])
        assert len(list(tiny_splits.val)) == 60


class TestEnvironments:
    """Test partitioning into environments."""

    @pytest.mark.parametrize("kind", [EnvKind.BY_CONTEXT, EnvKind.BY_CLASS])
    def test_partition(self, tiny_splits: DatasetSplits, kind: EnvKind) -> None:
        """Test that environments partition the samples."""
        envs = split_environments(tiny_splits.train, kind)
        assert [env.env_id for env in envs] == [0, 1, 2]
        assert sum(len(env) for env in envs) == 120
        ids = np.sort(np.concatenate([env.ids for env in envs]))
        np.testing.assert_array_equal(ids, np.sort(tiny_splits.train.data.ids))
        for env in envs:
            labels = env.c if kind is EnvKind.BY_CONTEXT else env.y
            assert np.all(labels == env.env_id)

    def test_class_environment_counts(self, tiny_splits: DatasetSplits) -> None:
        """Test that class environments follow the class sizes."""
        envs = split_environments(tiny_splits.train, EnvKind.BY_CLASS)
        assert [len(env) for env in envs] == [40, 40, 40]

    def test_empty(self) -> None:
        """Test that an empty batch cannot be split."""
        empty = Batch(ids=[], x=np.zeros((0, 2)), y=[], c=[])
        with pytest.raises(ValueError, match="empty"):
            split_environments(empty, EnvKind.BY_CLASS)

    def test_environment_membership(self) -> None:
        """Test that an environment batch rejects foreign samples."""
        with pytest.raises(ValueError, match="outside environment"):
            EnvironmentBatch(
                ids=[0, 1], x=np.zeros((2, 2)), y=[0, 1], c=[0, 0], env_id=0
            )

    def test_take_keeps_environment(self, tiny_splits: DatasetSplits) -> None:
        """Test that row selection keeps the environment fields."""
        env = split_environments(tiny_splits.train, EnvKind.BY_CONTEXT)[1]
        picked = env.take([0, 0, 2])
        assert isinstance(picked, EnvironmentBatch)
        assert picked.env_id == 1
        assert len(picked) == 3

    def test_cell_counts(self) -> None:
        """Test counting per class and context."""
        batch = Batch(ids=[0, 1, 2], x=np.zeros((3, 1)), y=[0, 0, 1], c=[1, 1, 0])
        np.testing.assert_array_equal(cell_counts(batch, 2, 2), [[0, 2], [1, 0]])
