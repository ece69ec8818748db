"""Test the mini-batch samplers."""

from __future__ import annotations

import itertools

import numpy as np
import pytest
from scipy.stats import chisquare
from src.invlab.data.dataset import Batch, DatasetSplits, EnvKind, split_environments
from src.invlab.pipelines.sampler import (
    BatchSpec,
    EnvironmentSampler,
    shuffled_batches,
    steps_per_epoch,
    weighted_sampler,
)


@pytest.fixture
def small_batch() -> Batch:
    """Ten samples of two classes."""
    return Batch(ids=np.arange(10), x=np.arange(20.0).reshape(10, 2), y=[0, 1] * 5, c=[0, 1] * 5)


class TestShuffledBatches:
    """Test one-epoch shuffling."""

    def test_covers_every_sample_once(self, small_batch: Batch, rng: np.random.Generator) -> None:
        """Test that an epoch is a permutation split into chunks."""
        batches = list(shuffled_batches(small_batch, 4, rng))
        assert [len(b) for b in batches] == [4, 4, 2]
        ids = np.concatenate([b.ids for b in batches])
        np.testing.assert_array_equal(np.sort(ids), np.arange(10))

    def test_steps_per_epoch(self) -> None:
        """Test the ceiling division with a minimum of one step."""
        assert steps_per_epoch(10, 4) == 3
        assert steps_per_epoch(0, 4) == 1
        assert BatchSpec(4).num_steps(10) == 3
        assert BatchSpec(4, steps=7).num_steps(10) == 7
        with pytest.raises(ValueError, match="batch_size"):
            BatchSpec(0)


class TestWeightedSampler:
    """Test score-proportional sampling with replacement."""

    def test_frequencies_follow_scores(self, small_batch: Batch) -> None:
        """Test draw counts against the score distribution with a chi-square test."""
        scores = np.arange(1.0, 11.0)
        spec = BatchSpec(batch_size=500, steps=40)
        counts = np.zeros(10)
        for batch in weighted_sampler(small_batch, scores, spec, seed=0):
            np.add.at(counts, batch.ids, 1)
        expected = scores / scores.sum() * counts.sum()
        assert chisquare(counts, expected).pvalue > 1e-3

    def test_zero_score_never_drawn(self, small_batch: Batch) -> None:
        """Test that samples with score zero are excluded."""
        scores = np.ones(10)
        scores[3] = 0.0
        drawn = np.concatenate(
            [b.ids for b in weighted_sampler(small_batch, scores, BatchSpec(50, steps=20), seed=1)]
        )
        assert 3 not in drawn

    def test_deterministic(self, small_batch: Batch) -> None:
        """Test that the seed fixes the stream."""
        first = [b.ids for b in weighted_sampler(small_batch, np.ones(10), BatchSpec(3), seed=5)]
        second = [b.ids for b in weighted_sampler(small_batch, np.ones(10), BatchSpec(3), seed=5)]
        np.testing.assert_array_equal(np.concatenate(first), np.concatenate(second))

    def test_endless_stream(self, small_batch: Batch) -> None:
        """Test that an endless stream ignores the step count."""
        stream = weighted_sampler(small_batch, np.ones(10), BatchSpec(2, steps=1, endless=True), seed=0)
        assert len(list(itertools.islice(stream, 25))) == 25

    def test_invalid_scores(self, small_batch: Batch) -> None:
        """Test negative, all-zero and mismatched scores."""
        with pytest.raises(ValueError, match="non-negative"):
            next(weighted_sampler(small_batch, -np.ones(10), BatchSpec(2), seed=0))
        with pytest.raises(ValueError, match="all zero"):
            next(weighted_sampler(small_batch, np.zeros(10), BatchSpec(2), seed=0))
        with pytest.raises(ValueError, match="scores for"):
            next(weighted_sampler(small_batch, np.ones(3), BatchSpec(2), seed=0))


class TestEnvironmentSampler:
    """Test per-environment batches."""

    def test_one_batch_per_environment(self, tiny_splits: DatasetSplits, rng: np.random.Generator) -> None:
        """Test batch sizes and environment membership."""
        envs = split_environments(tiny_splits.train, EnvKind.BY_CLASS)
        batches = EnvironmentSampler(envs, 8, rng).step()
        assert [b.env_id for b in batches] == [0, 1, 2]
        assert all(len(b) == 8 for b in batches)
        assert all(np.all(b.y == b.env_id) for b in batches)

    def test_walks_permutation_without_repeats(self, small_batch: Batch, rng: np.random.Generator) -> None:
        """Test that an environment is exhausted before any sample repeats."""
        envs = split_environments(small_batch, EnvKind.BY_CLASS)
        sampler = EnvironmentSampler(envs, 2, rng)
        first_pass = np.concatenate([sampler.step()[0].ids for _ in range(2)])
        assert len(np.unique(first_pass)) == 4

    def test_batch_capped_at_environment_size(self, small_batch: Batch, rng: np.random.Generator) -> None:
        """Test that small environments yield their full size."""
        envs = split_environments(small_batch, EnvKind.BY_CLASS)
        assert [len(b) for b in EnvironmentSampler(envs, 50, rng).step()] == [5, 5]

    def test_scored_sampling(self, small_batch: Batch, rng: np.random.Generator) -> None:
        """Test that scored environments only draw positively scored rows."""
        envs = split_environments(small_batch, EnvKind.BY_CLASS)
        scores = [np.array([0.0, 0.0, 0.0, 0.0, 1.0]), np.ones(5)]
        sampler = EnvironmentSampler(envs, 4, rng, scores)
        first_env = sampler.step()[0]
        assert np.all(first_env.ids == envs[0].ids[4])

    def test_invalid_batch_size(self, small_batch: Batch, rng: np.random.Generator) -> None:
        """Test that a non-positive batch size is rejected."""
        with pytest.raises(ValueError, match="batch_size"):
            EnvironmentSampler(split_environments(small_batch, EnvKind.BY_CLASS), 0, rng)

    def test_scored_draws_follow_weighted_sampler(self, small_batch: Batch) -> None:
        """Test that scored environments draw the weighted stream of the shared generator."""
        env = split_environments(small_batch, EnvKind.BY_CLASS)[1]
        scores = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        sampler = EnvironmentSampler([env], 3, np.random.default_rng(9), [scores])

        rng = np.random.default_rng(9)
        rng.permutation(len(env))
        stream = weighted_sampler(env, scores, BatchSpec(3, endless=True), rng)
        for expected in itertools.islice(stream, 4):
            (batch,) = sampler.step()
            np.testing.assert_array_equal(batch.ids, expected.ids)
            assert batch.env_id == 1

    def test_score_count_mismatch(self, small_batch: Batch, rng: np.random.Generator) -> None:
        """Test that every environment needs its own scores."""
        envs = split_environments(small_batch, EnvKind.BY_CLASS)
        with pytest.raises(ValueError, match="scores for 1 of 2"):
            EnvironmentSampler(envs, 2, rng, [np.ones(5)])
