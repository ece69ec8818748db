"""Test configuration, model bundle and model selection."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np
import pytest
from src.invlab.data.dataset import DatasetSplits
from src.invlab.losses.objectives import PenaltyForm
from src.invlab.pipelines.bundle import (
    METRIC_COLUMNS,
    Method,
    ModelBundle,
    SelectionTracker,
    TrainConfig,
    method_stream,
)
from src.invlab.pipelines.const import COMPONENTS


class TestTrainConfig:
    """Test run configuration validation and conversion."""

    def test_mapping_roundtrip(self) -> None:
        """Test renamed keys in both directions."""
        config = TrainConfig.from_mapping({"name": "irm", "lambda": 2.5, "epochs": 4})
        assert config.method is Method.IRM
        assert config.lam == 2.5
        section = config.to_dict()
        assert section["name"] == "irm"
        assert section["lambda"] == 2.5
        assert section["irm_penalty"] == "per_sample_squared"
        assert TrainConfig.from_mapping(section) == config

    @pytest.mark.parametrize(
        ("overrides", "match"),
        [
            ({"lam": -1.0}, "lambda"),
            ({"q": 0.0}, "q must be"),
            ({"lambda_warmup": 1.5}, "lambda_warmup"),
            ({"epochs": -1}, "epochs"),
            ({"eval_every": 0}, "eval_every"),
            ({"method": Method.IRMCON_IPW, "env_batch_size": 1}, "at least 2"),
        ],
    )
    def test_invalid(self, overrides: dict, match: str) -> None:
        """Test ranges rejected at construction."""
        with pytest.raises(ValueError, match=match):
            TrainConfig(**overrides)

    def test_stage_epochs_and_warmup(self) -> None:
        """Test per-stage epoch fallbacks and the warmup length."""
        config = TrainConfig(epochs=10, bias_epochs=4, lambda_warmup=0.25)
        assert config.context_stage_epochs == 10
        assert config.bias_stage_epochs == 4
        assert config.warmup_epochs(10) == 2
        assert TrainConfig(irmcon_penalty="mean_squared").irmcon_penalty is PenaltyForm.MEAN_SQUARED


class TestModelBundle:
    """Test component construction."""

    def test_shapes(self, tiny_config: Callable[..., TrainConfig]) -> None:
        """Test widths of every component."""
        bundle = ModelBundle.build(8, 3, tiny_config())
        assert bundle.phi_c.dims == [8, 8, 8, 4]
        assert bundle.phi_t.dims == [8, 8, 8, 4]
        assert (bundle.f.in_dim, bundle.f.out_dim) == (4, 3)
        assert bundle.main(np.zeros((2, 8))).shape == (2, 3)
        assert bundle.bias(np.zeros((2, 8))).shape == (2, 3)
        assert bundle.theta.value == 1.0

    def test_seeded_and_independent(self, tiny_config: Callable[..., TrainConfig]) -> None:
        """Test that equal seeds give equal weights and components differ from each other."""
        first = ModelBundle.build(8, 3, tiny_config())
        second = ModelBundle.build(8, 3, tiny_config())
        other = ModelBundle.build(8, 3, tiny_config(seed=1))
        for name in COMPONENTS:
            assert first.component(name).parameter_hash() == second.component(name).parameter_hash()
            assert first.component(name).parameter_hash() != other.component(name).parameter_hash()
        assert not np.array_equal(
            first.phi_c.layers[0].weight.data, first.phi_b.layers[0].weight.data
        )

    def test_unknown_component(self, tiny_config: Callable[..., TrainConfig]) -> None:
        """Test the component lookup error."""
        with pytest.raises(KeyError, match="Unknown component"):
            ModelBundle.build(8, 3, tiny_config()).component("phi_x")

    def test_method_streams_differ(self) -> None:
        """Test that streams of one seed are independent."""
        a = np.random.default_rng(method_stream(0, 0)).random()
        b = np.random.default_rng(method_stream(0, 1)).random()
        assert a != b


class TestSelectionTracker:
    """Test best-validation model selection."""

    def test_restores_best_epoch(
        self, tiny_splits: DatasetSplits, tiny_config: Callable[..., TrainConfig]
    ) -> None:
        """Test that restore loads the state with the highest validation accuracy."""
        bundle = ModelBundle.build(8, 3, tiny_config())
        tracker = SelectionTracker([bundle.phi_c, bundle.f], tiny_splits.val, tiny_splits.test)
        model = bundle.main

        accuracies = []
        hashes = []
        for epoch in range(4):
            bundle.f.weight.data[...] = np.random.default_rng(epoch).normal(size=bundle.f.weight.shape)
            accuracies.append(tracker.record(epoch, model, {"loss": 1.0 / (epoch + 1)}))
            hashes.append(bundle.f.parameter_hash())

        best = int(np.argmax(accuracies))
        selected = tracker.restore()
        assert selected["epoch"] == best
        assert selected["val_accuracy"] == accuracies[best]
        assert bundle.f.parameter_hash() == hashes[best]

        frame = tracker.frame
        assert list(frame.columns) == METRIC_COLUMNS
        assert set(frame["split"]) == {"train", "val", "test"}
        assert set(frame.loc[frame["split"] == "test", "metric"]) == {
            "accuracy",
            "aligned_accuracy",
            "conflicting_accuracy",
        }

    def test_restore_before_record(self, tiny_splits: DatasetSplits) -> None:
        """Test that restoring without any epoch fails."""
        tracker = SelectionTracker([], tiny_splits.val, tiny_splits.test)
        with pytest.raises(ValueError, match="No epoch"):
            tracker.restore()

    def test_rejects_unbalanced_split(
        self, tiny_splits: DatasetSplits, tiny_config: Callable[..., TrainConfig]
    ) -> None:
        """Test that a biased validation split is refused in strict mode."""
        bundle = ModelBundle.build(8, 3, tiny_config())
        tracker = SelectionTracker([bundle.f], tiny_splits.train, tiny_splits.test)
        with pytest.raises(ValueError, match="not context-balanced"):
            tracker.record(0, bundle.main)
        lenient = SelectionTracker(
            [bundle.f], tiny_splits.train, tiny_splits.test, strict_balance=False
        )
        assert 0.0 <= lenient.record(0, bundle.main) <= 1.0
