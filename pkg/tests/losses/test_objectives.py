"""Test cross entropy, GCE, the IRM objective and weighted ERM."""

from __future__ import annotations

import numpy as np
import pytest
from src.invlab.autodiff.nn import Linear
from src.invlab.autodiff.tensor import ShapeError, Tape, Tensor
from src.invlab.data.dataset import Batch, DatasetSplits, EnvKind, split_environments
from src.invlab.losses.objectives import (
    DummyTheta,
    PenaltyForm,
    cross_entropy,
    environment_penalty,
    erm_loss,
    gce,
    gce_from_logits,
    ipw_erm_loss,
    irm_loss,
    normalized_weights,
    one_hot,
    theta_grad_ce,
    weighted_ce,
)
from src.invlab.losses.weights import Provenance, WeightTable

from tests.conftest import assert_gradients, assert_parameter_gradients, random_problem
from tests.const import GCE_LIMIT_POINTS, ORACLE_INSTANCES, THETA_ATOL, THETA_STEP


class TestCrossEntropy:
    """Test cross entropy and generalized cross entropy."""

    def test_known_value(self) -> None:
        """Test CE of uniform logits."""
        assert cross_entropy(Tensor(np.zeros(4)), 2).item() == pytest.approx(np.log(4))

    def test_per_sample(self, rng: np.random.Generator) -> None:
        """Test that a matrix yields one loss per row."""
        logits = rng.normal(size=(5, 3))
        y = np.array([0, 1, 2, 1, 0])
        expected = -np.log(np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True))[np.arange(5), y]
        np.testing.assert_allclose(cross_entropy(Tensor(logits), y).data, expected)

    def test_gradient(self, rng: np.random.Generator) -> None:
        """Test CE gradients in the logits."""
        y = np.array([2, 0, 1])
        assert_gradients(lambda z: cross_entropy(z, y).mean(), [rng.normal(size=(3, 4))])

    def test_stable_for_large_logits(self) -> None:
        """Test that huge logits do not overflow."""
        loss = cross_entropy(Tensor([1000.0, 0.0]), 1).item()
        assert loss == pytest.approx(1000.0)

    def test_label_validation(self) -> None:
        """Test label range and shape checks."""
        with pytest.raises(ValueError, match="Class labels"):
            cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])
        with pytest.raises(ShapeError):
            cross_entropy(Tensor(np.zeros((2, 3))), [0, 1, 2])

    def test_gce_limits(self, rng: np.random.Generator) -> None:
        """Test that GCE approaches CE for small q on random simplex points and vanishes at p_y = 1."""
        probs = rng.dirichlet(np.full(4, 5.0), size=GCE_LIMIT_POINTS)
        y = rng.integers(0, 4, size=GCE_LIMIT_POINTS)
        ce = -np.log(probs[np.arange(GCE_LIMIT_POINTS), y])
        small_q = gce(Tensor(probs), y, q=1e-4).data
        assert np.max(np.abs(small_q - ce)) < 1e-3
        assert gce(Tensor([0.0, 1.0, 0.0]), 1).item() == 0.0

    @pytest.mark.parametrize("q", [0.1, 0.5, 0.7, 1.0])
    def test_gce_decreasing_in_true_class_probability(self, q: float) -> None:
        """Test that GCE falls strictly as the true class gains probability."""
        p = np.linspace(0.01, 1.0, 200)
        values = gce(Tensor(np.stack([p, 1.0 - p], axis=1)), np.zeros(200, dtype=int), q=q).data
        assert np.all(np.diff(values) < 0)

    def test_gce_matches_probabilities(self, rng: np.random.Generator) -> None:
        """Test that the logit form equals GCE on softmax probabilities."""
        logits = Tensor(rng.normal(size=(4, 3)))
        y = np.array([0, 2, 1, 1])
        np.testing.assert_allclose(
            gce_from_logits(logits, y, q=0.7).data, gce(logits.softmax(axis=1), y, q=0.7).data
        )

    def test_gce_gradient(self, rng: np.random.Generator) -> None:
        """Test GCE gradients in the logits."""
        y = np.array([1, 0])
        assert_gradients(lambda z: gce_from_logits(z, y).mean(), [rng.normal(size=(2, 3))])

    def test_gce_invalid(self) -> None:
        """Test q range and the simplex check."""
        with pytest.raises(ValueError, match="exponent q"):
            gce(Tensor([0.5, 0.5]), 0, q=0.0)
        with pytest.raises(ValueError, match="simplex"):
            gce(Tensor([0.5, 0.7]), 0)

    def test_one_hot(self) -> None:
        """Test indicator rows."""
        np.testing.assert_array_equal(one_hot([1, 0], 3), [[0, 1, 0], [1, 0, 0]])


class TestThetaDerivative:
    """Test the closed-form dummy-scale derivative of CE."""

    def test_known_value(self) -> None:
        """Test logits [1, 0] with label 0."""
        assert theta_grad_ce(Tensor([1.0, 0.0]), 0).item() == pytest.approx(-0.268941, abs=1e-6)

    @pytest.mark.parametrize("seed", range(ORACLE_INSTANCES))
    def test_finite_difference(self, seed: int) -> None:
        """Test against central differences in theta on random logits."""
        rng = np.random.default_rng(seed)
        rows, num_classes = rng.integers(1, 6), rng.integers(2, 6)
        logits = rng.normal(scale=2.0, size=(rows, num_classes))
        y = rng.integers(0, num_classes, size=rows)
        theta = rng.uniform(0.5, 1.5)

        def loss(value: float) -> np.ndarray:
            return cross_entropy(DummyTheta(value)(Tensor(logits)), y).data

        expected = (loss(theta + THETA_STEP) - loss(theta - THETA_STEP)) / (2 * THETA_STEP)
        closed = theta_grad_ce(Tensor(logits), y, DummyTheta(theta)).data
        np.testing.assert_allclose(closed, expected, atol=THETA_ATOL)

    def test_differentiable_in_logits(self, rng: np.random.Generator) -> None:
        """Test gradients of the squared derivative in the logits."""
        y = np.array([0, 2])
        assert_gradients(
            lambda z: theta_grad_ce(z, y).square().mean(), [rng.normal(size=(2, 3))]
        )

    def test_penalty_forms(self) -> None:
        """Test every reduction on a fixed vector."""
        grads = Tensor([1.0, -3.0])
        assert environment_penalty(grads, PenaltyForm.PER_SAMPLE_SQUARED).item() == 5.0
        assert environment_penalty(grads, PenaltyForm.MEAN_SQUARED).item() == 1.0
        assert environment_penalty(grads, PenaltyForm.MEAN_ABS).item() == 1.0
        assert environment_penalty(grads, PenaltyForm.PER_SAMPLE_ABS).item() == 2.0


class TestIrmLoss:
    """Test the environment-summed objective."""

    @pytest.fixture
    def model(self, rng: np.random.Generator) -> Linear:
        """Linear classifier on the tiny observations."""
        return Linear(8, 3, rng=rng, name="f")

    def test_zero_penalty_is_summed_erm(self, model: Linear, tiny_splits: DatasetSplits) -> None:
        """Test that lambda 0 equals the sum of per-environment ERM bit for bit."""
        envs = split_environments(tiny_splits.train, EnvKind.BY_CONTEXT)
        with Tape() as tape:
            irm = irm_loss(model, envs, 0.0)
        irm_grads = tape.backward(irm, model.parameters())

        with Tape() as tape:
            total = erm_loss(model, envs[0])
            for env in envs[1:]:
                total = total + erm_loss(model, env)
        erm_grads = tape.backward(total, model.parameters())

        assert irm.item() == total.item()
        for param in model.parameters():
            assert irm_grads[param].data.tobytes() == erm_grads[param].data.tobytes()

    def test_penalty_increases_loss(self, model: Linear, tiny_splits: DatasetSplits) -> None:
        """Test that a positive weight adds a non-negative penalty."""
        envs = split_environments(tiny_splits.train, EnvKind.BY_CONTEXT)
        assert irm_loss(model, envs, 10.0).item() >= irm_loss(model, envs, 0.0).item()

    def test_gradient_with_penalty(self, rng: np.random.Generator) -> None:
        """Test gradients of the penalized objective in the weights."""
        x = rng.normal(size=(6, 4))
        y = np.array([0, 1, 2, 0, 1, 2])
        envs = split_environments(Batch(ids=np.arange(6), x=x, y=y, c=[0, 0, 0, 1, 1, 1]), EnvKind.BY_CONTEXT)

        def build(weight: Tensor) -> Tensor:
            return irm_loss(lambda inputs: Tensor(inputs) @ weight, envs, 2.0)

        assert_gradients(build, [rng.normal(size=(4, 3))])

    def test_invalid_arguments(self, model: Linear, tiny_splits: DatasetSplits) -> None:
        """Test environment count and penalty sign checks."""
        envs = split_environments(tiny_splits.train, EnvKind.BY_CONTEXT)
        with pytest.raises(ValueError, match="at least two environments"):
            irm_loss(model, envs[:1], 1.0)
        with pytest.raises(ValueError, match=">= 0"):
            irm_loss(model, envs, -1.0)


class TestWeightedErm:
    """Test inverse-probability weighted ERM."""

    def test_normalized_example(self) -> None:
        """Test CE [1, 3] with raw weights [1, 0.5]."""
        np.testing.assert_allclose(normalized_weights([1.0, 0.5]), [4 / 3, 2 / 3])
        # logits [0, a] with label 0 give CE log(1 + exp(a)); pick a for CE 1 and 3
        offsets = np.log(np.expm1(np.array([1.0, 3.0])))
        logits = Tensor(np.stack([np.zeros(2), offsets], axis=1))
        np.testing.assert_allclose(cross_entropy(logits, [0, 0]).data, [1.0, 3.0])
        assert weighted_ce(logits, [0, 0], [1.0, 0.5]).item() == pytest.approx(5 / 3)

    def test_uniform_weights_equal_erm(self, rng: np.random.Generator, tiny_splits: DatasetSplits) -> None:
        """Test that equal weights reduce to plain ERM."""
        model = Linear(8, 3, rng=rng)
        batch = tiny_splits.train.data
        weighted = ipw_erm_loss(model, batch, np.full(len(batch), 0.3)).item()
        assert weighted == pytest.approx(erm_loss(model, batch).item(), rel=1e-12)

    def test_table_lookup(self, rng: np.random.Generator) -> None:
        """Test weights looked up by sample id."""
        model = Linear(2, 2, rng=rng)
        batch = Batch(ids=[7, 3], x=rng.normal(size=(2, 2)), y=[0, 1], c=[0, 1])
        table = WeightTable.from_losses(
            np.array([3, 7]), np.array([1.0, 1.0]), np.array([1.0, 3.0]), Provenance.LFF
        )
        expected = weighted_ce(model(batch.x), batch.y, table.lookup(batch.ids)).item()
        assert ipw_erm_loss(model, batch, table).item() == expected

        missing = Batch(ids=[99], x=np.zeros((1, 2)), y=[0], c=[0])
        with pytest.raises(KeyError, match="99"):
            ipw_erm_loss(model, missing, table)

    def test_invalid_weights(self) -> None:
        """Test non-positive mean and mismatched counts."""
        with pytest.raises(ValueError, match="mean is not positive"):
            normalized_weights([0.0, 0.0])
        model = Linear(2, 2, rng=np.random.default_rng(0))
        batch = Batch(ids=[0, 1], x=np.zeros((2, 2)), y=[0, 1], c=[0, 1])
        with pytest.raises(ShapeError):
            ipw_erm_loss(model, batch, np.ones(3))

    def test_weight_function(self, rng: np.random.Generator) -> None:
        """Test weights computed from the detached per-sample CE and the batch ids."""
        model = Linear(2, 3, rng=rng)
        batch = Batch(ids=[4, 9, 2], x=rng.normal(size=(3, 2)), y=[0, 2, 1], c=[0, 0, 1])
        seen = {}

        def weights(ce_main: np.ndarray, ids: np.ndarray) -> np.ndarray:
            seen["ce"], seen["ids"] = ce_main, ids
            return 1.0 / (1.0 + ce_main)

        loss = ipw_erm_loss(model, batch, weights).item()
        ce = cross_entropy(model(batch.x), batch.y).data
        np.testing.assert_array_equal(seen["ids"], [4, 9, 2])
        np.testing.assert_array_equal(seen["ce"], ce)
        assert loss == weighted_ce(model(batch.x), batch.y, 1.0 / (1.0 + ce)).item()


class TestParameterGradients:
    """Test loss gradients in the parameters of small random networks."""

    @pytest.mark.parametrize("seed", range(ORACLE_INSTANCES))
    def test_erm(self, seed: int) -> None:
        """Test mean cross entropy."""
        model, batch = random_problem(seed)
        assert_parameter_gradients(lambda: erm_loss(model, batch), [model])

    @pytest.mark.parametrize("seed", range(ORACLE_INSTANCES))
    def test_gce(self, seed: int) -> None:
        """Test generalized cross entropy for a random exponent."""
        model, batch = random_problem(seed)
        q = np.random.default_rng(seed).uniform(0.1, 1.0)
        assert_parameter_gradients(
            lambda: gce_from_logits(model(batch.x), batch.y, q).mean(), [model]
        )

    @pytest.mark.parametrize("seed", range(ORACLE_INSTANCES))
    def test_irm(self, seed: int) -> None:
        """Test the penalized objective with every penalty form in turn."""
        model, batch = random_problem(seed)
        envs = split_environments(batch, EnvKind.BY_CONTEXT)
        form = list(PenaltyForm)[seed % len(PenaltyForm)]
        assert_parameter_gradients(lambda: irm_loss(model, envs, 2.0, form=form), [model])

    @pytest.mark.parametrize("seed", range(ORACLE_INSTANCES))
    def test_ipw_erm(self, seed: int) -> None:
        """Test weighted ERM with random raw weights."""
        model, batch = random_problem(seed)
        weights = np.random.default_rng(seed).uniform(0.05, 1.0, size=len(batch))
        assert_parameter_gradients(lambda: ipw_erm_loss(model, batch, weights), [model])
