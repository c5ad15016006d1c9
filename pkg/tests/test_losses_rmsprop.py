import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.nn_layers.layers import softmax
from src.objective_opt.losses import LossValue, cross_entropy, joint_objective, one_hot, squared_loss
from src.objective_opt.rmsprop import RmspropState, rmsprop_step
from src.tensor_core.errors import ArgumentError, DimensionError, TrainingError
from src.tensor_core.rng import Rng
from tests.gradcheck import assert_gradient


class TestCrossEntropy:
    def test_exact_prediction_has_zero_loss(self):
        onehot = one_hot(np.array([2, 0]), 3)
        loss, _ = cross_entropy(onehot.copy(), onehot)
        assert loss.scalar == 0.0
        assert loss.batch_size == 2

    def test_uniform_prediction(self):
        loss, _ = cross_entropy(np.full((4, 10), 0.1), one_hot(np.arange(4), 10))
        assert loss.scalar == pytest.approx(math.log(10), abs=1e-6)

    def test_zero_probability_is_clamped(self):
        loss, _ = cross_entropy(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
        assert loss.scalar == pytest.approx(-math.log(1e-12))

    def test_malformed_onehot(self):
        with pytest.raises(ArgumentError):
            cross_entropy(np.full((1, 3), 1 / 3), np.array([[1.0, 1.0, 0.0]]))
        with pytest.raises(ArgumentError):
            one_hot(np.array([3]), 3)

    def test_logit_gradient_matches_finite_differences(self):
        rng = Rng(1)
        logits = rng.normal(0, 1, (3, 4))
        onehot = one_hot(np.array([0, 3, 1]), 4)
        _, grad = cross_entropy(softmax(logits), onehot)
        assert_gradient(grad, lambda: cross_entropy(softmax(logits), onehot)[0].scalar, logits)


class TestSquaredLoss:
    def test_zero_and_unit_offset(self):
        target = Rng(2).random((3, 1, 4, 5))
        assert squared_loss(target.copy(), target)[0].scalar == 0.0
        loss, _ = squared_loss(target + 1.0, target)
        assert loss.scalar == pytest.approx(20.0)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            squared_loss(np.zeros((2, 3)), np.zeros((2, 4)))

    def test_gradient_matches_finite_differences(self):
        rng = Rng(3)
        recon, target = rng.normal(0, 1, (2, 6)), rng.normal(0, 1, (2, 6))
        _, grad = squared_loss(recon, target)
        assert_gradient(grad, lambda: squared_loss(recon, target)[0].scalar, recon)


class TestJointObjective:
    def test_endpoints_and_midpoint(self):
        lc, lr = LossValue(2.0, 4), LossValue(4.0, 4)
        assert joint_objective(lc, lr, 1.0) == 2.0
        assert joint_objective(lc, lr, 0.0) == 4.0
        assert joint_objective(lc, lr, 0.5) == 3.0

    def test_lambda_out_of_range(self):
        with pytest.raises(ArgumentError):
            joint_objective(LossValue(1.0, 1), LossValue(1.0, 1), 1.5)

    def test_non_finite_loss_is_a_training_error(self):
        with pytest.raises(TrainingError):
            LossValue(float("nan"), 2)


class TestRmsprop:
    def test_zero_gradient_only_decays(self):
        params = {"w": np.ones(3)}
        state = RmspropState(params)
        state.accumulators["w"][:] = 0.5
        rmsprop_step(state, params, {"w": np.zeros(3)})
        assert_array_equal(params["w"], np.ones(3))
        assert_allclose(state.accumulators["w"], np.full(3, 0.45))

    def test_first_step_closed_form(self):
        params = {"w": np.zeros(1)}
        state = RmspropState(params, learning_rate=1e-4, decay=0.9, epsilon=1e-8)
        rmsprop_step(state, params, {"w": np.ones(1)}, effective_scale=1.0)
        assert_allclose(state.accumulators["w"], [0.1])
        assert_allclose(-params["w"], [1e-4 / (math.sqrt(0.1) + 1e-8)])
        assert -params["w"][0] == pytest.approx(3.1623e-4, rel=1e-4)

    def test_zero_scale_leaves_params_bit_identical(self):
        params = {"w": Rng(4).random(5)}
        before = params["w"].copy()
        state = RmspropState(params)
        rmsprop_step(state, params, {"w": Rng(5).normal(0, 1, 5)}, effective_scale=0.0)
        assert_array_equal(params["w"], before)
        assert state.accumulators["w"].any()

    def test_non_finite_gradient_names_parameter(self):
        params = {"enc.fc4.weights": np.zeros(2)}
        state = RmspropState(params)
        with pytest.raises(TrainingError, match="enc.fc4.weights"):
            rmsprop_step(state, params, {"enc.fc4.weights": np.array([0.0, np.inf])})

    def test_states_are_independent(self):
        params = {"w": np.zeros(2)}
        first, second = RmspropState(params), RmspropState(params)
        rmsprop_step(first, params, {"w": np.ones(2)})
        assert not second.accumulators["w"].any()

    @pytest.mark.parametrize("c", [0.1, 10.0])
    def test_step_is_invariant_to_gradient_scale(self, c):
        def settled_step(grad):
            params = {"w": np.zeros_like(grad)}
            state = RmspropState(params, learning_rate=1e-4)
            for _ in range(50):
                rmsprop_step(state, params, {"w": grad}, effective_scale=0.5)
            before = params["w"].copy()
            rmsprop_step(state, params, {"w": grad}, effective_scale=0.5)
            return params["w"] - before, state.accumulators["w"]

        grad = Rng(8).normal(0, 1, 6)
        grad[np.abs(grad) < 0.1] = 0.1
        step, acc = settled_step(grad)
        scaled_step, scaled_acc = settled_step(c * grad)
        assert_allclose(scaled_acc, c * c * acc, rtol=1e-9)
        assert_allclose(scaled_step, step, rtol=0.01)
        assert np.all(np.abs(scaled_step) <= 1e-4 * 0.5 * 1.01)

    def test_invalid_hyper_parameters(self):
        with pytest.raises(ArgumentError):
            RmspropState({"w": np.zeros(1)}, decay=1.0)
        with pytest.raises(ArgumentError):
            RmspropState({"w": np.zeros(1)}, learning_rate=0.0)
