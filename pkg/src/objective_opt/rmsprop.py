"""RMSprop: gradients divided by a running root-mean-square of past gradients."""
from typing import Dict, Mapping

import numpy as np

from src.tensor_core.errors import ArgumentError, DimensionError, TrainingError
from src.tensor_core.tensor_ops import Tensor


class RmspropState:
    """Accumulators for a named group of parameters.

    Each pipeline of the alternating trainer owns its own state, so the shared
    encoder has one accumulator per pipeline.
    """

    def __init__(
        self,
        params: Mapping[str, Tensor],
        learning_rate: float = 1e-4,
        decay: float = 0.9,
        epsilon: float = 1e-8,
    ):
        if learning_rate <= 0:
            raise ArgumentError(f"learning rate must be positive, got {learning_rate}")
        if not 0.0 < decay < 1.0:
            raise ArgumentError(f"decay must lie in (0, 1), got {decay}")
        if epsilon <= 0:
            raise ArgumentError(f"epsilon must be positive, got {epsilon}")
        self.learning_rate = learning_rate
        self.decay = decay
        self.epsilon = epsilon
        self.accumulators: Dict[str, Tensor] = {
            name: np.zeros_like(value) for name, value in params.items()
        }


def rmsprop_step(
    state: RmspropState,
    params: Dict[str, Tensor],
    grads: Mapping[str, Tensor],
    effective_scale: float = 1.0,
) -> None:
    """Update ``params`` and ``state`` in place.

    ``effective_scale`` multiplies the step, not the accumulated gradient: the
    alternating trainer passes lambda or (1 - lambda) here.
    """
    for name, grad in grads.items():
        if name not in state.accumulators:
            raise DimensionError(f"no accumulator for parameter '{name}'")
        param = params[name]
        acc = state.accumulators[name]
        if grad.shape != param.shape or acc.shape != param.shape:
            raise DimensionError(
                f"parameter '{name}' {param.shape}, gradient {grad.shape} and accumulator {acc.shape} disagree"
            )
        if not np.all(np.isfinite(grad)):
            raise TrainingError(f"non-finite gradient for parameter '{name}'")
        acc *= state.decay
        acc += (1.0 - state.decay) * grad * grad
        if effective_scale != 0.0:
            param -= state.learning_rate * effective_scale * grad / (np.sqrt(acc) + state.epsilon)
