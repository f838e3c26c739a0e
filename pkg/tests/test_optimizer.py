import math

import numpy as np
import pytest

from volfit.core.autodiff import ParamStore
from volfit.core.errors import NonFiniteGradientError, ShapeError
from volfit.schemas.config import TrainConfig
from volfit.services.optimizer import AdamState, adam_step


def reference_adam(theta, grad, steps, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Scalar Adam written out step by step; returns the trajectory"""
    m = v = 0.0
    trajectory = []
    for t in range(1, steps + 1):
        g = grad(theta)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
        trajectory.append(theta)
    return trajectory


def test_adam_rates_follow_parameter_groups():
    state = AdamState.from_config(TrainConfig(learning_rate=1e-4, volume_learning_rate=1e-2))
    assert state.rate("network") == 1e-4
    assert state.rate("volume") == 1e-2
    assert state.rate("background") == 1e-1
    assert state.rate("unknown") == 1e-4


def test_first_adam_step_moves_by_the_learning_rate():
    store = ParamStore(dtype=np.dtype(np.float64))
    store.add("w", np.array([1.0, 1.0, 1.0]), "network")
    state = AdamState(learning_rates={"network": 0.1})
    adam_step(store, state, {"w": np.array([2.0, -0.5, 0.0])})
    assert store["w"] == pytest.approx([0.9, 1.1, 1.0], abs=1e-6)
    assert state.step == 1


def test_adam_rejects_non_finite_gradients():
    store = ParamStore(dtype=np.dtype(np.float64))
    store.add("w", np.zeros(2), "network")
    state = AdamState(learning_rates={"network": 0.1})
    with pytest.raises(NonFiniteGradientError):
        adam_step(store, state, {"w": np.array([np.inf, 0.0])})
    assert state.step == 0
    with pytest.raises(ShapeError):
        adam_step(store, state, {"w": np.zeros(3)})


def test_adam_leaves_frozen_parameters_alone():
    store = ParamStore(dtype=np.dtype(np.float64))
    store.add("w", np.zeros(2), "network")
    store.add("gain", np.ones(3), "color", frozen=True)
    adam_step(store, AdamState(learning_rates={"network": 0.1}), {"w": np.ones(2)})
    assert np.array_equal(store["gain"], np.ones(3))


@pytest.mark.parametrize("start", [1.5, -0.3, 0.02])
def test_ten_steps_on_a_quadratic_follow_the_reference(start):
    store = ParamStore(dtype=np.dtype(np.float64))
    store.add("theta", np.array([start]), "network")
    state = AdamState(learning_rates={"network": 0.05})
    trajectory = []
    for _ in range(10):
        adam_step(store, state, {"theta": 2.0 * store["theta"]})
        trajectory.append(float(store["theta"][0]))
    expected = reference_adam(start, lambda theta: 2.0 * theta, 10, 0.05)
    assert state.step == 10
    assert np.allclose(trajectory, expected, rtol=0.0, atol=1e-12)
