"""Adam with per-group learning rates."""
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from volfit.core.autodiff import ParamStore
from volfit.core.errors import NonFiniteGradientError, ShapeError
from volfit.schemas.config import TrainConfig


@dataclass
class AdamState:
    learning_rates: Dict[str, float]  # group -> rate
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_config(cls, config: TrainConfig) -> "AdamState":
        return cls(
            learning_rates={
                "network": config.learning_rate,
                "volume": config.volume_learning_rate,
                "background": config.background_learning_rate,
                "color": config.color_learning_rate,
            },
            beta1=config.beta1,
            beta2=config.beta2,
            eps=config.adam_eps,
        )

    def rate(self, group: str) -> float:
        return self.learning_rates.get(group, self.learning_rates["network"])


def adam_step(params: ParamStore, state: AdamState, grads: Optional[Mapping[str, np.ndarray]] = None) -> ParamStore:
    """One bias-corrected Adam update of every trainable tensor, in place"""
    grads = params.grads if grads is None else grads
    for name in params.trainable():
        g = np.asarray(grads[name])
        if g.shape != params.params[name].shape:
            raise ShapeError(f"Gradient of '{name}' has shape {g.shape}, parameter {params.params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)

    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for name in params.trainable():
        value = params.params[name]
        g = np.asarray(grads[name], dtype=value.dtype)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(value)
            v = np.zeros_like(value)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m.astype(value.dtype), v.astype(value.dtype)
        update = state.rate(params.groups[name]) * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        params.params[name] = (value - update).astype(value.dtype)
    return params
