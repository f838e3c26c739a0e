"""Reverse-mode differentiation for the fitting pipeline.

Every differentiable operation is written as a forward function plus a
hand-derived vector-Jacobian product. Forward code records nodes on a
`Tape` (a Wengert list over named arrays); `Tape.backward` replays the
recorded nodes in exact reverse order and accumulates adjoints by name.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from volfit.core.errors import NonDeterminismError, NonFiniteGradientError, ShapeError

logger = logging.getLogger(__name__)

Vjp = Callable[..., Sequence[Optional[np.ndarray]]]


@dataclass
class ParamStore:
    """Named parameter tensors with matching gradient tensors"""

    params: Dict[str, np.ndarray] = field(default_factory=dict)
    grads: Dict[str, np.ndarray] = field(default_factory=dict)
    groups: Dict[str, str] = field(default_factory=dict)
    frozen: Set[str] = field(default_factory=set)
    dtype: np.dtype = np.dtype(np.float32)

    def add(self, name: str, value: np.ndarray, group: str, frozen: bool = False) -> None:
        self.params[name] = np.array(value, dtype=self.dtype)
        self.grads[name] = np.zeros_like(self.params[name])
        self.groups[name] = group
        if frozen:
            self.frozen.add(name)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> List[str]:
        return list(self.params)

    def trainable(self) -> List[str]:
        return [name for name in self.params if name not in self.frozen]

    def zero_grad(self) -> None:
        for name, value in self.params.items():
            self.grads[name] = np.zeros_like(value)

    def assign(self, name: str, value: np.ndarray) -> None:
        """Overwrite a parameter, keeping its registered shape"""
        value = np.asarray(value, dtype=self.dtype)
        if value.shape != self.params[name].shape:
            raise ShapeError(
                f"Tensor '{name}' has shape {self.params[name].shape}, got {value.shape}"
            )
        self.params[name] = value.copy()


@dataclass
class _Node:
    inputs: Tuple[str, ...]
    outputs: Tuple[str, ...]
    vjp: Vjp


class Tape:
    """Recorded operation sequence for one loss evaluation"""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.values: Dict[str, np.ndarray] = {}
        self._nodes: List[_Node] = []

    def watch(self, store: ParamStore) -> None:
        """Expose parameter tensors to recorded operations by name"""
        self.values.update(store.params)

    def constant(self, name: str, value) -> np.ndarray:
        value = np.asarray(value, dtype=self.dtype)
        self.values[name] = value
        return value

    def record(self, inputs: Iterable[str], outputs: Mapping[str, np.ndarray], vjp: Vjp) -> None:
        """Store outputs and the adjoint mapping output gradients to input gradients"""
        self.values.update(outputs)
        self._nodes.append(_Node(tuple(inputs), tuple(outputs), vjp))

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, seeds: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
        delta: Dict[str, np.ndarray] = {name: np.asarray(g, dtype=self.dtype) for name, g in seeds.items()}
        for node in reversed(self._nodes):
            upstream = [delta.get(name) for name in node.outputs]
            if all(g is None for g in upstream):
                continue
            upstream = [
                np.zeros_like(self.values[name]) if g is None else g
                for name, g in zip(node.outputs, upstream)
            ]
            grads = node.vjp(*upstream)
            for name, g in zip(node.inputs, grads):
                if g is None:
                    continue
                if name in delta:
                    delta[name] = delta[name] + g
                else:
                    delta[name] = g
        return delta


def backward(tape: Tape, store: ParamStore, seeds: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """Accumulate dLoss/dθ for every parameter in the store"""
    delta = tape.backward(seeds)
    grads = collect_gradients(delta, store)
    for name, g in grads.items():
        store.grads[name] = store.grads[name] + g
    return grads


def collect_gradients(delta: Mapping[str, np.ndarray], store: ParamStore) -> Dict[str, np.ndarray]:
    """Pick parameter adjoints out of a delta map, checking they are finite"""
    grads: Dict[str, np.ndarray] = {}
    for name in store.trainable():
        g = delta.get(name)
        if g is None:
            g = np.zeros_like(store.params[name])
        g = np.asarray(g, dtype=store.dtype).reshape(store.params[name].shape)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
        grads[name] = g
    return grads


# --- Finite-difference verification ---

Objective = Callable[[ParamStore], Tuple[float, Dict[str, np.ndarray]]]


@dataclass
class TensorCheck:
    name: str
    max_rel_err: float
    checked: int
    excluded: int
    passed: bool


@dataclass
class GradCheckReport:
    tol: float
    entries: List[TensorCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(entry.passed for entry in self.entries)

    @property
    def max_rel_err(self) -> float:
        return max((entry.max_rel_err for entry in self.entries), default=0.0)

    def format(self) -> str:
        lines = [f"# gradcheck tol={self.tol:g}", "tensor max_rel_err checked excluded status"]
        for entry in self.entries:
            status = "ok" if entry.passed else "FAIL"
            lines.append(
                f"{entry.name} {entry.max_rel_err:.3e} {entry.checked} {entry.excluded} {status}"
            )
        lines.append(f"# overall {'ok' if self.passed else 'FAIL'} max_rel_err={self.max_rel_err:.3e}")
        return "\n".join(lines)


def _is_kink(f_plus: float, f_zero: float, f_minus: float, eps: float, kink_tol: float) -> bool:
    # one-sided slopes disagree by more than smooth curvature allows
    right = (f_plus - f_zero) / eps
    left = (f_zero - f_minus) / eps
    return abs(right - left) > kink_tol * max(abs(right), abs(left)) + 1e-7


def finite_diff_check(
    objective: Objective,
    store: ParamStore,
    eps: float = 1e-4,
    tol: float = 1e-4,
    max_coords: int = 64,
    probes: int = 4,
    kink_tol: float = 0.05,
    names: Optional[Sequence[str]] = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    Tensors with at most `max_coords` entries are checked coordinate by
    coordinate, larger ones along `probes` random unit directions. Points
    where the left and right slopes disagree (clamps, cell faces, min())
    are excluded from the tolerance comparison and counted in the report.
    """
    if store.dtype != np.float64:
        logger.warning("finite_diff_check on %s parameters; use float64 for strict tolerances", store.dtype)

    base, analytic = objective(store)
    again, _ = objective(store)
    if base != again:
        raise NonDeterminismError(
            f"Objective is not deterministic: {base!r} != {again!r} on identical inputs"
        )

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)

    def evaluate_along(name: str, direction: np.ndarray) -> Tuple[float, float]:
        original = store.params[name]
        store.params[name] = original + eps * direction
        f_plus, _ = objective(store)
        store.params[name] = original - eps * direction
        f_minus, _ = objective(store)
        store.params[name] = original
        return f_plus, f_minus

    for name in names or store.trainable():
        value = store.params[name]
        grad = np.asarray(analytic.get(name, np.zeros_like(value)), dtype=np.float64).reshape(value.shape)
        directions: List[np.ndarray] = []
        if value.size <= max_coords:
            for index in range(value.size):
                direction = np.zeros(value.size, dtype=store.dtype)
                direction[index] = 1.0
                directions.append(direction.reshape(value.shape))
        else:
            for _ in range(probes):
                direction = rng.standard_normal(value.shape)
                directions.append((direction / np.linalg.norm(direction)).astype(store.dtype))

        analytic_values, numeric_values = [], []
        excluded = 0
        for direction in directions:
            f_plus, f_minus = evaluate_along(name, direction)
            if _is_kink(f_plus, base, f_minus, eps, kink_tol):
                excluded += 1
                continue
            numeric_values.append((f_plus - f_minus) / (2.0 * eps))
            analytic_values.append(float(np.sum(grad * direction)))

        if analytic_values:
            a = np.asarray(analytic_values)
            n = np.asarray(numeric_values)
            scale = max(np.max(np.abs(a)), np.max(np.abs(n)), 1e-8)
            rel = float(np.max(np.abs(a - n)) / scale)
        else:
            rel = 0.0
        # a tensor whose every direction sits on a kink was never compared
        verified = bool(analytic_values) or not directions
        if not verified:
            logger.warning("gradcheck %s: all %d directions excluded as kinks, gradient not verified",
                           name, excluded)
        report.entries.append(
            TensorCheck(name=name, max_rel_err=rel, checked=len(analytic_values), excluded=excluded,
                        passed=verified and rel < tol)
        )
        logger.debug("gradcheck %s rel_err=%.3e excluded=%d", name, rel, excluded)
    return report
