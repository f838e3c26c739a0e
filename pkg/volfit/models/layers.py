"""Taped elementary operations used by the encoder and decoders.

Each function reads its inputs from `tape.values` by name, stores its
output under `out` and records the adjoint.
"""
from typing import Dict, Sequence, Tuple

import numpy as np

from volfit.core.autodiff import Tape
from volfit.core.errors import ShapeError


def dense(tape: Tape, out: str, x: str, weight: str, bias: str) -> np.ndarray:
    """y = W x + b for a single input vector"""
    xv, wv, bv = tape.values[x], tape.values[weight], tape.values[bias]
    if wv.shape[1] != xv.shape[0] or wv.shape[0] != bv.shape[0]:
        raise ShapeError(f"Dense layer '{weight}' of shape {wv.shape} cannot take input of length {xv.shape[0]}")
    y = wv @ xv + bv

    def vjp(gy):
        return wv.T @ gy, np.outer(gy, xv), gy

    tape.record((x, weight, bias), {out: y}, vjp)
    return y


def leaky_relu(tape: Tape, out: str, x: str, slope: float) -> np.ndarray:
    xv = tape.values[x]
    factor = np.where(xv > 0, 1.0, slope).astype(xv.dtype)
    y = xv * factor

    def vjp(gy):
        return (gy * factor,)

    tape.record((x,), {out: y}, vjp)
    return y


def softplus(tape: Tape, out: str, x: str) -> np.ndarray:
    xv = tape.values[x]
    y = np.logaddexp(0.0, xv).astype(xv.dtype)
    sigmoid = (0.5 * (1.0 + np.tanh(0.5 * xv))).astype(xv.dtype)

    def vjp(gy):
        return (gy * sigmoid,)

    tape.record((x,), {out: y}, vjp)
    return y


def exp(tape: Tape, out: str, x: str) -> np.ndarray:
    y = np.exp(tape.values[x])

    def vjp(gy):
        return (gy * y,)

    tape.record((x,), {out: y}, vjp)
    return y


def concat(tape: Tape, out: str, inputs: Sequence[str]) -> np.ndarray:
    """Concatenate flattened inputs into one vector"""
    shapes = [tape.values[name].shape for name in inputs]
    sizes = [int(np.prod(shape)) for shape in shapes]
    y = np.concatenate([tape.values[name].ravel() for name in inputs])
    offsets = np.cumsum([0] + sizes)

    def vjp(gy):
        return tuple(gy[offsets[i]:offsets[i + 1]].reshape(shapes[i]) for i in range(len(inputs)))

    tape.record(tuple(inputs), {out: y}, vjp)
    return y


def reshape(tape: Tape, out: str, x: str, shape: Tuple[int, ...]) -> np.ndarray:
    xv = tape.values[x]
    y = xv.reshape(shape)

    def vjp(gy):
        return (gy.reshape(xv.shape),)

    tape.record((x,), {out: y}, vjp)
    return y


def split(tape: Tape, x: str, outputs: Dict[str, Tuple[int, ...]]) -> Dict[str, np.ndarray]:
    """Split a vector into consecutive pieces with the given shapes"""
    xv = tape.values[x]
    sizes = [int(np.prod(shape)) for shape in outputs.values()]
    if sum(sizes) != xv.size:
        raise ShapeError(f"Cannot split '{x}' of size {xv.size} into pieces totalling {sum(sizes)}")
    offsets = np.cumsum([0] + sizes)
    pieces = {
        name: xv[offsets[i]:offsets[i + 1]].reshape(shape)
        for i, (name, shape) in enumerate(outputs.items())
    }

    def vjp(*grads):
        return (np.concatenate([g.ravel() for g in grads]),)

    tape.record((x,), pieces, vjp)
    return pieces
