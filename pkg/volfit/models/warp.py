"""Inverse warp fields: a global affine followed by a spatial mixture of affine warps.

Each affine warp is parameterized by a 10-vector `[quat(4), scale(3),
trans(3)]` and maps A(x) = R(q) (s * (x - t)). Mixture weights come from
exp-activated weight volumes sampled with clamp_to_edge, either at the
warped points A_i(x) ("warped" space) or at x itself ("world" space).
"""
import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from volfit.core.errors import DegenerateMixtureError, DegenerateParameterError, ShapeError
from volfit.models.enums import Boundary, MixtureSpace
from volfit.models.grid import adjoint_each, sample_each

logger = logging.getLogger(__name__)

AFFINE_SIZE = 10
QUAT_EPS = 1e-8
MIXTURE_EPS = 1e-30


@dataclass(eq=False)
class AffineWarp:
    quat: np.ndarray  # (4,) unnormalized, (w, x, y, z)
    scale: np.ndarray  # (3,)
    trans: np.ndarray  # (3,)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.quat, self.scale, self.trans])

    @classmethod
    def from_vector(cls, params: np.ndarray) -> "AffineWarp":
        params = np.asarray(params)
        return cls(quat=params[0:4], scale=params[4:7], trans=params[7:10])

    @classmethod
    def identity(cls, dtype=np.float64) -> "AffineWarp":
        return cls.from_vector(identity_params(dtype))


@dataclass(eq=False)
class WarpField:
    global_params: np.ndarray  # (10,)
    component_params: np.ndarray  # (N_w, 10)
    weights: np.ndarray  # (N_w, D_w, D_w, D_w), post-exp
    mixture_space: MixtureSpace = MixtureSpace.WARPED

    def __post_init__(self):
        if self.global_params.shape != (AFFINE_SIZE,):
            raise ShapeError(f"Global warp must have {AFFINE_SIZE} parameters, got {self.global_params.shape}")
        if self.component_params.ndim != 2 or self.component_params.shape[1] != AFFINE_SIZE:
            raise ShapeError(f"Warp components must be N x {AFFINE_SIZE}, got {self.component_params.shape}")
        if self.weights.ndim != 4 or self.weights.shape[0] != self.component_params.shape[0]:
            raise ShapeError(
                f"Weight volumes {self.weights.shape} do not match {self.component_params.shape[0]} components"
            )

    @property
    def n_components(self) -> int:
        return self.component_params.shape[0]

    @property
    def global_warp(self) -> AffineWarp:
        return AffineWarp.from_vector(self.global_params)

    @property
    def components(self) -> List[AffineWarp]:
        return [AffineWarp.from_vector(p) for p in self.component_params]


@dataclass(eq=False)
class WarpFieldGrads:
    global_params: np.ndarray
    component_params: np.ndarray
    weights: np.ndarray


# --- Rotations ---

def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Normalize q = (w, x, y, z) and convert it to a rotation matrix (..., 3, 3)"""
    q = np.asarray(q)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm <= QUAT_EPS):
        raise DegenerateParameterError("Quaternion norm is too close to zero to define a rotation")
    w, x, y, z = np.moveaxis(q / norm, -1, 0)
    rows = [
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ]
    return np.stack([np.stack(row, axis=-1) for row in rows], axis=-2)


def quat_to_rotmat_vjp(q: np.ndarray, grad_rot: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the unnormalized quaternion given dL/dR"""
    q = np.asarray(q)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    unit = q / norm
    w, x, y, z = np.moveaxis(unit, -1, 0)
    g = grad_rot
    g00, g01, g02 = g[..., 0, 0], g[..., 0, 1], g[..., 0, 2]
    g10, g11, g12 = g[..., 1, 0], g[..., 1, 1], g[..., 1, 2]
    g20, g21, g22 = g[..., 2, 0], g[..., 2, 1], g[..., 2, 2]
    gw = 2 * (-z * g01 + y * g02 + z * g10 - x * g12 - y * g20 + x * g21)
    gx = 2 * (y * g01 + z * g02 + y * g10 - 2 * x * g11 - w * g12 + z * g20 + w * g21 - 2 * x * g22)
    gy = 2 * (-2 * y * g00 + x * g01 + w * g02 + x * g10 + z * g12 - w * g20 + z * g21 - 2 * y * g22)
    gz = 2 * (-2 * z * g00 - w * g01 + x * g02 + w * g10 - 2 * z * g11 + y * g12 + x * g20 + y * g21)
    grad_unit = np.stack([gw, gx, gy, gz], axis=-1)
    # project out the radial direction of the normalization
    radial = np.sum(grad_unit * unit, axis=-1, keepdims=True)
    return (grad_unit - unit * radial) / norm


# --- Single affine warps ---

def eval_affine(warp: AffineWarp, x: np.ndarray) -> np.ndarray:
    """A(x) = R (s * (x - t)) for points x (..., 3)"""
    rotation = quat_to_rotmat(warp.quat)
    return (warp.scale * (np.asarray(x) - warp.trans)) @ rotation.T


def _affine_forward(params: np.ndarray, x: np.ndarray) -> np.ndarray:
    return eval_affine(AffineWarp.from_vector(params), x)


def _affine_vjp(params: np.ndarray, x: np.ndarray, grad_y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Reverse mode of one affine warp over points x (M, 3); returns (grad params (10,), grad x (M, 3))"""
    warp = AffineWarp.from_vector(params)
    rotation = quat_to_rotmat(warp.quat)
    shifted = x - warp.trans
    scaled = warp.scale * shifted
    grad_scaled = grad_y @ rotation
    grad_rot = grad_y.T @ scaled
    grad_shifted = grad_scaled * warp.scale
    grad_params = np.concatenate([
        quat_to_rotmat_vjp(warp.quat, grad_rot),
        np.sum(grad_scaled * shifted, axis=0),
        -np.sum(grad_shifted, axis=0),
    ])
    return grad_params, grad_shifted


# --- Mixture field ---

def _mixture_forward(wf: WarpField, x: np.ndarray):
    x_global = _affine_forward(wf.global_params, x)
    warped = np.stack([_affine_forward(p, x_global) for p in wf.component_params], axis=1)  # (M, N, 3)
    if MixtureSpace(wf.mixture_space) == MixtureSpace.WARPED:
        lookup = warped
    else:
        lookup = np.broadcast_to(x_global[:, None, :], warped.shape)
    weights = sample_each(wf.weights, lookup, Boundary.CLAMP_TO_EDGE)  # (M, N)
    total = np.sum(weights, axis=1, keepdims=True)
    if np.any(total < MIXTURE_EPS):
        raise DegenerateMixtureError("Warp mixture weights underflowed to zero")
    mixture = weights / total
    y = np.sum(mixture[:, :, None] * warped, axis=1)
    return y, mixture, x_global, warped, lookup, total


def eval_warp_field(wf: WarpField, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Evaluate the inverse warp at x (..., 3); returns (y (..., 3), mixture weights (..., N_w))"""
    x = np.asarray(x, dtype=wf.weights.dtype)
    lead = x.shape[:-1]
    y, mixture, *_ = _mixture_forward(wf, x.reshape(-1, 3))
    return y.reshape(lead + (3,)), mixture.reshape(lead + (wf.n_components,))


def warp_field_vjp(wf: WarpField, x: np.ndarray, grad_y: np.ndarray) -> Tuple[np.ndarray, WarpFieldGrads]:
    """Reverse mode of eval_warp_field w.r.t. x and every field parameter"""
    x = np.asarray(x, dtype=wf.weights.dtype)
    lead = x.shape[:-1]
    points = x.reshape(-1, 3)
    grad_y = np.asarray(grad_y, dtype=wf.weights.dtype).reshape(-1, 3)
    y, mixture, x_global, warped, lookup, total = _mixture_forward(wf, points)

    grad_warped = mixture[:, :, None] * grad_y[:, None, :]
    grad_mixture = np.einsum("mk,mnk->mn", grad_y, warped)
    grad_weights_at = (grad_mixture - np.sum(mixture * grad_mixture, axis=1, keepdims=True)) / total
    grad_volumes, grad_lookup = adjoint_each(wf.weights, np.ascontiguousarray(lookup), grad_weights_at,
                                             Boundary.CLAMP_TO_EDGE)

    grad_x_global = np.zeros_like(x_global)
    if MixtureSpace(wf.mixture_space) == MixtureSpace.WARPED:
        grad_warped = grad_warped + grad_lookup
    else:
        grad_x_global += np.sum(grad_lookup, axis=1)

    grad_components = np.zeros_like(wf.component_params)
    for i, params in enumerate(wf.component_params):
        grad_components[i], grad_in = _affine_vjp(params, x_global, grad_warped[:, i])
        grad_x_global += grad_in
    grad_global, grad_x = _affine_vjp(wf.global_params, points, grad_x_global)
    return grad_x.reshape(lead + (3,)), WarpFieldGrads(grad_global, grad_components, grad_volumes)


# --- Initialization ---

def identity_params(dtype=np.float64) -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0], dtype=dtype)


def _balanced_factors(n: int) -> Tuple[int, int, int]:
    best = (n, 1, 1)
    for a in range(1, n + 1):
        if n % a:
            continue
        for b in range(1, n // a + 1):
            if (n // a) % b:
                continue
            c = n // (a * b)
            candidate = tuple(sorted((a, b, c), reverse=True))
            if candidate[0] - candidate[2] < best[0] - best[2]:
                best = candidate
    return best


def lattice_translations(n: int) -> np.ndarray:
    """n points on a regular lattice spanning [-0.5, 0.5]^3 (the origin when an axis has one point)"""
    counts = _balanced_factors(n)
    axes = [np.linspace(-0.5, 0.5, k) if k > 1 else np.zeros(1) for k in counts]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    return grid


def init_warp_params(n_components: int, rng: np.random.Generator, quat_noise: float = 0.01,
                     dtype=np.float64) -> Tuple[np.ndarray, np.ndarray]:
    """Global and component parameters near the identity field"""
    global_params = identity_params(dtype)
    components = np.tile(identity_params(dtype), (n_components, 1))
    components[:, 0:4] += quat_noise * rng.standard_normal((n_components, 4))
    components[:, 7:10] = lattice_translations(n_components)
    return global_params, components.astype(dtype)
