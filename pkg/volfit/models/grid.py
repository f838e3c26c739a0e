"""Dense voxel grids over the normalized cube [-1, 1]^3.

Layout is channel-major, z-major within a channel: `data[c, z, y, x]`.
Sample coordinate component 0 indexes x (the last axis), component 2
indexes z. A coordinate u in [-1, 1] maps to the continuous grid position
(u + 1)(D - 1)/2, so -1 and +1 land exactly on the first and last cells.
"""
from dataclasses import dataclass
from itertools import product
from typing import Tuple

import numpy as np

from volfit.core.errors import NonFiniteGridError, ShapeError
from volfit.models.enums import Boundary
from volfit.utils.validators import validate_finite


@dataclass(eq=False)
class VoxelGrid:
    data: np.ndarray  # (C, D, D, D)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 4 or len(set(self.data.shape[1:])) != 1:
            raise ShapeError(f"Voxel grid must be C x D x D x D, got {self.data.shape}")
        if not validate_finite(self.data):
            raise NonFiniteGridError(f"Voxel grid of shape {self.data.shape} has non-finite entries")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def resolution(self) -> int:
        return self.data.shape[1]


@dataclass
class _Stencil:
    """Cell lookup for a batch of points: corner indices, fractions and validity"""

    low: np.ndarray  # (M, 3) int
    high: np.ndarray  # (M, 3) int
    frac: np.ndarray  # (M, 3)
    valid: np.ndarray  # (M,) bool, False outside the domain under zero_pad
    slope: np.ndarray  # (M, 3) d(grid coordinate)/dx, zero on clamped axes


def _stencil(x: np.ndarray, resolution: int, boundary: Boundary) -> _Stencil:
    scale = 0.5 * (resolution - 1)
    inside = (x >= -1.0) & (x <= 1.0)
    g = np.clip((x + 1.0) * scale, 0.0, resolution - 1)
    low = np.clip(np.floor(g), 0, max(resolution - 2, 0)).astype(np.int64)
    high = np.minimum(low + 1, resolution - 1)
    frac = g - low
    if Boundary(boundary) == Boundary.ZERO_PAD:
        valid = np.all(inside, axis=-1)
        slope = np.full(x.shape, scale, dtype=x.dtype)
    else:
        valid = np.ones(x.shape[0], dtype=bool)
        slope = np.where(inside, scale, 0.0).astype(x.dtype)
    return _Stencil(low=low, high=high, frac=frac, valid=valid, slope=slope)


def _corners(stencil: _Stencil, resolution: int):
    """Yield (flat index, weight, d weight / d frac) for the 8 enclosing cells"""
    f = stencil.frac
    for bx, by, bz in product((0, 1), repeat=3):
        ix = stencil.high[:, 0] if bx else stencil.low[:, 0]
        iy = stencil.high[:, 1] if by else stencil.low[:, 1]
        iz = stencil.high[:, 2] if bz else stencil.low[:, 2]
        wx = f[:, 0] if bx else 1.0 - f[:, 0]
        wy = f[:, 1] if by else 1.0 - f[:, 1]
        wz = f[:, 2] if bz else 1.0 - f[:, 2]
        sx = 1.0 if bx else -1.0
        sy = 1.0 if by else -1.0
        sz = 1.0 if bz else -1.0
        flat = (iz * resolution + iy) * resolution + ix
        weight = wx * wy * wz
        dweight = np.stack([sx * wy * wz, sy * wx * wz, sz * wx * wy], axis=-1)
        yield flat, weight, dweight


def _flatten_points(data: np.ndarray, x: np.ndarray) -> Tuple[np.ndarray, tuple]:
    x = np.asarray(x, dtype=data.dtype)
    if x.shape[-1] != 3:
        raise ShapeError(f"Sample points must have 3 coordinates, got shape {x.shape}")
    return x.reshape(-1, 3), x.shape[:-1]


def sample_trilinear(grid: VoxelGrid, x: np.ndarray, boundary: Boundary = Boundary.ZERO_PAD) -> np.ndarray:
    """Trilinearly interpolate the grid at points x (..., 3); returns (..., C)"""
    data = grid.data
    points, lead = _flatten_points(data, x)
    resolution = grid.resolution
    stencil = _stencil(points, resolution, boundary)
    flat_data = data.reshape(grid.channels, -1)

    out = np.zeros((grid.channels, len(points)), dtype=data.dtype)
    for flat, weight, _ in _corners(stencil, resolution):
        out += weight * flat_data[:, flat]
    out = np.where(stencil.valid, out, 0.0)
    return out.T.reshape(lead + (grid.channels,))


def grid_adjoint_sample(
    grid: VoxelGrid, x: np.ndarray, upstream: np.ndarray, boundary: Boundary = Boundary.ZERO_PAD
) -> Tuple[np.ndarray, np.ndarray]:
    """Reverse mode of sample_trilinear.

    Returns the gradient w.r.t. the grid data (C, D, D, D), scattered with
    the interpolation weights, and the gradient w.r.t. the sample points
    (..., 3). Both are zero for points outside the domain under zero_pad.
    """
    data = grid.data
    points, lead = _flatten_points(data, x)
    upstream = np.asarray(upstream, dtype=data.dtype).reshape(-1, grid.channels)
    resolution = grid.resolution
    stencil = _stencil(points, resolution, boundary)
    upstream = np.where(stencil.valid[:, None], upstream, 0.0)
    flat_data = data.reshape(grid.channels, -1)
    size = resolution ** 3

    grad_grid = np.zeros((grid.channels, size), dtype=data.dtype)
    grad_frac = np.zeros(points.shape, dtype=data.dtype)
    for flat, weight, dweight in _corners(stencil, resolution):
        for c in range(grid.channels):
            grad_grid[c] += np.bincount(flat, weights=weight * upstream[:, c], minlength=size).astype(data.dtype)
        inner = np.sum(flat_data[:, flat].T * upstream, axis=-1)
        grad_frac += dweight * inner[:, None]
    grad_x = grad_frac * stencil.slope
    return grad_grid.reshape(data.shape), grad_x.reshape(lead + (3,))


def sample_each(data: np.ndarray, points: np.ndarray, boundary: Boundary) -> np.ndarray:
    """Sample G single-channel volumes (G, D, D, D), volume g at points[:, g] (M, G, 3); returns (M, G)"""
    return np.stack(
        [sample_trilinear(VoxelGrid(data[g:g + 1]), points[:, g], boundary)[:, 0] for g in range(data.shape[0])],
        axis=-1,
    )


def adjoint_each(
    data: np.ndarray, points: np.ndarray, upstream: np.ndarray, boundary: Boundary
) -> Tuple[np.ndarray, np.ndarray]:
    """Reverse mode of sample_each; returns (grad data (G, D, D, D), grad points (M, G, 3))"""
    grad_data = np.zeros_like(data)
    grad_points = np.zeros(points.shape, dtype=data.dtype)
    for g in range(data.shape[0]):
        grad_g, grad_p = grid_adjoint_sample(VoxelGrid(data[g:g + 1]), points[:, g], upstream[:, g:g + 1], boundary)
        grad_data[g] = grad_g[0]
        grad_points[:, g] = grad_p
    return grad_data, grad_points
