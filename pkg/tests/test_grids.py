import numpy as np
import pytest

from volfit.core.errors import NonFiniteGridError, ShapeError
from volfit.models.enums import Boundary
from volfit.models.grid import VoxelGrid, grid_adjoint_sample, sample_trilinear


def linear_grid(d=3):
    """One channel holding f(x, y, z) = 1 + 2x - y + 0.5z at the voxel centers"""
    axis = np.linspace(-1.0, 1.0, d)
    z, y, x = np.meshgrid(axis, axis, axis, indexing="ij")
    return VoxelGrid((1.0 + 2.0 * x - y + 0.5 * z)[None])


def test_layout_is_channel_z_y_x():
    data = np.zeros((1, 2, 2, 2))
    data[0, 0, 0, 1] = 1.0
    grid = VoxelGrid(data)
    assert sample_trilinear(grid, np.array([1.0, -1.0, -1.0]))[0] == pytest.approx(1.0)
    assert sample_trilinear(grid, np.array([-1.0, -1.0, 1.0]))[0] == pytest.approx(0.0)


def test_trilinear_reproduces_linear_functions(rng):
    grid = linear_grid()
    points = rng.uniform(-1.0, 1.0, (50, 3))
    expected = 1.0 + 2.0 * points[:, 0] - points[:, 1] + 0.5 * points[:, 2]
    assert np.allclose(sample_trilinear(grid, points)[:, 0], expected)


def test_boundary_modes_outside_domain():
    grid = linear_grid()
    outside = np.array([[1.5, 0.0, 0.0]])
    assert sample_trilinear(grid, outside, Boundary.ZERO_PAD)[0, 0] == 0.0
    edge = sample_trilinear(grid, np.array([[1.0, 0.0, 0.0]]), Boundary.CLAMP_TO_EDGE)
    assert sample_trilinear(grid, outside, Boundary.CLAMP_TO_EDGE)[0, 0] == pytest.approx(edge[0, 0])


def test_leading_dimensions_are_kept(rng):
    grid = VoxelGrid(rng.normal(size=(4, 3, 3, 3)))
    assert sample_trilinear(grid, rng.uniform(-1, 1, (2, 5, 3))).shape == (2, 5, 4)


def test_bad_shapes():
    with pytest.raises(ShapeError):
        VoxelGrid(np.zeros((1, 2, 3, 2)))
    with pytest.raises(ShapeError):
        sample_trilinear(linear_grid(), np.zeros((4, 2)))


def test_grids_must_be_finite():
    data = np.ones((4, 2, 2, 2))
    data[3, 1, 0, 1] = np.inf
    with pytest.raises(NonFiniteGridError):
        VoxelGrid(data)


def test_adjoint_is_transpose_of_sampling(rng):
    grid = VoxelGrid(rng.normal(size=(2, 4, 4, 4)))
    points = rng.uniform(-0.95, 0.95, (30, 3))
    upstream = rng.normal(size=(30, 2))
    grad_grid, _ = grid_adjoint_sample(grid, points, upstream)
    probe = rng.normal(size=grid.data.shape)
    lhs = np.sum(sample_trilinear(VoxelGrid(probe), points) * upstream)
    assert np.sum(grad_grid * probe) == pytest.approx(lhs, rel=1e-10)


@pytest.mark.parametrize("boundary", [Boundary.ZERO_PAD, Boundary.CLAMP_TO_EDGE])
def test_point_gradient_matches_finite_differences(rng, boundary):
    grid = VoxelGrid(rng.normal(size=(2, 5, 5, 5)))
    points = rng.uniform(-0.9, 0.9, (10, 3))
    upstream = rng.normal(size=(10, 2))
    _, grad_points = grid_adjoint_sample(grid, points, upstream, boundary)
    eps = 1e-7
    for axis in range(3):
        step = np.zeros(3)
        step[axis] = eps
        f_plus = np.sum(sample_trilinear(grid, points + step, boundary) * upstream, axis=-1)
        f_minus = np.sum(sample_trilinear(grid, points - step, boundary) * upstream, axis=-1)
        assert np.allclose(grad_points[:, axis], (f_plus - f_minus) / (2 * eps), atol=1e-5)


def test_gradients_vanish_outside_zero_pad_domain():
    grid = linear_grid()
    grad_grid, grad_points = grid_adjoint_sample(grid, np.array([[1.2, 0.0, 0.0]]), np.ones((1, 1)))
    assert not grad_grid.any()
    assert not grad_points.any()


def test_clamped_axis_has_no_point_gradient():
    grid = linear_grid()
    _, grad_points = grid_adjoint_sample(grid, np.array([[1.2, 0.0, 0.0]]), np.ones((1, 1)), Boundary.CLAMP_TO_EDGE)
    assert grad_points[0, 0] == 0.0
    assert grad_points[0, 1] == pytest.approx(-1.0)
