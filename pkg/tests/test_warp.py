import numpy as np
import pytest

from volfit.core.errors import DegenerateMixtureError, DegenerateParameterError, ShapeError
from volfit.models.enums import MixtureSpace
from volfit.models.warp import (
    AffineWarp,
    WarpField,
    eval_affine,
    eval_warp_field,
    identity_params,
    init_warp_params,
    lattice_translations,
    quat_to_rotmat,
    quat_to_rotmat_vjp,
    warp_field_vjp,
)


def random_field(rng, n=3, d=3, space=MixtureSpace.WARPED):
    global_params = identity_params() + np.concatenate([0.1 * rng.normal(size=4), 0.05 * rng.normal(size=6)])
    components = np.tile(identity_params(), (n, 1)) + 0.1 * rng.normal(size=(n, 10))
    weights = np.exp(rng.normal(size=(n, d, d, d)))
    return WarpField(global_params, components, weights, space)


def test_identity_quaternion_gives_identity_matrix():
    assert np.allclose(quat_to_rotmat(np.array([1.0, 0.0, 0.0, 0.0])), np.eye(3))


def test_w_zero_unit_z_quaternion_is_a_half_turn_about_z():
    assert np.allclose(quat_to_rotmat(np.array([0.0, 0.0, 0.0, 1.0])), np.diag([-1.0, -1.0, 1.0]))


def test_rotation_is_orthonormal_and_scale_invariant(rng):
    q = rng.normal(size=4)
    rotation = quat_to_rotmat(q)
    assert np.allclose(rotation @ rotation.T, np.eye(3))
    assert np.linalg.det(rotation) == pytest.approx(1.0)
    assert np.allclose(quat_to_rotmat(3.0 * q), rotation)


def test_quarter_turn_about_z():
    q = np.array([np.cos(np.pi / 4), 0.0, 0.0, np.sin(np.pi / 4)])
    assert np.allclose(quat_to_rotmat(q) @ np.array([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0])


def test_zero_quaternion_is_degenerate():
    with pytest.raises(DegenerateParameterError):
        quat_to_rotmat(np.zeros(4))


def test_rotmat_vjp_matches_finite_differences(rng):
    q = rng.normal(size=4)
    grad_rot = rng.normal(size=(3, 3))
    analytic = quat_to_rotmat_vjp(q, grad_rot)
    eps = 1e-7
    for i in range(4):
        step = np.zeros(4)
        step[i] = eps
        numeric = np.sum((quat_to_rotmat(q + step) - quat_to_rotmat(q - step)) * grad_rot) / (2 * eps)
        assert analytic[i] == pytest.approx(numeric, abs=1e-6)


def test_affine_scales_after_translating():
    warp = AffineWarp(quat=np.array([1.0, 0.0, 0.0, 0.0]), scale=np.array([2.0, 1.0, 0.5]),
                      trans=np.array([1.0, 0.0, 0.0]))
    assert np.allclose(eval_affine(warp, np.array([2.0, 1.0, 4.0])), [2.0, 1.0, 2.0])


def test_identity_components_leave_points_unchanged(rng):
    field = WarpField(identity_params(), np.tile(identity_params(), (4, 1)), np.ones((4, 2, 2, 2)))
    points = rng.uniform(-1, 1, (20, 3))
    warped, mixture = eval_warp_field(field, points)
    assert np.allclose(warped, points)
    assert np.allclose(mixture, 0.25)


def test_dominant_weight_selects_its_component():
    components = np.tile(identity_params(), (2, 1))
    components[1, 7:10] = [0.5, 0.0, 0.0]
    weights = np.stack([np.full((2, 2, 2), 1e-12), np.ones((2, 2, 2))])
    field = WarpField(identity_params(), components, weights)
    warped, mixture = eval_warp_field(field, np.array([[0.0, 0.2, 0.0]]))
    assert np.allclose(warped, [[-0.5, 0.2, 0.0]], atol=1e-9)
    assert mixture[0, 1] == pytest.approx(1.0)


@pytest.mark.parametrize("space", [MixtureSpace.WARPED, MixtureSpace.WORLD])
def test_mixture_weights_sum_to_one(rng, space):
    field = random_field(rng, space=space)
    _, mixture = eval_warp_field(field, rng.uniform(-1.5, 1.5, (64, 3)))
    assert mixture.shape == (64, 3)
    assert np.all(mixture > 0.0)
    assert np.allclose(mixture.sum(axis=-1), 1.0, atol=1e-12)


@pytest.mark.parametrize("space", [MixtureSpace.WARPED, MixtureSpace.WORLD])
def test_equal_components_reduce_to_one_affine(rng, space):
    field = random_field(rng, n=4, space=space)
    shared = identity_params() + np.concatenate([0.3 * rng.normal(size=4), 0.1 * rng.normal(size=6)])
    field = WarpField(field.global_params, np.tile(shared, (4, 1)), field.weights, space)
    points = rng.uniform(-1.0, 1.0, (32, 3))
    warped, _ = eval_warp_field(field, points)
    expected = eval_affine(AffineWarp.from_vector(shared), eval_affine(field.global_warp, points))
    assert np.allclose(warped, expected, atol=1e-12)


def test_vanishing_weights_are_degenerate():
    field = WarpField(identity_params(), np.tile(identity_params(), (2, 1)), np.zeros((2, 2, 2, 2)))
    with pytest.raises(DegenerateMixtureError):
        eval_warp_field(field, np.zeros((1, 3)))


def test_field_shapes_are_checked():
    with pytest.raises(ShapeError):
        WarpField(np.zeros(9), np.tile(identity_params(), (2, 1)), np.ones((2, 2, 2, 2)))
    with pytest.raises(ShapeError):
        WarpField(identity_params(), np.tile(identity_params(), (2, 1)), np.ones((3, 2, 2, 2)))


@pytest.mark.parametrize("space", [MixtureSpace.WARPED, MixtureSpace.WORLD])
def test_field_vjp_matches_finite_differences(rng, space):
    field = random_field(rng, space=space)
    points = rng.uniform(-0.6, 0.6, (6, 3))
    upstream = rng.normal(size=(6, 3))
    grad_x, grads = warp_field_vjp(field, points, upstream)

    def loss(f, x):
        return float(np.sum(eval_warp_field(f, x)[0] * upstream))

    eps = 1e-6
    for axis in range(3):
        step = np.zeros(3)
        step[axis] = eps
        numeric = (loss(field, points + step) - loss(field, points - step)) / (2 * eps)
        assert np.sum(grad_x[:, axis]) == pytest.approx(numeric, rel=1e-4, abs=1e-6)
    for i in range(10):
        step = np.zeros(10)
        step[i] = eps
        plus = WarpField(field.global_params + step, field.component_params, field.weights, space)
        minus = WarpField(field.global_params - step, field.component_params, field.weights, space)
        numeric = (loss(plus, points) - loss(minus, points)) / (2 * eps)
        assert grads.global_params[i] == pytest.approx(numeric, rel=1e-4, abs=1e-6)
    direction = rng.normal(size=field.weights.shape)
    plus = WarpField(field.global_params, field.component_params, field.weights + eps * direction, space)
    minus = WarpField(field.global_params, field.component_params, field.weights - eps * direction, space)
    numeric = (loss(plus, points) - loss(minus, points)) / (2 * eps)
    assert np.sum(grads.weights * direction) == pytest.approx(numeric, rel=1e-4, abs=1e-6)


def test_lattice_and_init(rng):
    lattice = lattice_translations(8)
    assert lattice.shape == (8, 3)
    assert np.allclose(lattice.min(axis=0), -0.5)
    assert np.allclose(lattice.max(axis=0), 0.5)
    global_params, components = init_warp_params(8, rng, quat_noise=0.0)
    assert np.array_equal(global_params, identity_params())
    assert np.allclose(components[:, 7:10], lattice)
    assert np.allclose(components[:, 0:7], identity_params()[0:7])
