import json

import numpy as np
import pytest
from pydantic import ValidationError

from volfit.core.errors import ConfigError
from volfit.models.camera import Aabb, project
from volfit.models.enums import SceneKind
from volfit.services.synthdata import (
    AnalyticScene,
    analytic_sampler,
    default_scene,
    eval_analytic,
    ground_plane,
    make_rig,
    oracle_render,
    synthesize,
)
from volfit.utils.dataset import load_dataset
from volfit.utils.objfile import read_obj


def test_make_rig_names_and_holdout():
    cameras = make_rig(6, seed=1, holdout=2)
    assert [camera.id for camera in cameras] == [f"cam{i:02d}" for i in range(6)]
    assert sum(camera.holdout for camera in cameras) == 2


def test_rig_cameras_look_at_the_target():
    for camera in make_rig(4, width=32, height=24, holdout=0, target=(0.1, -0.2, 0.0)):
        pixel = project(camera, np.array([[0.1, -0.2, 0.0]]))[0]
        assert pixel == pytest.approx([16.0, 12.0], abs=1e-9)
        assert camera.center[2] > 0.0


def test_make_rig_is_reproducible():
    first, second = make_rig(3, seed=9), make_rig(3, seed=9)
    for a, b in zip(first, second):
        assert np.array_equal(a.extrinsics, b.extrinsics)


@pytest.mark.parametrize("n, holdout", [(1, 0), (3, 3), (3, -1)])
def test_make_rig_rejects_bad_counts(n, holdout):
    with pytest.raises(ConfigError):
        make_rig(n, holdout=holdout)


def test_solid_sphere_is_opaque_inside():
    scene = default_scene(SceneKind.SOLID_SPHERE)
    rgb, alpha = eval_analytic(scene, 0, np.array([[0.0, 0.0, 0.0], [0.9, 0.9, 0.9]]))
    assert alpha.tolist() == [40.0, 0.0]
    assert np.allclose(rgb[0], [0.9, 0.45, 0.2])


def test_moving_sphere_changes_between_frames():
    scene = default_scene(SceneKind.SOLID_SPHERE, frames=3)
    point = np.array([[0.55, 0.0, 0.0]])
    assert eval_analytic(scene, 0, point)[1][0] == 0.0
    assert eval_analytic(scene, 2, point)[1][0] == 40.0


def test_smoke_density_averages_to_its_base_value():
    scene = default_scene(SceneKind.SMOKE_NOISE)
    points = np.random.default_rng(0).uniform(-1.0, 1.0, (20000, 3))
    rgb, alpha = eval_analytic(scene, 0, points)
    assert alpha.mean() == pytest.approx(1.0, abs=0.05)
    assert alpha.min() >= 0.2 - 1e-12
    assert np.all((rgb >= 0.0) & (rgb <= 1.0))


def test_blob_colors_blend_between_the_two_parts():
    scene = default_scene(SceneKind.TWO_BLOB_ARTICULATED)
    rgb, alpha = eval_analytic(scene, 0, np.array([[-0.25, 0.0, 0.0], [0.25, 0.0, 0.0]]))
    assert np.allclose(rgb[0], scene.color, atol=0.06)
    assert np.allclose(rgb[1], scene.second_color, atol=0.06)
    assert np.all(alpha > 0.0)


def test_colored_cube_color_follows_position():
    scene = default_scene(SceneKind.COLORED_CUBE)
    rgb, _ = eval_analytic(scene, 0, np.array([[0.0, 0.0, 0.0]]))
    assert np.allclose(rgb, 0.5)


def test_scene_must_stay_in_the_cube():
    with pytest.raises(ValidationError):
        AnalyticScene(kind=SceneKind.SOLID_SPHERE, radius=0.6, center=[0.5, 0.0, 0.0])
    with pytest.raises(ValidationError):
        AnalyticScene(kind=SceneKind.SMOKE_NOISE, density=-1.0)
    default_scene(SceneKind.SOLID_SPHERE, frames=8)


def test_empty_scene_renders_the_background():
    scene = AnalyticScene(kind=SceneKind.SOLID_SPHERE, density=0.0)
    camera = make_rig(2, width=6, height=4, holdout=0)[0]
    background = np.full((4, 6, 3), 0.3)
    output = oracle_render(analytic_sampler(scene, 0), camera, Aabb(np.zeros(3), 1.0), step_count=16,
                           background=background)
    assert np.array_equal(output.composite, background)
    assert np.all(output.alpha == 0.0)


def test_ground_plane_sits_below_the_box():
    box = Aabb(center=np.array([0.0, 0.0, 1.0]), side=2.0)
    mesh = ground_plane(box)
    assert np.all(mesh.vertices[:, 2] == pytest.approx(-0.1))
    assert mesh.triangles.shape == (2, 3)


def test_synthesize_writes_a_loadable_dataset(tmp_path):
    scene = default_scene(SceneKind.TRANSLUCENT_SPHERE, frames=2)
    cameras = make_rig(3, width=6, height=6, holdout=1, seed=2)
    rig_file = synthesize(scene, cameras, tmp_path / "data", step_count=16, color_jitter=True,
                          with_mesh=True, conditioning=True, seed=4)
    assert rig_file == tmp_path / "data" / "rig.json"
    assert (tmp_path / "data" / "previews" / "cam00_f001.png").exists()

    dataset = load_dataset(tmp_path / "data")
    assert dataset.frames == 2
    assert len(dataset.holdout_cameras) == 1
    assert dataset.rig.scene == "translucent_sphere"
    assert dataset.conditioning.tolist() == [[0.0], [1.0]]
    for camera in dataset.cameras:
        assert camera.background.shape == (6, 6, 3)
        assert dataset.image(1, camera.id).shape == (6, 6, 3)

    calibration = json.loads((tmp_path / "data" / "calibration.json").read_text())
    gains = np.array([entry["gain"] for entry in calibration.values()])
    assert np.all(np.abs(gains - 1.0) <= 0.05)
    assert len(read_obj(tmp_path / "data" / "ground.obj").triangles) == 2


def test_synthesis_does_not_depend_on_threads(tmp_path):
    scene = default_scene(SceneKind.SMOKE_NOISE)
    cameras = make_rig(2, width=5, height=5, holdout=0)
    synthesize(scene, cameras, tmp_path / "a", step_count=16, threads=1)
    synthesize(scene, cameras, tmp_path / "b", step_count=16, threads=2)
    a, b = load_dataset(tmp_path / "a"), load_dataset(tmp_path / "b")
    for camera in cameras:
        assert np.array_equal(a.image(0, camera.id), b.image(0, camera.id))
