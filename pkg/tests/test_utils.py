import json

import numpy as np
import pytest

from volfit.core.errors import ConfigError, DatasetError, ImageFormatError, MeshFormatError
from volfit.schemas.config import RunConfig, apply_override, dump_run_config, load_run_config
from volfit.utils.dataset import load_dataset, read_rig
from volfit.utils.imageio import (
    downsample,
    normalize_depth,
    read_f32img,
    read_image,
    read_png,
    to_uint8,
    write_f32img,
    write_png,
)
from volfit.utils.objfile import read_obj, write_obj
from volfit.utils.validators import (
    validate_camera_name,
    validate_finite,
    validate_intrinsics,
    validate_rotation,
    validate_unit_vectors,
)


def test_validate_rotation():
    assert validate_rotation(np.eye(3))
    assert not validate_rotation(np.diag([1.0, 1.0, -1.0]))  # reflection
    assert not validate_rotation(2.0 * np.eye(3))
    assert not validate_rotation(np.eye(2))


def test_validate_intrinsics():
    assert validate_intrinsics(np.array([[100.0, 0, 32], [0, 100.0, 32], [0, 0, 1]]))
    assert not validate_intrinsics(np.zeros((3, 3)))
    assert not validate_intrinsics(np.full((3, 3), np.nan))


def test_validate_camera_name():
    assert validate_camera_name("cam_01.left-A")
    assert not validate_camera_name("")
    assert not validate_camera_name("../etc")
    assert not validate_camera_name("cam 1")


def test_validate_vectors():
    assert validate_finite(np.ones(3))
    assert not validate_finite(np.array([1.0, np.inf]))
    assert validate_unit_vectors(np.eye(3))
    assert not validate_unit_vectors(np.array([[1.0, 1.0, 0.0]]))


def test_f32img_is_lossless(tmp_path):
    image = np.random.default_rng(0).uniform(-2.0, 3.0, (5, 7, 3)).astype(np.float32)
    write_f32img(tmp_path / "a.f32img", image)
    assert np.array_equal(read_f32img(tmp_path / "a.f32img"), image)


def test_f32img_gray_images_gain_a_channel(tmp_path):
    write_f32img(tmp_path / "g.f32img", np.zeros((4, 2)))
    assert read_f32img(tmp_path / "g.f32img").shape == (4, 2, 1)


def test_f32img_header_checks(tmp_path):
    (tmp_path / "bad.f32img").write_bytes(b"NOTIMG" + bytes(12))
    with pytest.raises(ImageFormatError):
        read_f32img(tmp_path / "bad.f32img")
    write_f32img(tmp_path / "cut.f32img", np.ones((3, 3, 3)))
    raw = (tmp_path / "cut.f32img").read_bytes()
    (tmp_path / "cut.f32img").write_bytes(raw[:-4])
    with pytest.raises(ImageFormatError):
        read_f32img(tmp_path / "cut.f32img")
    with pytest.raises(ImageFormatError):
        write_f32img(tmp_path / "x.f32img", np.zeros(4))


def test_png_preview_quantizes_to_eight_bits(tmp_path):
    image = np.array([[[0.0, 0.5, 1.0], [1.5, -0.5, 0.25]]])
    write_png(tmp_path / "p.png", image)
    loaded = read_png(tmp_path / "p.png")
    assert loaded.shape == (1, 2, 3)
    assert np.allclose(loaded * 255.0, to_uint8(image))


def test_read_image_dispatches_on_suffix(tmp_path):
    write_f32img(tmp_path / "a.f32img", np.ones((2, 2, 3)))
    assert read_image(tmp_path / "a.f32img").shape == (2, 2, 3)
    with pytest.raises(ImageFormatError):
        read_image(tmp_path / "a.jpg")


def test_normalize_depth_keeps_misses_black():
    depth = np.array([[0.0, 1.0], [2.0, 3.0]])
    scaled = normalize_depth(depth)
    assert scaled[0, 0] == 0.0
    assert scaled[0, 1] == pytest.approx(1.0)
    assert scaled[1, 1] == pytest.approx(0.2)
    assert np.array_equal(normalize_depth(np.zeros((2, 2))), np.zeros((2, 2)))


def test_downsample_averages_blocks():
    image = np.zeros((4, 4, 3), dtype=np.float32)
    image[:2, :2] = 1.0
    small = downsample(image, 2)
    assert small.shape == (2, 2, 3)
    assert np.allclose(small[0, 0], 1.0)
    assert np.allclose(small[1, 1], 0.0)


def test_obj_round_trip(tmp_path):
    (tmp_path / "quad.obj").write_text(
        "# quad\nv 0 0 0 1 0 0\nv 1 0 0 0 1 0\nv 1 1 0 0 0 1\nv 0 1 0 1 1 1\nf 1 2 3 4\n"
    )
    mesh = read_obj(tmp_path / "quad.obj")
    assert mesh.triangles.tolist() == [[0, 1, 2], [0, 2, 3]]
    write_obj(tmp_path / "copy.obj", mesh)
    again = read_obj(tmp_path / "copy.obj")
    assert np.array_equal(again.vertices, mesh.vertices)
    assert np.array_equal(again.colors, mesh.colors)


def test_obj_defaults_and_negative_indices(tmp_path):
    (tmp_path / "tri.obj").write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3/1 -2/2 -1/3\n")
    mesh = read_obj(tmp_path / "tri.obj")
    assert mesh.triangles.tolist() == [[0, 1, 2]]
    assert np.allclose(mesh.colors, 0.5)


@pytest.mark.parametrize("text", [
    "v 0 0\nf 1 2 3\n",
    "v 0 0 0\nv 1 0 0\nf 1 2\n",
    "v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n",
    "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n",
    "# nothing\n",
])
def test_obj_errors(tmp_path, text):
    (tmp_path / "bad.obj").write_text(text)
    with pytest.raises(MeshFormatError):
        read_obj(tmp_path / "bad.obj")


def test_config_overrides():
    config = load_run_config(overrides=["model.resolution=8", "train.background=learned", "train.frames=[0, 2]"])
    assert config.model.resolution == 8
    assert config.train.background.value == "learned"
    assert config.train.frames == [0, 2]


@pytest.mark.parametrize("override", ["resolution=8", "model=8", "model.resolution.x=8"])
def test_malformed_overrides(override):
    with pytest.raises(ConfigError):
        apply_override({}, override)


def test_unknown_config_keys_are_rejected(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"model": {"resolutoin": 8}}))
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "c.json")
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "missing.json")


def test_view_conditioning_needs_latent_mode():
    with pytest.raises(ConfigError):
        load_run_config(overrides=["model.view_conditioning=true"])


def test_config_dump_loads_back(tmp_path):
    config = load_run_config(overrides=["train.iterations=7", "loss.lambda_kl=0.5"])
    dump_run_config(config, tmp_path / "c.json")
    assert load_run_config(tmp_path / "c.json") == config
    assert load_run_config() == RunConfig()


def test_rig_errors(tmp_path, dataset_dir):
    with pytest.raises(DatasetError):
        read_rig(tmp_path / "nowhere.json")
    rig = json.loads((dataset_dir / "rig.json").read_text())
    rig["cameras"][0]["images"] = []
    (dataset_dir / "rig.json").write_text(json.dumps(rig))
    with pytest.raises(DatasetError):
        load_dataset(dataset_dir)


def test_dataset_image_size_is_checked(dataset_dir):
    write_f32img(dataset_dir / "images" / "cam00_f000.f32img", np.zeros((3, 3, 3)))
    with pytest.raises(DatasetError):
        load_dataset(dataset_dir)


def test_dataset_lookups(dataset):
    assert dataset.frames == 1
    assert dataset.camera("cam01").id == "cam01"
    with pytest.raises(DatasetError):
        dataset.camera("cam99")
    with pytest.raises(DatasetError):
        dataset.image(3, "cam00")
    assert dataset.conditioning_for(0) is None
