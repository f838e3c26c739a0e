import numpy as np
import pytest

from volfit.models.camera import Aabb
from volfit.models.enums import SceneKind
from volfit.schemas.config import ModelConfig, RenderConfig, RunConfig, TrainConfig
from volfit.services.synthdata import default_scene, make_rig, synthesize
from volfit.utils.dataset import load_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def unit_box():
    return Aabb(center=np.zeros(3), side=2.0)


@pytest.fixture
def small_rig():
    return make_rig(3, seed=7, width=8, height=8, holdout=1)


@pytest.fixture
def small_config():
    return RunConfig(
        model=ModelConfig(resolution=4, n_warps=2, warp_resolution=2),
        train=TrainConfig(batch_size=2, pixels_per_image=16, iterations=3, step_count=16,
                          checkpoint_every=2, log_every=1),
        render=RenderConfig(step_count=16),
    )


@pytest.fixture
def dataset_dir(tmp_path, small_rig):
    scene = default_scene(SceneKind.SOLID_SPHERE)
    synthesize(scene, small_rig, tmp_path / "data", step_count=32, seed=3)
    return tmp_path / "data"


@pytest.fixture
def dataset(dataset_dir):
    return load_dataset(dataset_dir)
