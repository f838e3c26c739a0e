"""Finite-difference verification of the full fitting objective on small random instances."""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from volfit.core.autodiff import GradCheckReport, ParamStore, finite_diff_check
from volfit.models.camera import Aabb, Camera
from volfit.models.enums import BackgroundMode, ParameterizationMode, Precision
from volfit.models.scene import SceneModel
from volfit.schemas.config import LossWeights, ModelConfig, RunConfig, TrainConfig
from volfit.schemas.rig import Rig
from volfit.services.synthdata import make_rig
from volfit.services.train import BatchItem, batch_objective, draw_batch, encoder_input, init_model_for
from volfit.utils.dataset import Dataset, rig_camera

logger = logging.getLogger(__name__)

DIRECT_RESOLUTION = 4
IMAGE_SIZE = 8
STEP_COUNT = 16


@dataclass(eq=False)
class GradCheckInstance:
    model: SceneModel
    dataset: Dataset
    config: RunConfig
    items: List[BatchItem]
    encoded: Dict[int, np.ndarray]

    def objective(self, store: ParamStore, threads: Optional[int] = None) -> Tuple[float, Dict[str, np.ndarray]]:
        terms, grads = batch_objective(self.model, self.dataset, self.items, self.config, self.encoded, threads)
        return terms.total, grads


def small_config(mode: ParameterizationMode, seed: int = 0, priors: bool = True) -> RunConfig:
    """A float64 config small enough for coordinate-wise checking"""
    if mode == ParameterizationMode.DIRECT:
        model = ModelConfig(mode=mode, resolution=DIRECT_RESOLUTION, n_warps=2, warp_resolution=2)
    else:
        model = ModelConfig(
            mode=mode, resolution=DIRECT_RESOLUTION, latent_dim=3, encoder_views=2, encoder_size=4,
            encoder_hidden=6, decoder_hidden=6, bottleneck=4, n_warps=2, warp_resolution=2, warp_hidden=4,
        )
    train = TrainConfig(
        batch_size=2, pixels_per_image=IMAGE_SIZE * IMAGE_SIZE, iterations=0, seed=seed,
        precision=Precision.FLOAT64, step_count=STEP_COUNT, priors=priors, background=BackgroundMode.LEARNED,
        background_init_frames=1,
    )
    return RunConfig(model=model, loss=LossWeights(lambda_kl=0.1), train=train)


def memory_dataset(cameras: Sequence[Camera], images: List[Dict[str, np.ndarray]], box: Aabb,
                   conditioning: Optional[np.ndarray] = None) -> Dataset:
    """A Dataset whose images live in memory; the rig lists placeholder paths"""
    frames = len(images)
    rig = Rig(
        box_center=[float(v) for v in box.center],
        box_side=float(box.side),
        frames=frames,
        cameras=[rig_camera(camera, [f"memory/{camera.id}_f{f:03d}" for f in range(frames)]) for camera in cameras],
        conditioning=None if conditioning is None else np.asarray(conditioning).tolist(),
    )
    return Dataset(root=Path("."), rig=rig, cameras=list(cameras), images=images, box=box,
                   conditioning=conditioning)


def _perturb(store: ParamStore, rng: np.random.Generator) -> None:
    """Move every tensor off its init so no gradient is structurally zero"""
    for name, value in store.params.items():
        if name == "template.raw":
            raw = rng.normal(0.0, 0.5, value.shape)
            raw[3] = rng.normal(-1.5, 0.3, value.shape[1:])
            store.params[name] = raw.astype(store.dtype)
        elif name.startswith("bg."):
            store.params[name] = rng.uniform(0.1, 0.9, value.shape).astype(store.dtype)
        else:
            store.params[name] = (value + rng.normal(0.0, 0.05, value.shape)).astype(store.dtype)


def random_instance(mode: ParameterizationMode = ParameterizationMode.DIRECT, seed: int = 0,
                    priors: bool = True) -> GradCheckInstance:
    """Random model with 2 cameras at 8x8 pixels, random targets and learned backgrounds, in float64"""
    config = small_config(mode, seed, priors)
    rng = np.random.default_rng(seed)
    cameras = make_rig(2, radius=2.0, seed=seed, width=IMAGE_SIZE, height=IMAGE_SIZE, holdout=0, focal_scale=2.0)
    box = Aabb(center=np.zeros(3), side=1.0)
    images = [{camera.id: rng.uniform(0.0, 1.0, (IMAGE_SIZE, IMAGE_SIZE, 3)) for camera in cameras}]
    dataset = memory_dataset(cameras, images, box)

    model = init_model_for(dataset, config, rng)
    _perturb(model.params, rng)
    items = draw_batch(rng, model, dataset, dataset.train_cameras, [0], config)
    encoded = {0: encoder_input(model, dataset, 0)} if model.uses_encoder else {}
    return GradCheckInstance(model=model, dataset=dataset, config=config, items=items, encoded=encoded)


def run_gradcheck(mode: ParameterizationMode = ParameterizationMode.DIRECT, seed: int = 0, eps: float = 1e-6,
                  tol: float = 1e-4, threads: Optional[int] = None) -> GradCheckReport:
    instance = random_instance(mode, seed)
    logger.info("Checking %d tensors of a random %s instance", len(instance.model.params.trainable()), mode.value)
    report = finite_diff_check(
        lambda store: instance.objective(store, threads), instance.model.params, eps=eps, tol=tol, seed=seed,
    )
    logger.info("Gradient check %s, max relative error %.3e", "passed" if report.passed else "failed",
                report.max_rel_err)
    return report
