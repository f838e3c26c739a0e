"""End-to-end fitting: pixel minibatches, the taped objective, Adam steps and held-out evaluation."""
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from volfit.core.autodiff import Tape, collect_gradients
from volfit.core.errors import ConfigError, DatasetError, DivergenceError, NonFiniteGridError
from volfit.core.parallel import map_ordered, sum_ordered
from volfit.models.camera import Camera, view_direction
from volfit.models.enums import BackgroundMode, LatentSource, ParameterizationMode
from volfit.models.scene import SceneModel, decode_on_tape, encode, encode_on_tape, init_scene_model
from volfit.schemas.config import RunConfig
from volfit.services.checkpoint import checkpoint_save
from volfit.services.objective import (
    LossTerms,
    record_beta,
    record_kl,
    record_mse,
    record_total,
    record_tv,
)
from volfit.services.optimizer import AdamState, adam_step
from volfit.services.render import record_render, render_image
from volfit.utils.dataset import Dataset
from volfit.utils.imageio import downsample

logger = logging.getLogger(__name__)

PSNR_CAP = 99.0
LOSS_FILE = "loss.txt"
FINAL_CHECKPOINT = "final.ckpt"
PERIODIC_CHECKPOINT = "checkpoint.ckpt"
DIVERGED_CHECKPOINT = "diverged.ckpt"
METRICS_FILE = "fit_metrics.json"


def sample_pixels(rng: np.random.Generator, width: int, height: int, count: int) -> np.ndarray:
    """Uniform sample of `count` distinct pixel indices (col, row)"""
    total = width * height
    if count > total:
        raise ConfigError(f"Cannot sample {count} distinct pixels from a {width}x{height} image")
    flat = rng.choice(total, size=count, replace=False)
    return np.stack([flat % width, flat // width], axis=-1)


@dataclass(eq=False)
class BatchItem:
    frame: int
    camera: Camera
    pixels: np.ndarray
    eps: Optional[np.ndarray] = None


@dataclass(eq=False)
class FitResult:
    model: SceneModel
    adam: AdamState
    log: List[LossTerms] = field(default_factory=list)
    metrics: Optional["EvalReport"] = None


# --- Latent inputs ---

def choose_encoder_cameras(dataset: Dataset, count: int) -> List[str]:
    names = sorted(camera.id for camera in dataset.train_cameras)
    if len(names) < count:
        raise DatasetError(f"Encoder needs {count} training cameras, dataset has {len(names)}")
    return names[:count]


def encoder_input(model: SceneModel, dataset: Dataset, frame: int) -> np.ndarray:
    """Downsampled encoder views (K, s, s, 3) of one frame"""
    size = model.config.encoder_size
    return np.stack([downsample(dataset.image(frame, name), size) for name in model.encoder_cameras])


def frame_latent(model: SceneModel, dataset: Optional[Dataset], frame: int) -> Tuple[Optional[np.ndarray], Optional[np.ndarray]]:
    """Inference-time (z, c) of a frame: the encoder mean or the codebook entry"""
    if model.mode == ParameterizationMode.DIRECT:
        return None, None
    c = dataset.conditioning_for(frame) if dataset is not None and model.conditioning_dim else None
    if model.config.latent_source == LatentSource.CODEBOOK:
        name = f"latents.frame{frame}"
        if name not in model.params:
            raise DatasetError(f"Model has no latent code for frame {frame}")
        return model.params[name], c
    if dataset is None:
        raise DatasetError("Encoder-mode models need the dataset images to encode a frame")
    return encode(model, encoder_input(model, dataset, frame)).z, c


# --- Objective ---

def item_objective(model: SceneModel, dataset: Dataset, item: BatchItem, config: RunConfig,
                   encoded: Dict[int, np.ndarray], scale: float = 1.0) -> Tuple[LossTerms, Dict[str, np.ndarray]]:
    """Loss terms of one frame-camera item and its parameter gradients, scaled by `scale`"""
    store = model.params
    weights = config.loss
    tape = Tape(store.dtype)
    tape.watch(store)

    z = c = kl = None
    if model.mode == ParameterizationMode.LATENT:
        if model.uses_encoder:
            mean, log_std, z = encode_on_tape(model, tape, encoded[item.frame], item.eps)
            kl = "loss.kl"
            record_kl(tape, kl, mean, log_std)
        else:
            z = f"latents.frame{item.frame}"
        if model.conditioning_dim:
            c = "c"
            tape.constant(c, dataset.conditioning_for(item.frame))
    view = view_direction(item.camera, model.bounds) if model.config.view_conditioning else None
    names = decode_on_tape(model, tape, z, c, view)

    mode = BackgroundMode(config.train.background)
    background = background_param = None
    if mode == BackgroundMode.KNOWN:
        background = item.camera.background
    elif mode == BackgroundMode.LEARNED:
        background_param = f"bg.{item.camera.id}"
    rendered = record_render(tape, model, names, item.camera, item.pixels, config.train.step_count,
                             background=background, background_param=background_param)

    image = dataset.image(item.frame, item.camera.id)
    target = image[item.pixels[:, 1], item.pixels[:, 0]]
    terms = {"mse": "loss.mse"}
    mse = record_mse(tape, "loss.mse", rendered.rgb, target)
    tv = beta = 0.0
    if config.train.priors:
        terms["tv"], terms["beta"] = "loss.tv", "loss.beta"
        tv = record_tv(tape, "loss.tv", names.template, weights)
        beta = record_beta(tape, "loss.beta", rendered.alpha, weights)
    total = record_total(tape, "loss.total", terms, weights, kl=kl)
    kl_value = float(tape.values[kl]) if kl is not None else 0.0
    terms_out = LossTerms(mse=mse, kl=kl_value, tv=tv, beta=beta, total=total)
    if not math.isfinite(total):
        return terms_out, {}

    delta = tape.backward({"loss.total": np.asarray(scale, dtype=store.dtype)})
    grads = collect_gradients(delta, store)
    return terms_out, grads


def batch_objective(model: SceneModel, dataset: Dataset, items: Sequence[BatchItem], config: RunConfig,
                    encoded: Dict[int, np.ndarray], threads: Optional[int] = None) -> Tuple[LossTerms, Dict[str, np.ndarray]]:
    """(1/B) Σ_b loss_b with gradients reduced in item order"""
    scale = 1.0 / len(items)
    results = map_ordered(lambda item: item_objective(model, dataset, item, config, encoded, scale), items, threads)
    terms = LossTerms()
    for item_terms, _ in results:
        terms = terms + item_terms
    return terms.scaled(scale), sum_ordered([grads for _, grads in results])


def draw_batch(rng: np.random.Generator, model: SceneModel, dataset: Dataset, cameras: Sequence[Camera],
               frames: Sequence[int], config: RunConfig) -> List[BatchItem]:
    """Frame-camera pairs uniformly with replacement; all random draws happen here, in item order"""
    items = []
    for _ in range(config.train.batch_size):
        frame = int(frames[rng.integers(len(frames))])
        camera = cameras[rng.integers(len(cameras))]
        count = min(config.train.pixels_per_image, camera.width * camera.height)
        pixels = sample_pixels(rng, camera.width, camera.height, count)
        eps = rng.standard_normal(model.latent_dim) if model.uses_encoder else None
        items.append(BatchItem(frame=frame, camera=camera, pixels=pixels, eps=eps))
    return items


# --- Fitting ---

def initial_backgrounds(dataset: Dataset, frames: int) -> Dict[str, np.ndarray]:
    """Per-camera median over the first `frames` frames"""
    count = min(frames, dataset.frames)
    return {
        camera.id: np.median(np.stack([dataset.image(f, camera.id) for f in range(count)]), axis=0)
        for camera in dataset.cameras
    }


def init_model_for(dataset: Dataset, config: RunConfig, rng: np.random.Generator) -> SceneModel:
    dtype = np.dtype(config.train.precision.value)
    encoder_cameras: List[str] = []
    if config.model.mode == ParameterizationMode.LATENT and config.model.latent_source == LatentSource.ENCODER:
        encoder_cameras = choose_encoder_cameras(dataset, config.model.encoder_views)
    backgrounds = None
    if BackgroundMode(config.train.background) == BackgroundMode.LEARNED:
        backgrounds = initial_backgrounds(dataset, config.train.background_init_frames)
    model = init_scene_model(
        config.model,
        dataset.box,
        [camera.id for camera in dataset.cameras],
        rng,
        dtype=dtype,
        frames=dataset.frames,
        encoder_cameras=encoder_cameras,
        learn_color=config.train.learn_color,
        backgrounds=backgrounds,
    )
    model.background_mode = BackgroundMode(config.train.background)
    return model


def _check_dataset(dataset: Dataset, config: RunConfig) -> List[int]:
    if dataset.frames < 1:
        raise DatasetError("Dataset has no frames")
    if len(dataset.cameras) < 2:
        raise DatasetError("Fitting needs at least 2 cameras")
    if not dataset.train_cameras:
        raise DatasetError("Every camera is held out; nothing to train on")
    if BackgroundMode(config.train.background) == BackgroundMode.KNOWN:
        missing = [camera.id for camera in dataset.train_cameras if camera.background is None]
        if missing:
            raise DatasetError(f"Known-background mode needs a background for camera '{missing[0]}'")
    frames = list(config.train.frames) if config.train.frames is not None else list(range(dataset.frames))
    for frame in frames:
        if not 0 <= frame < dataset.frames:
            raise DatasetError(f"Frame {frame} out of range (dataset has {dataset.frames})")
    if not frames:
        raise DatasetError("No frames selected for fitting")
    return frames


def _open_loss_log(out_dir: Path):
    handle = (out_dir / LOSS_FILE).open("w")
    handle.write(f"# volfit loss log {datetime.now(timezone.utc).isoformat()}\n")
    handle.write("# step mse kl tv beta total\n")
    return handle


def fit(dataset: Dataset, config: RunConfig, out_dir: Optional[Path] = None, threads: Optional[int] = None,
        progress: bool = True) -> FitResult:
    """Fit a scene model to a dataset; writes checkpoints, the loss log and held-out metrics into out_dir"""
    frames = _check_dataset(dataset, config)
    rng = np.random.default_rng(config.train.seed)
    model = init_model_for(dataset, config, rng)
    adam = AdamState.from_config(config.train)
    cameras = dataset.train_cameras
    encoded = {f: encoder_input(model, dataset, f) for f in frames} if model.uses_encoder else {}

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    log_file = _open_loss_log(out_dir) if out_dir is not None else None
    history: List[LossTerms] = []
    logger.info("Fitting %s model on %d frames x %d cameras for %d iterations",
                config.model.mode.value, len(frames), len(cameras), config.train.iterations)
    try:
        for step in tqdm(range(config.train.iterations), desc="fit", disable=not progress):
            items = draw_batch(rng, model, dataset, cameras, frames, config)
            try:
                terms, grads = batch_objective(model, dataset, items, config, encoded, threads)
            except NonFiniteGridError:
                terms = None
            if terms is None or not math.isfinite(terms.total):
                path = None
                if out_dir is not None:
                    path = str(out_dir / DIVERGED_CHECKPOINT)
                    checkpoint_save(path, model, config, adam, dataset.cameras)
                raise DivergenceError(step, path)
            adam_step(model.params, adam, grads)
            history.append(terms)
            if log_file is not None:
                log_file.write(terms.format_line(step) + "\n")
            if (step + 1) % config.train.log_every == 0:
                logger.info("step %d loss %.6e (mse %.6e)", step + 1, terms.total, terms.mse)
            if out_dir is not None and (step + 1) % config.train.checkpoint_every == 0:
                checkpoint_save(out_dir / PERIODIC_CHECKPOINT, model, config, adam, dataset.cameras)
    finally:
        if log_file is not None:
            log_file.close()

    result = FitResult(model=model, adam=adam, log=history)
    if out_dir is not None:
        checkpoint_save(out_dir / FINAL_CHECKPOINT, model, config, adam, dataset.cameras)
    if dataset.holdout_cameras:
        result.metrics = evaluate(model, dataset, dataset.holdout_cameras, frames, config.render.step_count, threads)
        logger.info("Held-out PSNR %.3f dB (MSE x1e4 %.4f)", result.metrics.mean_psnr, result.metrics.mean_mse_x1e4)
        if out_dir is not None:
            (out_dir / METRICS_FILE).write_text(json.dumps(result.metrics.as_dict(), indent=2) + "\n")
    return result


# --- Evaluation ---

def psnr(mse: float) -> float:
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


@dataclass
class EvalEntry:
    camera: str
    frame: int
    mse: float

    @property
    def mse_x1e4(self) -> float:
        return self.mse * 1e4

    @property
    def psnr(self) -> float:
        return psnr(self.mse)


@dataclass
class EvalReport:
    entries: List[EvalEntry] = field(default_factory=list)

    @property
    def mean_mse(self) -> float:
        return float(np.mean([e.mse for e in self.entries])) if self.entries else 0.0

    @property
    def mean_mse_x1e4(self) -> float:
        return self.mean_mse * 1e4

    @property
    def mean_psnr(self) -> float:
        return psnr(self.mean_mse)

    def format_table(self) -> str:
        lines = ["camera frame mse mse_x1e4 psnr_db"]
        for e in self.entries:
            lines.append(f"{e.camera} {e.frame} {e.mse:.9e} {e.mse_x1e4:.6f} {e.psnr:.4f}")
        lines.append(f"mean - {self.mean_mse:.9e} {self.mean_mse_x1e4:.6f} {self.mean_psnr:.4f}")
        return "\n".join(lines)

    def as_dict(self) -> dict:
        return {
            "mean_mse": self.mean_mse,
            "mean_mse_x1e4": self.mean_mse_x1e4,
            "mean_psnr": self.mean_psnr,
            "entries": [
                {"camera": e.camera, "frame": e.frame, "mse": e.mse, "psnr": e.psnr} for e in self.entries
            ],
        }


def evaluate(model: SceneModel, dataset: Dataset, cameras: Optional[Sequence[Camera]] = None,
             frames: Optional[Sequence[int]] = None, step_count: int = 128,
             threads: Optional[int] = None) -> EvalReport:
    """Full-image renders against targets; per-element MSE and PSNR per camera and frame"""
    cameras = dataset.holdout_cameras if cameras is None else cameras
    frames = range(dataset.frames) if frames is None else frames
    report = EvalReport()
    for frame in frames:
        z, c = frame_latent(model, dataset, frame)
        for camera in cameras:
            output = render_image(model, camera, step_count=step_count, z=z, c=c, threads=threads)
            target = dataset.image(frame, camera.id)
            diff = output.composite.astype(np.float64) - target.astype(np.float64)
            report.entries.append(EvalEntry(camera=camera.id, frame=int(frame), mse=float(np.mean(diff * diff))))
    return report
