"""The fittable scene: template + warp as free tensors (direct mode) or decoded from a latent code.

Parameter names (also checkpoint tensor names):

- direct: `template.raw` (4, D, D, D); `warp.global.{quat,scale,trans}`,
  `warp.comp{i}.{quat,scale,trans}`, `warp.weights` (N_w, D_w, D_w, D_w)
  raw pre-exp values.
- latent: `enc.fc{1,2}.{weight,bias}`; `dec.template.fc{1,2,3}.*` (or
  `dec.rgb.*` + `dec.alpha.*` when view conditioned); `dec.warp.fc1.*`,
  `dec.warp.params.*`, `dec.warp.weights.*`; `latents.frame{f}` for the
  codebook latent source.
- per camera: `cam.{id}.gain`, `cam.{id}.bias`, learned `bg.{id}`.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from volfit.core.autodiff import ParamStore, Tape
from volfit.core.errors import ShapeError
from volfit.models import layers
from volfit.models.camera import Aabb
from volfit.models.enums import BackgroundMode, Boundary, LatentSource, MixtureSpace, ParameterizationMode
from volfit.models.grid import VoxelGrid, grid_adjoint_sample, sample_trilinear
from volfit.models.warp import AFFINE_SIZE, WarpField, WarpFieldGrads, eval_warp_field, init_warp_params, warp_field_vjp
from volfit.schemas.config import ModelConfig

logger = logging.getLogger(__name__)

NETWORK = "network"
VOLUME = "volume"
BACKGROUND = "background"
COLOR = "color"


@dataclass(eq=False)
class LatentCode:
    mean: np.ndarray
    log_std: np.ndarray
    z: np.ndarray
    conditioning: Optional[np.ndarray] = None


@dataclass(eq=False)
class SceneModel:
    config: ModelConfig
    bounds: Aabb
    params: ParamStore
    camera_ids: List[str] = field(default_factory=list)
    encoder_cameras: List[str] = field(default_factory=list)
    frames: int = 1
    background_mode: BackgroundMode = BackgroundMode.KNOWN

    @property
    def mode(self) -> ParameterizationMode:
        return ParameterizationMode(self.config.mode)

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    @property
    def conditioning_dim(self) -> int:
        return self.config.conditioning_dim

    @property
    def uses_encoder(self) -> bool:
        return self.mode == ParameterizationMode.LATENT and self.config.latent_source == LatentSource.ENCODER

    @property
    def template(self) -> VoxelGrid:
        """Activated template of a direct-mode model"""
        return decode_volume(self).template

    @property
    def warp(self) -> Optional[WarpField]:
        return decode_volume(self).warp


# --- Decoded volume ---

@dataclass(eq=False)
class VolumeGrads:
    template: np.ndarray
    warp: Optional[WarpFieldGrads] = None


@dataclass(eq=False)
class Volume:
    """Activated template plus optional warp field, sampled in normalized coordinates"""

    template: VoxelGrid
    warp: Optional[WarpField]
    bounds: Aabb

    @property
    def dtype(self):
        return self.template.data.dtype

    def _template_points(self, x: np.ndarray) -> np.ndarray:
        if self.warp is None:
            return x
        return eval_warp_field(self.warp, x)[0]

    def sample(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """RGB (M, 3) and differential opacity (M,) at normalized points (M, 3)"""
        x = np.asarray(x, dtype=self.dtype)
        values = sample_trilinear(self.template, self._template_points(x), Boundary.ZERO_PAD)
        return values[:, :3], values[:, 3]

    def sample_vjp(self, x: np.ndarray, grad_rgb: np.ndarray, grad_alpha: np.ndarray) -> VolumeGrads:
        x = np.asarray(x, dtype=self.dtype)
        upstream = np.concatenate([grad_rgb, grad_alpha[:, None]], axis=1)
        points = self._template_points(x)
        grad_template, grad_points = grid_adjoint_sample(self.template, points, upstream, Boundary.ZERO_PAD)
        if self.warp is None:
            return VolumeGrads(template=grad_template)
        _, grad_warp = warp_field_vjp(self.warp, x, grad_points)
        return VolumeGrads(template=grad_template, warp=grad_warp)


@dataclass(frozen=True)
class VolumeNames:
    """Tape names of a decoded volume"""

    template: str
    global_params: Optional[str] = None
    component_params: Optional[str] = None
    weights: Optional[str] = None

    def inputs(self) -> Tuple[str, ...]:
        names = (self.template, self.global_params, self.component_params, self.weights)
        return tuple(name for name in names if name is not None)


def volume_from_tape(model: SceneModel, tape: Tape, names: VolumeNames) -> Volume:
    template = VoxelGrid(tape.values[names.template])
    warp = None
    if names.weights is not None:
        warp = WarpField(
            global_params=tape.values[names.global_params],
            component_params=tape.values[names.component_params],
            weights=tape.values[names.weights],
            mixture_space=MixtureSpace(model.config.mixture_space),
        )
    return Volume(template=template, warp=warp, bounds=model.bounds)


# --- Initialization ---

def _fan_in_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = 1.0 / np.sqrt(cols)
    return rng.uniform(-limit, limit, size=(rows, cols))


def _add_dense(store: ParamStore, rng: np.random.Generator, name: str, rows: int, cols: int,
               zero_weight: bool = False, bias: Optional[np.ndarray] = None) -> None:
    weight = np.zeros((rows, cols)) if zero_weight else _fan_in_uniform(rng, rows, cols)
    store.add(f"{name}.weight", weight, NETWORK)
    store.add(f"{name}.bias", np.zeros(rows) if bias is None else bias, NETWORK)


def _add_bottleneck(store: ParamStore, rng: np.random.Generator, prefix: str, inputs: int, outputs: int,
                    config: ModelConfig) -> None:
    _add_dense(store, rng, f"{prefix}.fc1", config.decoder_hidden, inputs)
    _add_dense(store, rng, f"{prefix}.fc2", config.bottleneck, config.decoder_hidden)
    # zero output layer: the decoded raw template starts at 0, as in direct mode
    _add_dense(store, rng, f"{prefix}.fc3", outputs, config.bottleneck, zero_weight=True)


def encoder_input_size(config: ModelConfig) -> int:
    return config.encoder_views * config.encoder_size * config.encoder_size * 3


def init_scene_model(
    config: ModelConfig,
    bounds: Aabb,
    camera_ids: Sequence[str],
    rng: np.random.Generator,
    dtype=np.float32,
    frames: int = 1,
    encoder_cameras: Sequence[str] = (),
    learn_color: bool = True,
    backgrounds: Optional[Dict[str, np.ndarray]] = None,
) -> SceneModel:
    """Create a model with every parameter tensor registered in its learning-rate group"""
    store = ParamStore(dtype=np.dtype(dtype))
    d = config.resolution
    n_warps, d_w = config.n_warps, config.warp_resolution
    global_params, components = init_warp_params(n_warps, rng, config.init_quat_noise)

    if config.mode == ParameterizationMode.DIRECT:
        store.add("template.raw", np.zeros((4, d, d, d)), VOLUME)
        if config.use_warp:
            for part, sl in (("quat", slice(0, 4)), ("scale", slice(4, 7)), ("trans", slice(7, 10))):
                store.add(f"warp.global.{part}", global_params[sl], VOLUME)
            for i in range(n_warps):
                for part, sl in (("quat", slice(0, 4)), ("scale", slice(4, 7)), ("trans", slice(7, 10))):
                    store.add(f"warp.comp{i}.{part}", components[i, sl], VOLUME)
            store.add("warp.weights", np.zeros((n_warps, d_w, d_w, d_w)), VOLUME)
    else:
        latent, hidden = config.latent_dim, config.encoder_hidden
        if config.latent_source == LatentSource.ENCODER:
            _add_dense(store, rng, "enc.fc1", hidden, encoder_input_size(config))
            _add_dense(store, rng, "enc.fc2", 2 * latent, hidden)
        else:
            for f in range(frames):
                store.add(f"latents.frame{f}", 0.01 * rng.standard_normal(latent), NETWORK)
        inputs = latent + config.conditioning_dim
        if config.view_conditioning:
            _add_bottleneck(store, rng, "dec.rgb", inputs + 3, 3 * d ** 3, config)
            _add_bottleneck(store, rng, "dec.alpha", inputs, d ** 3, config)
        else:
            _add_bottleneck(store, rng, "dec.template", inputs, 4 * d ** 3, config)
        if config.use_warp:
            _add_dense(store, rng, "dec.warp.fc1", config.warp_hidden, inputs)
            identity = np.concatenate([global_params, components.ravel()])
            _add_dense(store, rng, "dec.warp.params", AFFINE_SIZE * (n_warps + 1), config.warp_hidden,
                       zero_weight=True, bias=identity)
            _add_dense(store, rng, "dec.warp.weights", n_warps * d_w ** 3, config.warp_hidden, zero_weight=True)

    for cam in camera_ids:
        store.add(f"cam.{cam}.gain", np.ones(3), COLOR, frozen=not learn_color)
        store.add(f"cam.{cam}.bias", np.zeros(3), COLOR, frozen=not learn_color)
    for cam, image in (backgrounds or {}).items():
        store.add(f"bg.{cam}", image, BACKGROUND)

    logger.info("Initialized %s model with %d tensors (%d values)", config.mode.value, len(store.params),
                sum(v.size for v in store.params.values()))
    return SceneModel(config=config, bounds=bounds, params=store, camera_ids=list(camera_ids),
                      encoder_cameras=list(encoder_cameras), frames=frames)


# --- Encoder ---

def encode_on_tape(model: SceneModel, tape: Tape, images: np.ndarray, eps: Optional[np.ndarray],
                   prefix: str = "") -> Tuple[str, str, str]:
    """Record the encoder; returns tape names of (mean, log_std, z)"""
    config = model.config
    expected = (config.encoder_views, config.encoder_size, config.encoder_size, 3)
    images = np.asarray(images)
    if images.shape != expected:
        raise ShapeError(f"Encoder expects views of shape {expected}, got {images.shape}")
    slope = config.leaky_slope
    tape.constant(f"{prefix}enc.in", images.ravel())
    layers.dense(tape, f"{prefix}enc.h1", f"{prefix}enc.in", "enc.fc1.weight", "enc.fc1.bias")
    layers.leaky_relu(tape, f"{prefix}enc.a1", f"{prefix}enc.h1", slope)
    layers.dense(tape, f"{prefix}enc.out", f"{prefix}enc.a1", "enc.fc2.weight", "enc.fc2.bias")
    mean, log_std, z = f"{prefix}latent.mean", f"{prefix}latent.log_std", f"{prefix}latent.z"
    layers.split(tape, f"{prefix}enc.out", {mean: (config.latent_dim,), log_std: (config.latent_dim,)})
    reparameterize(tape, z, mean, log_std, eps)
    return mean, log_std, z


def reparameterize(tape: Tape, out: str, mean: str, log_std: str, eps: Optional[np.ndarray]) -> np.ndarray:
    """z = mu + sigma * eps; z = mu when eps is None (inference)"""
    mu = tape.values[mean]
    if eps is None:
        eps = np.zeros_like(mu)
    eps = np.asarray(eps, dtype=mu.dtype)
    sigma = np.exp(tape.values[log_std])
    z = mu + sigma * eps

    def vjp(gz):
        return gz, gz * sigma * eps

    tape.record((mean, log_std), {out: z}, vjp)
    return z


def encode(model: SceneModel, images: np.ndarray, eps: Optional[np.ndarray] = None) -> LatentCode:
    """Encode K downsampled views into a latent code"""
    tape = Tape(model.params.dtype)
    tape.watch(model.params)
    mean, log_std, z = encode_on_tape(model, tape, images, eps)
    return LatentCode(mean=tape.values[mean], log_std=tape.values[log_std], z=tape.values[z])


# --- Decoder ---

def _bottleneck(tape: Tape, prefix: str, x: str, out: str, slope: float) -> None:
    layers.dense(tape, f"{out}.h1", x, f"{prefix}.fc1.weight", f"{prefix}.fc1.bias")
    layers.leaky_relu(tape, f"{out}.a1", f"{out}.h1", slope)
    layers.dense(tape, f"{out}.h2", f"{out}.a1", f"{prefix}.fc2.weight", f"{prefix}.fc2.bias")
    layers.leaky_relu(tape, f"{out}.a2", f"{out}.h2", slope)
    layers.dense(tape, out, f"{out}.a2", f"{prefix}.fc3.weight", f"{prefix}.fc3.bias")


def decode_on_tape(model: SceneModel, tape: Tape, z: Optional[str] = None, c: Optional[str] = None,
                   view_dir: Optional[np.ndarray] = None, prefix: str = "") -> VolumeNames:
    """Record the decode (or direct activation) of template and warp; returns the tape names"""
    config = model.config
    d, n_warps, d_w = config.resolution, config.n_warps, config.warp_resolution
    p = prefix
    names = VolumeNames(
        template=f"{p}vol.template",
        global_params=f"{p}vol.global" if config.use_warp else None,
        component_params=f"{p}vol.comps" if config.use_warp else None,
        weights=f"{p}vol.weights" if config.use_warp else None,
    )

    if config.mode == ParameterizationMode.DIRECT:
        layers.softplus(tape, names.template, "template.raw")
        if config.use_warp:
            layers.concat(tape, names.global_params,
                          ["warp.global.quat", "warp.global.scale", "warp.global.trans"])
            parts = [f"warp.comp{i}.{part}" for i in range(n_warps) for part in ("quat", "scale", "trans")]
            layers.concat(tape, f"{p}vol.comps.flat", parts)
            layers.reshape(tape, names.component_params, f"{p}vol.comps.flat", (n_warps, AFFINE_SIZE))
            layers.exp(tape, names.weights, "warp.weights")
        return names

    if z is None:
        raise ShapeError("Latent-mode decoding requires a latent code")
    if tape.values[z].shape != (config.latent_dim,):
        raise ShapeError(f"Latent code must have length {config.latent_dim}, got {tape.values[z].shape}")
    inputs = [z]
    if config.conditioning_dim:
        if c is None or tape.values[c].shape != (config.conditioning_dim,):
            got = None if c is None else tape.values[c].shape
            raise ShapeError(f"Conditioning vector must have length {config.conditioning_dim}, got {got}")
        inputs.append(c)
    layers.concat(tape, f"{p}dec.in", inputs)
    slope = config.leaky_slope

    if config.view_conditioning:
        if view_dir is None:
            raise ShapeError("View-conditioned decoding requires a view direction")
        tape.constant(f"{p}dec.view", np.asarray(view_dir).reshape(3))
        layers.concat(tape, f"{p}dec.in_view", [f"{p}dec.in", f"{p}dec.view"])
        _bottleneck(tape, "dec.rgb", f"{p}dec.in_view", f"{p}dec.rgb", slope)
        _bottleneck(tape, "dec.alpha", f"{p}dec.in", f"{p}dec.alpha", slope)
        layers.concat(tape, f"{p}dec.template.raw", [f"{p}dec.rgb", f"{p}dec.alpha"])
    else:
        _bottleneck(tape, "dec.template", f"{p}dec.in", f"{p}dec.template.raw", slope)
    layers.reshape(tape, f"{p}dec.template.grid", f"{p}dec.template.raw", (4, d, d, d))
    layers.softplus(tape, names.template, f"{p}dec.template.grid")

    if config.use_warp:
        layers.dense(tape, f"{p}dec.warp.h1", f"{p}dec.in", "dec.warp.fc1.weight", "dec.warp.fc1.bias")
        layers.leaky_relu(tape, f"{p}dec.warp.a1", f"{p}dec.warp.h1", slope)
        layers.dense(tape, f"{p}dec.warp.raw", f"{p}dec.warp.a1", "dec.warp.params.weight", "dec.warp.params.bias")
        layers.split(tape, f"{p}dec.warp.raw", {
            names.global_params: (AFFINE_SIZE,),
            names.component_params: (n_warps, AFFINE_SIZE),
        })
        layers.dense(tape, f"{p}dec.weights.raw", f"{p}dec.warp.a1", "dec.warp.weights.weight",
                     "dec.warp.weights.bias")
        layers.reshape(tape, f"{p}dec.weights.grid", f"{p}dec.weights.raw", (n_warps, d_w, d_w, d_w))
        layers.exp(tape, names.weights, f"{p}dec.weights.grid")
    return names


def decode(model: SceneModel, z: Optional[np.ndarray] = None, c: Optional[np.ndarray] = None,
           view_dir: Optional[np.ndarray] = None) -> Tuple[np.ndarray, Optional[np.ndarray], Optional[np.ndarray]]:
    """Decode (z, c) into the raw template grid and raw warp parameters.

    Returns (template raw (4, D, D, D), warp params ((N_w + 1) x 10) or None,
    weight volumes raw (N_w, D_w, D_w, D_w) or None).
    """
    tape = _latent_tape(model, z, c)
    decode_on_tape(model, tape, "z" if z is not None else None, "c" if c is not None else None, view_dir)
    config = model.config
    if config.mode == ParameterizationMode.DIRECT:
        template_raw = tape.values["template.raw"]
        warp_raw = weights_raw = None
        if config.use_warp:
            warp_raw = np.concatenate([tape.values["vol.global"][None], tape.values["vol.comps"]])
            weights_raw = tape.values["warp.weights"]
        return template_raw, warp_raw, weights_raw
    template_raw = tape.values["dec.template.grid"]
    warp_raw = weights_raw = None
    if config.use_warp:
        warp_raw = tape.values["dec.warp.raw"].reshape(-1, AFFINE_SIZE)
        weights_raw = tape.values["dec.weights.grid"]
    return template_raw, warp_raw, weights_raw


def _latent_tape(model: SceneModel, z: Optional[np.ndarray], c: Optional[np.ndarray]) -> Tape:
    tape = Tape(model.params.dtype)
    tape.watch(model.params)
    if z is not None:
        tape.constant("z", z)
    if c is not None:
        tape.constant("c", c)
    return tape


def decode_volume(model: SceneModel, z: Optional[np.ndarray] = None, c: Optional[np.ndarray] = None,
                  view_dir: Optional[np.ndarray] = None) -> Volume:
    """Forward-only decode into an activated Volume"""
    tape = _latent_tape(model, z, c)
    names = decode_on_tape(model, tape, "z" if z is not None else None, "c" if c is not None else None, view_dir)
    return volume_from_tape(model, tape, names)


def eval_volume(model: SceneModel, x: np.ndarray, view_dir: Optional[np.ndarray] = None,
                z: Optional[np.ndarray] = None, c: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """(rgb, alpha) at world points x (..., 3)"""
    volume = decode_volume(model, z, c, view_dir)
    x = np.asarray(x, dtype=np.float64)
    lead = x.shape[:-1]
    rgb, alpha = volume.sample(model.bounds.to_normalized(x).reshape(-1, 3))
    return rgb.reshape(lead + (3,)), alpha.reshape(lead)


def latent_interpolate(z_a: np.ndarray, z_b: np.ndarray, t: float) -> np.ndarray:
    z_a, z_b = np.asarray(z_a), np.asarray(z_b)
    if z_a.shape != z_b.shape:
        raise ShapeError(f"Cannot interpolate latent codes of shapes {z_a.shape} and {z_b.shape}")
    return (1.0 - t) * z_a + t * z_b


def template_slice(model: SceneModel, height: float, size: Optional[int] = None, z: Optional[np.ndarray] = None,
                   c: Optional[np.ndarray] = None, view_dir: Optional[np.ndarray] = None) -> np.ndarray:
    """Differential opacity of the template on the plane z = height (normalized), as a (size, size) image"""
    if not -1.0 <= height <= 1.0:
        raise ShapeError(f"Slice height {height} lies outside the normalized volume [-1, 1]")
    size = size or 4 * model.config.resolution
    template = decode_volume(model, z, c, view_dir).template
    axis = np.linspace(-1.0, 1.0, size)
    xs, ys = np.meshgrid(axis, axis[::-1])
    points = np.stack([xs.ravel(), ys.ravel(), np.full(xs.size, height)], axis=-1).astype(template.data.dtype)
    return sample_trilinear(template, points, Boundary.ZERO_PAD)[:, 3].reshape(size, size)
