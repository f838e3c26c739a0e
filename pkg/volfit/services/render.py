"""Accumulative ray marching, background compositing and image rendering.

Marching happens in the normalized cube: a world ray o + t d becomes
x_n(s) = (o - c)/h + s d with s = t/h (h = half box side), so the step
Δ = 2/step_count is a fixed fraction of the volume along every ray.
Samples sit at the right end of each interval, s_min + kΔ for
k = 1 .. floor((s_max - s_min)/Δ + 1e-9). Depth is reported in world t.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from volfit.core.autodiff import Tape
from volfit.core.config import settings
from volfit.core.parallel import map_ordered
from volfit.models.camera import Aabb, Camera, all_pixels, pixel_centers, pixel_ray, ray_box_intersect_many, view_direction
from volfit.models.enums import BackgroundMode
from volfit.models.mesh import TriMesh, intersect_mesh
from volfit.models.scene import SceneModel, Volume, VolumeNames, decode_volume, volume_from_tape

logger = logging.getLogger(__name__)

STEP_EPS = 1e-9

# normalized points (M, 3) -> (rgb (M, 3), alpha (M,))
Sampler = Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]


@dataclass(eq=False)
class RayState:
    rgb: np.ndarray
    alpha: float
    t: float
    delta: float
    depth: float


@dataclass(eq=False)
class RenderOutput:
    rgb: np.ndarray  # (H, W, 3) accumulated foreground color
    alpha: np.ndarray  # (H, W)
    depth: np.ndarray  # (H, W) world t where marching terminated, 0 for rays missing the volume
    composite: np.ndarray  # (H, W, 3)


@dataclass(eq=False)
class _Step:
    index: np.ndarray  # active ray indices
    points: np.ndarray
    rgb: np.ndarray
    dalpha: np.ndarray
    clamped: np.ndarray


@dataclass(eq=False)
class MarchResult:
    rgb: np.ndarray  # (R, 3)
    alpha: np.ndarray  # (R,)
    depth: np.ndarray  # (R,) in the caller's t units
    steps: List[_Step] = field(default_factory=list)


def step_counts(t_min: np.ndarray, t_max: np.ndarray, delta: float) -> np.ndarray:
    span = np.asarray(t_max, dtype=np.float64) - np.asarray(t_min, dtype=np.float64)
    return np.where(span > 0, np.floor(np.maximum(span, 0.0) / delta + STEP_EPS), 0).astype(np.int64)


def march_rays(sampler: Sampler, origin: np.ndarray, direction: np.ndarray, t_min: np.ndarray,
               t_max: np.ndarray, delta: float, dtype=np.float64, record: bool = False) -> MarchResult:
    """Front-to-back marching over a batch of rays in lock step.

    For each ray: dα = min(I_α + Δ V_α, 1) - I_α, I_rgb += V_rgb dα,
    stopping once I_α reaches 1 or the samples pass t_max.
    """
    origin = np.asarray(origin, dtype=np.float64).reshape(-1, 3)
    direction = np.asarray(direction, dtype=np.float64).reshape(-1, 3)
    t_min = np.broadcast_to(np.asarray(t_min, dtype=np.float64), (len(origin),))
    t_max = np.broadcast_to(np.asarray(t_max, dtype=np.float64), (len(origin),))
    n_rays = len(origin)
    counts = step_counts(t_min, t_max, delta)

    rgb = np.zeros((n_rays, 3), dtype=dtype)
    alpha = np.zeros(n_rays, dtype=dtype)
    depth = t_max.copy()
    steps: List[_Step] = []
    step = np.dtype(dtype).type(delta)

    for k in range(1, int(counts.max(initial=0)) + 1):
        index = np.flatnonzero((counts >= k) & (alpha < 1.0))
        if len(index) == 0:
            break
        t = t_min[index] + k * delta
        points = (origin[index] + t[:, None] * direction[index]).astype(dtype)
        sample_rgb, sample_alpha = sampler(points)
        before = alpha[index]
        proposed = before + step * sample_alpha
        clamped = proposed >= 1.0
        after = np.minimum(proposed, 1.0).astype(dtype)
        dalpha = after - before
        rgb[index] += sample_rgb * dalpha[:, None]
        alpha[index] = after
        depth[index[clamped]] = t[clamped]
        if record:
            steps.append(_Step(index=index, points=points, rgb=sample_rgb, dalpha=dalpha, clamped=clamped))
    return MarchResult(rgb=rgb, alpha=alpha, depth=depth, steps=steps)


def march_rays_vjp(result: MarchResult, grad_rgb: np.ndarray, grad_alpha: np.ndarray, delta: float):
    """Reverse mode of a recorded march.

    Returns (points, grad sample rgb, grad sample alpha) concatenated over
    every recorded step. At a saturating step the clamp passes no gradient
    to the sample opacity and the ray's earlier opacity receives -g_dα.
    """
    grad_rgb = np.asarray(grad_rgb)
    carried = np.array(grad_alpha, copy=True)
    points, g_rgb_all, g_alpha_all = [], [], []
    for step in reversed(result.steps):
        index = step.index
        g_c = grad_rgb[index]
        g_dalpha = np.sum(g_c * step.rgb, axis=-1)
        g_alpha_here = carried[index]
        g_sample_alpha = np.where(step.clamped, 0.0, delta * (g_dalpha + g_alpha_here))
        carried[index] = np.where(step.clamped, -g_dalpha, g_alpha_here)
        points.append(step.points)
        g_rgb_all.append(g_c * step.dalpha[:, None])
        g_alpha_all.append(g_sample_alpha.astype(step.dalpha.dtype))
    if not points:
        empty = np.zeros((0, 3), dtype=grad_rgb.dtype)
        return empty, empty.copy(), np.zeros(0, dtype=grad_rgb.dtype)
    return np.concatenate(points), np.concatenate(g_rgb_all), np.concatenate(g_alpha_all)


def march_ray(sampler: Sampler, origin: np.ndarray, direction: np.ndarray, t_min: float, t_max: float,
              delta: float, dtype=np.float64) -> RayState:
    """Front-to-back marching along one ray; samples are taken at origin + t direction in the sampler's space"""
    result = march_rays(sampler, origin, direction, np.array([t_min]), np.array([t_max]), delta, dtype)
    n = int(step_counts(np.array([t_min]), np.array([t_max]), delta)[0])
    return RayState(rgb=result.rgb[0], alpha=float(result.alpha[0]), t=t_min + n * delta, delta=delta,
                    depth=float(result.depth[0]))


def fill_mesh(rgb: np.ndarray, alpha: np.ndarray, depth: np.ndarray, reached: np.ndarray,
              mesh_color: np.ndarray, mesh_t: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fill the remaining throughput of rays that reached the mesh with its color"""
    remaining = (1.0 - alpha)[:, None]
    rgb = np.where(reached[:, None], rgb + remaining * mesh_color.astype(rgb.dtype), rgb)
    alpha = np.where(reached, np.ones_like(alpha), alpha)
    depth = np.where(reached, mesh_t, depth)
    return rgb, alpha, depth


def march_hybrid(sampler: Sampler, origin: np.ndarray, direction: np.ndarray, mesh: TriMesh, t_min: float,
                 t_max: float, delta: float, dtype=np.float64) -> RayState:
    """Marching terminated at the nearest mesh hit, the leftover throughput taking the mesh color.

    The sampler and the mesh share the ray's space.
    """
    mesh_t, mesh_color, hit = intersect_mesh(mesh, origin, direction)
    end = min(t_max, float(mesh_t[0])) if hit[0] else t_max
    state = march_ray(sampler, origin, direction, t_min, end, delta, dtype)
    if hit[0] and state.alpha < 1.0:
        rgb, alpha, depth = fill_mesh(state.rgb[None], np.array([state.alpha], dtype=dtype),
                                      np.array([state.depth]), np.array([True]), mesh_color, mesh_t)
        return RayState(rgb=rgb[0], alpha=float(alpha[0]), t=state.t, delta=delta, depth=float(depth[0]))
    return state


def composite(rgb: np.ndarray, alpha: np.ndarray, background: np.ndarray, gain: np.ndarray,
              bias: np.ndarray) -> np.ndarray:
    """Î = (1 - I_α) I_bg + (g I_rgb + b); gain and bias touch the foreground only"""
    alpha = np.asarray(alpha)
    return (1.0 - alpha)[..., None] * background + (gain * rgb + bias)


def composite_vjp(grad: np.ndarray, rgb: np.ndarray, alpha: np.ndarray, background: np.ndarray,
                  gain: np.ndarray):
    """Returns (grad rgb, grad alpha, grad background, grad gain, grad bias) of composite"""
    grad_rgb = grad * gain
    grad_alpha = -np.sum(grad * background, axis=-1)
    grad_background = (1.0 - alpha)[..., None] * grad
    grad_gain = np.sum(grad * rgb, axis=0)
    grad_bias = np.sum(grad, axis=0)
    return grad_rgb, grad_alpha, grad_background, grad_gain, grad_bias


# --- Camera rays in normalized space ---

@dataclass(eq=False)
class NormalizedRays:
    origin: np.ndarray  # (R, 3) normalized
    direction: np.ndarray  # (R, 3) unit
    s_min: np.ndarray
    s_max: np.ndarray
    hit: np.ndarray
    half: float


def camera_rays(camera: Camera, box: Aabb, pixels: np.ndarray, mesh: Optional[TriMesh] = None):
    """Rays through pixel indices (N, 2), clipped to the box and converted to normalized space.

    With a mesh, s_max is pulled in to the nearest triangle hit. Returns
    (rays, mesh_t world or None, mesh_color or None, mesh_hit or None).
    """
    ray = pixel_ray(camera, pixel_centers(pixels))
    t_min, t_max, hit = ray_box_intersect_many(ray.origin, ray.direction, box)
    t_min = np.where(hit, t_min, 0.0)
    t_max = np.where(hit, t_max, 0.0)
    mesh_t = mesh_color = mesh_hit = None
    if mesh is not None:
        mesh_t, mesh_color, mesh_hit = intersect_mesh(mesh, ray.origin, ray.direction)
        t_max = np.where(mesh_hit, np.minimum(t_max, mesh_t), t_max)
    half = box.half
    rays = NormalizedRays(
        origin=box.to_normalized(ray.origin),
        direction=ray.direction,
        s_min=t_min / half,
        s_max=t_max / half,
        hit=hit,
        half=half,
    )
    return rays, mesh_t, mesh_color, mesh_hit


def _march_camera(sampler: Sampler, camera: Camera, box: Aabb, pixels: np.ndarray, step_count: int,
                  dtype, mesh: Optional[TriMesh] = None, record: bool = False):
    rays, mesh_t, mesh_color, mesh_hit = camera_rays(camera, box, pixels, mesh)
    delta = 2.0 / step_count
    result = march_rays(sampler, rays.origin, rays.direction, rays.s_min, rays.s_max, delta, dtype, record)
    depth = np.where(rays.hit, result.depth * rays.half, 0.0)
    if mesh is not None:
        reached = mesh_hit & (result.alpha < 1.0)
        result.rgb, result.alpha, depth = fill_mesh(result.rgb, result.alpha, depth, reached, mesh_color, mesh_t)
    result.depth = depth
    return result


def render_volume(
    sampler: Sampler,
    camera: Camera,
    box: Aabb,
    gain: np.ndarray,
    bias: np.ndarray,
    background: Optional[np.ndarray] = None,
    mesh: Optional[TriMesh] = None,
    step_count: int = 128,
    dtype=np.float32,
    threads: Optional[int] = None,
) -> RenderOutput:
    """Render every pixel of a camera in fixed-size tiles"""
    width, height = camera.width, camera.height
    pixels = all_pixels(width, height)
    tile = settings.TILE_SIZE * settings.TILE_SIZE
    chunks = [pixels[i:i + tile] for i in range(0, len(pixels), tile)]
    if background is None:
        background = np.zeros((height, width, 3))
    background = np.asarray(background, dtype=dtype)
    gain = np.asarray(gain, dtype=dtype)
    bias = np.asarray(bias, dtype=dtype)

    def render_chunk(chunk: np.ndarray):
        result = _march_camera(sampler, camera, box, chunk, step_count, dtype, mesh)
        bg = background[chunk[:, 1], chunk[:, 0]]
        return result.rgb, result.alpha, result.depth, composite(result.rgb, result.alpha, bg, gain, bias)

    parts = map_ordered(render_chunk, chunks, threads)
    rgb = np.concatenate([p[0] for p in parts]).reshape(height, width, 3)
    alpha = np.concatenate([p[1] for p in parts]).reshape(height, width)
    depth = np.concatenate([p[2] for p in parts]).reshape(height, width).astype(dtype)
    image = np.concatenate([p[3] for p in parts]).reshape(height, width, 3)
    return RenderOutput(rgb=rgb, alpha=alpha, depth=depth, composite=image)


# --- Model-level rendering ---

def camera_calibration(model: SceneModel, camera: Camera) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    """Current (gain, bias, background) for a camera: learned tensors when present, else the camera's own"""
    params = model.params
    gain = params[f"cam.{camera.id}.gain"] if f"cam.{camera.id}.gain" in params else camera.gain
    bias = params[f"cam.{camera.id}.bias"] if f"cam.{camera.id}.bias" in params else camera.bias
    if model.background_mode == BackgroundMode.NONE:
        background = None
    elif model.background_mode == BackgroundMode.LEARNED and f"bg.{camera.id}" in params:
        background = params[f"bg.{camera.id}"]
    else:
        background = camera.background
    return gain, bias, background


def render_image(
    model: SceneModel,
    camera: Camera,
    mesh: Optional[TriMesh] = None,
    step_count: int = 128,
    z: Optional[np.ndarray] = None,
    c: Optional[np.ndarray] = None,
    threads: Optional[int] = None,
    unwarped: bool = False,
) -> RenderOutput:
    view = view_direction(camera, model.bounds) if model.config.view_conditioning else None
    volume = decode_volume(model, z, c, view)
    if unwarped:
        volume = Volume(template=volume.template, warp=None, bounds=volume.bounds)
    gain, bias, background = camera_calibration(model, camera)
    return render_volume(volume.sample, camera, model.bounds, gain, bias, background, mesh, step_count,
                         model.params.dtype, threads)


# --- Taped rendering of sampled pixels ---

@dataclass(frozen=True)
class RenderNames:
    rgb: str
    alpha: str


def record_render(
    tape: Tape,
    model: SceneModel,
    names: VolumeNames,
    camera: Camera,
    pixels: np.ndarray,
    step_count: int,
    background: Optional[np.ndarray] = None,
    background_param: Optional[str] = None,
    prefix: str = "",
) -> RenderNames:
    """Render sampled pixels (N, 2) of a camera as one tape node.

    Inputs are the decoded volume tensors, the camera's gain/bias and,
    when learned, its background tensor. Outputs the composited colors
    (N, 3) and exit opacities (N,).
    """
    dtype = tape.dtype
    volume = volume_from_tape(model, tape, names)
    result = _march_camera(volume.sample, camera, model.bounds, pixels, step_count, dtype, record=True)
    gain_name, bias_name = f"cam.{camera.id}.gain", f"cam.{camera.id}.bias"
    gain, bias = tape.values[gain_name], tape.values[bias_name]
    if background_param is not None:
        bg = tape.values[background_param][pixels[:, 1], pixels[:, 0]]
    elif background is not None:
        bg = np.asarray(background, dtype=dtype)[pixels[:, 1], pixels[:, 0]]
    else:
        bg = np.zeros((len(pixels), 3), dtype=dtype)
    image = composite(result.rgb, result.alpha, bg, gain, bias).astype(dtype)
    out = RenderNames(rgb=f"{prefix}render.rgb", alpha=f"{prefix}render.alpha")
    delta = 2.0 / step_count
    inputs = names.inputs() + (gain_name, bias_name) + ((background_param,) if background_param else ())

    def vjp(grad_image, grad_exit_alpha):
        g_rgb, g_alpha, g_bg, g_gain, g_bias = composite_vjp(grad_image, result.rgb, result.alpha, bg, gain)
        g_alpha = g_alpha + grad_exit_alpha
        points, g_sample_rgb, g_sample_alpha = march_rays_vjp(result, g_rgb, g_alpha, delta)
        grads = volume.sample_vjp(points, g_sample_rgb, g_sample_alpha)
        outputs = [grads.template]
        if volume.warp is not None:
            outputs += [grads.warp.global_params, grads.warp.component_params, grads.warp.weights]
        outputs += [g_gain, g_bias]
        if background_param is not None:
            full = np.zeros_like(tape.values[background_param])
            np.add.at(full, (pixels[:, 1], pixels[:, 0]), g_bg)
            outputs.append(full)
        return tuple(outputs)

    tape.record(inputs, {out.rgb: image, out.alpha: result.alpha}, vjp)
    return out
