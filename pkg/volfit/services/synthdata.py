"""Synthetic multi-view datasets with analytic ground-truth volumes.

Scenes are defined in the normalized cube [-1, 1]^3 of the dataset box.
Target images come from `oracle_render`, a per-ray transcription of the
marching algorithm and background compositing that shares no code with
the production renderer.
"""
import json
import logging
import math
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from volfit.core.errors import ConfigError
from volfit.core.parallel import map_ordered
from volfit.models.camera import Aabb, Camera, look_at_extrinsics
from volfit.models.enums import SceneKind
from volfit.models.mesh import TriMesh
from volfit.schemas.rig import Rig
from volfit.services.render import RenderOutput
from volfit.utils.dataset import RIG_FILE, rig_camera, write_rig
from volfit.utils.imageio import write_f32img, write_png
from volfit.utils.objfile import write_obj

logger = logging.getLogger(__name__)

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))
ORACLE_STEPS = 512
JITTER = 0.05


class AnalyticScene(BaseModel):
    """Closed-form RGBα scene; densities are opacity per unit of normalized length"""

    model_config = ConfigDict(extra="forbid")

    kind: SceneKind
    frames: int = 1
    radius: float = 0.5
    density: float = 40.0
    color: List[float] = [0.9, 0.45, 0.2]
    second_color: List[float] = [0.2, 0.5, 0.9]
    center: List[float] = [0.0, 0.0, 0.0]
    motion: List[float] = [0.15, 0.0, 0.0]  # translation per frame
    swing: float = 0.8  # radians, articulated blob
    noise_modes: int = 4
    seed: int = 0

    @field_validator("density", "radius")
    @classmethod
    def validate_non_negative(cls, v):
        if v < 0:
            raise ValueError("Densities and radii cannot be negative")
        return v

    @field_validator("frames")
    @classmethod
    def validate_frames(cls, v):
        if v < 1:
            raise ValueError("A scene needs at least one frame")
        return v

    @model_validator(mode="after")
    def validate_inside_cube(self):
        if self.kind in (SceneKind.SOLID_SPHERE, SceneKind.TRANSLUCENT_SPHERE):
            for frame in range(self.frames):
                center = sphere_center(self, frame)
                if np.any(np.abs(center) + self.radius > 1.0):
                    raise ValueError(f"Sphere leaves the unit cube at frame {frame}")
        return self


def default_scene(kind: SceneKind, frames: int = 1, seed: int = 0) -> AnalyticScene:
    kind = SceneKind(kind)
    presets = {
        SceneKind.SOLID_SPHERE: dict(radius=0.5, density=40.0, color=[0.9, 0.45, 0.2]),
        SceneKind.TRANSLUCENT_SPHERE: dict(radius=0.6, density=1.5, color=[0.3, 0.6, 0.9]),
        SceneKind.TWO_BLOB_ARTICULATED: dict(radius=0.22, density=12.0),
        SceneKind.SMOKE_NOISE: dict(density=1.0, color=[0.85, 0.85, 0.9]),
        SceneKind.COLORED_CUBE: dict(radius=0.45, density=50.0),
    }
    # per-frame step shrinks with the frame count so spheres stay inside the cube
    motion = [min(0.15, 0.4 / (frames - 1)), 0.0, 0.0] if frames > 1 else [0.0, 0.0, 0.0]
    return AnalyticScene(kind=kind, frames=frames, motion=motion, seed=seed, **presets[kind])


def sphere_center(scene: AnalyticScene, frame: int) -> np.ndarray:
    offset = frame - 0.5 * (scene.frames - 1)
    return np.asarray(scene.center) + offset * np.asarray(scene.motion)


def _blob_centers(scene: AnalyticScene, frame: int) -> Tuple[np.ndarray, np.ndarray]:
    """A fixed 'body' blob and an 'arm' blob swinging about it"""
    base = np.array([-0.25, 0.0, 0.0])
    phase = 0.0 if scene.frames == 1 else 2.0 * math.pi * frame / scene.frames
    angle = scene.swing * math.sin(phase)
    arm = base + 0.5 * np.array([math.cos(angle), 0.0, math.sin(angle)])
    return base, arm


def _noise_modes(scene: AnalyticScene):
    rng = np.random.default_rng(scene.seed)
    freqs = rng.integers(1, 4, size=(scene.noise_modes, 3))
    phases = rng.uniform(0.0, 2.0 * math.pi, size=(scene.noise_modes, 3))
    amps = rng.uniform(0.5, 1.0, size=scene.noise_modes)
    amps = 0.8 * amps / np.sum(amps)
    return freqs, phases, amps


def eval_analytic(scene: AnalyticScene, frame: int, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Closed-form (rgb (..., 3), α (...)) at normalized points x (..., 3)"""
    x = np.asarray(x, dtype=np.float64)
    lead = x.shape[:-1]
    color = np.asarray(scene.color)
    kind = SceneKind(scene.kind)

    if kind in (SceneKind.SOLID_SPHERE, SceneKind.TRANSLUCENT_SPHERE):
        inside = np.linalg.norm(x - sphere_center(scene, frame), axis=-1) <= scene.radius
        alpha = np.where(inside, scene.density, 0.0)
        rgb = np.broadcast_to(color, lead + (3,)).copy()
    elif kind == SceneKind.TWO_BLOB_ARTICULATED:
        body, arm = _blob_centers(scene, frame)
        sigma2 = scene.radius ** 2
        w_body = np.exp(-np.sum((x - body) ** 2, axis=-1) / (2.0 * sigma2))
        w_arm = np.exp(-np.sum((x - arm) ** 2, axis=-1) / (2.0 * sigma2))
        alpha = scene.density * (w_body + w_arm)
        share = w_body / np.maximum(w_body + w_arm, 1e-300)
        rgb = share[..., None] * color + (1.0 - share)[..., None] * np.asarray(scene.second_color)
    elif kind == SceneKind.SMOKE_NOISE:
        freqs, phases, amps = _noise_modes(scene)
        drift = 0.3 * frame
        field = np.zeros(lead)
        for n, phi, a in zip(freqs, phases, amps):
            field += a * np.prod(np.cos(math.pi * n * x + phi + drift), axis=-1)
        alpha = scene.density * (1.0 + field)
        shade = 0.85 + 0.15 * field
        rgb = np.clip(shade[..., None] * color, 0.0, 1.0)
    else:
        half = scene.radius
        inside = np.all(np.abs(x - np.asarray(scene.center)) <= half, axis=-1)
        alpha = np.where(inside, scene.density, 0.0)
        rgb = np.clip(0.5 + 0.5 * (x - np.asarray(scene.center)) / half, 0.0, 1.0)
    return rgb, alpha


def analytic_sampler(scene: AnalyticScene, frame: int) -> Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]:
    def sample(points: np.ndarray):
        return eval_analytic(scene, frame, points)
    return sample


# --- Camera rig ---

def make_rig(n_cameras: int, radius: float = 2.5, seed: int = 0, width: int = 64, height: int = 64,
             holdout: int = 2, focal_scale: float = 1.2, target: Sequence[float] = (0.0, 0.0, 0.0)) -> List[Camera]:
    """Cameras on an upper-hemisphere Fibonacci spiral, all looking at `target`"""
    if n_cameras < 2:
        raise ConfigError("A rig needs at least 2 cameras")
    if not 0 <= holdout < n_cameras:
        raise ConfigError(f"Cannot hold out {holdout} of {n_cameras} cameras")
    rng = np.random.default_rng(seed)
    azimuth0 = rng.uniform(0.0, 2.0 * math.pi)
    held = set(int(i) for i in rng.choice(n_cameras, size=holdout, replace=False)) if holdout else set()
    focal = focal_scale * width
    intrinsics = np.array([[focal, 0.0, width / 2.0], [0.0, focal, height / 2.0], [0.0, 0.0, 1.0]])
    target = np.asarray(target, dtype=np.float64)

    cameras = []
    for i in range(n_cameras):
        elevation = 0.1 + 0.8 * (i + 0.5) / n_cameras
        ring = math.sqrt(1.0 - elevation * elevation)
        phi = azimuth0 + i * GOLDEN_ANGLE
        center = target + radius * np.array([ring * math.cos(phi), ring * math.sin(phi), elevation])
        cameras.append(Camera(
            id=f"cam{i:02d}",
            intrinsics=intrinsics,
            extrinsics=look_at_extrinsics(center, target),
            resolution=(width, height),
            holdout=i in held,
        ))
    return cameras


def background_image(width: int, height: int, index: int) -> np.ndarray:
    """A smooth per-camera gradient used as the known background"""
    rows = np.linspace(0.0, 1.0, height)[:, None]
    cols = np.linspace(0.0, 1.0, width)[None, :]
    base = np.array([0.35 + 0.05 * (index % 3), 0.4, 0.45 - 0.05 * (index % 2)])
    image = base + 0.25 * rows[..., None] * np.array([0.2, 0.5, 0.8]) + 0.15 * cols[..., None] * np.array([0.6, 0.3, 0.1])
    return np.clip(image, 0.0, 1.0)


def ground_plane(box: Aabb, color=(0.55, 0.5, 0.45), extent: float = 3.0) -> TriMesh:
    """A square colored plane just below the box"""
    z = box.lower[2] - 0.05 * box.side
    cx, cy = box.center[0], box.center[1]
    s = extent * box.half
    vertices = np.array([[cx - s, cy - s, z], [cx + s, cy - s, z], [cx + s, cy + s, z], [cx - s, cy + s, z]])
    colors = np.array([color, color, [c * 0.8 for c in color], [c * 0.8 for c in color]])
    return TriMesh(vertices=vertices, triangles=np.array([[0, 1, 2], [0, 2, 3]]), colors=colors)


# --- Oracle renderer ---

def _oracle_ray(camera: Camera, col: int, row: int):
    k_inv = np.linalg.inv(camera.intrinsics)
    rotation, translation = camera.extrinsics[:, :3], camera.extrinsics[:, 3]
    origin = -rotation.T @ translation
    pixel = np.array([col + 0.5, row + 0.5, 1.0])
    direction = rotation.T @ (k_inv @ pixel)
    return origin, direction / math.sqrt(float(direction @ direction))


def _oracle_box(origin, direction, lower, upper) -> Optional[Tuple[float, float]]:
    t_near, t_far = -math.inf, math.inf
    for axis in range(3):
        o, d = float(origin[axis]), float(direction[axis])
        if d == 0.0:
            if o < lower[axis] or o > upper[axis]:
                return None
            continue
        t1, t2 = (lower[axis] - o) / d, (upper[axis] - o) / d
        t_near = max(t_near, min(t1, t2))
        t_far = min(t_far, max(t1, t2))
    t_near = max(t_near, 0.0)
    return (t_near, t_far) if t_near < t_far else None


def _oracle_mesh(mesh: TriMesh, origin, direction) -> Optional[Tuple[float, np.ndarray]]:
    best = None
    for tri in mesh.triangles:
        a, b, c = mesh.vertices[tri]
        e1, e2 = b - a, c - a
        p = np.cross(direction, e2)
        det = float(e1 @ p)
        if abs(det) <= 1e-12:
            continue
        s = origin - a
        u = float(s @ p) / det
        q = np.cross(s, e1)
        v = float(direction @ q) / det
        t = float(e2 @ q) / det
        if u < 0.0 or v < 0.0 or u + v > 1.0 or t <= 0.0:
            continue
        if best is None or t < best[0]:
            ca, cb, cc = mesh.colors[tri]
            best = (t, (1.0 - u - v) * ca + u * cb + v * cc)
    return best


def oracle_march(volume_fn, origin: np.ndarray, direction: np.ndarray, s_min: float, s_max: float,
                 delta: float) -> Tuple[List[float], float, float]:
    """Front-to-back marching of one ray in plain floats; returns (rgb, alpha, s at termination)"""
    steps = int(math.floor((s_max - s_min) / delta + 1e-9)) if s_max > s_min else 0
    rgb, alpha, s_end = [0.0, 0.0, 0.0], 0.0, s_max
    if steps == 0:
        return rgb, alpha, s_end
    s_values = s_min + delta * np.arange(1, steps + 1)
    colors, densities = volume_fn(origin[None, :] + s_values[:, None] * direction[None, :])
    for k in range(steps):
        d_alpha = min(alpha + delta * float(densities[k]), 1.0) - alpha
        for ch in range(3):
            rgb[ch] += float(colors[k][ch]) * d_alpha
        alpha += d_alpha
        if alpha >= 1.0:
            s_end = float(s_values[k])
            break
    return rgb, alpha, s_end


def oracle_render(volume_fn, camera: Camera, box: Aabb, step_count: int = ORACLE_STEPS,
                  mesh: Optional[TriMesh] = None, background: Optional[np.ndarray] = None,
                  gain: Optional[np.ndarray] = None, bias: Optional[np.ndarray] = None) -> RenderOutput:
    """Reference image: per-ray marching in normalized space, optional mesh, then background compositing.

    `volume_fn` maps normalized points (M, 3) to (rgb (M, 3), α (M,)).
    Gain, bias and background default to the camera's own.
    """
    width, height = camera.width, camera.height
    gain = camera.gain if gain is None else gain
    bias = camera.bias if bias is None else bias
    background = camera.background if background is None else background
    half = box.half
    delta = 2.0 / step_count
    rgb_img = np.zeros((height, width, 3))
    alpha_img = np.zeros((height, width))
    depth_img = np.zeros((height, width))
    out_img = np.zeros((height, width, 3))

    for row in range(height):
        for col in range(width):
            origin, direction = _oracle_ray(camera, col, row)
            span = _oracle_box(origin, direction, box.lower, box.upper)
            t_min, t_max = span if span is not None else (0.0, 0.0)
            hit_mesh = _oracle_mesh(mesh, origin, direction) if mesh is not None else None
            if hit_mesh is not None:
                t_max = min(t_max, hit_mesh[0])
            origin_n = (origin - box.center) / half
            rgb, alpha, s_end = oracle_march(volume_fn, origin_n, direction, t_min / half, t_max / half, delta)
            depth = s_end * half if span is not None else 0.0
            if hit_mesh is not None and alpha < 1.0:
                for ch in range(3):
                    rgb[ch] += (1.0 - alpha) * float(hit_mesh[1][ch])
                alpha = 1.0
                depth = hit_mesh[0]
            bg = background[row, col] if background is not None else np.zeros(3)
            for ch in range(3):
                rgb_img[row, col, ch] = rgb[ch]
                out_img[row, col, ch] = (1.0 - alpha) * bg[ch] + gain[ch] * rgb[ch] + bias[ch]
            alpha_img[row, col] = alpha
            depth_img[row, col] = depth
    return RenderOutput(rgb=rgb_img, alpha=alpha_img, depth=depth_img, composite=out_img)


# --- Dataset synthesis ---

def synthesize(
    scene: AnalyticScene,
    cameras: List[Camera],
    out_dir: Path,
    box: Optional[Aabb] = None,
    step_count: int = ORACLE_STEPS,
    color_jitter: bool = False,
    with_mesh: bool = False,
    conditioning: bool = False,
    seed: int = 0,
    threads: Optional[int] = None,
) -> Path:
    """Render every (frame, camera) target with the oracle and write a dataset directory; returns the rig path"""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "previews").mkdir(parents=True, exist_ok=True)
    box = box or Aabb(center=np.zeros(3), side=1.0)
    rng = np.random.default_rng(seed)

    posed: List[Camera] = []
    for index, camera in enumerate(cameras):
        background = background_image(camera.width, camera.height, index)
        gain, bias = np.ones(3), np.zeros(3)
        if color_jitter:
            gain = 1.0 + rng.uniform(-JITTER, JITTER, size=3)
            bias = rng.uniform(-JITTER, JITTER, size=3)
        posed.append(camera.with_calibration(gain=gain, bias=bias, background=background))
        write_f32img(out_dir / "images" / f"bg_{camera.id}.f32img", background)

    jobs = [(frame, camera) for frame in range(scene.frames) for camera in posed]

    def render_job(job):
        frame, camera = job
        return oracle_render(analytic_sampler(scene, frame), camera, box, step_count)

    outputs = map_ordered(render_job, jobs, threads)
    for (frame, camera), output in zip(jobs, outputs):
        stem = f"{camera.id}_f{frame:03d}"
        write_f32img(out_dir / "images" / f"{stem}.f32img", output.composite)
        write_png(out_dir / "previews" / f"{stem}.png", output.composite)

    rig = Rig(
        box_center=[float(v) for v in box.center],
        box_side=float(box.side),
        frames=scene.frames,
        cameras=[
            rig_camera(camera, [f"images/{camera.id}_f{f:03d}.f32img" for f in range(scene.frames)],
                       background=f"images/bg_{camera.id}.f32img")
            for camera in posed
        ],
        conditioning=[[f / max(scene.frames - 1, 1)] for f in range(scene.frames)] if conditioning else None,
        scene=scene.kind.value,
        seed=seed,
    )
    rig_file = out_dir / RIG_FILE
    write_rig(rig_file, rig)
    (out_dir / "scene.json").write_text(scene.model_dump_json(indent=2) + "\n")
    calibration = {camera.id: {"gain": camera.gain.tolist(), "bias": camera.bias.tolist()} for camera in posed}
    (out_dir / "calibration.json").write_text(json.dumps(calibration, indent=2) + "\n")
    if with_mesh:
        write_obj(out_dir / "ground.obj", ground_plane(box))
    logger.info("Synthesized %s: %d cameras x %d frames", out_dir, len(cameras), scene.frames)
    return rig_file
