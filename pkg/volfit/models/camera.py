"""Pinhole cameras, ray generation, ray-box clipping and color calibration."""
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from volfit.core.errors import InvalidCameraError
from volfit.utils.validators import (
    validate_camera_name,
    validate_intrinsics,
    validate_rotation,
    validate_unit_vectors,
)


@dataclass(frozen=True, eq=False)
class Camera:
    id: str
    intrinsics: np.ndarray  # 3x3, pixels
    extrinsics: np.ndarray  # 3x4 world-to-camera [R | t], meters
    resolution: Tuple[int, int]  # (width, height)
    gain: np.ndarray = field(default_factory=lambda: np.ones(3))
    bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    background: Optional[np.ndarray] = None  # (height, width, 3)
    holdout: bool = False

    def __post_init__(self):
        if not validate_camera_name(self.id):
            raise InvalidCameraError(f"Invalid camera name '{self.id}'")
        object.__setattr__(self, "intrinsics", np.asarray(self.intrinsics, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "extrinsics", np.asarray(self.extrinsics, dtype=np.float64).reshape(3, 4))
        if not validate_intrinsics(self.intrinsics):
            raise InvalidCameraError(f"Camera '{self.id}' has singular intrinsics")
        if not validate_rotation(self.rotation):
            raise InvalidCameraError(f"Camera '{self.id}' rotation is not orthonormal")
        width, height = self.resolution
        if width <= 0 or height <= 0:
            raise InvalidCameraError(f"Camera '{self.id}' has empty resolution {self.resolution}")
        if self.background is not None and np.shape(self.background) != (height, width, 3):
            raise InvalidCameraError(
                f"Camera '{self.id}' background shape {np.shape(self.background)} != {(height, width, 3)}"
            )

    @property
    def rotation(self) -> np.ndarray:
        return self.extrinsics[:, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.extrinsics[:, 3]

    @property
    def center(self) -> np.ndarray:
        # C = -R^T t
        return -self.rotation.T @ self.translation

    @property
    def width(self) -> int:
        return int(self.resolution[0])

    @property
    def height(self) -> int:
        return int(self.resolution[1])

    @property
    def inverse_intrinsics(self) -> np.ndarray:
        return np.linalg.inv(self.intrinsics)

    def with_calibration(self, gain=None, bias=None, background=None) -> "Camera":
        """Copy of the camera carrying the current learnable color state"""
        return replace(
            self,
            gain=self.gain if gain is None else np.asarray(gain),
            bias=self.bias if bias is None else np.asarray(bias),
            background=self.background if background is None else np.asarray(background),
        )


@dataclass(frozen=True, eq=False)
class Ray:
    """One ray or a batch of rays (leading dimensions shared by all fields)"""

    origin: np.ndarray
    direction: np.ndarray
    pixel: np.ndarray


@dataclass(frozen=True, eq=False)
class Aabb:
    center: np.ndarray
    side: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
        if not self.side > 0:
            raise InvalidCameraError(f"Bounding box side must be positive, got {self.side}")

    @property
    def half(self) -> float:
        return 0.5 * float(self.side)

    @property
    def lower(self) -> np.ndarray:
        return self.center - self.half

    @property
    def upper(self) -> np.ndarray:
        return self.center + self.half

    def to_normalized(self, x: np.ndarray) -> np.ndarray:
        """World points to the normalized cube [-1, 1]^3"""
        return (np.asarray(x) - self.center) / self.half


def pixel_centers(indices: np.ndarray) -> np.ndarray:
    """Integer (col, row) pixel indices to continuous pixel-center coordinates"""
    return np.asarray(indices, dtype=np.float64) + 0.5


def all_pixels(width: int, height: int) -> np.ndarray:
    """Every (col, row) index of an image in row-major order"""
    rows, cols = np.mgrid[0:height, 0:width]
    return np.stack([cols.ravel(), rows.ravel()], axis=-1)


def project(camera: Camera, points: np.ndarray) -> np.ndarray:
    """World points (..., 3) to continuous pixel coordinates (..., 2)"""
    points = np.asarray(points, dtype=np.float64)
    cam = points @ camera.rotation.T + camera.translation
    pix = cam @ camera.intrinsics.T
    return pix[..., :2] / pix[..., 2:3]


def pixel_ray(camera: Camera, p: np.ndarray) -> Ray:
    """Rays through continuous pixel coordinates p (..., 2).

    P^-1 p is the point on the focal plane at unit depth; the direction is
    normalized (P^-1 p - r_o).
    """
    p = np.asarray(p, dtype=np.float64)
    homogeneous = np.concatenate([p, np.ones(p.shape[:-1] + (1,))], axis=-1)
    try:
        k_inv = np.linalg.inv(camera.intrinsics)
    except np.linalg.LinAlgError:
        raise InvalidCameraError(f"Camera '{camera.id}' has singular intrinsics")
    cam_points = homogeneous @ k_inv.T
    # (P^-1 p - r_o) = R^T (K^-1 p) since P^-1 p = R^T (K^-1 p - t)
    direction = cam_points @ camera.rotation
    direction = direction / np.linalg.norm(direction, axis=-1, keepdims=True)
    if not validate_unit_vectors(direction, tol=1e-9):
        raise InvalidCameraError(f"Camera '{camera.id}' produced a degenerate ray direction")
    origin = np.broadcast_to(camera.center, direction.shape).copy()
    return Ray(origin=origin, direction=direction, pixel=p)


def ray_box_intersect_many(origin: np.ndarray, direction: np.ndarray, box: Aabb) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Slab test for ray batches; returns (t_min, t_max, hit) with t_min clamped at 0"""
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    lower, upper = box.lower, box.upper

    parallel = direction == 0.0
    safe = np.where(parallel, 1.0, direction)
    t1 = (lower - origin) / safe
    t2 = (upper - origin) / safe
    near = np.minimum(t1, t2)
    far = np.maximum(t1, t2)
    # zero direction component: unbounded slab if the origin lies inside it, else a miss
    inside = (origin >= lower) & (origin <= upper)
    near = np.where(parallel, np.where(inside, -np.inf, np.inf), near)
    far = np.where(parallel, np.where(inside, np.inf, -np.inf), far)

    t_min = np.maximum(np.max(near, axis=-1), 0.0)
    t_max = np.min(far, axis=-1)
    hit = t_min < t_max
    return t_min, t_max, hit


def ray_box_intersect(ray: Ray, box: Aabb) -> Optional[Tuple[float, float]]:
    t_min, t_max, hit = ray_box_intersect_many(ray.origin, ray.direction, box)
    if not bool(hit):
        return None
    return float(t_min), float(t_max)


def apply_color_calibration(rgb: np.ndarray, camera: Camera) -> np.ndarray:
    """Per-channel gain and bias: g * rgb + b"""
    return np.asarray(camera.gain) * np.asarray(rgb) + np.asarray(camera.bias)


def look_at_extrinsics(center: np.ndarray, target: np.ndarray, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-to-camera [R | t] for a camera at `center` looking at `target` (x right, y down, z forward)"""
    center = np.asarray(center, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - center
    forward /= np.linalg.norm(forward)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward])
    return np.concatenate([rotation, (-rotation @ center)[:, None]], axis=1)


def view_direction(camera: Camera, box: Aabb) -> np.ndarray:
    """Normalized direction from the camera center to the volume center"""
    direction = box.center - camera.center
    return direction / np.linalg.norm(direction)
