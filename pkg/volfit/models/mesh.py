"""Colored triangle meshes for hybrid volume + mesh rendering."""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from volfit.core.errors import MeshFormatError

MIN_AREA = 1e-12
PARALLEL_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray  # (V, 3) world
    triangles: np.ndarray  # (F, 3) vertex indices
    colors: np.ndarray  # (V, 3)

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=np.float64)
        triangles = np.asarray(self.triangles, dtype=np.int64)
        colors = np.asarray(self.colors, dtype=np.float64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MeshFormatError(f"Mesh vertices must be V x 3, got {vertices.shape}")
        if colors.shape != vertices.shape:
            raise MeshFormatError(f"Mesh needs one color per vertex, got {colors.shape} for {vertices.shape}")
        if triangles.ndim != 2 or triangles.shape[1] != 3 or len(triangles) == 0:
            raise MeshFormatError(f"Mesh triangles must be F x 3 with F >= 1, got {triangles.shape}")
        if triangles.min() < 0 or triangles.max() >= len(vertices):
            raise MeshFormatError(f"Triangle index out of range for {len(vertices)} vertices")
        corners = vertices[triangles]
        areas = 0.5 * np.linalg.norm(
            np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]), axis=-1
        )
        degenerate = np.flatnonzero(areas <= MIN_AREA)
        if len(degenerate):
            raise MeshFormatError(f"Triangle {int(degenerate[0])} is degenerate (area {areas[degenerate[0]]:.3e})")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)
        object.__setattr__(self, "colors", colors)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)


def intersect_mesh(mesh: TriMesh, origin: np.ndarray, direction: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest ray-triangle hit (Möller–Trumbore, backfaces included) for ray batches (R, 3).

    Returns (t (R,), color (R, 3) barycentric-interpolated, hit (R,) bool);
    t is +inf and color zero where nothing is hit.
    """
    origin = np.asarray(origin, dtype=np.float64).reshape(-1, 3)
    direction = np.asarray(direction, dtype=np.float64).reshape(-1, 3)
    n = len(origin)
    best_t = np.full(n, np.inf)
    best_color = np.zeros((n, 3))

    for tri in mesh.triangles:
        v0, v1, v2 = mesh.vertices[tri]
        edge1, edge2 = v1 - v0, v2 - v0
        pvec = np.cross(direction, edge2)
        det = pvec @ edge1
        ok = np.abs(det) > PARALLEL_EPS
        inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = origin - v0
        u = np.sum(tvec * pvec, axis=-1) * inv_det
        qvec = np.cross(tvec, edge1)
        v = np.sum(direction * qvec, axis=-1) * inv_det
        t = (qvec @ edge2) * inv_det
        hit = ok & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > 0.0) & (t < best_t)
        if not np.any(hit):
            continue
        c0, c1, c2 = mesh.colors[tri]
        color = (1.0 - u - v)[:, None] * c0 + u[:, None] * c1 + v[:, None] * c2
        best_t = np.where(hit, t, best_t)
        best_color = np.where(hit[:, None], color, best_color)
    return best_t, best_color, np.isfinite(best_t)
