import re

import numpy as np

CAMERA_NAME_PATTERN = re.compile(r"^[A-Za-z0-9_.\-]+$")


def validate_rotation(rotation: np.ndarray, tol: float = 1e-6) -> bool:
    """Check that a 3x3 matrix is orthonormal (R^T R = I) with det +1"""
    rotation = np.asarray(rotation, dtype=np.float64)
    if rotation.shape != (3, 3) or not np.all(np.isfinite(rotation)):
        return False
    if not np.allclose(rotation.T @ rotation, np.eye(3), atol=tol):
        return False
    return abs(np.linalg.det(rotation) - 1.0) <= tol


def validate_intrinsics(intrinsics: np.ndarray) -> bool:
    """Check that a 3x3 intrinsic matrix is finite and invertible"""
    intrinsics = np.asarray(intrinsics, dtype=np.float64)
    if intrinsics.shape != (3, 3) or not np.all(np.isfinite(intrinsics)):
        return False
    if abs(np.linalg.det(intrinsics)) < 1e-12:
        return False
    return np.linalg.cond(intrinsics) < 1e12


def validate_camera_name(name: str) -> bool:
    """Camera names become file names, so keep them to a safe character set"""
    return bool(name) and CAMERA_NAME_PATTERN.match(name) is not None


def validate_finite(values: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(values)))


def validate_unit_vectors(vectors: np.ndarray, tol: float = 1e-7) -> bool:
    norms = np.linalg.norm(np.asarray(vectors, dtype=np.float64), axis=-1)
    return bool(np.all(np.abs(norms - 1.0) <= tol))
