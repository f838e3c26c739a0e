"""Multi-view datasets: a rig file (JSON) plus one image per camera and frame."""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
from pydantic import ValidationError

from volfit.core.errors import DatasetError
from volfit.models.camera import Aabb, Camera
from volfit.schemas.rig import Rig, RigCamera
from volfit.utils.imageio import read_image

logger = logging.getLogger(__name__)

RIG_FILE = "rig.json"


@dataclass(eq=False)
class Dataset:
    root: Path
    rig: Rig
    cameras: List[Camera]
    images: List[Dict[str, np.ndarray]]  # per frame, camera id -> (H, W, 3)
    box: Aabb
    conditioning: Optional[np.ndarray] = None  # (frames, C)

    @property
    def frames(self) -> int:
        return len(self.images)

    @property
    def train_cameras(self) -> List[Camera]:
        return [camera for camera in self.cameras if not camera.holdout]

    @property
    def holdout_cameras(self) -> List[Camera]:
        return [camera for camera in self.cameras if camera.holdout]

    def camera(self, name: str) -> Camera:
        for camera in self.cameras:
            if camera.id == name:
                return camera
        raise DatasetError(f"Unknown camera '{name}'")

    def image(self, frame: int, camera: str) -> np.ndarray:
        if not 0 <= frame < self.frames:
            raise DatasetError(f"Frame {frame} out of range (dataset has {self.frames})")
        return self.images[frame][camera]

    def conditioning_for(self, frame: int) -> Optional[np.ndarray]:
        return None if self.conditioning is None else self.conditioning[frame]


def camera_from_rig(entry: RigCamera, background: Optional[np.ndarray] = None) -> Camera:
    return Camera(
        id=entry.name,
        intrinsics=np.array(entry.intrinsics).reshape(3, 3),
        extrinsics=np.array(entry.extrinsics).reshape(3, 4),
        resolution=(entry.width, entry.height),
        background=background,
        holdout=entry.holdout,
    )


def rig_camera(camera: Camera, images: List[str], background: Optional[str] = None) -> RigCamera:
    return RigCamera(
        name=camera.id,
        intrinsics=[float(v) for v in camera.intrinsics.ravel()],
        extrinsics=[float(v) for v in camera.extrinsics.ravel()],
        width=camera.width,
        height=camera.height,
        images=images,
        background=background,
        holdout=camera.holdout,
    )


def rig_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path / RIG_FILE if path.is_dir() else path


def read_rig(path: Union[str, Path]) -> Rig:
    path = rig_path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DatasetError(f"Cannot read rig file {path}: {e}")
    try:
        return Rig.model_validate(data)
    except ValidationError as e:
        raise DatasetError(f"Invalid rig file {path}: {e}")


def write_rig(path: Union[str, Path], rig: Rig) -> None:
    """Floats are written with the shortest repr that round-trips exactly"""
    Path(path).write_text(json.dumps(rig.model_dump(mode="json"), indent=2) + "\n")


def load_dataset(path: Union[str, Path], load_images: bool = True) -> Dataset:
    """Load a rig file (or a directory holding rig.json) with its images and backgrounds"""
    path = rig_path(path)
    rig = read_rig(path)
    root = path.parent
    cameras: List[Camera] = []
    for entry in rig.cameras:
        background = None
        if entry.background is not None:
            background = read_image(root / entry.background)[:, :, :3]
            if background.shape != (entry.height, entry.width, 3):
                raise DatasetError(f"Background of camera '{entry.name}' has shape {background.shape}")
        cameras.append(camera_from_rig(entry, background))

    images: List[Dict[str, np.ndarray]] = [dict() for _ in range(rig.frames)]
    if load_images:
        for entry in rig.cameras:
            for frame, image_path in enumerate(entry.images):
                image = read_image(root / image_path)[:, :, :3]
                if image.shape != (entry.height, entry.width, 3):
                    raise DatasetError(
                        f"Image {image_path} has shape {image.shape}, expected {(entry.height, entry.width, 3)}"
                    )
                images[frame][entry.name] = image

    conditioning = None if rig.conditioning is None else np.array(rig.conditioning, dtype=np.float64)
    logger.info("Loaded dataset %s: %d cameras, %d frames", path, len(cameras), rig.frames)
    return Dataset(
        root=root,
        rig=rig,
        cameras=cameras,
        images=images,
        box=Aabb(center=np.array(rig.box_center), side=rig.box_side),
        conditioning=conditioning,
    )
