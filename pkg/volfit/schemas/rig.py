from typing import List, Optional

from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from volfit.utils.validators import validate_camera_name

RIG_VERSION = 1


class RigCamera(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    intrinsics: List[float]  # 3x3 row-major
    extrinsics: List[float]  # 3x4 world-to-camera row-major
    width: int
    height: int
    images: List[str]  # one path per frame, relative to the rig file
    background: Optional[str] = None
    holdout: bool = False

    @field_validator("name")
    @classmethod
    def validate_name(cls, v):
        if not validate_camera_name(v):
            raise ValueError("Camera names may only use letters, digits, '_', '-' and '.'")
        return v

    @field_validator("intrinsics")
    @classmethod
    def validate_intrinsics(cls, v):
        if len(v) != 9:
            raise ValueError("Intrinsics must hold 9 values")
        return v

    @field_validator("extrinsics")
    @classmethod
    def validate_extrinsics(cls, v):
        if len(v) != 12:
            raise ValueError("Extrinsics must hold 12 values")
        return v

    @field_validator("width", "height")
    @classmethod
    def validate_size(cls, v):
        if v <= 0:
            raise ValueError("Image size must be positive")
        return v


class Rig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    version: int = RIG_VERSION
    box_center: List[float] = [0.0, 0.0, 0.0]
    box_side: float = 1.0
    frames: int = 1
    cameras: List[RigCamera]
    conditioning: Optional[List[List[float]]] = None  # one vector per frame
    scene: Optional[str] = None
    seed: Optional[int] = None

    @field_validator("version")
    @classmethod
    def validate_version(cls, v):
        if v != RIG_VERSION:
            raise ValueError(f"Unsupported rig version {v}")
        return v

    @field_validator("box_center")
    @classmethod
    def validate_center(cls, v):
        if len(v) != 3:
            raise ValueError("Box center must hold 3 values")
        return v

    @field_validator("box_side")
    @classmethod
    def validate_side(cls, v):
        if v <= 0:
            raise ValueError("Box side must be positive")
        return v

    @model_validator(mode="after")
    def validate_frames(self):
        if self.frames < 1:
            raise ValueError("A rig needs at least one frame")
        for camera in self.cameras:
            if len(camera.images) != self.frames:
                raise ValueError(f"Camera '{camera.name}' lists {len(camera.images)} images for {self.frames} frames")
        names = [camera.name for camera in self.cameras]
        if len(set(names)) != len(names):
            raise ValueError("Camera names must be unique")
        if self.conditioning is not None:
            if len(self.conditioning) != self.frames:
                raise ValueError("Conditioning needs one vector per frame")
            if len({len(c) for c in self.conditioning}) > 1:
                raise ValueError("Conditioning vectors must share one length")
        return self
