"""Binary checkpoints.

Layout: magic b"NVCKPT1", u32 version, u32 tensor count; then per tensor
u16 name length, UTF-8 name, u32 rank, u32 dims[rank], little-endian
float32 payload (row-major) and u32 CRC32 of the payload bytes.

Besides the model tensors a checkpoint carries `adam.m.<name>`,
`adam.v.<name>` and `meta.config`, the UTF-8 bytes of a JSON document
(run config, cameras, frames, box, Adam step count) stored one byte per
float.
"""
import json
import logging
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from pydantic import ValidationError

from volfit.core.errors import CheckpointError
from volfit.models.camera import Aabb, Camera
from volfit.models.scene import SceneModel, init_scene_model
from volfit.schemas.config import RunConfig
from volfit.schemas.rig import RigCamera
from volfit.services.optimizer import AdamState
from volfit.utils.dataset import camera_from_rig, rig_camera

logger = logging.getLogger(__name__)

MAGIC = b"NVCKPT1"
VERSION = 1
META_TENSOR = "meta.config"

_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")

PathLike = Union[str, Path]


@dataclass(eq=False)
class Checkpoint:
    model: SceneModel
    config: RunConfig
    adam: Optional[AdamState] = None
    cameras: List[Camera] = field(default_factory=list)

    def camera(self, name: str) -> Camera:
        for camera in self.cameras:
            if camera.id == name:
                return camera
        raise CheckpointError(f"Checkpoint holds no camera named '{name}'")


# --- Raw tensor container ---

def write_tensors(path: PathLike, tensors: Dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, _U32.pack(VERSION), _U32.pack(len(tensors))]
    for name, value in tensors.items():
        encoded = name.encode("utf-8")
        value = np.asarray(value)
        payload = np.ascontiguousarray(value, dtype="<f4").tobytes()
        chunks.append(_U16.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_U32.pack(value.ndim))
        chunks.extend(_U32.pack(dim) for dim in value.shape)
        chunks.append(payload)
        chunks.append(_U32.pack(zlib.crc32(payload)))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


class _Reader:
    def __init__(self, raw: bytes, path: PathLike):
        self.raw = raw
        self.offset = 0
        self.path = path

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.raw):
            raise CheckpointError(f"Checkpoint {self.path} is truncated while reading {what}")
        chunk = self.raw[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def u16(self, what: str) -> int:
        return _U16.unpack(self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]


def read_tensors(path: PathLike) -> Dict[str, np.ndarray]:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}")
    reader = _Reader(raw, path)
    if reader.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    version = reader.u32("version")
    if version != VERSION:
        raise CheckpointError(f"Checkpoint {path} has version {version}, expected {VERSION}")
    count = reader.u32("tensor count")
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        name_bytes = reader.take(reader.u16("name length"), "tensor name")
        try:
            name = name_bytes.decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"Checkpoint {path} holds a tensor name that is not UTF-8")
        rank = reader.u32(f"rank of '{name}'")
        shape = tuple(reader.u32(f"dims of '{name}'") for _ in range(rank))
        size = int(np.prod(shape)) if shape else 1
        payload = reader.take(4 * size, f"payload of '{name}'")
        crc = reader.u32(f"checksum of '{name}'")
        if zlib.crc32(payload) != crc:
            raise CheckpointError(f"Checksum mismatch in tensor '{name}'")
        tensors[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)
    if reader.offset != len(raw):
        raise CheckpointError(f"Checkpoint {path} has {len(raw) - reader.offset} trailing bytes")
    return tensors


def _encode_meta(meta: dict) -> np.ndarray:
    data = json.dumps(meta, sort_keys=True).encode("utf-8")
    return np.frombuffer(data, dtype=np.uint8).astype(np.float32)


def _decode_meta(tensor: np.ndarray) -> dict:
    try:
        return json.loads(np.asarray(tensor).astype(np.uint8).tobytes().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Checkpoint metadata is unreadable: {e}")


# --- Model checkpoints ---

def checkpoint_save(path: PathLike, model: SceneModel, config: RunConfig, adam: Optional[AdamState] = None,
                    cameras: Sequence[Camera] = ()) -> None:
    """Write parameters, optimizer state and metadata; camera geometry is kept so renders need no rig file"""
    meta = {
        "run_config": config.model_dump(mode="json"),
        "camera_ids": model.camera_ids,
        "encoder_cameras": model.encoder_cameras,
        "frames": model.frames,
        "box_center": [float(v) for v in model.bounds.center],
        "box_side": float(model.bounds.side),
        "cameras": [rig_camera(camera, []).model_dump(mode="json") for camera in cameras],
        "adam_step": None if adam is None else int(adam.step),
    }
    tensors: Dict[str, np.ndarray] = {META_TENSOR: _encode_meta(meta)}
    tensors.update(model.params.params)
    if adam is not None:
        for name in sorted(adam.m):
            tensors[f"adam.m.{name}"] = adam.m[name]
            tensors[f"adam.v.{name}"] = adam.v[name]
    write_tensors(path, tensors)
    logger.info("Saved checkpoint %s (%d tensors)", path, len(tensors))


def checkpoint_load(path: PathLike, config: Optional[RunConfig] = None) -> Checkpoint:
    """Load a checkpoint, optionally into a model built from a different run config.

    Every model tensor must be present with the shape the config implies;
    a mismatch raises ShapeError naming the tensor.
    """
    tensors = read_tensors(path)
    if META_TENSOR not in tensors:
        raise CheckpointError(f"Checkpoint {path} has no '{META_TENSOR}' tensor")
    meta = _decode_meta(tensors.pop(META_TENSOR))
    try:
        saved = RunConfig.model_validate(meta["run_config"])
    except (KeyError, ValidationError) as e:
        raise CheckpointError(f"Checkpoint {path} holds an invalid run config: {e}")
    try:
        cameras = [camera_from_rig(RigCamera.model_validate(entry)) for entry in meta.get("cameras", [])]
    except ValidationError as e:
        raise CheckpointError(f"Checkpoint {path} holds invalid camera metadata: {e}")
    target = config or saved
    dtype = np.dtype(target.train.precision.value)

    backgrounds = {
        name[len("bg."):]: np.zeros(value.shape) for name, value in tensors.items() if name.startswith("bg.")
    }
    model = init_scene_model(
        target.model,
        Aabb(center=np.array(meta["box_center"]), side=meta["box_side"]),
        meta["camera_ids"],
        np.random.default_rng(0),
        dtype=dtype,
        frames=meta["frames"],
        encoder_cameras=meta["encoder_cameras"],
        learn_color=target.train.learn_color,
        backgrounds=backgrounds,
    )
    for name in model.params.names():
        if name not in tensors:
            raise CheckpointError(f"Checkpoint {path} is missing tensor '{name}'")
        model.params.assign(name, tensors[name])
    extra = [n for n in tensors if not n.startswith("adam.") and n not in model.params]
    if extra:
        raise CheckpointError(f"Checkpoint {path} holds tensor '{extra[0]}' unknown to this model")

    adam = None
    if meta.get("adam_step") is not None:
        adam = AdamState.from_config(target.train)
        adam.step = int(meta["adam_step"])
        for name in model.params.names():
            if f"adam.m.{name}" in tensors:
                adam.m[name] = tensors[f"adam.m.{name}"].astype(dtype)
                adam.v[name] = tensors[f"adam.v.{name}"].astype(dtype)
    model.background_mode = target.train.background
    logger.info("Loaded checkpoint %s", path)
    return Checkpoint(model=model, config=target, adam=adam, cameras=cameras)
