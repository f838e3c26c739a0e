"""Image files: lossless `.f32img` float images and 8-bit PNG previews.

`.f32img` layout: magic b"NVIMG1", u32 width, u32 height, u32 channels,
then width*height*channels little-endian float32 values, row-major.
"""
import struct
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

from volfit.core.errors import ImageFormatError

F32IMG_MAGIC = b"NVIMG1"
F32IMG_HEADER = struct.Struct("<III")

PathLike = Union[str, Path]


def write_f32img(path: PathLike, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.ndim != 3:
        raise ImageFormatError(f"Images must be H x W or H x W x C, got {image.shape}")
    height, width, channels = image.shape
    payload = np.ascontiguousarray(image, dtype="<f4").tobytes()
    Path(path).write_bytes(F32IMG_MAGIC + F32IMG_HEADER.pack(width, height, channels) + payload)


def read_f32img(path: PathLike) -> np.ndarray:
    """Read a `.f32img` file as an (H, W, C) float32 array"""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise ImageFormatError(f"Cannot read image {path}: {e}")
    header_end = len(F32IMG_MAGIC) + F32IMG_HEADER.size
    if raw[:len(F32IMG_MAGIC)] != F32IMG_MAGIC:
        raise ImageFormatError(f"{path} is not an .f32img file (bad magic)")
    if len(raw) < header_end:
        raise ImageFormatError(f"{path} is truncated in its header")
    width, height, channels = F32IMG_HEADER.unpack(raw[len(F32IMG_MAGIC):header_end])
    expected = width * height * channels * 4
    if len(raw) - header_end != expected:
        raise ImageFormatError(
            f"{path} holds {len(raw) - header_end} payload bytes, expected {expected} for {width}x{height}x{channels}"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=header_end).astype(np.float32)
    return data.reshape(height, width, channels)


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path: PathLike, image: np.ndarray) -> None:
    """Write an RGB (H, W, 3) or gray (H, W) image with values in [0, 1] as 8-bit PNG"""
    image = np.asarray(image)
    if image.ndim == 3 and image.shape[2] == 1:
        image = image[:, :, 0]
    Image.fromarray(to_uint8(image)).save(Path(path), format="PNG")


def read_png(path: PathLike) -> np.ndarray:
    try:
        with Image.open(Path(path)) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float32)
    except (OSError, ValueError) as e:
        raise ImageFormatError(f"Cannot decode PNG {path}: {e}")
    return rgb / 255.0


def read_image(path: PathLike) -> np.ndarray:
    """Read a target image by extension; RGB images come back as (H, W, 3) float32"""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".f32img":
        return read_f32img(path)
    if suffix == ".png":
        return read_png(path)
    raise ImageFormatError(f"Unsupported image format '{suffix}' for {path}")


def normalize_depth(depth: np.ndarray) -> np.ndarray:
    """Scale a depth image to [0, 1] for previews; zero (no hit) stays black"""
    depth = np.asarray(depth, dtype=np.float64)
    valid = depth > 0
    if not np.any(valid):
        return np.zeros_like(depth)
    low, high = depth[valid].min(), depth[valid].max()
    scaled = (depth - low) / (high - low) if high > low else np.ones_like(depth)
    return np.where(valid, 1.0 - 0.8 * scaled, 0.0)


def downsample(image: np.ndarray, size: int) -> np.ndarray:
    """Box-filter an (H, W, C) float image to (size, size, C)"""
    image = np.asarray(image, dtype=np.float32)
    channels = [
        np.asarray(Image.fromarray(np.ascontiguousarray(image[:, :, c])).resize((size, size), Image.Resampling.BOX))
        for c in range(image.shape[2])
    ]
    return np.stack(channels, axis=-1).astype(np.float32)
