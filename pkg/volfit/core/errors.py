from typing import Optional


class VolfitError(Exception):
    """Base error; `detail` is the message shown to CLI users"""

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ConfigError(VolfitError):
    pass


class InvalidCameraError(VolfitError):
    pass


class DegenerateParameterError(VolfitError):
    pass


class DegenerateMixtureError(VolfitError):
    pass


class ShapeError(VolfitError):
    pass


class NonFiniteGridError(VolfitError):
    pass


class NonFiniteGradientError(VolfitError):
    def __init__(self, tensor: str):
        super().__init__(f"Non-finite gradient in tensor '{tensor}'")
        self.tensor = tensor


class NonDeterminismError(VolfitError):
    pass


class DivergenceError(VolfitError):
    def __init__(self, step: int, checkpoint: Optional[str] = None):
        detail = f"Loss diverged at step {step}"
        if checkpoint:
            detail += f"; pre-step checkpoint saved to {checkpoint}"
        super().__init__(detail)
        self.step = step
        self.checkpoint = checkpoint


class CheckpointError(VolfitError):
    pass


class ImageFormatError(VolfitError):
    pass


class DatasetError(VolfitError):
    pass


class MeshFormatError(VolfitError):
    pass
