from enum import Enum as PyEnum


class ParameterizationMode(str, PyEnum):
    DIRECT = "direct"
    LATENT = "latent"


class LatentSource(str, PyEnum):
    ENCODER = "encoder"
    CODEBOOK = "codebook"


class MixtureSpace(str, PyEnum):
    WARPED = "warped"
    WORLD = "world"


class Boundary(str, PyEnum):
    ZERO_PAD = "zero_pad"
    CLAMP_TO_EDGE = "clamp_to_edge"


class BackgroundMode(str, PyEnum):
    KNOWN = "known"
    LEARNED = "learned"
    NONE = "none"


class Precision(str, PyEnum):
    FLOAT32 = "float32"
    FLOAT64 = "float64"


class SceneKind(str, PyEnum):
    SOLID_SPHERE = "solid_sphere"
    TRANSLUCENT_SPHERE = "translucent_sphere"
    TWO_BLOB_ARTICULATED = "two_blob_articulated"
    SMOKE_NOISE = "smoke_noise"
    COLORED_CUBE = "colored_cube"
