"""ASCII OBJ subset: `v x y z [r g b]` and `f i j k ...` lines (1-based, polygons fan-triangulated)."""
from pathlib import Path
from typing import List, Union

import numpy as np

from volfit.core.errors import MeshFormatError
from volfit.models.mesh import TriMesh

DEFAULT_COLOR = (0.5, 0.5, 0.5)


def _vertex_index(token: str, count: int, line_no: int) -> int:
    try:
        index = int(token.split("/")[0])
    except ValueError:
        raise MeshFormatError(f"Line {line_no}: bad face index '{token}'")
    # negative indices count back from the last vertex
    return index - 1 if index > 0 else count + index


def read_obj(path: Union[str, Path]) -> TriMesh:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise MeshFormatError(f"Cannot read mesh {path}: {e}")

    vertices: List[List[float]] = []
    colors: List[List[float]] = []
    faces: List[List[int]] = []
    for line_no, line in enumerate(lines, start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            try:
                values = [float(p) for p in parts[1:]]
            except ValueError:
                raise MeshFormatError(f"Line {line_no}: non-numeric vertex")
            if len(values) not in (3, 6):
                raise MeshFormatError(f"Line {line_no}: vertex needs 3 coordinates and optionally 3 colors")
            vertices.append(values[:3])
            colors.append(values[3:] if len(values) == 6 else list(DEFAULT_COLOR))
        elif parts[0] == "f":
            indices = [_vertex_index(p, len(vertices), line_no) for p in parts[1:]]
            if len(indices) < 3:
                raise MeshFormatError(f"Line {line_no}: face needs at least 3 vertices")
            for k in range(1, len(indices) - 1):
                faces.append([indices[0], indices[k], indices[k + 1]])

    if not vertices or not faces:
        raise MeshFormatError(f"Mesh {path} has no vertices or faces")
    return TriMesh(vertices=np.array(vertices), triangles=np.array(faces), colors=np.array(colors))


def write_obj(path: Union[str, Path], mesh: TriMesh) -> None:
    lines = ["# volfit colored mesh"]
    for (x, y, z), (r, g, b) in zip(mesh.vertices, mesh.colors):
        lines.append(" ".join(["v"] + [repr(float(value)) for value in (x, y, z, r, g, b)]))
    for a, b, c in mesh.triangles:
        lines.append(f"f {a + 1} {b + 1} {c + 1}")
    Path(path).write_text("\n".join(lines) + "\n")
