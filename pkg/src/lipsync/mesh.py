"""Template head mesh, displacement animations, and their file formats.

Geometry travels as Wavefront OBJ (v/f records only). Animations travel in
the LSA1 binary container. Landmarks live in a plain-text sidecar, one
0-based vertex index per line, lip entries prefixed "lip:". Landmark order
is meaningful: the first lip entry is the upper-lip-middle point used for
trajectory plots.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FileFormatError, MeshParseError, TopologyError

ANIM_MAGIC = b"LSA1"


@dataclass(frozen=True)
class TemplateMesh:
    """Neutral-pose head: V vertices, triangle faces, designated landmarks."""

    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) int
    landmarks: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    lip_mask: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def __post_init__(self):
        v = len(self.vertices)
        if v < 4:
            raise TopologyError(f"mesh needs at least 4 vertices, got {v}")
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= v):
            raise TopologyError("face index out of range")
        if len(self.landmarks):
            if self.landmarks.min() < 0 or self.landmarks.max() >= v:
                raise TopologyError("landmark index out of range")
            if len(np.unique(self.landmarks)) != len(self.landmarks):
                raise TopologyError("landmark indices must be unique")
        if len(self.lip_mask) != len(self.landmarks):
            raise TopologyError("lip mask length must match landmark count")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def lip_landmarks(self) -> np.ndarray:
        return self.landmarks[self.lip_mask]


@dataclass(frozen=True)
class DisplacementSequence:
    """Per-frame vertex offsets from the template, T x V x 3 at a fixed fps."""

    frames: np.ndarray
    fps: int = 60

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def n_vertices(self) -> int:
        return self.frames.shape[1]


def load_landmarks(path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    indices = []
    lip = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        is_lip = text.startswith("lip:")
        if is_lip:
            text = text[4:].strip()
        try:
            indices.append(int(text))
        except ValueError:
            raise MeshParseError(f"bad landmark index {text!r}", path=str(path), line=lineno)
        lip.append(is_lip)
    return np.asarray(indices, dtype=int), np.asarray(lip, dtype=bool)


def save_landmarks(indices, lip_mask, path) -> None:
    lines = [f"lip:{i}" if flag else str(i) for i, flag in zip(indices, lip_mask)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_obj(path, landmark_path=None) -> TemplateMesh:
    """Parse v/f records; polygons are fan-triangulated."""
    path = Path(path)
    vertices = []
    faces = []
    face_lines = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise MeshParseError("vertex record needs 3 coordinates", path=str(path), line=lineno)
            try:
                vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
            except ValueError:
                raise MeshParseError(f"non-numeric vertex {line.strip()!r}", path=str(path), line=lineno)
        elif tag == "f":
            corner = []
            for token in parts[1:]:
                head = token.split("/")[0]
                try:
                    idx = int(head)
                except ValueError:
                    raise MeshParseError(f"non-numeric face index {head!r}", path=str(path), line=lineno)
                corner.append(idx)
            if len(corner) < 3:
                raise MeshParseError("face needs at least 3 indices", path=str(path), line=lineno)
            for a, b in zip(corner[1:-1], corner[2:]):
                faces.append((corner[0], a, b))
                face_lines.append(lineno)
        # everything else (vn, vt, o, g, usemtl, ...) is ignored

    n = len(vertices)
    resolved = []
    for (a, b, c), lineno in zip(faces, face_lines):
        tri = []
        for idx in (a, b, c):
            if idx < 0:
                idx = n + 1 + idx  # negative indices count from the end
            if idx < 1 or idx > n:
                raise MeshParseError(f"face index {idx} out of range 1..{n}", path=str(path), line=lineno)
            tri.append(idx - 1)
        resolved.append(tri)

    if landmark_path is not None:
        landmarks, lip_mask = load_landmarks(landmark_path)
    else:
        landmarks = np.zeros(0, dtype=int)
        lip_mask = np.zeros(0, dtype=bool)

    return TemplateMesh(
        vertices=np.asarray(vertices, dtype=np.float64),
        faces=np.asarray(resolved, dtype=int).reshape(-1, 3),
        landmarks=landmarks,
        lip_mask=lip_mask,
    )


def save_obj(mesh: TemplateMesh, path, landmark_path=None) -> None:
    lines = [f"v {x:.8f} {y:.8f} {z:.8f}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")
    if landmark_path is not None and len(mesh.landmarks):
        save_landmarks(mesh.landmarks, mesh.lip_mask, landmark_path)


def apply_displacements(template: TemplateMesh, d: DisplacementSequence) -> np.ndarray:
    """Posed vertices per frame: template + offset, elementwise."""
    if d.n_vertices != template.n_vertices:
        raise TopologyError(
            f"animation has {d.n_vertices} vertices, template has {template.n_vertices}"
        )
    return template.vertices[None, :, :] + np.asarray(d.frames)


def save_anim(d: DisplacementSequence, path) -> None:
    """Write the LSA1 container: magic | u32 T | u32 V | u32 fps | f32 offsets."""
    frames = np.ascontiguousarray(d.frames, dtype="<f4")
    t, v, c = frames.shape
    if c != 3:
        raise FileFormatError("displacement frames must be T x V x 3", path=str(path))
    header = ANIM_MAGIC + struct.pack("<III", t, v, int(d.fps))
    Path(path).write_bytes(header + frames.tobytes())


def load_anim(path) -> DisplacementSequence:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 16:
        raise FileFormatError("file too short for header", path=str(path), offset=0)
    if raw[:4] != ANIM_MAGIC:
        raise FileFormatError("bad magic, expected LSA1", path=str(path), offset=0)
    t, v, fps = struct.unpack_from("<III", raw, 4)
    expected = 16 + 12 * t * v
    if len(raw) != expected:
        raise FileFormatError(
            f"payload size mismatch: expected {expected} bytes, found {len(raw)}",
            path=str(path),
            offset=min(len(raw), expected),
        )
    frames = np.frombuffer(raw[16:], dtype="<f4").reshape(t, v, 3)
    return DisplacementSequence(frames=frames, fps=int(fps))
