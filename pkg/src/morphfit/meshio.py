"""Mesh, landmark-track and landmark-mapping file formats.

Three interchange formats are understood:

* **OBJ subset** -- only ``v x y z`` and triangular ``f i j k`` lines
  (1-based, ``i/t/n`` tokens accepted, only the vertex index is used).
  Anything else is skipped and counted in :attr:`Mesh.ignored_lines`.
* **Landmark CSV** -- header ``frame,name,x,y`` with pixel coordinates.
  Lines starting with ``#`` are comments; ``# frame_rate=<fps>`` sets
  :attr:`LandmarkTrack.frame_rate`.
* **Mapping JSON** -- ``{"<landmark name>": <0-based vertex index>}``.
  Keys starting with ``_`` are metadata and skipped.
"""

import csv
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from ._io import atomic_write_text, fmt, header_lines
from .errors import CorrespondenceError, ParseError, ValidationError

log = logging.getLogger(__name__)


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Fixed-topology triangle mesh.

    ``vertices`` is ``(N, 3)`` float64 and ``faces`` is ``(M, 3)`` int64 with
    0-based indices, or ``None`` when the mesh is a bare point set.
    """

    vertices: np.ndarray
    faces: np.ndarray | None = None
    ignored_lines: int = field(default=0, compare=False)

    def __post_init__(self):
        v = _frozen(self.vertices)
        if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] == 0:
            raise ValidationError(f"vertices must have shape (N, 3) with N > 0, got {v.shape}")
        if not np.all(np.isfinite(v)):
            bad = int(np.argwhere(~np.isfinite(v))[0, 0])
            raise ValidationError(f"non-finite coordinate at vertex {bad}")
        object.__setattr__(self, "vertices", v)
        if self.faces is not None:
            f = _frozen(self.faces, dtype=np.int64).reshape(-1, 3)
            if f.size and (f.min() < 0 or f.max() >= len(v)):
                raise ValidationError(
                    f"face index out of range for {len(v)} vertices "
                    f"(min {f.min()}, max {f.max()})"
                )
            object.__setattr__(self, "faces", f)

    @property
    def vertex_count(self):
        return self.vertices.shape[0]

    def flat(self):
        """Shape vector ``(X1, Y1, Z1, ..., XN, YN, ZN)``."""
        return self.vertices.reshape(-1)

    def same_topology(self, other):
        if self.vertex_count != other.vertex_count:
            return False
        if self.faces is None or other.faces is None:
            return True
        return np.array_equal(self.faces, other.faces)


def _obj_index(token, nverts_hint, path, lineno):
    head = token.split("/", 1)[0]
    try:
        idx = int(head)
    except ValueError:
        raise ParseError(f"bad face index {token!r}", path, lineno) from None
    if idx <= 0:
        raise ParseError(f"face index must be a positive 1-based integer, got {idx}", path, lineno)
    return idx - 1


def parse_obj(text, path=None):
    verts = []
    faces = []
    ignored = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise ParseError("vertex line needs 3 coordinates", path, lineno)
            try:
                xyz = [float(p) for p in parts[1:4]]
            except ValueError:
                raise ParseError(f"bad vertex coordinate in {line!r}", path, lineno) from None
            if not all(math.isfinite(c) for c in xyz):
                raise ValidationError(f"{path}:{lineno}: non-finite vertex coordinate")
            verts.append(xyz)
        elif tag == "f":
            if len(parts) != 4:
                raise ParseError(f"only triangles are supported, got {len(parts) - 1} indices", path, lineno)
            faces.append([_obj_index(p, len(verts), path, lineno) for p in parts[1:]])
        else:
            ignored += 1
    if not verts:
        raise ParseError("no vertices", path)
    if faces:
        top = max(max(f) for f in faces)
        if top >= len(verts):
            raise ValidationError(
                f"{path}: face index {top + 1} out of range for {len(verts)} vertices"
            )
    if ignored:
        log.warning("event=obj_lines_ignored path=%s count=%d", path, ignored)
    return Mesh(np.array(verts), np.array(faces, dtype=np.int64) if faces else None, ignored)


def load_mesh(path):
    with open(path, encoding="utf-8") as fh:
        return parse_obj(fh.read(), path=os.fspath(path))


def format_obj(mesh, header=()):
    out = io.StringIO()
    for line in header:
        out.write(line + "\n")
    for x, y, z in mesh.vertices:
        out.write(f"v {fmt(x)} {fmt(y)} {fmt(z)}\n")
    if mesh.faces is not None:
        for i, j, k in mesh.faces:
            out.write(f"f {i + 1} {j + 1} {k + 1}\n")
    return out.getvalue()


def save_mesh(mesh, path, header=None):
    atomic_write_text(path, format_obj(mesh, header if header is not None else header_lines(timestamp=False)))


def load_mesh_dir(directory):
    """Load every ``*.obj`` in ``directory`` in sorted filename order."""
    names = sorted(n for n in os.listdir(directory) if n.lower().endswith(".obj"))
    if not names:
        raise ValidationError(f"no .obj files in {directory}")
    return [load_mesh(os.path.join(directory, n)) for n in names]


def validate_correspondence(meshes):
    """Raise :class:`CorrespondenceError` unless all meshes share topology.

    Vertex counts must match, and face lists must be identical wherever both
    meshes carry one. The error names the first offending mesh index.
    """
    meshes = list(meshes)
    if len(meshes) < 2:
        raise ValidationError("correspondence check needs at least 2 meshes")
    ref = meshes[0]
    ref_faces = next((m.faces for m in meshes if m.faces is not None), None)
    for i, m in enumerate(meshes[1:], start=1):
        if m.vertex_count != ref.vertex_count:
            raise CorrespondenceError(
                f"mesh {i} has {m.vertex_count} vertices, mesh 0 has {ref.vertex_count}", i
            )
        if m.faces is not None and ref_faces is not None and not np.array_equal(m.faces, ref_faces):
            raise CorrespondenceError(f"mesh {i} face list differs from the reference topology", i)
    return True


@dataclass(frozen=True, eq=False)
class LandmarkTrack:
    """Per-frame named 2D landmarks for one video.

    ``points[f, k]`` is the ``(x, y)`` pixel position of ``names[k]`` in the
    frame whose index is ``frame_indices[f]``.
    """

    video_id: str
    names: tuple
    frame_indices: np.ndarray
    points: np.ndarray
    frame_rate: float | None = None

    def __post_init__(self):
        names = tuple(self.names)
        if len(set(names)) != len(names):
            raise ValidationError(f"{self.video_id}: duplicate landmark names")
        idx = _frozen(self.frame_indices, dtype=np.int64)
        pts = _frozen(self.points)
        if pts.ndim != 3 or pts.shape[1:] != (len(names), 2) or pts.shape[0] != len(idx):
            raise ValidationError(
                f"{self.video_id}: points shape {pts.shape} does not match "
                f"{len(idx)} frames x {len(names)} landmarks"
            )
        if len(idx) > 1 and np.any(np.diff(idx) <= 0):
            raise ValidationError(f"{self.video_id}: frame indices must be strictly increasing")
        if not np.all(np.isfinite(pts)):
            f, k, _ = np.argwhere(~np.isfinite(pts))[0]
            raise ValidationError(
                f"{self.video_id}: non-finite coordinate in frame {idx[f]} landmark {names[k]!r}"
            )
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "frame_indices", idx)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.frame_indices)

    def frame(self, i):
        """Landmarks of the ``i``-th frame (positional) as ``{name: array([x, y])}``."""
        return {n: self.points[i, k] for k, n in enumerate(self.names)}

    def index_of(self, name):
        return self.names.index(name)

    def with_points(self, points, video_id=None):
        return LandmarkTrack(
            video_id if video_id is not None else self.video_id,
            self.names,
            self.frame_indices,
            points,
            self.frame_rate,
        )

    @classmethod
    def from_frames(cls, video_id, frames, frame_indices=None, frame_rate=None):
        """Build from a list of ``{name: (x, y)}`` dicts sharing one name set."""
        frames = list(frames)
        if not frames:
            raise ValidationError(f"{video_id}: empty track")
        names = tuple(sorted(frames[0]))
        for f, fr in enumerate(frames):
            if set(fr) != set(names):
                missing = sorted(set(names) - set(fr)) or sorted(set(fr) - set(names))
                raise ValidationError(f"{video_id}: frame {f} landmark set differs at {missing[0]!r}")
        pts = np.array([[fr[n] for n in names] for fr in frames], dtype=float)
        if frame_indices is None:
            frame_indices = np.arange(len(frames))
        return cls(video_id, names, frame_indices, pts, frame_rate)


def parse_landmark_csv(text, video_id="track", path=None):
    frame_rate = None
    body = []
    for raw in text.splitlines():
        stripped = raw.strip()
        if stripped.startswith("#"):
            meta = stripped[1:].strip()
            if meta.startswith("frame_rate="):
                try:
                    frame_rate = float(meta.split("=", 1)[1])
                except ValueError:
                    raise ParseError(f"bad frame_rate comment {stripped!r}", path) from None
            body.append("")
        else:
            body.append(raw)
    # keep physical line numbers for error messages: comments became blank lines
    reader = csv.reader(io.StringIO("\n".join(body)))
    header = None
    rows = {}
    for lineno, rec in enumerate(reader, start=1):
        if not rec or all(not c.strip() for c in rec):
            continue
        if header is None:
            header = [c.strip() for c in rec]
            if header != ["frame", "name", "x", "y"]:
                raise ParseError(f"expected header frame,name,x,y, got {','.join(header)}", path, lineno)
            continue
        if len(rec) != 4:
            raise ParseError(f"expected 4 fields, got {len(rec)}", path, lineno)
        try:
            frame = int(rec[0])
            x, y = float(rec[2]), float(rec[3])
        except ValueError:
            raise ParseError(f"bad numeric field in {','.join(rec)!r}", path, lineno) from None
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ValidationError(f"{path}:{lineno}: non-finite landmark coordinate")
        name = rec[1].strip()
        slot = rows.setdefault(frame, {})
        if name in slot:
            raise ParseError(f"duplicate landmark {name!r} in frame {frame}", path, lineno)
        slot[name] = (x, y)
    if header is None:
        raise ParseError("missing header", path)
    if not rows:
        raise ValidationError(f"{video_id}: track has no frames")
    order = sorted(rows)
    names = set().union(*(rows[f].keys() for f in order))
    for f in order:
        missing = sorted(names - rows[f].keys())
        if missing:
            raise ValidationError(f"{video_id}: frame {f} is missing landmark {missing[0]!r}")
    return LandmarkTrack.from_frames(video_id, [rows[f] for f in order], order, frame_rate)


def load_landmark_track(path, video_id=None):
    if video_id is None:
        video_id = os.path.splitext(os.path.basename(path))[0]
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    return parse_landmark_csv(text, video_id=video_id, path=os.fspath(path))


def format_landmark_csv(track, header=()):
    out = io.StringIO()
    for line in header:
        out.write(line + "\n")
    if track.frame_rate is not None:
        out.write(f"# frame_rate={fmt(track.frame_rate)}\n")
    out.write("frame,name,x,y\n")
    for f, idx in enumerate(track.frame_indices):
        for k, name in enumerate(track.names):
            x, y = track.points[f, k]
            out.write(f"{idx},{name},{fmt(x)},{fmt(y)}\n")
    return out.getvalue()


def save_landmark_track(track, path, header=None):
    atomic_write_text(
        path, format_landmark_csv(track, header if header is not None else header_lines(timestamp=False))
    )


@dataclass(frozen=True)
class LandmarkMapping:
    """Landmark name to 0-based model vertex index."""

    entries: dict

    def __post_init__(self):
        entries = dict(self.entries)
        for name, idx in entries.items():
            if isinstance(idx, bool) or not isinstance(idx, (int, np.integer)) or idx < 0:
                raise ValidationError(f"mapping entry {name!r} must be a non-negative integer, got {idx!r}")
        seen = {}
        for name, idx in entries.items():
            if idx in seen:
                raise ValidationError(f"mapping entries {seen[idx]!r} and {name!r} share vertex {idx}")
            seen[idx] = name
        object.__setattr__(self, "entries", {k: int(v) for k, v in entries.items()})

    @property
    def names(self):
        return tuple(self.entries)

    @property
    def indices(self):
        return np.array([self.entries[n] for n in self.entries], dtype=np.int64)

    def __len__(self):
        return len(self.entries)

    def validate(self, vertex_count):
        for name, idx in self.entries.items():
            if idx >= vertex_count:
                raise ValidationError(
                    f"mapping entry {name!r} -> {idx} out of range for {vertex_count} vertices"
                )
        return self

    def subset(self, names):
        return LandmarkMapping({n: self.entries[n] for n in names})


def load_mapping(path):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", os.fspath(path), exc.lineno) from None
    if not isinstance(raw, dict):
        raise ParseError("mapping must be a JSON object", os.fspath(path))
    return LandmarkMapping({k: v for k, v in raw.items() if not k.startswith("_")})


def format_mapping(mapping, meta=None):
    obj = {}
    if meta is not None:
        obj["_generator"] = meta
    obj.update(mapping.entries)
    return json.dumps(obj, indent=2) + "\n"
