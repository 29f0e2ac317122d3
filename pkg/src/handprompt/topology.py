"""Mesh topology ladders and their plain-text file format.

The desk ladder comes from icosahedron subdivision (12, 42, 162, 642 vertices),
which gives valid faces and exact midpoint upsampling maps at every level.
The "paper" preset ladder (21, 98, 389, 778) has to be loaded from a topology file.
"""
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import TopologyError

ROW_SUM_TOL = 1e-6


@dataclass(frozen=True)
class MeshTopology:
    levels: tuple
    faces: np.ndarray
    upsample_maps: tuple
    faces_per_level: tuple = ()
    # unit-sphere vertex positions per level (desk ladder only)
    positions: tuple = ()

    def __post_init__(self):
        validate_topology(self)

    @property
    def num_vertices(self):
        return self.levels[-1]


def validate_topology(topo):
    levels = list(topo.levels)
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise TopologyError(f"levels must be strictly increasing, got {levels}")
    if len(topo.upsample_maps) != len(levels) - 1:
        raise TopologyError("need one upsample map per level transition")
    for l, m in enumerate(topo.upsample_maps):
        if m.shape != (levels[l + 1], levels[l]):
            raise TopologyError(f"map {l} has shape {m.shape}")
        if np.any(m < 0) or np.max(np.abs(m.sum(axis=1) - 1.0)) > ROW_SUM_TOL:
            raise TopologyError(f"map {l} is not row-stochastic")
    face_sets = [(levels[-1], topo.faces)]
    face_sets += [(levels[l], f) for l, f in enumerate(topo.faces_per_level)]
    for n, faces in face_sets:
        faces = np.asarray(faces)
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise TopologyError("faces must be an (F, 3) index array")
        if faces.min() < 0 or faces.max() >= n:
            raise TopologyError("face index out of range")
        if np.any((faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2])
                  | (faces[:, 0] == faces[:, 2])):
            raise TopologyError("degenerate face")


def icosahedron():
    r = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, r, 0], [1, r, 0], [-1, -r, 0], [1, -r, 0],
        [0, -1, r], [0, 1, r], [0, -1, -r], [0, 1, -r],
        [r, 0, -1], [r, 0, 1], [-r, 0, -1], [-r, 0, 1],
    ], dtype=np.float64)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    return verts / np.linalg.norm(verts, axis=1, keepdims=True), faces


def subdivide(verts, faces):
    """Split every triangle into four; returns new verts, faces and the upsample map."""
    n = len(verts)
    midpoint = {}
    parents = []

    def mid(a, b):
        key = (min(a, b), max(a, b))
        if key not in midpoint:
            midpoint[key] = n + len(parents)
            parents.append(key)
        return midpoint[key]

    new_faces = []
    for a, b, c in faces:
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]

    m = np.zeros((n + len(parents), n))
    m[np.arange(n), np.arange(n)] = 1.0
    for k, (a, b) in enumerate(parents):
        m[n + k, a] = 0.5
        m[n + k, b] = 0.5
    new_verts = m @ verts
    new_verts /= np.linalg.norm(new_verts, axis=1, keepdims=True)
    return new_verts, np.array(new_faces, dtype=np.int64), m


def icosphere_topology(num_levels=4):
    verts, faces = icosahedron()
    positions, face_list, maps = [verts], [faces], []
    for _ in range(num_levels - 1):
        verts, faces, m = subdivide(verts, faces)
        positions.append(verts)
        face_list.append(faces)
        maps.append(m)
    return MeshTopology(
        levels=tuple(len(p) for p in positions),
        faces=face_list[-1],
        upsample_maps=tuple(maps),
        faces_per_level=tuple(face_list[:-1]),
        positions=tuple(positions),
    )


def build_topology(preset, path=None):
    """Topology for ``preset``; the paper preset needs an explicit topology file."""
    if preset.name == "desk" and path is None:
        topo = icosphere_topology(len(preset.levels))
    else:
        if path is None or not Path(path).is_file():
            raise TopologyError("topology file missing")
        topo = read_topology(path)
    if tuple(topo.levels) != tuple(preset.levels):
        raise TopologyError(
            f"ladder mismatch: topology {topo.levels} vs preset {preset.levels}")
    return topo


def write_topology(topo, path):
    lines = ["levels: " + " ".join(str(n) for n in topo.levels)]
    lines += [f"{a} {b} {c}" for a, b, c in topo.faces]
    for l, m in enumerate(topo.upsample_maps):
        rows, cols = np.nonzero(m)
        lines += [f"map {l}: {r} {c} {float(m[r, c])!r}" for r, c in zip(rows, cols)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_topology(path):
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("levels:"):
        raise TopologyError("topology file must start with a 'levels:' header")
    levels = tuple(int(t) for t in text[0].split(":", 1)[1].split())
    maps = [np.zeros((levels[l + 1], levels[l])) for l in range(len(levels) - 1)]
    faces = []
    for lineno, line in enumerate(text[1:], start=2):
        line = line.strip()
        if not line:
            continue
        try:
            if line.startswith("map"):
                head, body = line.split(":", 1)
                l = int(head.split()[1])
                r, c, v = body.split()
                maps[l][int(r), int(c)] = float(v)
            else:
                faces.append([int(t) for t in line.split()])
        except (ValueError, IndexError) as exc:
            raise TopologyError(f"bad topology line {lineno}: {line!r}") from exc
    return MeshTopology(levels=levels, faces=np.array(faces, dtype=np.int64),
                        upsample_maps=tuple(maps))


def synthetic_ladder_topology(levels, seed=0):
    """A valid topology for an arbitrary ladder, for shape testing.

    Carried vertices map one-to-one and every new vertex is the midpoint of two
    random parents; faces are a triangle strip over the final level.
    """
    rng = np.random.default_rng(seed)
    maps = []
    for a, b in zip(levels, levels[1:]):
        m = np.zeros((b, a))
        m[np.arange(a), np.arange(a)] = 1.0
        for r in range(a, b):
            i, j = rng.choice(a, size=2, replace=False)
            m[r, i] = m[r, j] = 0.5
        maps.append(m)
    n = levels[-1]
    faces = np.array([[i, i + 1, i + 2] for i in range(n - 2)], dtype=np.int64)
    return MeshTopology(levels=tuple(levels), faces=faces, upsample_maps=tuple(maps))


def face_edges(faces):
    """(3F, 2) directed edges, three per face in index order."""
    faces = np.asarray(faces)
    return np.stack([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]], axis=1).reshape(-1, 2)
