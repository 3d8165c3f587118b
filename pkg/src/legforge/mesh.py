"""Printable surface extraction for voxel phenotypes.

Every exposed voxel face becomes a quad split into two triangles. Vertices sit on the voxel lattice and
are shared between faces. Where two voxels touch only along an edge, the faces meeting there get a
midpoint per voxel instead of sharing the edge, so each edge keeps exactly two incident triangles.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import trimesh
from loguru import logger

from legforge.errors import EmptyPhenotypeError, ExportError
from legforge.voxelizer import VoxelGrid

MM_PER_VOXEL = 5.0
STL_HEADER = b"legforge binary STL".ljust(80, b" ")

_STL_RECORD = np.dtype(
    [("normal", "<f4", (3,)), ("vertices", "<f4", (3, 3)), ("attribute", "<u2")],
)
_NO_OWNER = (-1, -1, -1)


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self) -> None:
        vertices = np.array(self.vertices, dtype=float, copy=True).reshape(-1, 3)
        triangles = np.array(self.triangles, dtype=np.int64, copy=True).reshape(-1, 3)
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise ValueError("triangle references a vertex index out of range")
        vertices.flags.writeable = False
        triangles.flags.writeable = False
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def corners(self) -> np.ndarray:
        return self.vertices[self.triangles]

    def face_normals(self) -> np.ndarray:
        corners = self.corners()
        normals = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
        lengths = np.linalg.norm(normals, axis=1, keepdims=True)
        return np.divide(normals, lengths, out=np.zeros_like(normals), where=lengths > 0)

    def signed_volume(self) -> float:
        corners = self.corners()
        return float(np.einsum("ij,ij->i", corners[:, 0], np.cross(corners[:, 1], corners[:, 2])).sum() / 6.0)

    def bounds(self) -> np.ndarray:
        return np.stack([self.vertices.min(axis=0), self.vertices.max(axis=0)])

    def to_trimesh(self) -> trimesh.Trimesh:
        return trimesh.Trimesh(vertices=self.vertices.copy(), faces=self.triangles.copy(), process=False)


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------


def _exposed_faces(occupancy: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per direction: (quad corners in lattice units, owning cells). Corners wind counter-clockwise
    seen from outside the solid."""
    padded = np.pad(occupancy, 1)
    faces: list[tuple[np.ndarray, np.ndarray]] = []
    for axis in range(3):
        b, c = (axis + 1) % 3, (axis + 2) % 3
        e_b = np.eye(3, dtype=np.int64)[b]
        e_c = np.eye(3, dtype=np.int64)[c]
        for sign in (1, -1):
            neighbour = [slice(1, -1)] * 3
            neighbour[axis] = slice(2, None) if sign > 0 else slice(0, -2)
            cells = np.argwhere(occupancy & ~padded[tuple(neighbour)])
            if not len(cells):
                continue
            origin = cells.copy()
            if sign > 0:
                origin[:, axis] += 1
                ring = (origin, origin + e_b, origin + e_b + e_c, origin + e_c)
            else:
                ring = (origin, origin + e_c, origin + e_b + e_c, origin + e_b)
            faces.append((np.stack(ring, axis=1), cells))
    return faces


def _pinched_edges(occupancy: np.ndarray) -> list[np.ndarray]:
    """For each edge direction a, a boolean array indexed by the edge start point in (a, b, c) order that
    marks edges surrounded by exactly two diagonally opposite voxels."""
    padded = np.pad(occupancy, 1)
    pinched: list[np.ndarray] = []
    for axis in range(3):
        view = np.transpose(padded, (axis, (axis + 1) % 3, (axis + 2) % 3))[1:-1]
        c00, c10 = view[:, :-1, :-1], view[:, 1:, :-1]
        c01, c11 = view[:, :-1, 1:], view[:, 1:, 1:]
        pinched.append((c00 & c11 & ~c10 & ~c01) | (c10 & c01 & ~c00 & ~c11))
    return pinched


def _edge_is_pinched(pinched: list[np.ndarray], start: np.ndarray, end: np.ndarray) -> bool:
    axis = int(np.flatnonzero(start != end)[0])
    low = np.minimum(start, end)
    order = (axis, (axis + 1) % 3, (axis + 2) % 3)
    return bool(pinched[axis][tuple(int(low[i]) for i in order)])


def _corner_key(point: np.ndarray) -> tuple[int, ...]:
    return (*(2 * int(v) for v in point), *_NO_OWNER)


def extract_surface(grid: VoxelGrid, *, voxel_edge_mm: float = MM_PER_VOXEL) -> TriangleMesh:
    occupancy = grid.occupancy
    if not occupancy.any():
        raise EmptyPhenotypeError()

    pinched = _pinched_edges(occupancy)
    any_pinched = any(mask.any() for mask in pinched)

    # Triangle corners as 6-int keys: doubled lattice position plus the owning voxel for edge midpoints.
    regular: list[np.ndarray] = []
    special: list[tuple[int, ...]] = []
    for quads, cells in _exposed_faces(occupancy):
        if any_pinched:
            split = np.array(
                [
                    any(_edge_is_pinched(pinched, quad[k], quad[(k + 1) % 4]) for k in range(4))
                    for quad in quads
                ]
            )
        else:
            split = np.zeros(len(quads), dtype=bool)
        plain = quads[~split]
        if len(plain):
            keys = np.concatenate([2 * plain, np.full((len(plain), 4, 3), -1, dtype=np.int64)], axis=2)
            regular.append(keys[:, [0, 1, 2, 0, 2, 3], :].reshape(-1, 6))
        for quad, cell in zip(quads[split], cells[split]):
            special.extend(_fan_keys(quad, cell, pinched))

    blocks = regular + ([np.array(special, dtype=np.int64)] if special else [])
    keys = np.concatenate(blocks, axis=0)
    unique, inverse = np.unique(keys, axis=0, return_inverse=True)
    vertices = unique[:, :3].astype(float) * (voxel_edge_mm / 2.0)
    mesh = TriangleMesh(vertices, inverse.reshape(-1, 3))
    logger.debug("extracted surface voxels={} vertices={} triangles={}", grid.count, mesh.n_vertices, mesh.n_triangles)
    return mesh


def _fan_keys(quad: np.ndarray, cell: np.ndarray, pinched: list[np.ndarray]) -> list[tuple[int, ...]]:
    owner = tuple(int(v) for v in cell)
    ring: list[tuple[int, ...]] = []
    for k in range(4):
        start, end = quad[k], quad[(k + 1) % 4]
        ring.append(_corner_key(start))
        if _edge_is_pinched(pinched, start, end):
            ring.append((*(int(v) for v in start + end), *owner))
    centre = (*(int(v) for v in quad[0] + quad[2]), *_NO_OWNER)
    keys: list[tuple[int, ...]] = []
    for i in range(len(ring)):
        keys.extend((centre, ring[i], ring[(i + 1) % len(ring)]))
    return keys


def smooth(mesh: TriangleMesh, iterations: int, lam: float = 0.5) -> TriangleMesh:
    """Explicit Laplacian smoothing; vertex positions move, connectivity does not."""
    if iterations < 0:
        raise ValueError(f"iterations must be >= 0, got {iterations}")
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lambda must lie in (0, 1), got {lam}")
    if iterations == 0:
        return mesh
    smoothed = trimesh.smoothing.filter_laplacian(
        mesh.to_trimesh(),
        lamb=lam,
        iterations=iterations,
        implicit_time_integration=False,
        volume_constraint=False,
    )
    return TriangleMesh(np.asarray(smoothed.vertices), mesh.triangles)


# ---------------------------------------------------------------------------
# Writers
# ---------------------------------------------------------------------------


def obj_text(mesh: TriangleMesh) -> str:
    lines = [f"v {float(x)!r} {float(y)!r} {float(z)!r}" for x, y, z in mesh.vertices]
    lines.extend(f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles)
    return "\n".join(lines) + "\n"


def stl_bytes(mesh: TriangleMesh) -> bytes:
    records = np.zeros(mesh.n_triangles, dtype=_STL_RECORD)
    records["normal"] = mesh.face_normals()
    records["vertices"] = mesh.corners()
    return STL_HEADER + np.uint32(mesh.n_triangles).astype("<u4").tobytes() + records.tobytes()


def _write(path: Path, payload: str | bytes) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(payload, bytes):
            path.write_bytes(payload)
        else:
            path.write_text(payload, encoding="ascii")
    except OSError as exc:
        raise ExportError(path, exc.strerror or str(exc)) from exc
    return path


def write_obj(mesh: TriangleMesh, path: Path) -> Path:
    return _write(path, obj_text(mesh))


def write_stl(mesh: TriangleMesh, path: Path) -> Path:
    return _write(path, stl_bytes(mesh))
