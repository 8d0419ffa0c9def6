"""Mesh and viewpoint primitives: template construction, deformation, voxelization,
surface sampling and OBJ I/O. Everything here is a pure function on immutable data."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

DEFAULT_CAMERA_DISTANCE = 2.732


class DegenerateMeshError(ValueError):
    pass


@dataclass(frozen=True)
class TriangleMesh:
    """Fixed-topology triangle mesh. Vertices are (V, 3) float64 in object units,
    faces are (F, 3) int vertex-index triples. The face list never changes for a
    given model family; only vertices move."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if f.size:
            if f.min() < 0 or f.max() >= len(v):
                raise ValueError("face index out of range")
            if (
                (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            ).any():
                raise ValueError("degenerate face: repeated vertex index")

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices: np.ndarray) -> "TriangleMesh":
        return TriangleMesh(vertices=np.asarray(vertices), faces=self.faces)

    def face_areas(self) -> np.ndarray:
        tri = self.vertices[self.faces]
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def _wrap_angle(a: float) -> float:
    """Wrap to [-pi, pi)."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class Viewpoint:
    """Camera pose as elevation/azimuth Euler angles (radians) at a fixed distance
    from the origin. Azimuth 0 faces the canonical front (+z axis); positive azimuth
    rotates the camera from +z toward +x. Elevation is measured from the horizontal
    plane toward +y."""

    elevation: float
    azimuth: float
    distance: float = DEFAULT_CAMERA_DISTANCE

    def __post_init__(self):
        if not self.distance > 0:
            raise ValueError("camera distance must be positive")

    def normalized(self) -> "Viewpoint":
        """Canonical form: elevation in [-pi/2, pi/2], azimuth in [-pi, pi).
        Preserves the camera direction vector exactly (over-the-pole elevations
        are reflected onto the opposite azimuth)."""
        e = _wrap_angle(self.elevation)
        a = self.azimuth
        if e > math.pi / 2:
            e = math.pi - e
            a = a + math.pi
        elif e < -math.pi / 2:
            e = -math.pi - e
            a = a + math.pi
        return Viewpoint(e, _wrap_angle(a), self.distance)

    def unit_vector(self) -> np.ndarray:
        """Direction from the origin to the camera."""
        ce = math.cos(self.elevation)
        return np.array(
            [
                ce * math.sin(self.azimuth),
                math.sin(self.elevation),
                ce * math.cos(self.azimuth),
            ]
        )

    def camera_position(self) -> np.ndarray:
        return self.distance * self.unit_vector()

    @classmethod
    def from_degrees(
        cls, elevation_deg: float, azimuth_deg: float, distance: float = DEFAULT_CAMERA_DISTANCE
    ) -> "Viewpoint":
        return cls(math.radians(elevation_deg), math.radians(azimuth_deg), distance).normalized()

    def as_degrees(self) -> tuple[float, float]:
        return math.degrees(self.elevation), math.degrees(self.azimuth)


@dataclass(frozen=True)
class Silhouette:
    """H x W per-pixel object coverage in [0, 1]. Ground-truth silhouettes are
    binary; rendered soft silhouettes are fractional."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 2:
            raise ValueError("silhouette must be a 2D grid")
        if v.size and (v.min() < -1e-6 or v.max() > 1 + 1e-6):
            raise ValueError("silhouette values must lie in [0, 1]")
        object.__setattr__(self, "values", np.clip(v, 0.0, 1.0))

    @property
    def resolution(self) -> tuple[int, int]:
        return self.values.shape

    def is_binary(self) -> bool:
        return bool(np.all((self.values == 0) | (self.values == 1)))


@dataclass(frozen=True)
class SilhouettePyramid:
    """Multi-resolution silhouette stack, coarsest level first."""

    levels: tuple[Silhouette, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        res = [lv.resolution for lv in self.levels]
        for lo, hi in zip(res, res[1:]):
            if not (hi[0] > lo[0] and hi[1] > lo[1]):
                raise ValueError("pyramid levels must strictly increase in resolution")

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    @property
    def finest(self) -> Silhouette:
        return self.levels[-1]


# ---------------------------------------------------------------------------
# Template construction


def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    return verts, faces


def load_template(subdivision: int = 3) -> TriangleMesh:
    """Unit icosphere used as the deformation template. Each subdivision step
    splits every face into four and reprojects new vertices onto the sphere;
    subdivision 3 gives the default 642-vertex template."""
    if subdivision < 0:
        raise ValueError("subdivision must be >= 0")
    verts, faces = _icosahedron()
    for _ in range(subdivision):
        verts_list = list(verts)
        midpoint: dict[tuple[int, int], int] = {}

        def mid(i, j):
            key = (i, j) if i < j else (j, i)
            if key not in midpoint:
                m = verts_list[i] + verts_list[j]
                m = m / np.linalg.norm(m)
                midpoint[key] = len(verts_list)
                verts_list.append(m)
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]])
        verts = np.array(verts_list)
        faces = np.array(new_faces, dtype=np.int64)
    return TriangleMesh(verts, faces)


def deform(template: TriangleMesh, offsets: np.ndarray) -> TriangleMesh:
    """Displace every template vertex by its offset; topology is untouched."""
    offsets = np.asarray(offsets, dtype=np.float64)
    if offsets.shape != template.vertices.shape:
        raise ValueError(
            f"offsets shape {offsets.shape} does not match vertices {template.vertices.shape}"
        )
    return template.with_vertices(template.vertices + offsets)


# ---------------------------------------------------------------------------
# Voxelization


def edge_use_counts(mesh: TriangleMesh) -> dict[tuple[int, int], int]:
    counts: dict[tuple[int, int], int] = {}
    for a, b, c in mesh.faces:
        for i, j in ((a, b), (b, c), (c, a)):
            key = (i, j) if i < j else (j, i)
            counts[key] = counts.get(key, 0) + 1
    return counts


def is_watertight(mesh: TriangleMesh) -> bool:
    """Every undirected edge shared by exactly two faces."""
    if mesh.num_faces == 0:
        return False
    return all(c == 2 for c in edge_use_counts(mesh).values())


def voxelize(
    mesh: TriangleMesh,
    resolution: int,
    bounds: tuple[float, float] = (-0.5, 0.5),
) -> np.ndarray:
    """Occupancy grid over `bounds`^3: a cell is occupied iff its center lies
    inside the mesh under an x-axis ray-parity test. Open meshes are flagged with
    a warning but still voxelized by parity."""
    if resolution < 8:
        raise ValueError("voxel resolution must be >= 8")
    if not is_watertight(mesh):
        warnings.warn("voxelizing a non-watertight mesh; parity result may have holes")

    lo, hi = bounds
    size = hi - lo
    centers = lo + (np.arange(resolution) + 0.5) * size / resolution
    # Tiny irrational offsets keep ray origins off face planes and edges.
    ys = centers + 1.3e-9
    zs = centers + 2.7e-9
    gy, gz = np.meshgrid(ys, zs, indexing="ij")
    ray_y = gy.ravel()
    ray_z = gz.ravel()

    tri = mesh.vertices[mesh.faces]  # (F, 3, 3)
    occ = np.zeros((resolution, resolution, resolution), dtype=bool)
    if len(tri) == 0:
        return occ

    # Per-ray crossing positions along x, found by a 2D point-in-triangle test
    # in the (y, z) plane. Triangles parallel to the rays contribute no
    # transversal crossings and are skipped.
    v0, v1, v2 = tri[:, 0], tri[:, 1], tri[:, 2]
    n = np.cross(v1 - v0, v2 - v0)
    ok = np.abs(n[:, 0]) > 1e-12
    v0, v1, v2, n = v0[ok], v1[ok], v2[ok], n[ok]
    if len(v0) == 0:
        return occ

    def edge_sign(a, b):
        return (b[:, None, 1] - a[:, None, 1]) * (ray_z[None, :] - a[:, None, 2]) - (
            b[:, None, 2] - a[:, None, 2]
        ) * (ray_y[None, :] - a[:, None, 1])

    ayz = v0[:, [1, 2]][:, None, :]
    s0 = edge_sign(v0, v1)
    s1 = edge_sign(v1, v2)
    s2 = edge_sign(v2, v0)
    inside = ((s0 >= 0) & (s1 >= 0) & (s2 >= 0)) | ((s0 <= 0) & (s1 <= 0) & (s2 <= 0))
    del ayz, s0, s1, s2

    # x of the plane intersection for every (face, ray) hit
    f_idx, r_idx = np.nonzero(inside)
    if len(f_idx) == 0:
        return occ
    nf = n[f_idx]
    x_hit = (
        (nf * v0[f_idx]).sum(axis=1) - nf[:, 1] * ray_y[r_idx] - nf[:, 2] * ray_z[r_idx]
    ) / nf[:, 0]

    order = np.lexsort((x_hit, r_idx))
    r_sorted = r_idx[order]
    x_sorted = x_hit[order]
    boundaries = np.searchsorted(r_sorted, np.arange(resolution * resolution + 1))
    # rows are laid out ray-major: row r covers cells (x=:, y=r // res, z=r % res)
    flat = occ.reshape(resolution * resolution, resolution)
    for r in range(resolution * resolution):
        b0, b1 = boundaries[r], boundaries[r + 1]
        if b0 == b1:
            continue
        xs = x_sorted[b0:b1]
        crossings_ahead = len(xs) - np.searchsorted(xs, centers)
        flat[r] = (crossings_ahead % 2) == 1
    # (y, z, x) row layout back into (x, y, z) cell indexing
    return np.transpose(occ, (2, 0, 1))


def point_in_convex_mesh(mesh: TriangleMesh, points: np.ndarray) -> np.ndarray:
    """Containment oracle valid for convex, outward-oriented meshes: a point is
    inside iff it lies behind every face plane."""
    tri = mesh.vertices[mesh.faces]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    d = (n * tri[:, 0]).sum(axis=1)
    side = points @ n.T - d[None, :]
    return (side <= 1e-9).all(axis=1)


# ---------------------------------------------------------------------------
# Surface sampling


def sample_surface(mesh: TriangleMesh, n: int, seed: int = 0) -> np.ndarray:
    """n points sampled area-uniformly over the mesh surface, deterministic per seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0:
        raise DegenerateMeshError("cannot sample a zero-area mesh")
    rng = np.random.default_rng(seed)
    face_ids = rng.choice(len(areas), size=n, p=areas / total)
    tri = mesh.vertices[mesh.faces[face_ids]]
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    a = 1.0 - r1
    b = r1 * (1.0 - r2)
    c = r1 * r2
    return a[:, None] * tri[:, 0] + b[:, None] * tri[:, 1] + c[:, None] * tri[:, 2]


# ---------------------------------------------------------------------------
# OBJ I/O


def export_mesh(mesh: TriangleMesh, path) -> None:
    """Write Wavefront OBJ (v/f records, 1-based indices)."""
    if mesh.num_vertices == 0 or mesh.num_faces == 0:
        raise DegenerateMeshError("refusing to export an empty mesh")
    lines = []
    for x, y, z in mesh.vertices:
        lines.append(f"v {x:.8f} {y:.8f} {z:.8f}")
    for a, b, c in mesh.faces:
        lines.append(f"f {a + 1} {b + 1} {c + 1}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def mesh_to_obj(mesh: TriangleMesh) -> str:
    lines = [f"v {x:.8f} {y:.8f} {z:.8f}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    return "\n".join(lines) + "\n"


def import_mesh(path) -> TriangleMesh:
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:4]]
                faces.append(idx)
    if not verts or not faces:
        raise ValueError(f"no mesh data in {path}")
    return TriangleMesh(np.array(verts), np.array(faces, dtype=np.int64))


# ---------------------------------------------------------------------------
# Evaluation frame


def joint_normalize(meshes: list[TriangleMesh]) -> list[TriangleMesh]:
    """Map a group of meshes into [-0.5, 0.5]^3 with one shared similarity
    transform (center of the joint bounding box, uniform scale by its longest
    axis), preserving relative placement."""
    los = np.stack([m.bounds()[0] for m in meshes])
    his = np.stack([m.bounds()[1] for m in meshes])
    lo, hi = los.min(axis=0), his.max(axis=0)
    center = 0.5 * (lo + hi)
    extent = float((hi - lo).max())
    if extent <= 0:
        raise DegenerateMeshError("degenerate joint bounding box")
    return [m.with_vertices((m.vertices - center) / extent) for m in meshes]
