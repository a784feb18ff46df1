"""Ray-parity inside tests, point-to-set distances and penetration reports for closed meshes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ContractError, TopologyError, ValidationError
from .hand_model import bad_manifold_edge

_GOLDEN_FRACTION = (np.sqrt(5.0) - 1.0) / 2.0
_BASE_DIRECTION = np.array([1.0, _GOLDEN_FRACTION, _GOLDEN_FRACTION**2])
_BASE_DIRECTION /= np.linalg.norm(_BASE_DIRECTION)

BARY_TOL = 1e-9
MAX_RETRIES = 8
MIN_FACE_AREA = 1e-14
_CHUNK = 512


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    # per-face corner a and edges b - a, c - a, cached for the ray and distance kernels
    _a: np.ndarray = field(repr=False)
    _e1: np.ndarray = field(repr=False)
    _e2: np.ndarray = field(repr=False)
    _normals: np.ndarray = field(repr=False)
    _gram: np.ndarray = field(repr=False)
    _centroids: np.ndarray = field(repr=False)
    _bound_radius: float = field(repr=False)

    @property
    def _tree(self) -> cKDTree:
        tree = self.__dict__.get("_kdtree")
        if tree is None:
            tree = cKDTree(self._centroids)
            object.__setattr__(self, "_kdtree", tree)
        return tree

    @property
    def scale(self) -> float:
        return float(max(np.max(self.bbox_max - self.bbox_min), 1e-300))


def build_mesh(vertices, faces) -> TriMesh:
    """Validate a closed 2-manifold triangle mesh and precompute its query data."""
    vertices = np.ascontiguousarray(vertices, dtype=np.float64).reshape(-1, 3)
    faces = np.ascontiguousarray(faces, dtype=np.int64).reshape(-1, 3)
    if faces.size == 0:
        raise TopologyError("mesh has no faces")
    if faces.min() < 0 or faces.max() >= len(vertices):
        raise ContractError("face references a vertex index out of range")
    bad = bad_manifold_edge(faces)
    if bad is not None:
        edge, n = bad
        kind = "boundary" if n == 1 else "non-manifold"
        raise TopologyError(f"{kind} edge {edge} is shared by {n} face(s)")
    a = vertices[faces[:, 0]]
    e1 = vertices[faces[:, 1]] - a
    e2 = vertices[faces[:, 2]] - a
    area = 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)
    bad = np.flatnonzero(area <= MIN_FACE_AREA)
    if bad.size:
        raise ValidationError(f"face {bad[0]} is degenerate (area {area[bad[0]]:.3e} m^2)")
    normals = np.cross(e1, e2)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    gram = np.stack([np.einsum("fi,fi->f", e1, e1), np.einsum("fi,fi->f", e1, e2),
                     np.einsum("fi,fi->f", e2, e2)], axis=1)
    centroids = a + (e1 + e2) / 3.0
    corner_dist = np.linalg.norm(vertices[faces] - centroids[:, None, :], axis=2)
    return TriMesh(vertices, faces, vertices.min(axis=0), vertices.max(axis=0), a, e1, e2,
                   normals, gram, centroids, float(corner_dist.max()))


def _ray_hits(points: np.ndarray, mesh: TriMesh, direction: np.ndarray):
    """Möller-Trumbore against every face. Returns (crossings, ambiguous, on_surface) per point."""
    pvec = np.cross(direction, mesh._e2)  # (F, 3)
    det = np.einsum("fi,fi->f", mesh._e1, pvec)
    usable = np.abs(det) > 1e-300
    inv_det = np.where(usable, 1.0 / np.where(usable, det, 1.0), 0.0)
    t_eps = 1e-12 * mesh.scale

    tvec = points[:, None, :] - mesh._a[None, :, :]  # (N, F, 3)
    u = np.einsum("nfi,fi->nf", tvec, pvec) * inv_det
    qvec = np.cross(tvec, mesh._e1[None, :, :])
    v = (qvec @ direction) * inv_det
    t = np.einsum("nfi,fi->nf", qvec, mesh._e2) * inv_det
    w = 1.0 - u - v

    within = usable & (u >= -BARY_TOL) & (v >= -BARY_TOL) & (w >= -BARY_TOL)
    on_surface = np.any(within & (np.abs(t) <= t_eps), axis=1)
    ahead = within & (t > t_eps)
    near_edge = ahead & ((u <= BARY_TOL) | (v <= BARY_TOL) | (w <= BARY_TOL))
    crossings = np.count_nonzero(ahead & ~near_edge, axis=1)
    return crossings, np.any(near_edge, axis=1), on_surface


def winding_number(points: np.ndarray, mesh: TriMesh) -> np.ndarray:
    """Generalized winding number by summed signed solid angles (Van Oosterom-Strackee)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    out = np.empty(len(points))
    tri = mesh.vertices[mesh.faces]
    for s in range(0, len(points), _CHUNK):
        p = points[s:s + _CHUNK]
        r = tri[None, :, :, :] - p[:, None, None, :]  # (N, F, 3, 3)
        la = np.linalg.norm(r, axis=3)
        a, b, c = r[:, :, 0], r[:, :, 1], r[:, :, 2]
        num = np.einsum("nfi,nfi->nf", a, np.cross(b, c))
        den = (la[..., 0] * la[..., 1] * la[..., 2]
               + np.einsum("nfi,nfi->nf", a, b) * la[..., 2]
               + np.einsum("nfi,nfi->nf", b, c) * la[..., 0]
               + np.einsum("nfi,nfi->nf", c, a) * la[..., 1])
        out[s:s + _CHUNK] = 2.0 * np.arctan2(num, den).sum(axis=1) / (4.0 * np.pi)
    return out


def _perturbed_direction(attempt: int) -> np.ndarray:
    rng = np.random.default_rng(attempt)
    d = _BASE_DIRECTION + 0.25 * rng.normal(size=3)
    return d / np.linalg.norm(d)


def inside_mask(points, mesh: TriMesh) -> np.ndarray:
    """True where a point lies strictly inside the closed mesh.

    Parity of ray crossings along a fixed irrational direction. Rays that graze an
    edge or vertex are re-cast along seeded perturbed directions; after
    MAX_RETRIES the point falls back to the winding number. Points on the surface
    are outside.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    result = np.zeros(len(points), dtype=bool)
    pad = 1e-12 * mesh.scale
    in_box = np.all((points >= mesh.bbox_min - pad) & (points <= mesh.bbox_max + pad), axis=1)
    candidates = np.flatnonzero(in_box)
    for s in range(0, len(candidates), _CHUNK):
        idx = candidates[s:s + _CHUNK]
        pending = idx
        for attempt in range(MAX_RETRIES + 1):
            direction = _BASE_DIRECTION if attempt == 0 else _perturbed_direction(attempt)
            crossings, ambiguous, on_surface = _ray_hits(points[pending], mesh, direction)
            settled = on_surface | ~ambiguous
            result[pending[settled]] = ~on_surface[settled] & (crossings[settled] % 2 == 1)
            pending = pending[~settled]
            if pending.size == 0:
                break
        if pending.size:
            result[pending] = np.abs(winding_number(points[pending], mesh)) > 0.5
    return result


def nearest_vertex_distance(points, vertex_set) -> tuple[np.ndarray, np.ndarray]:
    """Exact distance from each point to the nearest member of ``vertex_set`` and its index.

    Ties go to the lowest index.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    vertex_set = np.asarray(vertex_set, dtype=np.float64).reshape(-1, 3)
    if len(vertex_set) == 0:
        raise ContractError("nearest_vertex_distance needs a non-empty vertex set")
    dist = np.empty(len(points))
    index = np.empty(len(points), dtype=np.int64)
    for s in range(0, len(points), _CHUNK):
        diff = points[s:s + _CHUNK, None, :] - vertex_set[None, :, :]
        d = np.sqrt(diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2])
        i = np.argmin(d, axis=1)
        index[s:s + _CHUNK] = i
        dist[s:s + _CHUNK] = d[np.arange(len(i)), i]
    return dist, index


def _segment_distance(p, a, e):
    ee = np.einsum("...i,...i->...", e, e)
    t = np.clip(np.einsum("...i,...i->...", p - a, e) / ee, 0.0, 1.0)
    return np.linalg.norm(p - a - t[..., None] * e, axis=-1)


def _pair_distance(p: np.ndarray, mesh: TriMesh, f: np.ndarray) -> np.ndarray:
    """Distance from p[i] to triangle f[i], vectorized over pairs."""
    a, e1, e2 = mesh._a[f], mesh._e1[f], mesh._e2[f]
    n = mesh._normals[f]
    rel = p - a
    plane = np.einsum("pi,pi->p", rel, n)
    proj = rel - plane[:, None] * n
    d00, d01, d11 = mesh._gram[f].T
    d20 = np.einsum("pi,pi->p", proj, e1)
    d21 = np.einsum("pi,pi->p", proj, e2)
    denom = d00 * d11 - d01 * d01
    bv = (d11 * d20 - d01 * d21) / denom
    bw = (d00 * d21 - d01 * d20) / denom
    interior = (bv >= 0) & (bw >= 0) & (bv + bw <= 1)
    best = np.where(interior, np.abs(plane), np.inf)
    best = np.minimum(best, _segment_distance(p, a, e1))
    best = np.minimum(best, _segment_distance(p, a, e2))
    best = np.minimum(best, _segment_distance(p, a + e1, e2 - e1))
    return best


def point_to_surface_distance(points, mesh: TriMesh) -> np.ndarray:
    """Exact unsigned distance from each point to the nearest triangle (face, edge or vertex).

    A KD-tree over triangle centroids only prunes candidates: any triangle whose
    centroid is farther than (upper bound + bounding radius) cannot be closest.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    F = len(mesh.faces)
    out = np.empty(len(points))
    if len(points) * F <= 200_000:
        for s in range(0, len(points), _CHUNK):
            p = points[s:s + _CHUNK]
            pi = np.repeat(np.arange(len(p)), F)
            fi = np.tile(np.arange(F), len(p))
            out[s:s + _CHUNK] = _pair_distance(p[pi], mesh, fi).reshape(len(p), F).min(axis=1)
        return out
    k = min(8, F)
    _, near = mesh._tree.query(points, k=k)
    near = near.reshape(len(points), k)
    pi = np.repeat(np.arange(len(points)), k)
    upper = _pair_distance(points[pi], mesh, near.reshape(-1)).reshape(len(points), k).min(axis=1)
    # tiny slack guards the ball query against rounding at the boundary
    radius = upper + mesh._bound_radius + 1e-9 * mesh.scale
    for s in range(0, len(points), _CHUNK):
        p = points[s:s + _CHUNK]
        lists = mesh._tree.query_ball_point(p, radius[s:s + _CHUNK])
        counts = np.fromiter((len(c) for c in lists), dtype=np.int64, count=len(lists))
        fi = np.fromiter((j for c in lists for j in c), dtype=np.int64, count=int(counts.sum()))
        pi = np.repeat(np.arange(len(p)), counts)
        d = _pair_distance(p[pi], mesh, fi)
        best = np.full(len(p), np.inf)
        np.minimum.at(best, pi, d)
        out[s:s + _CHUNK] = np.minimum(best, upper[s:s + _CHUNK])
    return out


@dataclass
class CollisionReport:
    inside_mask_right_in_left: np.ndarray
    inside_mask_left_in_right: np.ndarray
    max_depth: float
    penetrating_count: int
    per_vertex_depth: dict[int, float]

    def to_record(self, frame: int) -> str:
        """One structured text line: frame, count, max depth in mm, penetrating vertex ids."""
        ids = " ".join(str(i) for i in sorted(self.per_vertex_depth))
        return f"frame={frame} count={self.penetrating_count} max_depth_mm={self.max_depth * 1000.0:.6f} ids=[{ids}]"


def penetration_report(mesh_right: TriMesh, mesh_left: TriMesh) -> CollisionReport:
    """Right-hand vertices inside the left mesh, with their depth to the left surface."""
    r_in_l = inside_mask(mesh_right.vertices, mesh_left)
    l_in_r = inside_mask(mesh_left.vertices, mesh_right)
    ids = np.flatnonzero(r_in_l)
    depths = point_to_surface_distance(mesh_right.vertices[ids], mesh_left) if ids.size else np.zeros(0)
    return CollisionReport(
        inside_mask_right_in_left=r_in_l,
        inside_mask_left_in_right=l_in_r,
        max_depth=float(depths.max()) if ids.size else 0.0,
        penetrating_count=int(ids.size),
        per_vertex_depth={int(i): float(d) for i, d in zip(ids, depths)},
    )


def box_mesh(center=(0.0, 0.0, 0.0), size=1.0) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned cube as 8 vertices and 12 outward-oriented triangles."""
    h = 0.5 * np.broadcast_to(np.asarray(size, dtype=np.float64), (3,))
    corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=np.float64)
    vertices = corners * h + np.asarray(center, dtype=np.float64)
    faces = np.array([
        [0, 1, 3], [0, 3, 2],  # x-
        [4, 6, 7], [4, 7, 5],  # x+
        [0, 4, 5], [0, 5, 1],  # y-
        [2, 3, 7], [2, 7, 6],  # y+
        [0, 2, 6], [0, 6, 4],  # z-
        [1, 5, 7], [1, 7, 3],  # z+
    ], dtype=np.int64)
    return vertices, faces


def icosphere(radius=1.0, subdivisions=3, center=(0.0, 0.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
             [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    faces = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
             [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
             [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new_faces
    return np.array(verts) * radius + np.asarray(center, dtype=np.float64), np.array(faces, dtype=np.int64)
