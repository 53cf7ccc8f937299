"""Point clouds, wireframes, pinhole cameras and fixed-radius spatial queries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from roofwire import constants as C


class GeometryError(ValueError):
    pass


@dataclass
class PointCloud:
    """Sparse colored point cloud with per-point derived labels.

    Attributes:
        positions: (n, 3) float32 coordinates in meters.
        colors: (n, 3) uint8 RGB.
        gestalt_label: (n,) uint8 class id, 0 is background.
        house_flag: (n,) bool.
    """

    positions: np.ndarray
    colors: np.ndarray
    gestalt_label: np.ndarray = None
    house_flag: np.ndarray = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float32).reshape(-1, 3)
        n = len(self.positions)
        self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
        if self.gestalt_label is None:
            self.gestalt_label = np.zeros(n, dtype=np.uint8)
        if self.house_flag is None:
            self.house_flag = np.zeros(n, dtype=bool)
        self.gestalt_label = np.asarray(self.gestalt_label, dtype=np.uint8)
        self.house_flag = np.asarray(self.house_flag, dtype=bool)
        if not (len(self.colors) == len(self.gestalt_label) == len(self.house_flag) == n):
            raise GeometryError("point cloud arrays have inconsistent lengths")
        if not np.all(np.isfinite(self.positions)):
            raise GeometryError("point cloud contains non-finite coordinates")

    def __len__(self):
        return len(self.positions)

    def subset(self, ids) -> PointCloud:
        ids = np.asarray(ids, dtype=np.int64)
        return PointCloud(self.positions[ids], self.colors[ids], self.gestalt_label[ids], self.house_flag[ids])


@dataclass
class Wireframe:
    """Undirected 3D graph. Edges are stored as sorted (i, j) pairs with i < j."""

    vertices: np.ndarray
    edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if len(e):
            e = np.sort(e, axis=1)
            e = np.unique(e, axis=0)
        self.edges = e

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in self.edges}

    def validate(self) -> None:
        nv = len(self.vertices)
        if not np.all(np.isfinite(self.vertices)):
            raise GeometryError("wireframe has non-finite vertices")
        if len(self.edges):
            if self.edges.min() < 0 or self.edges.max() >= nv:
                raise GeometryError("edge index out of range")
            if np.any(self.edges[:, 0] == self.edges[:, 1]):
                raise GeometryError("self-loop edge")
        if nv > 1:
            d = np.linalg.norm(self.vertices[:, None] - self.vertices[None], axis=-1)
            d[np.diag_indices(nv)] = np.inf
            if d.min() < 1e-6:
                raise GeometryError("two vertices closer than 1e-6 m")

    def to_json(self) -> dict:
        return {
            "vertices": [[float(c) for c in v] for v in self.vertices],
            "edges": [[int(i), int(j)] for i, j in self.edges],
        }

    @classmethod
    def from_json(cls, data: dict) -> Wireframe:
        verts = np.asarray(data.get("vertices", []), dtype=np.float64).reshape(-1, 3)
        return cls(verts, np.asarray(data.get("edges", []), dtype=np.int64).reshape(-1, 2))


@dataclass
class Camera:
    """Pinhole camera mapping world points p to R @ p + t, then through K."""

    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=np.float64).reshape(3, 3)
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        self.width = int(self.width)
        self.height = int(self.height)

    def validate(self) -> None:
        if not np.allclose(self.R.T @ self.R, np.eye(3), atol=1e-6):
            raise GeometryError("camera rotation is not orthonormal")
        K = self.K
        if abs(K[1, 0]) + abs(K[2, 0]) + abs(K[2, 1]) > 0 or K[0, 0] <= 0 or K[1, 1] <= 0:
            raise GeometryError("intrinsics must be upper-triangular with positive focal lengths")

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    def project_points(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project (n, 3) world points. Returns (n, 2) pixel coordinates and (n,) depths.

        Pixel coordinates of points with depth <= 0 are NaN.
        """
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        pc = p @ self.R.T + self.t
        depth = pc[:, 2]
        uv = np.full((len(p), 2), np.nan)
        front = depth > 0
        if np.any(front):
            x = pc[front, 0] / depth[front]
            y = pc[front, 1] / depth[front]
            K = self.K
            uv[front, 0] = K[0, 0] * x + K[0, 1] * y + K[0, 2]
            uv[front, 1] = K[1, 1] * y + K[1, 2]
        return uv, depth

    def unproject(self, u: float, v: float, depth: float) -> np.ndarray:
        ray = np.linalg.solve(self.K, np.array([u, v, 1.0]))
        pc = ray * depth
        return self.R.T @ (pc - self.t)


def project(camera: Camera, point) -> tuple[float, float, float] | None:
    """Project a single point; None means the point is behind the camera."""
    uv, depth = camera.project_points(np.asarray(point, dtype=np.float64)[None])
    if depth[0] <= 0:
        return None
    return float(uv[0, 0]), float(uv[0, 1]), float(depth[0])


def pixel_lookup(camera: Camera, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Integer pixel (row, col) for each point plus a validity mask (in front and in image)."""
    uv, depth = camera.project_points(points)
    valid = depth > 0
    col = np.zeros(len(depth), dtype=np.int64)
    row = np.zeros(len(depth), dtype=np.int64)
    col[valid] = np.floor(uv[valid, 0]).astype(np.int64)
    row[valid] = np.floor(uv[valid, 1]).astype(np.int64)
    valid &= (col >= 0) & (col < camera.width) & (row >= 0) & (row < camera.height)
    return row, col, valid


class SpatialIndex:
    """Uniform voxel grid over a point set supporting exact box, ball and cylinder queries.

    Every query gathers ids from the overlapped cells and then applies the exact
    predicate, so results equal a linear scan. Ids come back sorted ascending.
    """

    def __init__(self, positions: np.ndarray, cell_size: float = 1.0):
        if cell_size <= 0:
            raise GeometryError("cell_size must be positive")
        self.points = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        self.cell_size = float(cell_size)
        n = len(self.points)
        if n:
            self.origin = self.points.min(axis=0)
            span = self.points.max(axis=0) - self.origin
        else:
            self.origin = np.zeros(3)
            span = np.zeros(3)
        self.dims = np.floor(span / self.cell_size).astype(np.int64) + 1
        cells = self._cell_coords(self.points)
        keys = self._keys(cells)
        self.order = np.argsort(keys, kind="stable")
        self.sorted_keys = keys[self.order]

    def __len__(self):
        return len(self.points)

    def _cell_coords(self, p: np.ndarray) -> np.ndarray:
        c = np.floor((p - self.origin) / self.cell_size).astype(np.int64)
        return np.clip(c, 0, self.dims - 1)

    def _keys(self, cells: np.ndarray) -> np.ndarray:
        return (cells[:, 0] * self.dims[1] + cells[:, 1]) * self.dims[2] + cells[:, 2]

    def _ids_in_aabb(self, lo, hi) -> np.ndarray:
        """Ids of all points whose cell overlaps the box [lo, hi]; a superset of the box content."""
        if len(self.points) == 0:
            return np.zeros(0, dtype=np.int64)
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        top = self.origin + self.dims * self.cell_size
        if np.any(hi < self.origin) or np.any(lo > top):
            return np.zeros(0, dtype=np.int64)
        c0 = self._cell_coords(lo[None])[0]
        c1 = self._cell_coords(hi[None])[0]
        grids = np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(c0, c1)], indexing="ij")
        keys = self._keys(np.stack([g.ravel() for g in grids], axis=1))
        starts = np.searchsorted(self.sorted_keys, keys, side="left")
        ends = np.searchsorted(self.sorted_keys, keys, side="right")
        keep = ends > starts
        if not np.any(keep):
            return np.zeros(0, dtype=np.int64)
        chunks = [self.order[s:e] for s, e in zip(starts[keep], ends[keep])]
        return np.concatenate(chunks)

    def radius_query(self, center, r: float) -> np.ndarray:
        if r <= 0:
            raise GeometryError("radius must be positive")
        c = np.asarray(center, dtype=np.float64)
        ids = self._ids_in_aabb(c - r, c + r)
        d = self.points[ids] - c
        dist2 = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
        return np.sort(ids[dist2 <= r * r])

    def box_query(self, center, side: float) -> np.ndarray:
        if side <= 0:
            raise GeometryError("side must be positive")
        c = np.asarray(center, dtype=np.float64)
        h = side / 2.0
        ids = self._ids_in_aabb(c - h, c + h)
        inside = np.all(np.abs(self.points[ids] - c) <= h, axis=1)
        return np.sort(ids[inside])

    def cylinder_query(self, a, b, radius: float = 1.0, extension: float = 1.0) -> np.ndarray:
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        axis = b - a
        length = float(np.sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]))
        if length <= 1e-6:
            raise GeometryError("degenerate cylinder: endpoints coincide")
        u = axis / length
        e0 = a - u * extension
        e1 = b + u * extension
        lo = np.minimum(e0, e1) - radius
        hi = np.maximum(e0, e1) + radius
        ids = self._ids_in_aabb(lo, hi)
        inside = cylinder_mask(self.points[ids], a, u, length, radius, extension)
        return np.sort(ids[inside])


def cylinder_mask(points: np.ndarray, a: np.ndarray, u: np.ndarray, length: float,
                  radius: float, extension: float) -> np.ndarray:
    d = points - a
    s = d[:, 0] * u[0] + d[:, 1] * u[1] + d[:, 2] * u[2]
    rx = d[:, 0] - s * u[0]
    ry = d[:, 1] - s * u[1]
    rz = d[:, 2] - s * u[2]
    radial2 = rx * rx + ry * ry + rz * rz
    return (s >= -extension) & (s <= length + extension) & (radial2 <= radius * radius)


def _as_index(source) -> SpatialIndex:
    if isinstance(source, SpatialIndex):
        return source
    if isinstance(source, PointCloud):
        return SpatialIndex(source.positions)
    return SpatialIndex(np.asarray(source))


def radius_query(source, center, r: float) -> np.ndarray:
    """`source` is a SpatialIndex, a PointCloud or an (n, 3) array."""
    return _as_index(source).radius_query(center, r)


def extract_cube_patch(source, center, side: float = C.CUBE_SIDE) -> np.ndarray:
    return _as_index(source).box_query(center, side)


def extract_cylinder_patch(source, a, b, radius: float = C.CYLINDER_RADIUS,
                           extension: float = C.CYLINDER_EXTENSION) -> np.ndarray:
    return _as_index(source).cylinder_query(a, b, radius, extension)
