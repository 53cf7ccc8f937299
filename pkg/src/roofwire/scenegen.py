"""Synthetic houses: parametric wireframes, noisy incomplete point clouds, posed
cameras and rasterised Gestalt-style / house-mask label images."""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage
from skimage.draw import disk, line, polygon

from roofwire.geometry import Camera, PointCloud, Wireframe, pixel_lookup

GENERATOR_VERSION = "1"


class GestaltClass(enum.IntEnum):
    BACKGROUND = 0
    ROOF = 1
    WALL = 2
    RIDGE = 3
    APEX = 4
    EAVE_END_POINT = 5
    FLASHING_END = 6


PALETTE = {
    GestaltClass.BACKGROUND: (0, 0, 0),
    GestaltClass.ROOF: (215, 62, 138),
    GestaltClass.WALL: (46, 135, 214),
    GestaltClass.RIDGE: (214, 220, 50),
    GestaltClass.APEX: (235, 88, 48),
    GestaltClass.EAVE_END_POINT: (248, 164, 40),
    GestaltClass.FLASHING_END: (120, 216, 92),
}
PALETTE_ARRAY = np.array([PALETTE[c] for c in GestaltClass], dtype=np.uint8)
VERTEX_CLASSES = (GestaltClass.APEX, GestaltClass.EAVE_END_POINT, GestaltClass.FLASHING_END)

ROOF_COLORS = np.array([[92, 64, 51], [70, 70, 78], [140, 46, 38], [48, 52, 60], [110, 96, 80]], dtype=float)
WALL_COLORS = np.array([[222, 214, 196], [190, 182, 160], [236, 236, 230], [176, 120, 90], [150, 160, 170]], dtype=float)

ROOF_TYPES = ("gable", "hip", "l_gable")


class SceneError(ValueError):
    pass


@dataclass
class HouseSpec:
    """Parametric house. `length` runs along the local x axis, `width` along y.

    For ``l_gable`` a second, narrower wing of width `wing_width` extends along +y
    to a total depth `wing_length`, flush with the x = 0 end of the main wing.
    """

    roof_type: str = "gable"
    length: float = 8.0
    width: float = 6.0
    wall_height: float = 3.0
    ridge_rise: float = 2.0
    wing_width: float = 0.0
    wing_length: float = 0.0
    yaw: float = 0.0
    offset: tuple = (0.0, 0.0)
    rng_seed: int = 0

    def validate(self) -> None:
        if self.roof_type not in ROOF_TYPES:
            raise SceneError(f"unsupported roof type {self.roof_type!r}")
        if min(self.length, self.width, self.wall_height, self.ridge_rise) <= 0:
            raise SceneError("house dimensions must be positive")
        if self.roof_type == "hip" and self.length <= self.width:
            raise SceneError("hip roof needs length > width")
        if self.roof_type == "l_gable":
            if not 0 < self.wing_width < self.width:
                raise SceneError("L wing must be narrower than the main wing")
            if self.wing_length <= self.width or self.length <= self.width:
                raise SceneError("L wing and main wing must protrude past the corner square")


@dataclass
class HouseMesh:
    """Planar faces over the wireframe's vertex array.

    `faces` are vertex loops, `face_kind` is ROOF or WALL, `normals` point outward,
    `triangles` index the same vertex array with `tri_face` naming the parent face.
    """

    vertices: np.ndarray
    faces: list
    face_kind: np.ndarray
    normals: np.ndarray
    triangles: np.ndarray
    tri_face: np.ndarray
    vertex_class: np.ndarray
    ridge_edges: np.ndarray

    def triangle_areas(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    @property
    def area(self) -> float:
        return float(self.triangle_areas().sum())


def _newell_normal(pts: np.ndarray) -> np.ndarray:
    n = np.zeros(3)
    for i in range(len(pts)):
        a, b = pts[i], pts[(i + 1) % len(pts)]
        n += np.array([(a[1] - b[1]) * (a[2] + b[2]), (a[2] - b[2]) * (a[0] + b[0]), (a[0] - b[0]) * (a[1] + b[1])])
    return n / np.linalg.norm(n)


def _ear_clip(pts2: np.ndarray) -> list[tuple[int, int, int]]:
    """Triangulate a simple counter-clockwise 2D polygon."""
    idx = list(range(len(pts2)))
    tris = []

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    guard = 0
    while len(idx) > 3 and guard < 1000:
        guard += 1
        for k in range(len(idx)):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
            a, b, c = pts2[i0], pts2[i1], pts2[i2]
            if cross(a, b, c) <= 1e-12:
                continue
            inside = False
            for j in idx:
                if j in (i0, i1, i2):
                    continue
                p = pts2[j]
                if cross(a, b, p) >= 0 and cross(b, c, p) >= 0 and cross(c, a, p) >= 0:
                    inside = True
                    break
            if not inside:
                tris.append((i0, i1, i2))
                idx.pop(k)
                break
    tris.append(tuple(idx))
    return tris


def _house_topology(spec: HouseSpec):
    """Local-frame vertices, classes, face loops (+ kind), edges and ridge edges."""
    L, W, h, r = spec.length, spec.width, spec.wall_height, spec.ridge_rise
    E, A, F = GestaltClass.EAVE_END_POINT, GestaltClass.APEX, GestaltClass.FLASHING_END
    ROOF, WALL = GestaltClass.ROOF, GestaltClass.WALL
    if spec.roof_type in ("gable", "hip"):
        foot = [(0, 0), (L, 0), (L, W), (0, W)]
        if spec.roof_type == "gable":
            apex = [(0, W / 2), (L, W / 2)]
        else:
            apex = [(W / 2, W / 2), (L - W / 2, W / 2)]
        verts = [(x, y, 0) for x, y in foot] + [(x, y, h) for x, y in foot] + [(x, y, h + r) for x, y in apex]
        classes = [E] * 8 + [A, A]
        g, e, a0, a1 = list(range(4)), list(range(4, 8)), 8, 9
        if spec.roof_type == "gable":
            faces = [
                ([g[0], g[1], e[1], e[0]], WALL), ([g[1], g[2], e[2], a1, e[1]], WALL),
                ([g[2], g[3], e[3], e[2]], WALL), ([g[3], g[0], e[0], a0, e[3]], WALL),
                ([e[0], e[1], a1, a0], ROOF), ([e[2], e[3], a0, a1], ROOF),
            ]
            edges = [(0, 1), (1, 2), (2, 3), (3, 0), (0, 4), (1, 5), (2, 6), (3, 7), (4, 5), (6, 7),
                     (8, 9), (4, 8), (7, 8), (5, 9), (6, 9)]
        else:
            faces = [([g[i], g[(i + 1) % 4], e[(i + 1) % 4], e[i]], WALL) for i in range(4)] + [
                ([e[0], e[1], a1, a0], ROOF), ([e[1], e[2], a1], ROOF),
                ([e[2], e[3], a0, a1], ROOF), ([e[3], e[0], a0], ROOF),
            ]
            edges = [(0, 1), (1, 2), (2, 3), (3, 0), (0, 4), (1, 5), (2, 6), (3, 7), (4, 5), (5, 6), (6, 7),
                     (7, 4), (8, 9), (4, 8), (7, 8), (5, 9), (6, 9)]
        ridges = [(8, 9)]
        return verts, classes, faces, edges, ridges
    # L-shaped house: main wing [0,L]x[0,W] gabled at x=L and hipped at x=0, the
    # wing [0,W2]x[0,Ly] gabled at y=Ly; same pitch everywhere, so the wing's west
    # slope and the main hip slope are one plane.
    W2, Ly = spec.wing_width, spec.wing_length
    pitch = r / (W / 2)
    H1, H2 = h + r, h + pitch * W2 / 2
    foot = [(0, 0), (L, 0), (L, W), (W2, W), (W2, Ly), (0, Ly)]
    top = [(L, W / 2, H1), (W / 2, W / 2, H1), (W2 / 2, W - W2 / 2, H2), (W2 / 2, Ly, H2)]
    verts = [(x, y, 0) for x, y in foot] + [(x, y, h) for x, y in foot] + top
    classes = [E] * 6 + [E, E, E, F, E, E] + [A] * 4
    e = list(range(6, 12))
    A1, R, J, A2 = 12, 13, 14, 15
    faces = [
        ([0, 1, e[1], e[0]], WALL), ([1, 2, e[2], A1, e[1]], WALL), ([2, 3, e[3], e[2]], WALL),
        ([3, 4, e[4], e[3]], WALL), ([4, 5, e[5], A2, e[4]], WALL), ([5, 0, e[0], e[5]], WALL),
        ([e[0], e[1], A1, R], ROOF), ([A1, e[2], e[3], J, R], ROOF),
        ([e[0], R, J, A2, e[5]], ROOF), ([e[3], e[4], A2, J], ROOF),
    ]
    edges = [(i, (i + 1) % 6) for i in range(6)] + [(i, i + 6) for i in range(6)] + [
        (6, 7), (8, 9), (9, 10), (11, 6), (A1, R), (J, A2), (7, A1), (8, A1), (10, A2), (11, A2),
        (6, R), (9, J), (R, J),
    ]
    ridges = [(A1, R), (J, A2)]
    return verts, classes, faces, edges, ridges


def generate_house(spec: HouseSpec) -> tuple[Wireframe, HouseMesh]:
    spec.validate()
    verts, classes, faces, edges, ridges = _house_topology(spec)
    v = np.asarray(verts, dtype=np.float64)
    if spec.roof_type == "l_gable":
        fx = np.array([p[0] for p in verts[:6]])
        fy = np.array([p[1] for p in verts[:6]])
        # area centroid of the L footprint
        a = fx * np.roll(fy, -1) - np.roll(fx, -1) * fy
        area = a.sum() / 2
        cx = ((fx + np.roll(fx, -1)) * a).sum() / (6 * area)
        cy = ((fy + np.roll(fy, -1)) * a).sum() / (6 * area)
    else:
        cx, cy = spec.length / 2, spec.width / 2
    v[:, 0] -= cx
    v[:, 1] -= cy
    c, s = math.cos(spec.yaw), math.sin(spec.yaw)
    rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    v = v @ rot.T
    v[:, 0] += spec.offset[0]
    v[:, 1] += spec.offset[1]

    loops, kinds, normals, tris, tri_face = [], [], [], [], []
    for fi, (loop, kind) in enumerate(faces):
        pts = v[loop]
        n = _newell_normal(pts)
        if kind == GestaltClass.ROOF:
            outward = n[2] > 0
        else:
            # wall loops run ground edge first along the ccw footprint, so the
            # outward normal is the footprint edge direction rotated by -90 deg
            d = pts[1] - pts[0]
            outward = np.dot(n, np.array([d[1], -d[0], 0.0])) > 0
        if not outward:
            n = -n
        # triangulate in the face plane with a ccw orientation w.r.t. n
        ax = np.argmax(np.abs(n))
        keep = [i for i in range(3) if i != ax]
        p2 = pts[:, keep]
        signed = np.sum(p2[:, 0] * np.roll(p2[:, 1], -1) - np.roll(p2[:, 0], -1) * p2[:, 1])
        order = list(range(len(loop)))
        if signed < 0:
            order = order[::-1]
        for t in _ear_clip(p2[order]):
            tri = [loop[order[k]] for k in t]
            tv = v[tri]
            if np.dot(np.cross(tv[1] - tv[0], tv[2] - tv[0]), n) < 0:
                tri = tri[::-1]
            tris.append(tri)
            tri_face.append(fi)
        loops.append(list(loop))
        kinds.append(int(kind))
        normals.append(n)
    wf = Wireframe(v, np.asarray(edges))
    wf.validate()
    mesh = HouseMesh(
        vertices=v, faces=loops, face_kind=np.asarray(kinds), normals=np.asarray(normals),
        triangles=np.asarray(tris, dtype=np.int64), tri_face=np.asarray(tri_face, dtype=np.int64),
        vertex_class=np.asarray(classes, dtype=np.uint8), ridge_edges=np.asarray(ridges, dtype=np.int64),
    )
    return wf, mesh


def random_house_spec(rng: np.random.Generator, roof_types=ROOF_TYPES) -> HouseSpec:
    roof = str(rng.choice(list(roof_types)))
    width = float(rng.uniform(5.0, 9.0))
    length = float(rng.uniform(width + 1.5, width + 6.0))
    spec = HouseSpec(
        roof_type=roof, length=length, width=width,
        wall_height=float(rng.uniform(2.6, 4.5)),
        ridge_rise=float(rng.uniform(0.3, 0.55) * width),
        yaw=float(rng.uniform(-math.pi, math.pi)),
        offset=(float(rng.uniform(-3, 3)), float(rng.uniform(-3, 3))),
        rng_seed=int(rng.integers(1 << 31)),
    )
    if roof == "l_gable":
        spec.wing_width = float(rng.uniform(0.55, 0.8) * width)
        spec.wing_length = float(rng.uniform(width + 2.0, width + 5.0))
    return spec


@dataclass
class DropoutSpec:
    """Occlusion model: drop back-facing points and/or an azimuth sector around `center`."""

    backface: bool = True
    sector_deg: float = 0.0
    sector_start_deg: float = 0.0
    center: tuple = (0.0, 0.0)


def point_azimuth_deg(points: np.ndarray, center) -> np.ndarray:
    return np.degrees(np.arctan2(points[:, 1] - center[1], points[:, 0] - center[0])) % 360.0


def sample_point_cloud(mesh: HouseMesh, density: float, noise_sigma: float, dropout: DropoutSpec | None,
                       rng: np.random.Generator, camera_centers: np.ndarray | None = None,
                       roof_color=None, wall_color=None, return_faces: bool = False):
    """Area-weighted uniform surface samples with Gaussian noise, occlusion dropout and face colors."""
    if density <= 0:
        raise SceneError("density must be positive")
    areas = mesh.triangle_areas()
    n = int(round(density * areas.sum()))
    tri = rng.choice(len(areas), size=n, p=areas / areas.sum())
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    tv = mesh.vertices[mesh.triangles[tri]]
    pts = (1 - r1)[:, None] * tv[:, 0] + (r1 * (1 - r2))[:, None] * tv[:, 1] + (r1 * r2)[:, None] * tv[:, 2]
    if noise_sigma > 0:
        pts = pts + rng.normal(0.0, noise_sigma, size=pts.shape)
    face = mesh.tri_face[tri]
    keep = np.ones(n, dtype=bool)
    if dropout is not None:
        if dropout.backface and camera_centers is not None and len(camera_centers):
            nrm = mesh.normals[face]
            facing = np.zeros(n, dtype=bool)
            for c in np.asarray(camera_centers):
                facing |= np.einsum("ij,ij->i", nrm, c - pts) > 0
            keep &= facing
        if dropout.sector_deg > 0:
            az = point_azimuth_deg(pts, dropout.center)
            rel = (az - dropout.sector_start_deg) % 360.0
            keep &= rel >= dropout.sector_deg
    pts, face = pts[keep], face[keep]
    roof_color = ROOF_COLORS[0] if roof_color is None else np.asarray(roof_color, dtype=float)
    wall_color = WALL_COLORS[0] if wall_color is None else np.asarray(wall_color, dtype=float)
    base = np.where((mesh.face_kind[face] == GestaltClass.ROOF)[:, None], roof_color, wall_color)
    colors = np.clip(base + rng.normal(0, 10.0, size=base.shape), 0, 255).round().astype(np.uint8)
    cloud = PointCloud(pts.astype(np.float32), colors)
    if return_faces:
        return cloud, face
    return cloud


def look_at_camera(position, target, image_size: int, focal: float) -> Camera:
    position = np.asarray(position, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - position
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, [0.0, 0.0, 1.0])
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    K = np.array([[focal, 0, image_size / 2], [0, focal, image_size / 2], [0, 0, 1]])
    return Camera(K, R, -R @ position, image_size, image_size)


def place_cameras(n: int, ring_radius: float, height: float, image_size: int, focal: float,
                  center=(0.0, 0.0, 0.0), phase: float = 0.0) -> list[Camera]:
    """Cameras evenly spaced on a horizontal ring at `height`, all looking at `center`."""
    if n < 3:
        raise SceneError("need at least three cameras")
    center = np.asarray(center, dtype=np.float64)
    cams = []
    for k in range(n):
        az = phase + 2 * math.pi * k / n
        pos = center + np.array([ring_radius * math.cos(az), ring_radius * math.sin(az), 0.0])
        pos[2] = height
        cams.append(_f32_camera(look_at_camera(pos, center, image_size, focal)))
    return cams


def _f32_camera(cam: Camera) -> Camera:
    """Round camera parameters to float32 so scene files round-trip exactly."""
    q = lambda a: np.asarray(a, dtype=np.float32).astype(np.float64)  # noqa: E731
    return Camera(q(cam.K), q(cam.R), q(cam.t), cam.width, cam.height)


def segment_occluded(origin: np.ndarray, target: np.ndarray, tri_verts: np.ndarray, eps: float = 1e-4) -> bool:
    """True if the open segment origin -> target crosses any triangle (Moller-Trumbore)."""
    d = target - origin
    e1 = tri_verts[:, 1] - tri_verts[:, 0]
    e2 = tri_verts[:, 2] - tri_verts[:, 0]
    p = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, p)
    ok = np.abs(det) > 1e-12
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = origin - tri_verts[:, 0]
    u = np.einsum("ij,ij->i", s, p) * inv
    q = np.cross(s, e1)
    v = (q @ d) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > eps) & (t < 1 - eps)
    return bool(np.any(hit))


def vertex_visible(camera: Camera, mesh: HouseMesh, vi: int) -> bool:
    tris = mesh.triangles
    other = ~np.any(tris == vi, axis=1)
    return not segment_occluded(camera.center, mesh.vertices[vi], mesh.vertices[tris[other]])


@dataclass
class View:
    camera: Camera
    gestalt_image: np.ndarray   # (H, W) uint8 class ids
    house_mask: np.ndarray      # (H, W) bool


def render_views(mesh: HouseMesh, cameras: list[Camera], misalign_sigma: float, jitter_sigma: float,
                 rng: np.random.Generator, disk_radius: float = 4.0, ridge_width: int = 3) -> list[View]:
    """Rasterise label images from a translation-perturbed copy of each camera.

    Faces are filled back to front (painter's order by mean depth), visible ridge
    lines are drawn on top, and each visible vertex of a vertex class is stamped
    as a disk at its (jittered) projection.
    """
    views = []
    for cam in cameras:
        cam.validate()
        t_render = cam.t + (rng.normal(0.0, misalign_sigma, 3) if misalign_sigma > 0 else 0.0)
        rcam = Camera(cam.K, cam.R, t_render, cam.width, cam.height)
        H, Wd = cam.height, cam.width
        img = np.zeros((H, Wd), dtype=np.uint8)
        mask = np.zeros((H, Wd), dtype=bool)
        uv, depth = rcam.project_points(mesh.vertices)
        face_depth = [depth[loop].mean() for loop in mesh.faces]
        for fi in np.argsort(face_depth)[::-1]:
            loop = mesh.faces[fi]
            if np.any(depth[loop] <= 0):
                continue
            rr, cc = polygon(uv[loop, 1] - 0.5, uv[loop, 0] - 0.5, shape=(H, Wd))
            img[rr, cc] = mesh.face_kind[fi]
            mask[rr, cc] = True
        visible = np.array([depth[i] > 0 and vertex_visible(rcam, mesh, i) for i in range(len(mesh.vertices))])
        tris = mesh.vertices[mesh.triangles]
        for a, b in mesh.ridge_edges:
            mid = 0.5 * (mesh.vertices[a] + mesh.vertices[b]) + np.array([0, 0, 1e-3])
            if depth[a] <= 0 or depth[b] <= 0 or segment_occluded(rcam.center, mid, tris):
                continue
            r0, c0 = uv[a, 1] - 0.5, uv[a, 0] - 0.5
            r1, c1 = uv[b, 1] - 0.5, uv[b, 0] - 0.5
            rr, cc = line(int(round(r0)), int(round(c0)), int(round(r1)), int(round(c1)))
            lm = np.zeros((H, Wd), dtype=bool)
            ok = (rr >= 0) & (rr < H) & (cc >= 0) & (cc < Wd)
            lm[rr[ok], cc[ok]] = True
            if ridge_width > 1:
                lm = ndimage.binary_dilation(lm, np.ones((ridge_width, ridge_width), dtype=bool))
            img[lm] = GestaltClass.RIDGE
        for vi, cls in enumerate(mesh.vertex_class):
            if cls not in VERTEX_CLASSES or not visible[vi]:
                continue
            u, v = uv[vi]
            if jitter_sigma > 0:
                u, v = u + rng.normal(0, jitter_sigma), v + rng.normal(0, jitter_sigma)
            rr, cc = disk((v - 0.5, u - 0.5), disk_radius, shape=(H, Wd))
            img[rr, cc] = cls
        views.append(View(cam, img, mask))
    return views


def label_points(cloud: PointCloud, views: list[View]) -> PointCloud:
    """Majority vote of per-view label lookups; ties and unseen points become background."""
    n = len(cloud)
    votes = np.zeros((n, len(GestaltClass)), dtype=np.int32)
    house_yes = np.zeros(n, dtype=np.int32)
    house_no = np.zeros(n, dtype=np.int32)
    for view in views:
        row, col, valid = pixel_lookup(view.camera, cloud.positions)
        ids = np.nonzero(valid)[0]
        lab = view.gestalt_image[row[ids], col[ids]]
        np.add.at(votes, (ids, lab), 1)
        m = view.house_mask[row[ids], col[ids]]
        house_yes[ids] += m
        house_no[ids] += ~m
    best = votes.max(axis=1)
    winners = (votes == best[:, None]).sum(axis=1)
    label = np.where((best > 0) & (winners == 1), votes.argmax(axis=1), GestaltClass.BACKGROUND)
    return PointCloud(cloud.positions, cloud.colors, label.astype(np.uint8), house_yes > house_no)


@dataclass
class GeneratorConfig:
    density: float = 40.0
    noise_sigma: float = 0.0
    misalign_sigma: float = 0.0
    jitter_sigma: float = 0.0
    n_views: int = 8
    ring_radius: float = 24.0
    camera_height: float = 11.0
    image_size: int = 320
    focal: float = 230.0
    backface_dropout: bool = True
    sector_prob: float = 0.0
    sector_deg: float = 60.0
    roof_types: tuple = ROOF_TYPES


@dataclass
class Scene:
    cloud: PointCloud
    views: list
    gt: Wireframe
    spec: HouseSpec | None = None
    meta: dict = field(default_factory=dict)

    @property
    def is_labeled(self) -> bool:
        return self.cloud.house_flag.any() or self.cloud.gestalt_label.any()


def make_scene(seed: int, cfg: GeneratorConfig | None = None, spec: HouseSpec | None = None) -> Scene:
    """Generate one complete labeled scene from a seed."""
    cfg = cfg or GeneratorConfig()
    rng = np.random.default_rng(seed)
    spec = spec or random_house_spec(rng, cfg.roof_types)
    wf, mesh = generate_house(spec)
    center = np.array([spec.offset[0], spec.offset[1], 0.5 * (spec.wall_height + spec.ridge_rise)])
    cams = place_cameras(cfg.n_views, cfg.ring_radius, cfg.camera_height, cfg.image_size, cfg.focal,
                         center=center, phase=float(rng.uniform(0, 2 * math.pi)))
    views = render_views(mesh, cams, cfg.misalign_sigma, cfg.jitter_sigma, rng)
    sector = 0.0
    if cfg.sector_prob > 0 and rng.random() < cfg.sector_prob:
        sector = cfg.sector_deg
    dropout = DropoutSpec(cfg.backface_dropout, sector, float(rng.uniform(0, 360)), tuple(center[:2]))
    cloud = sample_point_cloud(mesh, cfg.density, cfg.noise_sigma, dropout, rng,
                               camera_centers=np.array([c.center for c in cams]),
                               roof_color=ROOF_COLORS[rng.integers(len(ROOF_COLORS))],
                               wall_color=WALL_COLORS[rng.integers(len(WALL_COLORS))])
    cloud = label_points(cloud, views)
    gt = Wireframe(wf.vertices.astype(np.float32).astype(np.float64), wf.edges)
    return Scene(cloud, views, gt, spec, {"seed": int(seed), "generator_version": GENERATOR_VERSION,
                                          "config": asdict(cfg)})


# ---------------------------------------------------------------- scene files

SCENE_MAGIC = b"S23D"
SCENE_VERSION = 1


class SceneFormatError(SceneError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class SceneVersionError(SceneFormatError):
    pass


def _spec_to_json(spec: HouseSpec) -> dict:
    d = asdict(spec)
    d["offset"] = list(spec.offset)
    return d


def scene_to_bytes(scene: Scene) -> bytes:
    import json
    import struct

    c = scene.cloud
    n = len(c)
    out = [SCENE_MAGIC, struct.pack("<II", SCENE_VERSION, n),
           np.ascontiguousarray(c.positions, dtype="<f4").tobytes(),
           np.ascontiguousarray(c.colors, dtype=np.uint8).tobytes(),
           np.ascontiguousarray(c.gestalt_label, dtype=np.uint8).tobytes(),
           np.packbits(c.house_flag, bitorder="little").tobytes(),
           struct.pack("<I", len(scene.views))]
    for v in scene.views:
        cam = v.camera
        out.append(np.concatenate([cam.K.ravel(), cam.R.ravel(), cam.t.ravel()]).astype("<f4").tobytes())
        out.append(struct.pack("<II", cam.width, cam.height))
        out.append(np.ascontiguousarray(v.gestalt_image, dtype=np.uint8).tobytes())
        out.append(np.packbits(v.house_mask.ravel(), bitorder="little").tobytes())
    gt = scene.gt
    out.append(struct.pack("<I", len(gt.vertices)))
    out.append(np.asarray(gt.vertices, dtype="<f4").tobytes())
    out.append(struct.pack("<I", len(gt.edges)))
    out.append(np.asarray(gt.edges, dtype="<u4").tobytes())
    # optional trailer: generator metadata as JSON
    trailer = {"meta": scene.meta}
    if scene.spec is not None:
        trailer["spec"] = _spec_to_json(scene.spec)
    blob = json.dumps(trailer, sort_keys=True).encode()
    out.append(struct.pack("<I", len(blob)))
    out.append(blob)
    return b"".join(out)


def scene_from_bytes(data: bytes) -> Scene:
    import json
    import struct

    pos = 0

    def take(nbytes: int, what: str) -> bytes:
        nonlocal pos
        if pos + nbytes > len(data):
            raise SceneFormatError(f"truncated file while reading {what}", pos)
        chunk = data[pos:pos + nbytes]
        pos += nbytes
        return chunk

    def u32(what: str) -> int:
        return struct.unpack("<I", take(4, what))[0]

    if take(4, "magic") != SCENE_MAGIC:
        raise SceneFormatError("bad magic", 0)
    version = u32("version")
    if version != SCENE_VERSION:
        raise SceneVersionError(f"unsupported scene version {version}", 4)
    n = u32("point count")
    positions = np.frombuffer(take(12 * n, "positions"), dtype="<f4").reshape(n, 3).astype(np.float32)
    colors = np.frombuffer(take(3 * n, "colors"), dtype=np.uint8).reshape(n, 3).copy()
    labels = np.frombuffer(take(n, "gestalt labels"), dtype=np.uint8).copy()
    flags = np.unpackbits(np.frombuffer(take((n + 7) // 8, "house flags"), dtype=np.uint8),
                          bitorder="little")[:n].astype(bool)
    if labels.size and labels.max() >= len(GestaltClass):
        raise SceneFormatError("gestalt label out of range", pos - n - (n + 7) // 8)
    views = []
    for _ in range(u32("view count")):
        start = pos
        params = np.frombuffer(take(84, "camera"), dtype="<f4").astype(np.float64)
        w, h = struct.unpack("<II", take(8, "image size"))
        img = np.frombuffer(take(w * h, "gestalt raster"), dtype=np.uint8).reshape(h, w).copy()
        mask = np.unpackbits(np.frombuffer(take((w * h + 7) // 8, "house mask"), dtype=np.uint8),
                             bitorder="little")[:w * h].reshape(h, w).astype(bool)
        try:
            cam = Camera(params[:9].reshape(3, 3), params[9:18].reshape(3, 3), params[18:21].copy(), w, h)
            cam.validate()
        except ValueError as exc:
            raise SceneFormatError(f"invalid camera: {exc}", start) from exc
        views.append(View(cam, img, mask))
    nv = u32("vertex count")
    verts = np.frombuffer(take(12 * nv, "vertices"), dtype="<f4").reshape(nv, 3).astype(np.float64)
    ne_at = pos
    ne = u32("edge count")
    edges = np.frombuffer(take(8 * ne, "edges"), dtype="<u4").reshape(ne, 2).astype(np.int64)
    try:
        gt = Wireframe(verts, edges)
        gt.validate()
    except ValueError as exc:
        raise SceneFormatError(f"invalid wireframe: {exc}", ne_at) from exc
    spec, meta = None, {}
    if pos < len(data):
        blob = take(u32("trailer length"), "trailer")
        try:
            trailer = json.loads(blob.decode())
        except ValueError as exc:
            raise SceneFormatError("malformed trailer", pos - len(blob)) from exc
        meta = trailer.get("meta", {})
        if "spec" in trailer:
            s = trailer["spec"]
            s["offset"] = tuple(s["offset"])
            spec = HouseSpec(**s)
    if pos != len(data):
        raise SceneFormatError("trailing bytes", pos)
    return Scene(PointCloud(positions, colors, labels, flags), views, gt, spec, meta)


def save_scene(scene: Scene, path) -> None:
    with open(path, "wb") as f:
        f.write(scene_to_bytes(scene))


def load_scene(path) -> Scene:
    with open(path, "rb") as f:
        return scene_from_bytes(f.read())


def save_wireframe_json(wf: Wireframe, path) -> None:
    import json

    with open(path, "w") as f:
        json.dump(wf.to_json(), f)


def load_wireframe_json(path) -> Wireframe:
    import json

    with open(path) as f:
        return Wireframe.from_json(json.load(f))
