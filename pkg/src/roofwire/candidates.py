"""Coarse 3D vertex candidates from vertex-class pixel clusters across views."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from roofwire import constants as C
from roofwire.geometry import Camera, PointCloud, SpatialIndex
from roofwire.scenegen import VERTEX_CLASSES, Scene

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass
class VertexCandidate:
    centroid: np.ndarray
    member_ids: np.ndarray
    source_view_count: int = 1


@dataclass
class CandidateConfig:
    min_points: int = C.MIN_CLUSTER_POINTS
    max_iters: int = C.MAX_DILATIONS
    merge_radius: float = C.MERGE_RADIUS
    merge_overlap: float = C.MERGE_OVERLAP
    min_cluster_px: int = C.MIN_CLUSTER_PIXELS
    splat_px: int = 2
    depth_tolerance: float = 1.0


def find_pixel_clusters(gestalt_image: np.ndarray, min_pixels: int = C.MIN_CLUSTER_PIXELS) -> list[np.ndarray]:
    """8-connected components of vertex-class pixels, smallest ones discarded.

    Returned in label order (row-major first pixel), so the output is deterministic.
    """
    fg = np.isin(gestalt_image, [int(c) for c in VERTEX_CLASSES])
    labels, n = ndimage.label(fg, structure=EIGHT_CONNECTED)
    if n == 0:
        return []
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    return [labels == k for k in range(1, n + 1) if sizes[k] >= min_pixels]


def project_cloud(camera: Camera, positions: np.ndarray):
    """Integer pixel (row, col), depth and in-image/positive-depth validity per point."""
    uv, depth = camera.project_points(positions)
    with np.errstate(invalid="ignore"):
        col = np.floor(uv[:, 0])
        row = np.floor(uv[:, 1])
        valid = (depth > 0) & (col >= 0) & (col < camera.width) & (row >= 0) & (row < camera.height)
    row = np.where(valid, row, 0).astype(np.int64)
    col = np.where(valid, col, 0).astype(np.int64)
    return row, col, depth, valid


def visible_points(camera: Camera, positions: np.ndarray, splat_px: int = 2,
                   depth_tolerance: float = 1.0) -> np.ndarray:
    """Points not hidden behind nearer points, using a splatted point z-buffer.

    Each projected point writes its depth into a (2*splat_px+1)^2 neighborhood; a
    point is visible when its depth is within `depth_tolerance` of the buffer.
    """
    row, col, depth, valid = project_cloud(camera, positions)
    H, W = camera.height, camera.width
    zbuf = np.full(H * W, np.inf)
    ids = np.nonzero(valid)[0]
    r0, c0, z = row[ids], col[ids], depth[ids]
    for dr in range(-splat_px, splat_px + 1):
        for dc in range(-splat_px, splat_px + 1):
            r, c = r0 + dr, c0 + dc
            ok = (r >= 0) & (r < H) & (c >= 0) & (c < W)
            np.minimum.at(zbuf, r[ok] * W + c[ok], z[ok])
    vis = np.zeros(len(positions), dtype=bool)
    vis[ids] = z <= zbuf[r0 * W + c0] + depth_tolerance
    return vis


def dilate_until_covered(mask: np.ndarray, cloud: PointCloud, camera: Camera, min_points: int = C.MIN_CLUSTER_POINTS,
                         max_iters: int = C.MAX_DILATIONS, eligible: np.ndarray | None = None,
                         projection=None) -> tuple[np.ndarray, int]:
    """Grow `mask` by 3x3 dilation until at least `min_points` projected points land in it.

    `eligible` optionally restricts which points may be counted (e.g. visible ones).
    Returns the sorted captured ids and the number of dilations applied.
    """
    if not mask.any():
        raise ValueError("mask must be non-empty")
    row, col, _, valid = projection if projection is not None else project_cloud(camera, cloud.positions)
    if eligible is not None:
        valid = valid & eligible
    ids = np.nonzero(valid)[0]
    r, c = row[ids], col[ids]
    m = mask.copy()
    dilations = 0
    while True:
        hit = ids[m[r, c]]
        if len(hit) >= min_points or dilations >= max_iters:
            return hit, dilations
        m = ndimage.binary_dilation(m, EIGHT_CONNECTED)
        dilations += 1


def _membership(index: SpatialIndex, restricted: np.ndarray, positions: np.ndarray, ids: np.ndarray,
                radius: float) -> np.ndarray:
    centroid = positions[ids].astype(np.float64).mean(axis=0)
    return restricted[index.radius_query(centroid, radius)]


def merge_candidates(clusters: list[np.ndarray], cloud: PointCloud, radius: float = C.MERGE_RADIUS,
                     overlap: float = C.MERGE_OVERLAP, views: list[set] | None = None) -> list[VertexCandidate]:
    """Fuse per-view point-id clusters into 3D candidates.

    Membership is the restricted cloud (union of all clusters) within `radius` of the
    cluster centroid. Any pair sharing more than `overlap` of the smaller cluster is
    merged, with membership recomputed, until no pair qualifies.
    """
    clusters = [np.unique(np.asarray(c, dtype=np.int64)) for c in clusters]
    views = [set(v) for v in views] if views is not None else [{k} for k in range(len(clusters))]
    keep = [k for k, c in enumerate(clusters) if len(c)]
    if not keep:
        return []
    # canonical order so the result does not depend on the order views were visited
    keep.sort(key=lambda k: tuple(clusters[k]))
    clusters = [clusters[k] for k in keep]
    views = [views[k] for k in keep]
    restricted = np.unique(np.concatenate(clusters))
    pos = cloud.positions
    index = SpatialIndex(pos[restricted])
    members, srcs = [], []
    for c, v in zip(clusters, views):
        m = _membership(index, restricted, pos, c, radius)
        if len(m):
            members.append(m)
            srcs.append(v)
    changed = True
    while changed:
        changed = False
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                shared = len(np.intersect1d(members[i], members[j], assume_unique=True))
                if shared > overlap * min(len(members[i]), len(members[j])):
                    union = np.union1d(members[i], members[j])
                    m = _membership(index, restricted, pos, union, radius)
                    members[i] = m if len(m) else union
                    srcs[i] = srcs[i] | srcs[j]
                    del members[j], srcs[j]
                    changed = True
                    break
            if changed:
                break
    out = [VertexCandidate(pos[m].astype(np.float64).mean(axis=0), m, len(s)) for m, s in zip(members, srcs)]
    out.sort(key=lambda c: (tuple(c.centroid), tuple(c.member_ids)))
    return out


def view_clusters(scene: Scene, cfg: CandidateConfig | None = None) -> tuple[list[np.ndarray], list[set]]:
    """Captured point ids for every pixel cluster in every view, plus source view ids."""
    cfg = cfg or CandidateConfig()
    clusters, views = [], []
    for vi, view in enumerate(scene.views):
        masks = find_pixel_clusters(view.gestalt_image, cfg.min_cluster_px)
        if not masks or len(scene.cloud) == 0:
            continue
        proj = project_cloud(view.camera, scene.cloud.positions)
        vis = visible_points(view.camera, scene.cloud.positions, cfg.splat_px, cfg.depth_tolerance)
        for mask in masks:
            ids, _ = dilate_until_covered(mask, scene.cloud, view.camera, cfg.min_points, cfg.max_iters,
                                          eligible=vis, projection=proj)
            if len(ids):
                clusters.append(ids)
                views.append({vi})
    return clusters, views


def generate_candidates(scene: Scene, cfg: CandidateConfig | None = None) -> list[VertexCandidate]:
    cfg = cfg or CandidateConfig()
    clusters, views = view_clusters(scene, cfg)
    return merge_candidates(clusters, scene.cloud, cfg.merge_radius, cfg.merge_overlap, views)
