from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from roofwire.candidates import (
    dilate_until_covered, find_pixel_clusters, generate_candidates, merge_candidates, project_cloud,
)
from roofwire.geometry import Camera, PointCloud
from roofwire.scenegen import GeneratorConfig, GestaltClass, Scene, generate_house, make_scene, vertex_visible


def cloud_of(pts):
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    return PointCloud(pts, np.zeros((len(pts), 3)))


def disk_image(centers, radius=3, shape=(40, 40), cls=GestaltClass.APEX):
    img = np.zeros(shape, dtype=np.uint8)
    rr, cc = np.mgrid[:shape[0], :shape[1]]
    for r, c in centers:
        img[(rr - r) ** 2 + (cc - c) ** 2 <= radius ** 2] = cls
    return img


# --- pixel clusters

def test_two_disjoint_disks():
    assert len(find_pixel_clusters(disk_image([(10, 10), (30, 30)]))) == 2


def test_empty_image():
    assert find_pixel_clusters(np.zeros((8, 8), np.uint8)) == []


def test_diagonal_touch_is_one_cluster():
    img = np.zeros((6, 6), np.uint8)
    img[0:2, 0:2] = GestaltClass.APEX
    img[2:4, 2:4] = GestaltClass.EAVE_END_POINT
    assert len(find_pixel_clusters(img)) == 1


def test_small_components_and_other_classes_ignored():
    img = np.zeros((10, 10), np.uint8)
    img[0, 0:2] = GestaltClass.APEX            # 2 px
    img[5:8, 5:8] = GestaltClass.ROOF          # not a vertex class
    img[8:10, 0:2] = GestaltClass.FLASHING_END
    masks = find_pixel_clusters(img)
    assert len(masks) == 1 and masks[0][8:10, 0:2].all()


# --- dilation

def pixel_camera(size=64):
    """Orthographic-like pinhole: point (x, y, 1) lands in pixel column x, row y."""
    return Camera([[1, 0, 0], [0, 1, 0], [0, 0, 1]], np.eye(3), np.zeros(3), size, size)


def points_at_pixels(pix):
    return cloud_of([(c + 0.5, r + 0.5, 1.0) for r, c in pix])


def test_five_points_inside_no_dilation():
    mask = np.zeros((64, 64), bool)
    mask[10:14, 10:14] = True
    cloud = points_at_pixels([(10, 10), (11, 11), (12, 12), (13, 13), (10, 13), (40, 40)])
    ids, n = dilate_until_covered(mask, cloud, pixel_camera())
    assert n == 0 and list(ids) == [0, 1, 2, 3, 4]


def test_points_three_pixels_away_need_three_dilations():
    mask = np.zeros((64, 64), bool)
    mask[20, 20] = True
    cloud = points_at_pixels([(23, 20), (20, 23), (17, 17), (23, 23), (17, 21), (30, 30)])
    ids, n = dilate_until_covered(mask, cloud, pixel_camera())
    assert n == 3 and list(ids) == [0, 1, 2, 3, 4]


def test_empty_cloud_exhausts_iterations():
    mask = np.zeros((16, 16), bool)
    mask[3, 3] = True
    ids, n = dilate_until_covered(mask, cloud_of(np.zeros((0, 3))), pixel_camera(16), max_iters=7)
    assert len(ids) == 0 and n == 7


def test_points_behind_camera_never_counted():
    mask = np.ones((16, 16), bool)
    cloud = cloud_of([(1, 1, -1.0)] * 6)
    ids, n = dilate_until_covered(mask, cloud, pixel_camera(16), max_iters=2)
    assert len(ids) == 0 and n == 2


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), k=st.integers(1, 8))
def test_dilation_count_matches_chessboard_distance(seed, k):
    rng = np.random.default_rng(seed)
    size = 48
    mask = np.zeros((size, size), bool)
    r, c = rng.integers(5, size - 5, 2)
    mask[r:r + rng.integers(1, 4), c:c + rng.integers(1, 4)] = True
    pix = rng.integers(0, size, (int(rng.integers(k, 30)), 2))
    cloud = points_at_pixels(pix)
    _, n = dilate_until_covered(mask, cloud, pixel_camera(size), min_points=k, max_iters=20)
    # each 3x3 dilation grows the mask by one chessboard step
    dist = ndimage.distance_transform_cdt(~mask, metric="chessboard")[pix[:, 0], pix[:, 1]]
    assert n == min(int(np.sort(dist)[k - 1]), 20)


# --- merging

def oracle_merge(clusters, pts, radius=0.5, overlap=0.5):
    """Plain-set reimplementation with linear-scan membership."""
    clusters = [sorted(set(int(i) for i in c)) for c in clusters if len(c)]
    clusters.sort(key=tuple)
    restricted = sorted(set().union(*map(set, clusters))) if clusters else []

    def members(ids):
        cen = np.mean([pts[i] for i in ids], axis=0)
        return frozenset(i for i in restricted if np.sum((pts[i] - cen) ** 2) <= radius * radius)

    sets = [m for m in (members(c) for c in clusters) if m]
    while True:
        for i in range(len(sets)):
            for j in range(i + 1, len(sets)):
                if len(sets[i] & sets[j]) > overlap * min(len(sets[i]), len(sets[j])):
                    m = members(sets[i] | sets[j]) or (sets[i] | sets[j])
                    sets = sets[:i] + [m] + sets[i + 1:j] + sets[j + 1:]
                    break
            else:
                continue
            break
        else:
            return sorted(sorted(s) for s in sets)


def test_identical_clusters_merge():
    pts = np.random.default_rng(0).normal(0, 0.05, (10, 3))
    out = merge_candidates([np.arange(10), np.arange(10)], cloud_of(pts))
    assert len(out) == 1 and out[0].source_view_count == 2


def test_far_clusters_stay_apart():
    pts = np.concatenate([np.zeros((5, 3)), np.full((5, 3), 10.0 / np.sqrt(3))])
    assert len(merge_candidates([np.arange(5), np.arange(5, 10)], cloud_of(pts))) == 2


def test_chain_merges_transitively():
    # groups of 4, 10, 10, 4 points at x = 0, 0.45, 0.9, 1.35; A = g1+g2, B = g2+g3, C = g3+g4
    xs = [0.0] * 4 + [0.45] * 10 + [0.9] * 10 + [1.35] * 4
    pts = np.array([[x, 0, 0] for x in xs], dtype=np.float32).astype(np.float64)
    g = np.split(np.arange(28), [4, 14, 24])
    A, B, Cc = np.r_[g[0], g[1]], np.r_[g[1], g[2]], np.r_[g[2], g[3]]
    assert len(np.intersect1d(A, Cc)) == 0
    out = merge_candidates([A, B, Cc], cloud_of(pts))
    assert len(out) == 1
    assert [sorted(c.member_ids.tolist()) for c in out] == oracle_merge([A, B, Cc], pts)


def test_merge_matches_oracle_on_random_instances():
    rng = np.random.default_rng(1)
    for _ in range(200):
        centers = rng.uniform(-2, 2, (int(rng.integers(1, 5)), 3))
        n = int(rng.integers(5, 60))
        pts = (centers[rng.integers(len(centers), size=n)] + rng.normal(0, 0.25, (n, 3)))
        pts = pts.astype(np.float32).astype(np.float64)
        clusters = [rng.choice(n, size=int(rng.integers(1, min(n, 15) + 1)), replace=False)
                    for _ in range(int(rng.integers(1, 7)))]
        got = sorted(sorted(c.member_ids.tolist()) for c in merge_candidates(clusters, cloud_of(pts)))
        assert got == oracle_merge(clusters, pts)


def test_merge_invariants():
    rng = np.random.default_rng(2)
    pts = rng.uniform(-3, 3, (80, 3)).astype(np.float32).astype(np.float64)
    clusters = [rng.choice(80, size=8, replace=False) for _ in range(10)]
    out = merge_candidates(clusters, cloud_of(pts))
    assert len(out) <= len(clusters)
    lo, hi = pts.min(0) - 0.5, pts.max(0) + 0.5
    for c in out:
        assert len(c.member_ids) and np.all(np.diff(c.member_ids) > 0)
        assert np.allclose(c.centroid, pts[c.member_ids].mean(axis=0))
        assert np.all(c.centroid >= lo) and np.all(c.centroid <= hi)


def test_empty_clusters_give_nothing():
    assert merge_candidates([], cloud_of(np.zeros((3, 3)))) == []
    assert merge_candidates([np.zeros(0, int)], cloud_of(np.zeros((3, 3)))) == []


# --- whole stage

def visible_in_two_views(scene):
    _, mesh = generate_house(scene.spec)
    ok = []
    for vi in range(len(scene.gt.vertices)):
        n = 0
        for view in scene.views:
            r, c, _, valid = project_cloud(view.camera, scene.gt.vertices[vi:vi + 1])
            n += bool(valid[0]) and vertex_visible(view.camera, mesh, vi)
        ok.append(n >= 2)
    return np.array(ok)


def test_noise_free_gable_covers_visible_vertices():
    scene = make_scene(3, GeneratorConfig(roof_types=("gable",)))
    cands = generate_candidates(scene)
    cen = np.array([c.centroid for c in cands])
    seen = visible_in_two_views(scene)
    assert seen.sum() >= 6
    d = np.linalg.norm(scene.gt.vertices[:, None] - cen[None], axis=-1).min(axis=1)
    assert np.all(d[seen] <= 0.5)


def test_no_vertex_pixels_no_candidates():
    scene = make_scene(4)
    for v in scene.views:
        v.gestalt_image[np.isin(v.gestalt_image, [4, 5, 6])] = GestaltClass.ROOF
    assert generate_candidates(scene) == []


def test_view_order_invariance():
    scene = make_scene(6, GeneratorConfig(noise_sigma=0.03, misalign_sigma=0.1, jitter_sigma=1.0))
    a = generate_candidates(scene)
    rev = Scene(scene.cloud, scene.views[::-1], scene.gt, scene.spec)
    b = generate_candidates(rev)
    assert len(a) == len(b)
    for x, y in zip(a, b):
        assert np.array_equal(x.member_ids, y.member_ids) and np.array_equal(x.centroid, y.centroid)


def test_deterministic():
    scene = make_scene(9, GeneratorConfig(noise_sigma=0.03))
    a, b = generate_candidates(scene), generate_candidates(scene)
    assert [c.member_ids.tolist() for c in a] == [c.member_ids.tolist() for c in b]


def test_mask_must_be_nonempty():
    with pytest.raises(ValueError):
        dilate_until_covered(np.zeros((4, 4), bool), cloud_of(np.zeros((1, 3))), pixel_camera(4))
