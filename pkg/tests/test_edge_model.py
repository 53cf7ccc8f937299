from __future__ import annotations

import math

import numpy as np
import pytest

from roofwire.edge_model import (
    DegeneratePairError, EdgeConfig, build_edge_dataset, build_edge_sample, candidate_pairs,
    edge_probabilities, predict_edges, train_edge_net,
)
from roofwire.geometry import PointCloud, Wireframe
from roofwire.networks import EdgeNet
from roofwire.nn.losses import bce_with_logits
from roofwire.nn.batch import pack_sets
from roofwire.scenegen import GeneratorConfig, HouseSpec, Scene, generate_house, make_scene, random_house_spec
from roofwire.training import SingleClassError, TrainConfig


def toy_scene(points, gt=None):
    pts = np.asarray(points, dtype=np.float32).reshape(-1, 3)
    gt = gt if gt is not None else Wireframe(np.zeros((0, 3)))
    return Scene(PointCloud(pts, np.full((len(pts), 3), 128)), [], gt)


def scan_cylinder(pts, a, b, r=1.0, ext=1.0):
    a, b = np.asarray(a, float), np.asarray(b, float)
    L = np.linalg.norm(b - a)
    u = (b - a) / L
    out = []
    for i, p in enumerate(pts.astype(np.float64)):
        s = (p - a) @ u
        if -ext <= s <= L + ext and np.linalg.norm(p - a - s * u) <= r:
            out.append(i)
    return out


# --- samples

def test_midpoint_point_has_zero_relative_position():
    s = build_edge_sample(toy_scene([[2, 0, 0]]), (0, 0, 0), (4, 0, 0))
    assert s.features[0:3, 0].tolist() == [0, 0, 0]


def test_far_off_axis_point_excluded():
    s = build_edge_sample(toy_scene([[2, 1.5, 0], [2, 0.9, 0]]), (0, 0, 0), (4, 0, 0))
    assert s.features.shape == (6, 1) and s.features[1, 0] == pytest.approx(0.9)


def test_patch_matches_cylinder_scan():
    rng = np.random.default_rng(0)
    for _ in range(30):
        pts = rng.uniform(-4, 4, (200, 3)).astype(np.float32)
        a, b = rng.uniform(-3, 3, 3), rng.uniform(-3, 3, 3)
        if np.linalg.norm(a - b) <= 0.2:
            continue
        s = build_edge_sample(toy_scene(pts), a, b, cfg=EdgeConfig(max_points=10_000))
        expect = pts[scan_cylinder(pts, a, b)].astype(np.float64) - (a + b) / 2
        assert np.allclose(s.features[0:3].T, expect.astype(np.float32))


def test_degenerate_pair_rejected():
    with pytest.raises(DegeneratePairError):
        build_edge_sample(toy_scene([[0, 0, 0]]), (0, 0, 0), (0.1, 0, 0))


def test_colors_in_range_and_cap():
    rng = np.random.default_rng(1)
    scene = Scene(PointCloud(rng.uniform(-1, 1, (500, 3)), rng.integers(0, 256, (500, 3))), [],
                  Wireframe(np.zeros((0, 3))))
    s = build_edge_sample(scene, (-0.5, 0, 0), (0.5, 0, 0), cfg=EdgeConfig(max_points=64))
    assert s.features.shape == (6, 64)
    assert np.all(np.abs(s.features[3:6]) <= 1)


# --- dataset

def test_gable_gt_gives_fifteen_positives():
    scene = make_scene(0, GeneratorConfig(roof_types=("gable",)))
    samples, stats = build_edge_dataset([scene], cfg=EdgeConfig(max_points=32))
    assert stats.positives == 15
    assert abs(stats.positives - stats.negatives) <= 1
    assert sum(s.is_edge for s in samples) == 15


def test_unmatched_vertices_skip_scene():
    scene = make_scene(1)
    far = scene.gt.vertices + 50.0
    samples, stats = build_edge_dataset([scene], [far], EdgeConfig(max_points=32))
    assert samples == [] and stats.scenes_skipped == 1


def test_refined_vertex_source_matches_within_tau():
    scene = make_scene(2, GeneratorConfig(roof_types=("hip",)))
    jitter = scene.gt.vertices + np.random.default_rng(0).normal(0, 0.05, scene.gt.vertices.shape)
    _, stats = build_edge_dataset([scene], [jitter], EdgeConfig(max_points=32))
    assert stats.positives == len(scene.gt.edges)


def test_pair_prefilter_keeps_every_gt_edge():
    rng = np.random.default_rng(2)
    cfg = EdgeConfig()
    for _ in range(1000):
        wf, _ = generate_house(random_house_spec(rng))
        kept = set(candidate_pairs(wf.vertices, cfg))
        assert wf.edge_set() <= kept


# --- network behaviour

def test_initial_loss_is_ln2():
    scene = make_scene(3)
    samples, _ = build_edge_dataset([scene], cfg=EdgeConfig(max_points=32))
    logits = EdgeNet(seed=0).eval().forward(pack_sets([s.features for s in samples]))
    loss, _ = bce_with_logits(logits, np.array([s.is_edge for s in samples]))
    assert loss == pytest.approx(math.log(2))


def test_single_class_rejected():
    scene = make_scene(4)
    samples, _ = build_edge_dataset([scene], cfg=EdgeConfig(max_points=16))
    with pytest.raises(SingleClassError):
        train_edge_net([s for s in samples if s.is_edge])


@pytest.fixture(scope="module")
def trained():
    scene = make_scene(5, GeneratorConfig(noise_sigma=0.02))
    cfg = EdgeConfig(max_points=16, train=TrainConfig(lr=1e-3, batch_size=32, epochs=3))
    samples, _ = build_edge_dataset([scene], cfg=cfg)
    net, _, rows = train_edge_net(samples, cfg)
    return scene, net, cfg, rows


def test_training_log_rows(trained):
    _, _, _, rows = trained
    assert [r["epoch"] for r in rows] == [1, 2, 3]
    assert all(np.isfinite(r["loss"]) for r in rows)


def test_endpoint_order_symmetry(trained):
    scene, net, cfg, _ = trained
    v = scene.gt.vertices
    for i, j in [(0, 1), (2, 7), (3, 9)]:
        _, p = edge_probabilities(scene, v[[i, j]], net, cfg)
        _, q = edge_probabilities(scene, v[[j, i]], net, cfg)
        assert p[0] == q[0]


def test_predict_edges_independent_of_vertex_order(trained):
    scene, net, cfg, _ = trained
    v = scene.gt.vertices
    perm = np.random.default_rng(0).permutation(len(v))
    a = predict_edges(scene, v, net, 0.5, cfg)
    b = predict_edges(scene, v[perm], net, 0.5, cfg)
    mapped = {tuple(sorted((int(perm[i]), int(perm[j])))) for i, j in b.edges}
    assert mapped == a.edge_set()
    assert len(b.vertices) == len(v)


def test_predict_edges_deterministic_and_keeps_isolated(trained):
    scene, net, cfg, _ = trained
    v = np.concatenate([scene.gt.vertices, [[100.0, 100.0, 0.0]]])
    a = predict_edges(scene, v, net, 0.5, cfg)
    b = predict_edges(scene, v, net, 0.5, cfg)
    assert a.edge_set() == b.edge_set()
    assert len(a.vertices) == len(v)
    assert all(len(v) - 1 not in e for e in a.edge_set())


def test_empty_patch_pair_gets_zero_probability(trained):
    scene, net, cfg, _ = trained
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        _, p = edge_probabilities(scene, np.array([[200.0, 0, 0], [205.0, 0, 0]]), net, cfg)
    assert p.tolist() == [0.0]


def test_fewer_than_two_vertices():
    net = EdgeNet()
    scene = make_scene(6)
    assert len(predict_edges(scene, np.zeros((1, 3)), net).edges) == 0
    assert len(predict_edges(scene, np.zeros((0, 3)), net).edges) == 0


def test_hip_house_counts_for_dataset():
    scene = make_scene(7, GeneratorConfig(), HouseSpec("hip", 10, 6, 3, 2))
    _, stats = build_edge_dataset([scene], cfg=EdgeConfig(max_points=16))
    assert stats.positives == 17
