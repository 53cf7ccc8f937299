from __future__ import annotations

import csv
import json
import os

import numpy as np
import pytest

from roofwire import pipeline as P
from roofwire.cli import main
from roofwire.config import ConfigError, RunConfig, dump_config, load_config, parse_config_text
from roofwire.metrics import hss
from roofwire.scenegen import GestaltClass, load_scene, load_wireframe_json, save_scene, save_wireframe_json

TINY = {"train_scenes": "3", "val_scenes": "2", "vertex_epochs": "2", "edge_epochs": "2",
        "vertex_max_points": "16", "edge_max_points": "16", "vertex_batch": "64", "edge_batch": "64",
        "sweep_vertex_grid": "0.3,0.6", "sweep_edge_grid": "0.2,0.5,0.8"}


def tiny_args(out):
    args = []
    for k, v in TINY.items():
        args += ["--set", f"{k}={v}"]
    return args + ["--out", str(out)]


def run_cli(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


# --- config

def test_defaults_validate():
    cfg = load_config()
    assert cfg.vertex_threshold == 0.59 and cfg.edge_threshold == 0.65 and cfg.tau == 0.5
    assert cfg.vertex_batch == 128 and cfg.edge_batch == 128


def test_file_then_overrides(tmp_path):
    path = tmp_path / "a.cfg"
    path.write_text("# comment\nseed = 7\nnoise_sigma = 0.05   # trailing\n\nroof_types = gable\n")
    cfg = load_config(path, {"seed": "9"})
    assert cfg.seed == 9 and cfg.noise_sigma == 0.05 and cfg.roof_type_list() == ("gable",)


def test_env_var_names_config(tmp_path, monkeypatch):
    path = tmp_path / "b.cfg"
    path.write_text("val_scenes = 3\n")
    monkeypatch.setenv("ROOFWIRE_CONFIG", str(path))
    assert load_config().val_scenes == 3


@pytest.mark.parametrize("pairs", [{"vertex_threshold": "1.5"}, {"nope": "1"}, {"seed": "x"},
                                   {"vertex_batch": "0"}, {"edge_source": "both"}, {"roof_types": "dome"},
                                   {"sweep_edge_grid": "0.1,2"}])
def test_bad_values_rejected(pairs):
    with pytest.raises(ConfigError):
        load_config(None, pairs)


def test_malformed_line_rejected():
    with pytest.raises(ConfigError):
        parse_config_text("seed 3\n")


def test_dump_round_trip(tmp_path):
    cfg = load_config(None, {"seed": "4", "noise_sigma": "0.01"})
    path = tmp_path / "c.cfg"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


def test_run_config_is_dataclass_with_thresholds_in_range():
    cfg = RunConfig()
    cfg.validate()
    assert all(0 <= v <= 1 for v in cfg.vertex_grid() + cfg.edge_grid())


# --- error reporting

def one_error_line(err, kind):
    lines = err.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith(f"error:{kind}: ")


def test_config_error_exit_2(tmp_path, capsys):
    code, _, err = run_cli(["gen", "--set", "vertex_threshold=3", "--out", str(tmp_path)], capsys)
    assert code == 2
    one_error_line(err, "config")


def test_missing_config_file_exit_2(tmp_path, capsys):
    code, _, err = run_cli(["gen", "--config", str(tmp_path / "none.cfg")], capsys)
    assert code == 2
    one_error_line(err, "config")


def test_missing_manifest_exit_3(tmp_path, capsys):
    code, _, err = run_cli(["train-vertex", "--out", str(tmp_path)], capsys)
    assert code == 3
    one_error_line(err, "data")


def test_corrupt_manifest_exit_3(tmp_path, capsys):
    (tmp_path / "manifest.json").write_text("{not json")
    code, _, err = run_cli(["train-all", "--out", str(tmp_path)], capsys)
    assert code == 3
    one_error_line(err, "data")
    (tmp_path / "manifest.json").write_text(json.dumps({"scenes": [{"file": "x"}]}))
    with pytest.raises(P.DataError):
        P.read_manifest(str(tmp_path))


def test_corrupt_scene_file_exit_3(tmp_path, capsys):
    bad = tmp_path / "bad.s23d"
    bad.write_bytes(b"garbage")
    code, _, err = run_cli(["candidates", str(bad)], capsys)
    assert code == 3
    one_error_line(err, "data")


# --- a tiny end-to-end run shared by the remaining tests

@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["gen"] + tiny_args(out)) == 0
    assert main(["train-all"] + tiny_args(out)) == 0
    return out


def test_manifest_lists_every_scene(run_dir):
    m = P.read_manifest(str(run_dir))
    assert len(m["scenes"]) == 5
    assert [e["split"] for e in m["scenes"]].count("val") == 2
    assert all(os.path.exists(run_dir / e["file"]) for e in m["scenes"])


def test_gen_is_byte_identical(run_dir, tmp_path):
    assert main(["gen"] + tiny_args(tmp_path)) == 0
    for e in P.read_manifest(str(run_dir))["scenes"]:
        assert (run_dir / e["file"]).read_bytes() == (tmp_path / e["file"]).read_bytes()
    assert (run_dir / "manifest.json").read_bytes() == (tmp_path / "manifest.json").read_bytes()


def test_training_logs_one_row_per_epoch(run_dir):
    for name in ("vertex_log.csv", "edge_log.csv"):
        with open(run_dir / name, newline="") as f:
            rows = list(csv.DictReader(f))
        assert [int(r["epoch"]) for r in rows] == [1, 2]
        assert all(np.isfinite(float(r["loss"])) for r in rows)


def test_missing_weights_exit_4_names_file(run_dir, tmp_path, capsys):
    scene = P.scene_paths(str(run_dir), "val")[0]
    missing = tmp_path / "nothing.pnwt"
    code, _, err = run_cli(["predict", scene, "--vertex-weights", str(missing), "--out", str(run_dir)], capsys)
    assert code == 4
    one_error_line(err, "model")
    assert str(missing) in err


def test_corrupt_weights_exit_4(run_dir, tmp_path, capsys):
    bad = tmp_path / "bad.pnwt"
    bad.write_bytes(b"PNWT\x01\x00")
    scene = P.scene_paths(str(run_dir), "val")[0]
    code, _, err = run_cli(["predict", scene, "--vertex-weights", str(bad), "--out", str(run_dir)], capsys)
    assert code == 4
    one_error_line(err, "model")


def test_predict_is_deterministic_and_reports_timings(run_dir, tmp_path, capsys):
    scene = P.scene_paths(str(run_dir), "val")[0]
    outs = []
    for k in range(2):
        path = tmp_path / f"p{k}.json"
        code, _, err = run_cli(["predict", scene, "-o", str(path), "--out", str(run_dir)], capsys)
        assert code == 0
        timings = json.loads(err.strip().splitlines()[-1])["timings"]
        assert {"candidates_s", "refine_s", "vertex_patch_ms", "edges_s"} <= set(timings)
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]


def test_empty_scene_predicts_empty_wireframe(run_dir, tmp_path, capsys):
    scene = load_scene(P.scene_paths(str(run_dir), "val")[0])
    for v in scene.views:
        v.gestalt_image[np.isin(v.gestalt_image, [GestaltClass.APEX, GestaltClass.EAVE_END_POINT,
                                                  GestaltClass.FLASHING_END])] = GestaltClass.ROOF
    path = tmp_path / "empty.s23d"
    save_scene(scene, path)
    code, out, _ = run_cli(["predict", str(path), "--out", str(run_dir)], capsys)
    assert code == 0
    wf = json.loads(out)
    assert wf["vertices"] == [] and wf["edges"] == []


def test_gt_against_itself_scores_one(run_dir, tmp_path, capsys):
    for p in P.scene_paths(str(run_dir), "val"):
        gt = load_scene(p).gt
        path = tmp_path / "gt.json"
        save_wireframe_json(gt, path)
        assert hss(gt, load_wireframe_json(path)).hss == 1.0
        code, out, _ = run_cli(["eval", str(path), str(path)], capsys)
        assert code == 0 and json.loads(out)["hss"] == 1.0


def test_eval_run_writes_metric_table(run_dir, capsys):
    code, out, _ = run_cli(["eval", str(run_dir), "--set", "vertex_max_points=16", "--set", "edge_max_points=16"],
                           capsys)
    assert code == 0
    summary = json.loads(out)
    assert summary["scenes"] == 2
    with open(run_dir / "metrics.csv", newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["scene", "hss", "f1", "iou"]
    assert len(rows) == 4 and rows[-1][0] == "mean"
    assert float(rows[-1][1]) == summary["hss"]
    assert len(os.listdir(run_dir / "predictions")) == 2


def test_eval_bad_pred_file_exit_3(run_dir, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("[")
    code, _, err = run_cli(["eval", str(bad), str(bad)], capsys)
    assert code == 3
    one_error_line(err, "data")


def test_sweep_outputs(run_dir, capsys):
    code, out, _ = run_cli(["sweep"] + tiny_args(run_dir), capsys)
    assert code == 0
    assert json.loads(out)["cells"] == 6
    sweep = run_dir / "sweep"
    with open(sweep / "sweep.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 6
    for v in {r["v_thr"] for r in rows}:
        assert len({r["f1_mean"] for r in rows if r["v_thr"] == v}) == 1
    assert sorted(p for p in os.listdir(sweep) if p.endswith(".svg")) == [
        "sweep_f1.svg", "sweep_hss.svg", "sweep_iou.svg"]


def test_ablation_layout(run_dir, capsys):
    code, out, _ = run_cli(["ablation"] + tiny_args(run_dir), capsys)
    assert code == 0
    rows = [json.loads(line) for line in out.strip().splitlines()]
    assert [r["variant"] for r in rows] == list(P.ABLATION_VARIANTS)
    with open(run_dir / "ablation.csv", newline="") as f:
        assert next(csv.reader(f)) == ["variant", "hss", "f1", "iou"]


def test_nearest_neighbor_edges_hand_case():
    v = np.array([[0, 0, 0], [1, 0, 0], [5, 0, 0]], float)
    e = {tuple(x) for x in P.nearest_neighbor_edges(v, k=1).tolist()}
    assert e == {(0, 1), (1, 2)}


def test_resume_continues_epochs(run_dir, tmp_path):
    import shutil

    work = tmp_path / "resume"
    shutil.copytree(run_dir, work)
    assert main(["train-vertex", "--resume"] + tiny_args(work)) == 0
    with open(work / "vertex_log.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert [int(r["epoch"]) for r in rows] == [1, 2, 3, 4]
    assert int(rows[-1]["step"]) > int(rows[1]["step"])
