"""Command-line entry point.

Every failure prints one line ``error:<kind>: <message>`` to stderr and exits with
2 (config), 3 (data) or 4 (model).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from roofwire import pipeline as P
from roofwire.config import ConfigError, load_config
from roofwire.metrics import best_cell
from roofwire.nn.serialize import WeightsError
from roofwire.scenegen import SceneFormatError, load_scene, save_wireframe_json

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_MODEL = 0, 2, 3, 4


def _parse_sets(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    return out


def _config(args):
    overrides = _parse_sets(args.set)
    if getattr(args, "out", None):
        overrides["out_dir"] = args.out
    return load_config(args.config, overrides)


def _load_scene(path):
    try:
        return load_scene(path)
    except (OSError, SceneFormatError) as exc:
        raise P.DataError(f"{path}: {exc}") from exc


def _emit(obj, path=None) -> None:
    text = json.dumps(obj, indent=1)
    if path:
        with open(path, "w") as f:
            f.write(text + "\n")
    else:
        print(text)


def run_gen(args):
    cfg = _config(args)
    m = P.cmd_gen(cfg)
    print(f"wrote {len(m['scenes'])} scenes to {cfg.out_dir}")


def run_candidates(args):
    cfg = _config(args)
    cands = P.generate_candidates(_load_scene(args.scene), cfg.candidates())
    _emit(P.candidates_json(cands), args.output)


def run_train_vertex(args):
    P.cmd_train_vertex(_config(args), resume=args.resume)


def run_train_edge(args):
    P.cmd_train_edge(_config(args), resume=args.resume)


def run_train_all(args):
    P.cmd_train_all(_config(args), resume=args.resume)


def _weights(cfg, args):
    vnet = P.load_vertex_net(cfg, args.vertex_weights)
    enet = P.load_edge_net(cfg, args.edge_weights) if hasattr(args, "edge_weights") else None
    return vnet, enet


def run_refine(args):
    cfg = _config(args)
    vnet, _ = _weights(cfg, args)
    refined, _ = P.refine_scene(_load_scene(args.scene), vnet, cfg)
    _emit({"vertices": refined.positions.tolist(), "probability": refined.probability.tolist()}, args.output)


def run_predict(args):
    cfg = _config(args)
    vnet, enet = _weights(cfg, args)
    wf, trace = P.predict_scene(_load_scene(args.scene), vnet, enet, cfg)
    if args.output:
        save_wireframe_json(wf, args.output)
    else:
        print(json.dumps(wf.to_json()))
    print(json.dumps({"timings": trace.timings}), file=sys.stderr)


def run_eval(args):
    if args.pred:
        cfg = _config(args)
        print(json.dumps(P.cmd_eval_pair(args.target, args.pred, cfg.tau).to_json()))
        return
    overrides = _parse_sets(args.set)
    overrides.setdefault("out_dir", args.target)
    cfg = load_config(args.config, overrides)
    print(json.dumps(P.cmd_eval_run(cfg, args.split)))


def run_sweep(args):
    cfg = _config(args)
    rows = P.cmd_sweep(cfg, args.split)
    best = best_cell(rows)
    print(json.dumps({"cells": len(rows), "best": best}))


def run_ablation(args):
    cfg = _config(args)
    for row in P.cmd_ablation(cfg, args.split):
        print(json.dumps(row))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="roofwire", description="Roof wireframe reconstruction from point clouds.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, run_dir=True):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key = value config file (default: $ROOFWIRE_CONFIG)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        if run_dir:
            p.add_argument("--out", help="run directory (overrides out_dir)")
        p.set_defaults(func=fn)
        return p

    add("gen", run_gen, "generate train/val scenes and a manifest")
    p = add("candidates", run_candidates, "stage-1 candidates of one scene as JSON")
    p.add_argument("scene")
    p.add_argument("-o", "--output")
    for name, fn in (("train-vertex", run_train_vertex), ("train-edge", run_train_edge),
                     ("train-all", run_train_all)):
        p = add(name, fn, f"{name.replace('-', ' ')} on the run's train split")
        p.add_argument("--resume", action="store_true", help="continue from saved weights and optimizer state")
    p = add("refine", run_refine, "refined vertices of one scene as JSON")
    p.add_argument("scene")
    p.add_argument("--vertex-weights")
    p.add_argument("-o", "--output")
    p = add("predict", run_predict, "wireframe JSON for one scene")
    p.add_argument("scene")
    p.add_argument("--vertex-weights")
    p.add_argument("--edge-weights")
    p.add_argument("-o", "--output")
    p = add("eval", run_eval, "score a predicted wireframe JSON against GT, or a whole run directory",
            run_dir=False)
    p.add_argument("target", help="GT wireframe JSON, or a run directory")
    p.add_argument("pred", nargs="?", help="predicted wireframe JSON")
    p.add_argument("--split", default="val")
    for name, fn in (("sweep", run_sweep), ("ablation", run_ablation)):
        p = add(name, fn, f"{name} over the run's scenes")
        p.add_argument("--split", default="val")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except (P.DataError, SceneFormatError) as exc:
        return _fail("data", exc, EXIT_DATA)
    except (P.ModelError, WeightsError) as exc:
        return _fail("model", exc, EXIT_MODEL)
    except OSError as exc:
        return _fail("data", exc, EXIT_DATA)
    return EXIT_OK


def _fail(kind: str, exc: Exception, code: int) -> int:
    msg = " ".join(str(exc).split())
    print(f"error:{kind}: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
