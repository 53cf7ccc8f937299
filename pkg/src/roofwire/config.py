"""Run configuration: plain ``key = value`` text files, env-var path override, CLI overrides."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass

from roofwire import constants as C
from roofwire.candidates import CandidateConfig
from roofwire.edge_model import EdgeConfig
from roofwire.scenegen import ROOF_TYPES, GeneratorConfig
from roofwire.training import TrainConfig
from roofwire.vertex_model import VertexConfig

CONFIG_ENV = "ROOFWIRE_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "run"
    train_scenes: int = 200
    val_scenes: int = 50

    # synthetic scenes
    roof_types: str = ",".join(ROOF_TYPES)
    density: float = 40.0
    noise_sigma: float = 0.03
    misalign_sigma: float = 0.1
    jitter_sigma: float = 1.0
    n_views: int = 8
    image_size: int = 320
    focal: float = 230.0
    ring_radius: float = 24.0
    camera_height: float = 11.0
    sector_prob: float = 0.25
    sector_deg: float = 60.0

    # candidate generation
    min_points: int = C.MIN_CLUSTER_POINTS
    max_dilations: int = C.MAX_DILATIONS
    merge_radius: float = C.MERGE_RADIUS
    merge_overlap: float = C.MERGE_OVERLAP

    # vertex model
    vertex_max_points: int = C.MAX_PATCH_POINTS
    vertex_lr: float = 1e-3
    vertex_weight_decay: float = 1e-2
    vertex_epochs: int = 10
    vertex_batch: int = C.BATCH_SIZE
    vertex_dropout: float = 0.3
    positive_radius: float = 1.0
    dedup_radius: float = 0.2
    vertex_threshold: float = C.VERTEX_THRESHOLD

    # edge model
    edge_max_points: int = C.MAX_PATCH_POINTS
    edge_lr: float = 1e-3
    edge_weight_decay: float = 1e-2
    edge_epochs: int = 10
    edge_batch: int = C.BATCH_SIZE
    edge_source: str = "gt"
    min_pair_distance: float = 0.2
    max_pair_distance: float = 30.0
    edge_threshold: float = C.EDGE_THRESHOLD

    # evaluation
    tau: float = C.MATCH_TAU
    sweep_vertex_grid: str = "0.1,0.2,0.3,0.4,0.5,0.59,0.7,0.8,0.9"
    sweep_edge_grid: str = "0.1,0.2,0.3,0.4,0.5,0.65,0.7,0.8,0.9"

    def validate(self) -> None:
        for name in ("vertex_threshold", "edge_threshold", "merge_overlap", "vertex_dropout"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        for name in ("vertex_batch", "edge_batch", "vertex_max_points", "edge_max_points", "n_views",
                     "image_size", "min_points"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.n_views < 3:
            raise ConfigError("n_views must be >= 3")
        for name in ("train_scenes", "val_scenes", "vertex_epochs", "edge_epochs", "max_dilations"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("density", "tau", "merge_radius", "focal", "ring_radius", "positive_radius"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.edge_source not in ("gt", "refined"):
            raise ConfigError("edge_source must be 'gt' or 'refined'")
        bad = set(self.roof_type_list()) - set(ROOF_TYPES)
        if bad or not self.roof_type_list():
            raise ConfigError(f"unknown roof types {sorted(bad)}")
        self.vertex_grid()
        self.edge_grid()

    def roof_type_list(self) -> tuple[str, ...]:
        return tuple(t.strip() for t in self.roof_types.split(",") if t.strip())

    def _grid(self, text: str, name: str) -> list[float]:
        try:
            vals = [float(t) for t in text.split(",") if t.strip()]
        except ValueError as exc:
            raise ConfigError(f"{name}: {exc}") from exc
        if not vals or any(not 0 <= v <= 1 for v in vals):
            raise ConfigError(f"{name} must be a comma list of values in [0, 1]")
        return vals

    def vertex_grid(self) -> list[float]:
        return self._grid(self.sweep_vertex_grid, "sweep_vertex_grid")

    def edge_grid(self) -> list[float]:
        return self._grid(self.sweep_edge_grid, "sweep_edge_grid")

    # -- views onto the per-module configs

    def generator(self) -> GeneratorConfig:
        return GeneratorConfig(
            density=self.density, noise_sigma=self.noise_sigma, misalign_sigma=self.misalign_sigma,
            jitter_sigma=self.jitter_sigma, n_views=self.n_views, ring_radius=self.ring_radius,
            camera_height=self.camera_height, image_size=self.image_size, focal=self.focal,
            sector_prob=self.sector_prob, sector_deg=self.sector_deg, roof_types=self.roof_type_list(),
        )

    def candidates(self) -> CandidateConfig:
        return CandidateConfig(min_points=self.min_points, max_iters=self.max_dilations,
                               merge_radius=self.merge_radius, merge_overlap=self.merge_overlap)

    def vertex(self) -> VertexConfig:
        return VertexConfig(
            max_points=self.vertex_max_points, positive_radius=self.positive_radius,
            dedup_radius=self.dedup_radius, threshold=self.vertex_threshold,
            train=TrainConfig(lr=self.vertex_lr, weight_decay=self.vertex_weight_decay,
                              batch_size=self.vertex_batch, epochs=self.vertex_epochs, seed=self.seed),
        )

    def edge(self) -> EdgeConfig:
        return EdgeConfig(
            max_points=self.edge_max_points, min_pair_distance=self.min_pair_distance,
            max_pair_distance=self.max_pair_distance, threshold=self.edge_threshold, match_tau=self.tau,
            train=TrainConfig(lr=self.edge_lr, weight_decay=self.edge_weight_decay,
                              batch_size=self.edge_batch, epochs=self.edge_epochs, seed=self.seed),
        )


def _coerce(name: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    return raw


def apply_overrides(cfg: RunConfig, pairs: dict[str, str]) -> RunConfig:
    fields = {f.name: f for f in dataclasses.fields(cfg)}
    for key, raw in pairs.items():
        key = key.strip().replace("-", "_")
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, _coerce(key, raw, getattr(cfg, key)))
    return cfg


def parse_config_text(text: str) -> dict[str, str]:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        k, v = line.split("=", 1)
        pairs[k.strip()] = v.strip()
    return pairs


def load_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Defaults, then the file at `path` (or $ROOFWIRE_CONFIG), then `overrides`."""
    cfg = RunConfig()
    path = path or os.environ.get(CONFIG_ENV)
    if path:
        try:
            with open(path) as f:
                text = f.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        apply_overrides(cfg, parse_config_text(text))
    if overrides:
        apply_overrides(cfg, overrides)
    cfg.validate()
    return cfg


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {getattr(cfg, f.name)}\n" for f in dataclasses.fields(cfg))
