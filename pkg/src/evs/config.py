"""Run configuration: one versioned JSON schema, one resolver, one lab builder.

The resolved config dict is the single source of truth recorded in every
manifest; CLI flags and ``--set`` overrides are applied before resolution and
the ``EVS_SEED`` environment variable takes precedence over the config seed.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass

import numpy as np

from . import models
from .compose import BLOCK_INVERSION_SFI, ModelBundle, PipelineConfig
from .errors import ConfigError
from .metrics import DEFAULT_OVERALL_CHANNELS, DEFAULT_RANGES, MetricConfig
from .models import AnalyticDenoiser, Condition, TrainRecipe
from .schedule import build_linear_beta
from .sfi import InjectionConfig

CONFIG_VERSION = 1

DEFAULT_CONFIG = {
    "version": CONFIG_VERSION,
    "seed": 0,
    "frames": models.DEFAULT_FRAMES,
    "dim": models.DEFAULT_DIM,
    "world": {
        "modes": models.DEFAULT_MODES,
        "sigma_spatial": models.DEFAULT_SIGMA_SPATIAL,
        "sigma_temporal": models.DEFAULT_SIGMA_TEMPORAL,
        "rho": models.DEFAULT_RHO,
        "blur_width": models.DEFAULT_BLUR_WIDTH,
        "seed": models.DEFAULT_WORLD_SEED,
    },
    "schedule_i": {"steps": 50, "beta_start": 1e-4, "beta_end": 0.02},
    "schedule_v": {"steps": 8, "beta_start": 1e-4, "beta_end": 0.1},
    "pipeline": {
        "t_I": 20,
        "t_V": 4,
        "t_T2V": 10,
        "n_V": 2,
        "block_mode": BLOCK_INVERSION_SFI,
        "injection": {"layers": [2, 3], "gamma": 0.8, "inject_f": False, "inject_kv": True},
        "rounds": 2,
    },
    "dataset": {"count": 93, "flicker_sigma": 0.2, "styled": False, "style_scale": 8.0},
    "metrics": {
        "tau": 0.05,
        "iq_offset": -3000.0,
        "iq_scale": 30.0,
        "psnr_peak": 2.0,
        "ranges": {k: list(v) for k, v in DEFAULT_RANGES.items()},
        "overall_channels": list(DEFAULT_OVERALL_CHANNELS),
    },
    "net": {"weights": None, "seed": 0},
    "train": {"steps": 3500, "lr": 3e-3, "batch_size": 32, "seed": 0},
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _deep_merge(base[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve_config(overrides: dict | None = None, seed_env: bool = True) -> dict:
    """Defaults merged with overrides; EVS_SEED wins over the config seed."""
    cfg = DEFAULT_CONFIG if overrides is None else _deep_merge(DEFAULT_CONFIG, overrides)
    cfg = copy.deepcopy(cfg)
    if cfg.get("version") != CONFIG_VERSION:
        raise ConfigError(f"config version {cfg.get('version')!r} not supported")
    if seed_env and os.environ.get("EVS_SEED"):
        try:
            cfg["seed"] = int(os.environ["EVS_SEED"])
        except ValueError as exc:
            raise ConfigError(f"EVS_SEED must be an integer: {exc}") from exc
    return cfg


def apply_set_overrides(cfg_overrides: dict, assignments: list[str]) -> dict:
    """Apply ``--set key.path=value`` pairs onto a config override dict."""
    out = copy.deepcopy(cfg_overrides)
    for assignment in assignments:
        if "=" not in assignment:
            raise ConfigError(f"--set expects key=value, got {assignment!r}")
        key, raw = assignment.split("=", 1)
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        try:
            import json as _json

            node[parts[-1]] = _json.loads(raw)
        except ValueError:
            node[parts[-1]] = raw
    return out


@dataclass(frozen=True)
class Lab:
    """Everything a pipeline run needs, built from one resolved config."""

    config: dict
    spatial_world: models.SpatialWorld
    temporal_world: models.TemporalWorld
    models: ModelBundle
    metric_config: MetricConfig

    @property
    def sched_i(self):
        return self.models.spatial_schedule

    @property
    def sched_v(self):
        return self.models.temporal_schedule


def build_lab(cfg: dict, temporal_override=None) -> Lab:
    """Instantiate worlds, schedules, and denoisers from a resolved config.

    ``temporal_override`` swaps in a different temporal denoiser (the tapped
    net) while keeping everything else identical.
    """
    w = cfg["world"]
    spatial_world, temporal_world = models.default_worlds(
        dim=cfg["dim"],
        modes=w["modes"],
        frames=cfg["frames"],
        sigma_spatial=w["sigma_spatial"],
        sigma_temporal=w["sigma_temporal"],
        rho=w["rho"],
        blur_width=w["blur_width"],
        seed=w["seed"],
    )
    sched_i = build_linear_beta(
        cfg["schedule_i"]["steps"], cfg["schedule_i"]["beta_start"], cfg["schedule_i"]["beta_end"]
    )
    sched_v = build_linear_beta(
        cfg["schedule_v"]["steps"], cfg["schedule_v"]["beta_start"], cfg["schedule_v"]["beta_end"]
    )
    temporal = temporal_override or AnalyticDenoiser(temporal_world, sched_v)
    bundle = ModelBundle(
        spatial=AnalyticDenoiser(spatial_world, sched_i),
        temporal=temporal,
        spatial_schedule=sched_i,
        temporal_schedule=sched_v,
    )
    m = cfg["metrics"]
    metric_config = MetricConfig(
        tau=m["tau"],
        iq_offset=m["iq_offset"],
        iq_scale=m["iq_scale"],
        psnr_peak=m["psnr_peak"],
        ranges={k: tuple(v) for k, v in m["ranges"].items()},
        overall_channels=tuple(m["overall_channels"]),
    )
    return Lab(
        config=cfg,
        spatial_world=spatial_world,
        temporal_world=temporal_world,
        models=bundle,
        metric_config=metric_config,
    )


def pipeline_config(cfg: dict, **overrides) -> PipelineConfig:
    p = dict(cfg["pipeline"])
    p.update(overrides)
    inj = p.get("injection")
    injection = None
    if inj is not None:
        injection = InjectionConfig(
            layers=frozenset(inj["layers"]),
            gamma=inj["gamma"],
            inject_f=inj.get("inject_f", False),
            inject_kv=inj.get("inject_kv", True),
        )
    return PipelineConfig(
        t_i=p["t_I"],
        t_v=p["t_V"],
        t_t2v=p["t_T2V"],
        n_v=p["n_V"],
        block_mode=p["block_mode"],
        injection=injection,
        seed=p.get("seed", cfg["seed"]),
    )


def train_recipe(cfg: dict) -> TrainRecipe:
    t = cfg["train"]
    return TrainRecipe(
        steps=t["steps"], lr=t["lr"], batch_size=t["batch_size"], seed=t["seed"]
    )


def item_seed(base_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([base_seed, index])


def item_condition(cfg: dict, index: int, style: np.ndarray | None = None) -> Condition:
    return Condition(mode_id=index % cfg["world"]["modes"], style=style)


def style_vector(cfg: dict) -> np.ndarray:
    """Fixed off-support offset used for the styled dataset."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg["seed"], 0x5EED]))
    v = rng.standard_normal(cfg["dim"])
    return v / np.linalg.norm(v) * cfg["dataset"]["style_scale"]
