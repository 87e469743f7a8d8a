"""Pipeline orchestration for the two-model refinement lab.

The only latent ever handed from one model's domain to the other is a
predicted clean latent: noisy latents are meaningless under the other
schedule.  Pipelines record a stage log and exact per-model evaluation
counts; the encapsulated pipeline runs its temporal block exactly once.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .diffusion import ddim_sample, sdedit_refine
from .errors import CapabilityError, ParameterError
from .models import Condition, Denoiser
from .schedule import NoiseSchedule, forward_noise
from .sfi import DEEP_LAYERS, InjectionConfig, denoise_with_injection, invert_with_capture

BLOCK_SDEDIT = "sdedit"
BLOCK_INVERSION_SFI = "inversion+sfi"


@dataclass(frozen=True)
class ModelBundle:
    """The two denoisers with their own schedules."""

    spatial: Denoiser
    temporal: Denoiser
    spatial_schedule: NoiseSchedule
    temporal_schedule: NoiseSchedule


@dataclass(frozen=True)
class PipelineConfig:
    """Hyperparameters of the encapsulated pipeline.

    ``t_i`` / ``t_v`` are the noising levels on the spatial / temporal
    schedules, ``t_t2v`` the spatial timestep at which the temporal block is
    inserted, and ``n_v`` how many temporal reverse steps the block runs.
    """

    t_i: int = 20
    t_v: int = 4
    t_t2v: int = 10
    n_v: int = 2
    block_mode: str = BLOCK_INVERSION_SFI
    injection: InjectionConfig | None = field(
        default_factory=lambda: InjectionConfig(layers=DEEP_LAYERS, gamma=0.8)
    )
    seed: int = 0

    def validate(self, sched_i: NoiseSchedule, sched_v: NoiseSchedule):
        if not 1 <= self.t_t2v <= self.t_i <= sched_i.total_steps:
            raise ParameterError(
                f"need 1 <= t_t2v <= t_i <= {sched_i.total_steps}, "
                f"got t_t2v={self.t_t2v}, t_i={self.t_i}"
            )
        if not 1 <= self.n_v <= self.t_v <= sched_v.total_steps:
            raise ParameterError(
                f"need 1 <= n_v <= t_v <= {sched_v.total_steps}, "
                f"got n_v={self.n_v}, t_v={self.t_v}"
            )
        if self.block_mode not in (BLOCK_SDEDIT, BLOCK_INVERSION_SFI):
            raise ParameterError(f"unknown block_mode {self.block_mode!r}")
        if self.block_mode == BLOCK_INVERSION_SFI and self.injection is None:
            raise ParameterError("block_mode inversion+sfi requires an injection config")


@dataclass(frozen=True)
class PipelineResult:
    output: np.ndarray
    nfe_t2i: int
    nfe_t2v: int
    wall_time: float
    stage_log: tuple


class _Run:
    """Tracks counters, wall time, and the stage log for one pipeline run."""

    def __init__(self, models: ModelBundle):
        self.models = models
        self._start = time.perf_counter()
        self._evals0 = (models.spatial.num_evals, models.temporal.num_evals)
        self.stages: list[tuple[str, tuple[int, int]]] = []

    def log(self, name: str, t_from: int, t_to: int):
        self.stages.append((name, (t_from, t_to)))

    def finish(self, output: np.ndarray) -> PipelineResult:
        return PipelineResult(
            output=output,
            nfe_t2i=self.models.spatial.num_evals - self._evals0[0],
            nfe_t2v=self.models.temporal.num_evals - self._evals0[1],
            wall_time=time.perf_counter() - self._start,
            stage_log=tuple(self.stages),
        )


def run_t2i_only(
    z0, t_i: int, models: ModelBundle, c: Condition | None, rng: np.random.Generator
) -> PipelineResult:
    """Frame-wise refinement: noise to ``t_i`` on the spatial schedule, denoise to 0."""
    run = _Run(models)
    out = sdedit_refine(z0, t_i, 0, models.spatial, c, models.spatial_schedule, rng)
    run.log("t2i", t_i, 0)
    return run.finish(out.predicted_clean)


def run_t2v_only(
    z0, t_v: int, models: ModelBundle, c: Condition | None, rng: np.random.Generator
) -> PipelineResult:
    """Sequence-wise refinement on the temporal schedule."""
    run = _Run(models)
    out = sdedit_refine(z0, t_v, 0, models.temporal, c, models.temporal_schedule, rng)
    run.log("t2v", t_v, 0)
    return run.finish(out.predicted_clean)


def compose_vi(
    z0, t_v: int, t_i: int, models: ModelBundle, c, rng: np.random.Generator
) -> PipelineResult:
    """Temporal refinement to clean, then frame-wise refinement (zero stages omitted)."""
    run = _Run(models)
    z = z0
    if t_v > 0:
        z = sdedit_refine(z, t_v, 0, models.temporal, c, models.temporal_schedule, rng).predicted_clean
        run.log("t2v", t_v, 0)
    if t_i > 0:
        z = sdedit_refine(z, t_i, 0, models.spatial, c, models.spatial_schedule, rng).predicted_clean
        run.log("t2i", t_i, 0)
    return run.finish(z)


def compose_iv(
    z0, t_i: int, t_v: int, models: ModelBundle, c, rng: np.random.Generator
) -> PipelineResult:
    """Frame-wise refinement to clean, then temporal refinement."""
    run = _Run(models)
    z = z0
    if t_i > 0:
        z = sdedit_refine(z, t_i, 0, models.spatial, c, models.spatial_schedule, rng).predicted_clean
        run.log("t2i", t_i, 0)
    if t_v > 0:
        z = sdedit_refine(z, t_v, 0, models.temporal, c, models.temporal_schedule, rng).predicted_clean
        run.log("t2v", t_v, 0)
    return run.finish(z)


def _temporal_block(bridge, cfg: PipelineConfig, models: ModelBundle, c, rng, run: _Run):
    """One encapsulated temporal stage acting on a clean bridge latent."""
    sched_v = models.temporal_schedule
    if cfg.block_mode == BLOCK_SDEDIT:
        out = sdedit_refine(bridge, cfg.t_v, cfg.t_v - cfg.n_v, models.temporal, c, sched_v, rng)
        run.log("t2v:sdedit", cfg.t_v, cfg.t_v - cfg.n_v)
        return out.predicted_clean
    if not getattr(models.temporal, "has_taps", False):
        raise CapabilityError("inversion+sfi block requires a temporal model with taps")
    z_tv, cache, _ = invert_with_capture(bridge, cfg.t_v, models.temporal, c, sched_v)
    run.log("t2v:invert", 0, cfg.t_v)
    out = denoise_with_injection(
        z_tv, cfg.t_v, cfg.n_v, models.temporal, c, sched_v, cache, cfg.injection
    )
    run.log("t2v:inject", cfg.t_v, cfg.t_v - cfg.n_v)
    return out.predicted_clean


def run_evs(z0, cfg: PipelineConfig, models: ModelBundle, c: Condition | None) -> PipelineResult:
    """The encapsulated pipeline: spatial refinement with one temporal block inside.

    Noise to ``t_i``; reverse spatial steps down to ``t_t2v``; hand the
    predicted clean latent to the temporal block; re-noise the block output
    to ``t_t2v`` with a fresh draw; finish the spatial reverse steps.  When
    ``t_t2v == t_i`` the leading spatial stage is empty and the block acts on
    the input itself.
    """
    cfg.validate(models.spatial_schedule, models.temporal_schedule)
    rng = np.random.default_rng(np.random.SeedSequence([0x45565321, cfg.seed]))
    sched_i = models.spatial_schedule
    run = _Run(models)

    if cfg.t_t2v < cfg.t_i:
        z = forward_noise(z0, cfg.t_i, rng.standard_normal(np.shape(z0)), sched_i)
        head = ddim_sample(z, cfg.t_i, cfg.t_t2v, models.spatial, c, sched_i)
        run.log("t2i", cfg.t_i, cfg.t_t2v)
        bridge = head.predicted_clean
    else:
        bridge = z0

    block_clean = _temporal_block(bridge, cfg, models, c, rng, run)

    z = forward_noise(block_clean, cfg.t_t2v, rng.standard_normal(np.shape(z0)), sched_i)
    run.log("renoise", cfg.t_t2v, cfg.t_t2v)
    tail = ddim_sample(z, cfg.t_t2v, 0, models.spatial, c, sched_i)
    run.log("t2i", cfg.t_t2v, 0)
    return run.finish(tail.predicted_clean)


def run_iterated_baseline(
    z0, rounds: int, t_i: int, t_v: int, models: ModelBundle, c, rng: np.random.Generator
) -> PipelineResult:
    """Full-depth alternation baseline used as the inference-cost denominator.

    Stages alternate spatial-then-temporal and temporal-then-spatial rounds;
    an odd round count gets a trailing full spatial stage so the sequence
    always ends frame-refined.  Evaluation count: rounds*(t_i+t_v), plus t_i
    when rounds is odd.
    """
    if rounds < 1:
        raise ParameterError(f"rounds must be >= 1, got {rounds}")
    run = _Run(models)
    z = z0
    for r in range(rounds):
        if r % 2 == 0:
            res = compose_iv(z, t_i, t_v, models, c, rng)
        else:
            res = compose_vi(z, t_v, t_i, models, c, rng)
        run.stages.extend(res.stage_log)
        z = res.output
    if rounds % 2 == 1:
        z = sdedit_refine(z, t_i, 0, models.spatial, c, models.spatial_schedule, rng).predicted_clean
        run.log("t2i", t_i, 0)
    return run.finish(z)
