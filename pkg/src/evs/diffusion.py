"""Deterministic DDIM sampling, inversion, and the noising-denoising refiner.

All reverse steps are fully deterministic (no injected stochasticity) and walk
consecutive integer timesteps on their schedule.  Every operation reports the
number of denoiser evaluations it consumed; callers rely on that count for
inference-cost accounting.

Descending from ``t_from`` to ``t_to`` executes steps ``t_from .. t_to+1``, so
the returned pair is the latent at ``t_to`` together with the clean-latent
prediction made by the final executed step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapabilityError, NumericError, ParameterError
from .schedule import NoiseSchedule, forward_noise

__all__ = [
    "RefineOutput",
    "predict_clean",
    "ddim_step",
    "ddim_sample",
    "ddim_invert",
    "sdedit_refine",
]


@dataclass(frozen=True)
class RefineOutput:
    """Latent at the ending timestep plus the final clean-latent prediction."""

    partial_latent: np.ndarray
    predicted_clean: np.ndarray
    nfe: int


def predict_clean(
    z_t: np.ndarray, t: int, eps_hat: np.ndarray, sched: NoiseSchedule
) -> np.ndarray:
    """One-shot clean-latent estimate from a noisy latent and predicted noise."""
    t = sched.check_timestep(t, minimum=1)
    ab = sched.alpha_bar[t]
    return (z_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)


def _check_finite(eps: np.ndarray, t: int) -> np.ndarray:
    if not np.all(np.isfinite(eps)):
        raise NumericError(f"denoiser returned non-finite output at t={t}")
    return eps


def _descend(z_t, t, t_prev, eps, sched):
    # Shared algebra of one reverse update given the predicted noise.
    ab_t = sched.alpha_bar[t]
    ab_p = sched.alpha_bar[t_prev]
    pred_clean = (z_t - np.sqrt(1.0 - ab_t) * eps) / np.sqrt(ab_t)
    z_prev = np.sqrt(ab_p) * pred_clean + np.sqrt(1.0 - ab_p) * eps
    return z_prev, pred_clean


def ddim_step(z_t, t, t_prev, model, c, sched: NoiseSchedule):
    """Single deterministic reverse step; returns (z_at_t_prev, predicted_clean)."""
    t = sched.check_timestep(t, minimum=1)
    t_prev = sched.check_timestep(t_prev)
    if not t_prev < t:
        raise ParameterError(f"need t_prev < t, got t_prev={t_prev}, t={t}")
    eps = _check_finite(model.evaluate(z_t, t, c), t)
    return _descend(z_t, t, t_prev, eps, sched)


def ddim_sample(
    z_from, t_from, t_to, model, c, sched: NoiseSchedule, trajectory=None
) -> RefineOutput:
    """Walk consecutive reverse steps from ``t_from`` down to ``t_to``.

    ``trajectory``, if given, is a list that receives the latent after every
    executed step (for debug dumps).
    """
    t_from = sched.check_timestep(t_from, minimum=1)
    t_to = sched.check_timestep(t_to)
    if not t_to < t_from:
        raise ParameterError(f"need t_to < t_from, got t_to={t_to}, t_from={t_from}")
    z = z_from
    pred_clean = None
    for t in range(t_from, t_to, -1):
        z, pred_clean = ddim_step(z, t, t - 1, model, c, sched)
        if trajectory is not None:
            trajectory.append(z)
    return RefineOutput(partial_latent=z, predicted_clean=pred_clean, nfe=t_from - t_to)


def ddim_invert(z0, t_target, model, c, sched: NoiseSchedule, capture=None):
    """Deterministically encode a clean latent up to noising level ``t_target``.

    Runs the reversed recurrence from level 0 upward, one denoiser evaluation
    per level.  When ``capture`` (a FeatureCache) is supplied, the model's taps
    record features under the timestep being produced, which is the key the
    matching reverse step will ask for.  Returns ``(z_at_t_target, nfe)``.
    """
    t_target = sched.check_timestep(t_target, minimum=1)
    if capture is not None and not getattr(model, "has_taps", False):
        raise CapabilityError("feature capture requested but model has no taps")
    z = z0
    for t in range(t_target):
        if capture is not None:
            eps = model.forward(z, t, c, capture=capture, capture_key=t + 1)
        else:
            eps = model.evaluate(z, t, c)
        _check_finite(eps, t)
        ab_t = sched.alpha_bar[t]
        ab_next = sched.alpha_bar[t + 1]
        pred_clean = (z - np.sqrt(1.0 - ab_t) * eps) / np.sqrt(ab_t)
        z = np.sqrt(ab_next) * pred_clean + np.sqrt(1.0 - ab_next) * eps
    return z, t_target


def sdedit_refine(
    z0, t_noise, t_end, model, c, sched: NoiseSchedule, rng: np.random.Generator,
    trajectory=None,
) -> RefineOutput:
    """Noise a clean latent to ``t_noise`` with a fresh draw, then denoise to ``t_end``.

    Pulls out-of-distribution inputs toward the model's prior; the refinement
    strength is ``t_noise / total_steps``.
    """
    t_noise = sched.check_timestep(t_noise, minimum=1)
    if not 0 <= t_end < t_noise:
        raise ParameterError(f"need 0 <= t_end < t_noise, got {t_end}, {t_noise}")
    eps = rng.standard_normal(np.shape(z0))
    z_noisy = forward_noise(z0, t_noise, eps, sched)
    return ddim_sample(z_noisy, t_noise, t_end, model, c, sched, trajectory=trajectory)
