import numpy as np
import pytest

from evs.diffusion import ddim_invert, ddim_sample, ddim_step, predict_clean, sdedit_refine
from evs.errors import CapabilityError, NumericError, ParameterError
from evs.metrics import psnr
from evs.models import (
    AnalyticDenoiser,
    Condition,
    Denoiser,
    SpatialWorld,
    ZeroDenoiser,
    sample_world,
)
from evs.schedule import NoiseSchedule, build_linear_beta, forward_noise


class ConstantDenoiser(Denoiser):
    """Stub predicting one fixed value everywhere."""

    def __init__(self, value):
        super().__init__()
        self.value = value

    def _eps(self, z_t, t, c):
        return np.full_like(np.asarray(z_t, dtype=np.float64), self.value)


class NanDenoiser(Denoiser):
    def _eps(self, z_t, t, c):
        return np.full_like(np.asarray(z_t, dtype=np.float64), np.nan)


def single_gaussian_world(sigma=0.5, dim=8, frames=4):
    return SpatialWorld(
        means=np.zeros((1, dim)), weights=np.array([1.0]), sigma=sigma, frames=frames
    )


class TestPredictClean:
    def test_recovers_clean_latent_with_oracle_noise(self, lab):
        rng = np.random.default_rng(1)
        z0 = rng.standard_normal((4, 8))
        eps = rng.standard_normal((4, 8))
        z_t = forward_noise(z0, 20, eps, lab.sched_i)
        rec = predict_clean(z_t, 20, eps, lab.sched_i)
        assert np.max(np.abs(rec - z0)) / np.max(np.abs(z0)) < 1e-10

    def test_hand_case(self):
        sched = NoiseSchedule(total_steps=1, alpha_bar=np.array([1.0, 0.64]))
        out = predict_clean(np.array([[1.9]]), 1, np.array([[0.5]]), sched)
        assert out[0, 0] == pytest.approx(2.0, abs=1e-14)

    def test_rejects_t_zero(self, lab):
        with pytest.raises(ParameterError):
            predict_clean(np.zeros((2, 2)), 0, np.zeros((2, 2)), lab.sched_i)

    def test_matches_posterior_mean_for_single_gaussian(self):
        # Conditional-mean oracle by self-normalized importance sampling over
        # prior draws; the analytic denoiser must land within 3 SE.
        world = single_gaussian_world(sigma=0.5, dim=2, frames=1)
        sched = build_linear_beta(8, 1e-2, 0.3)
        model = AnalyticDenoiser(world, sched)
        rng = np.random.default_rng(11)
        t = 4
        ab = sched.alpha_bar[t]
        z_t = np.array([[0.7, -0.4]])
        draws = world.sigma * rng.standard_normal((1_000_000, 2))
        logw = -((z_t[0] - np.sqrt(ab) * draws) ** 2).sum(1) / (2 * (1 - ab))
        w = np.exp(logw - logw.max())
        est = (w[:, None] * draws).sum(0) / w.sum()
        batches = np.array_split(np.arange(len(w)), 50)
        per_batch = np.stack(
            [(w[b][:, None] * draws[b]).sum(0) / w[b].sum() for b in batches]
        )
        se = per_batch.std(0, ddof=1) / np.sqrt(len(batches))
        eps_hat = model.evaluate(z_t, t, None)
        post_mean = predict_clean(z_t, t, eps_hat, sched)
        assert np.all(np.abs(post_mean[0] - est) <= 3 * np.maximum(se, 1e-9))


class TestDdimStep:
    def test_endpoint_identity(self, lab):
        model = ConstantDenoiser(0.3)
        z = np.ones((2, 3))
        z_prev, pred = ddim_step(z, 1, 0, model, None, lab.sched_i)
        assert np.array_equal(z_prev, pred)

    def test_hand_case(self):
        sched = NoiseSchedule(total_steps=2, alpha_bar=np.array([1.0, 0.81, 0.64]))
        model = ConstantDenoiser(0.5)
        z_t = np.array([[0.8 * 2.0 + 0.6 * 0.5]])  # predicted clean will be 2.0
        z_prev, pred = ddim_step(z_t, 2, 1, model, None, sched)
        assert pred[0, 0] == pytest.approx(2.0, abs=1e-14)
        assert z_prev[0, 0] == pytest.approx(2.0179449471770337, abs=1e-12)

    def test_rejects_bad_order(self, lab):
        with pytest.raises(ParameterError):
            ddim_step(np.zeros((1, 1)), 3, 3, ConstantDenoiser(0.0), None, lab.sched_i)

    def test_non_finite_model_output(self, lab):
        with pytest.raises(NumericError):
            ddim_step(np.zeros((1, 1)), 5, 4, NanDenoiser(), None, lab.sched_i)

    def test_one_eval_per_step(self, lab):
        model = ConstantDenoiser(0.0)
        ddim_step(np.zeros((1, 1)), 5, 4, model, None, lab.sched_i)
        assert model.num_evals == 1


def refine_schedule(sched, factor):
    """Geometric interpolation of alpha_bar between integer levels."""
    log_ab = np.log(sched.alpha_bar)
    fine = [1.0]
    for t in range(sched.total_steps):
        for k in range(1, factor + 1):
            frac = k / factor
            fine.append(float(np.exp(log_ab[t] * (1 - frac) + log_ab[t + 1] * frac)))
    return NoiseSchedule(total_steps=sched.total_steps * factor, alpha_bar=np.array(fine))


class TestTrajectoryAgainstReferenceIntegrator:
    def test_full_reverse_matches_closed_form_flow(self):
        # Single-Gaussian prior: the exact flow scales the deviation from the
        # (scaled) mean by sigma / marginal-std.  A 10x-substep reference walk
        # must sit closer to that limit than the stride-1 walk does, and the
        # stride-1 endpoint must already be within a few percent.
        world = single_gaussian_world(sigma=0.5)
        sched = build_linear_beta(50, 1e-4, 0.02)
        t_start = 40
        ab = sched.alpha_bar[t_start]
        rng = np.random.default_rng(3)
        z_t = np.sqrt(ab) * world.means[0] + rng.standard_normal((4, 8))

        model = AnalyticDenoiser(world, sched)
        coarse = ddim_sample(z_t, t_start, 0, model, None, sched).partial_latent

        factor = 10
        fine_sched = refine_schedule(sched, factor)
        fine_model = AnalyticDenoiser(world, fine_sched)
        fine = ddim_sample(z_t, t_start * factor, 0, fine_model, None, fine_sched).partial_latent

        s_t = np.sqrt(ab * world.sigma**2 + 1 - ab)
        closed = world.means[0] + (z_t - np.sqrt(ab) * world.means[0]) * world.sigma / s_t

        scale = np.linalg.norm(closed)
        assert np.linalg.norm(fine - closed) / scale < np.linalg.norm(coarse - closed) / scale
        assert np.linalg.norm(coarse - closed) / scale < 0.03
        assert np.linalg.norm(fine - closed) / scale < 0.005


class TestDdimSample:
    def test_single_step_equals_ddim_step(self, lab):
        model = ConstantDenoiser(0.2)
        rng = np.random.default_rng(5)
        z = rng.standard_normal((3, 4))
        out = ddim_sample(z, 10, 9, model, None, lab.sched_i)
        z_prev, pred = ddim_step(z, 10, 9, ConstantDenoiser(0.2), None, lab.sched_i)
        assert np.array_equal(out.partial_latent, z_prev)
        assert np.array_equal(out.predicted_clean, pred)
        assert out.nfe == 1

    def test_endpoint_identity_at_zero(self, lab):
        model = ConstantDenoiser(0.2)
        out = ddim_sample(np.ones((2, 2)), 5, 0, model, None, lab.sched_i)
        assert np.array_equal(out.partial_latent, out.predicted_clean)

    @pytest.mark.parametrize("t_from,t_to", [(10, 0), (20, 10), (3, 2)])
    def test_nfe_counting(self, t_from, t_to, lab):
        model = ConstantDenoiser(0.0)
        out = ddim_sample(np.zeros((2, 2)), t_from, t_to, model, None, lab.sched_i)
        assert out.nfe == t_from - t_to
        assert model.num_evals == t_from - t_to

    def test_rejects_bad_range(self, lab):
        with pytest.raises(ParameterError):
            ddim_sample(np.zeros((1, 1)), 5, 5, ConstantDenoiser(0.0), None, lab.sched_i)

    def test_trajectory_sink(self, lab):
        traj = []
        ddim_sample(np.zeros((2, 2)), 5, 0, ConstantDenoiser(0.1), None, lab.sched_i, trajectory=traj)
        assert len(traj) == 5


class TestDdimInvert:
    def test_zero_denoiser_is_pure_rescaling(self, lab):
        rng = np.random.default_rng(2)
        z0 = rng.standard_normal((4, 8))
        for t in (1, 5, 20):
            z, nfe = ddim_invert(z0, t, ZeroDenoiser(), None, lab.sched_i)
            np.testing.assert_allclose(z, np.sqrt(lab.sched_i.alpha_bar[t]) * z0, atol=1e-12)
            assert nfe == t

    def test_round_trip_reconstruction(self, lab):
        # In-distribution videos, full inversion on the 50-step schedule.
        model = AnalyticDenoiser(lab.spatial_world, lab.sched_i)
        for seed in range(3):
            c = Condition(mode_id=seed % 4)
            z0 = sample_world(lab.spatial_world, c, seed)
            z, _ = ddim_invert(z0, 50, model, c, lab.sched_i)
            back = ddim_sample(z, 50, 0, model, c, lab.sched_i)
            assert psnr(back.partial_latent, z0, peak=2.0) >= 40.0

    def test_fewer_steps_reconstruct_worse(self, lab):
        # Same total noise budget, coarser walk: the short schedule must lose.
        errs = {}
        for total in (5, 50):
            sched = build_linear_beta(total, 1e-4 * 50 / total, 0.02 * 50 / total)
            model = AnalyticDenoiser(lab.spatial_world, sched)
            seed_errs = []
            for seed in range(20):
                c = Condition(mode_id=seed % 4)
                z0 = sample_world(lab.spatial_world, c, seed)
                z, _ = ddim_invert(z0, total, model, c, sched)
                back = ddim_sample(z, total, 0, model, c, sched)
                seed_errs.append(np.sqrt(np.mean((back.partial_latent - z0) ** 2)))
            errs[total] = np.mean(seed_errs)
        assert errs[5] > errs[50]

    def test_capture_requires_taps(self, lab):
        from evs.sfi import FeatureCache

        with pytest.raises(CapabilityError):
            ddim_invert(np.zeros((2, 2)), 3, ZeroDenoiser(), None, lab.sched_i, capture=FeatureCache())

    def test_rejects_t_zero_target(self, lab):
        with pytest.raises(ParameterError):
            ddim_invert(np.zeros((2, 2)), 0, ZeroDenoiser(), None, lab.sched_i)


class TestSdeditRefine:
    def test_rejects_zero_noising(self, lab):
        rng = np.random.default_rng(0)
        with pytest.raises(ParameterError):
            sdedit_refine(np.zeros((2, 2)), 0, 0, ConstantDenoiser(0.0), None, lab.sched_i, rng)

    def test_minimal_refinement(self, lab):
        model = ConstantDenoiser(0.0)
        out = sdedit_refine(np.zeros((2, 2)), 1, 0, model, None, lab.sched_i, np.random.default_rng(0))
        assert out.nfe == 1
        assert model.num_evals == 1

    def test_default_strength_mapping(self, lab):
        from evs.schedule import strength_to_timestep

        t_noise = strength_to_timestep(0.4, lab.sched_i)
        assert t_noise == 20
        model = ConstantDenoiser(0.0)
        out = sdedit_refine(np.zeros((2, 2)), t_noise, 0, model, None, lab.sched_i, np.random.default_rng(1))
        assert out.nfe == 20

    def test_contraction_matches_closed_form(self):
        # Norm-contraction toward the prior mean over 100 fresh-noise draws,
        # compared with the closed-form Gaussian flow factor.
        world = single_gaussian_world(sigma=0.5)
        sched = build_linear_beta(50, 1e-4, 0.02)
        model = AnalyticDenoiser(world, sched)
        t_noise = 20
        ab = sched.alpha_bar[t_noise]
        s_t = np.sqrt(ab * world.sigma**2 + 1 - ab)
        n = world.frames * world.means.shape[1]
        ratios, expected = [], []
        for seed in range(100):
            rng = np.random.default_rng(seed)
            z0 = rng.standard_normal((world.frames, 8)) * 2.0
            out = sdedit_refine(z0, t_noise, 0, model, None, sched, rng)
            ratios.append(np.linalg.norm(out.predicted_clean) / np.linalg.norm(z0))
            d0 = np.linalg.norm(z0)
            expected.append(np.sqrt(ab * d0**2 + (1 - ab) * n) / d0 * world.sigma / s_t)
        assert np.mean(ratios) == pytest.approx(np.mean(expected), rel=0.05)

    def test_deterministic_given_seed(self, lab):
        model = AnalyticDenoiser(lab.spatial_world, lab.sched_i)
        z0 = sample_world(lab.spatial_world, Condition(mode_id=0), 4)
        outs = []
        for _ in range(2):
            rng = np.random.default_rng(12345)
            outs.append(sdedit_refine(z0, 10, 0, model, Condition(mode_id=0), lab.sched_i, rng))
        assert np.array_equal(outs[0].partial_latent, outs[1].partial_latent)
        assert np.array_equal(outs[0].predicted_clean, outs[1].predicted_clean)
