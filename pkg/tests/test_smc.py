"""Particle engine: prior, weight updates, resampling, summaries, oracle."""

import math

import numpy as np
import pytest

from sqzadapt.model import ProbeParams, draw_samples
from sqzadapt.smc import (
    DegeneratePosteriorError,
    ParticleCloud,
    SequentialUpdater,
    effective_sample_size,
    eta_ml_update,
    grid_oracle,
    init_prior,
    make_eta_profile,
    resample,
    summarize,
    update_weights,
    update_weights_batch,
)

ROUGH_ANGLES = (0.0, math.pi / 4, math.pi / 2)


def rotating_dataset(phi_true, seed, total=200, r=0.8, eta=0.8):
    """Samples cycling through the three standard rough angles."""
    rng = np.random.default_rng(seed)
    probe = ProbeParams(phi_true, r, eta)
    xs = np.empty(total)
    thetas = np.empty(total)
    for i in range(total):
        theta = ROUGH_ANGLES[i % 3]
        xs[i] = draw_samples(rng, probe, theta, 1)[0]
        thetas[i] = theta
    return xs, thetas


def feed_updates(cloud, xs, thetas, eta, fixed_r=None):
    """Apply the Bayes updates grouped by consecutive equal angles."""
    start = 0
    for i in range(1, len(xs) + 1):
        if i == len(xs) or thetas[i] != thetas[start]:
            update_weights_batch(cloud, xs[start:i], thetas[start], eta, fixed_r=fixed_r)
            start = i
    return cloud


class TestInitPrior:
    def test_uniform_weights(self):
        cloud = init_prior(1, 1000)
        assert np.allclose(cloud.weights, 1.0 / 1000)
        assert abs(cloud.weights.sum() - 1.0) < 1e-12

    def test_flat_prior_centroid(self):
        cloud = init_prior(2, 20000)
        mean = cloud.weights @ cloud.positions
        assert mean[0] == pytest.approx(math.pi / 2, abs=0.01)
        assert mean[1] == pytest.approx(1.5, abs=0.01)

    def test_positions_inside_ranges(self):
        cloud = init_prior(2, 5000)
        assert cloud.phi.min() >= 0 and cloud.phi.max() < math.pi
        assert cloud.r.min() >= 0 and cloud.r.max() < 3.0

    def test_rejects_tiny_cloud(self):
        with pytest.raises(ValueError):
            init_prior(1, 1)

    def test_rejects_bad_dimensions(self):
        with pytest.raises(ValueError):
            init_prior(3, 100)


class TestUpdateWeights:
    def test_flat_likelihood_keeps_weights(self):
        # r = 0 makes the variance angle-independent, so every particle
        # explains the data equally well
        cloud = init_prior(1, 500)
        before = cloud.weights.copy()
        update_weights(cloud, 0.31, 0.7, 1.0, fixed_r=0.0)
        assert np.allclose(cloud.weights, before, rtol=1e-12)

    def test_weights_stay_normalized(self):
        cloud = init_prior(1, 2000)
        rng = np.random.default_rng(5)
        probe = ProbeParams(1.2, 0.8, 0.8)
        for theta in (0.0, math.pi / 4, 0.9):
            for x in draw_samples(rng, probe, theta, 20):
                update_weights(cloud, float(x), theta, 0.8, fixed_r=0.8)
                assert abs(cloud.weights.sum() - 1.0) < 1e-12
                assert np.all(cloud.weights >= 0)

    def test_batch_equals_sequential(self):
        xs, thetas = rotating_dataset(1.3, 21, total=30)
        a = init_prior(1, 1000)
        b = init_prior(1, 1000)
        feed_updates(a, xs, thetas, 0.8, fixed_r=0.8)
        for x, theta in zip(xs, thetas):
            update_weights(b, float(x), theta, 0.8, fixed_r=0.8)
        assert np.allclose(a.weights, b.weights, rtol=1e-9, atol=1e-15)

    def test_1d_requires_fixed_r(self):
        cloud = init_prior(1, 100)
        with pytest.raises(ValueError):
            update_weights(cloud, 0.1, 0.0, 0.8)

    def test_large_finite_sample_keeps_weights_finite(self):
        cloud = init_prior(1, 500)
        update_weights(cloud, 50.0, 0.3, 0.8, fixed_r=0.8)
        assert np.all(np.isfinite(cloud.weights))
        assert abs(cloud.weights.sum() - 1.0) < 1e-12

    def test_total_underflow_raises_degenerate(self):
        cloud = init_prior(1, 500)
        with pytest.raises(DegeneratePosteriorError):
            update_weights(cloud, 1e200, 0.3, 0.8, fixed_r=0.8)

    def test_rejects_non_finite_sample(self):
        cloud = init_prior(1, 100)
        with pytest.raises(ValueError):
            update_weights(cloud, math.nan, 0.0, 0.8, fixed_r=0.8)


class TestEffectiveSampleSize:
    def test_uniform(self):
        cloud = init_prior(1, 777)
        assert effective_sample_size(cloud) == pytest.approx(777, rel=1e-9)

    def test_one_hot(self):
        cloud = init_prior(1, 100)
        cloud.weights = np.zeros(100)
        cloud.weights[3] = 1.0
        assert effective_sample_size(cloud) == pytest.approx(1.0, rel=1e-12)

    def test_two_equal(self):
        cloud = init_prior(1, 100)
        cloud.weights = np.zeros(100)
        cloud.weights[[10, 20]] = 0.5
        assert effective_sample_size(cloud) == pytest.approx(2.0, rel=1e-12)


class TestResample:
    def _weighted_cloud(self):
        cloud = init_prior(2, 4000)
        xs, thetas = rotating_dataset(1.2, 33, total=60)
        feed_updates(cloud, xs, thetas, 0.8)
        return cloud

    def test_resets_to_uniform(self):
        cloud = self._weighted_cloud()
        resample(cloud, np.random.default_rng(0))
        assert np.allclose(cloud.weights, 1.0 / cloud.n_particles)
        assert effective_sample_size(cloud) == pytest.approx(cloud.n_particles, rel=1e-9)

    def test_preserves_moments_in_expectation(self):
        cloud = self._weighted_cloud()
        w = cloud.weights
        mean = w @ cloud.positions
        centred = cloud.positions - mean
        cov = (centred * w[:, None]).T @ centred
        reps = 100
        means = np.empty((reps, 2))
        variances = np.empty((reps, 2))
        for k in range(reps):
            copy = ParticleCloud(
                positions=cloud.positions.copy(),
                weights=cloud.weights.copy(),
                phi_range=cloud.phi_range,
                r_range=cloud.r_range,
            )
            resample(copy, np.random.default_rng(1000 + k))
            means[k] = copy.positions.mean(axis=0)
            variances[k] = copy.positions.var(axis=0)
        for d in range(2):
            se_mean = means[:, d].std(ddof=1) / math.sqrt(reps)
            assert abs(means[:, d].mean() - mean[d]) < 3 * se_mean + 1e-12
            se_var = variances[:, d].std(ddof=1) / math.sqrt(reps)
            assert abs(variances[:, d].mean() - cov[d, d]) < 3 * se_var + 1e-12

    def test_positions_stay_in_ranges(self):
        cloud = self._weighted_cloud()
        for k in range(5):
            resample(cloud, np.random.default_rng(k))
            assert cloud.phi.min() >= 0 and cloud.phi.max() < math.pi
            assert cloud.r.min() >= 0 and cloud.r.max() <= 3.0

    def test_zero_weight_cloud_raises(self):
        cloud = init_prior(1, 100)
        cloud.weights = np.zeros(100)
        with pytest.raises(DegeneratePosteriorError):
            resample(cloud, np.random.default_rng(0))

    def test_bumps_version(self):
        cloud = self._weighted_cloud()
        version = cloud.version
        resample(cloud, np.random.default_rng(0))
        assert cloud.version == version + 1


class TestSummarize:
    def test_two_particle_moments(self):
        cloud = ParticleCloud(positions=np.array([0.2, 0.4]), weights=np.array([0.5, 0.5]))
        summary = summarize(cloud)
        assert summary.phi_mean == pytest.approx(0.3, rel=1e-12)
        assert summary.phi_variance == pytest.approx(0.01, rel=1e-12)
        assert not summary.directional

    def test_seam_straddle_uses_directional_mean(self):
        cloud = ParticleCloud(
            positions=np.array([0.05, math.pi - 0.05]), weights=np.array([0.5, 0.5])
        )
        summary = summarize(cloud)
        assert summary.directional
        assert summary.phi_mean == pytest.approx(0.0, abs=1e-9)
        assert summary.phi_variance == pytest.approx(0.05**2, rel=1e-9)

    def test_flat_cloud_keeps_linear_center(self):
        cloud = init_prior(1, 10000)
        summary = summarize(cloud)
        assert not summary.directional
        assert summary.phi_mean == pytest.approx(math.pi / 2, abs=1e-6)

    def test_covariance_symmetric_psd(self):
        cloud = init_prior(2, 4000)
        xs, thetas = rotating_dataset(1.1, 17, total=90)
        feed_updates(cloud, xs, thetas, 0.8)
        summary = summarize(cloud)
        cov = summary.covariance
        assert cov[0, 1] == cov[1, 0]
        assert np.all(np.linalg.eigvalsh(cov) >= -1e-15)
        assert summary.ess == pytest.approx(effective_sample_size(cloud), rel=1e-12)


class TestGridOracle:
    def test_flat_likelihood_recovers_prior(self):
        xs = np.array([0.1, -0.2, 0.4])
        thetas = np.zeros(3)
        summary = grid_oracle(xs, thetas, 1.0, fixed_r=0.0, resolution=2001)
        assert summary.phi_mean == pytest.approx(math.pi / 2, rel=1e-9)
        assert summary.phi_variance == pytest.approx(math.pi**2 / 12, rel=1e-6)

    def test_variance_shrinks_with_data(self):
        xs, thetas = rotating_dataset(1.0, 9, total=240)
        sizes = (30, 120, 240)
        variances = [
            grid_oracle(xs[:n], thetas[:n], 0.8, fixed_r=0.8, resolution=1500).phi_variance
            for n in sizes
        ]
        assert variances[0] > variances[1] > variances[2]

    def test_self_convergence(self):
        xs, thetas = rotating_dataset(2.0, 4, total=200)
        coarse = grid_oracle(xs, thetas, 0.8, fixed_r=0.8, resolution=500)
        fine = grid_oracle(xs, thetas, 0.8, fixed_r=0.8, resolution=2000)
        assert coarse.phi_mean == pytest.approx(fine.phi_mean, rel=1e-3)
        assert coarse.phi_variance == pytest.approx(fine.phi_variance, rel=1e-3)

    def test_rejects_coarse_grid(self):
        with pytest.raises(ValueError):
            grid_oracle([0.1], [0.0], 0.8, fixed_r=0.8, resolution=400)

    def test_particle_update_matches_oracle(self):
        # the Bayes-update path over the deterministic prior grid is itself a
        # quadrature, so it must track the independent dense-grid posterior
        for i, phi in enumerate((0.8, 1.4, 2.3)):
            xs, thetas = rotating_dataset(phi, 50 + i, total=200)
            cloud = init_prior(1, 20000)
            feed_updates(cloud, xs, thetas, 0.8, fixed_r=0.8)
            reference = grid_oracle(xs, thetas, 0.8, fixed_r=0.8, resolution=2000)
            summary = summarize(cloud)
            assert summary.phi_mean == pytest.approx(reference.phi_mean, rel=0.01)
            assert summary.phi_variance == pytest.approx(reference.phi_variance, rel=0.01)

    def test_particle_convergence_with_cloud_size(self):
        xs, thetas = rotating_dataset(1.3, 77, total=60)
        reference = grid_oracle(xs, thetas, 0.8, resolution=600)
        errors = []
        for n_p in (1000, 10000):
            cloud = init_prior(2, n_p)
            feed_updates(cloud, xs, thetas, 0.8)
            summary = summarize(cloud)
            errors.append(
                abs(summary.phi_variance - reference.phi_variance) / reference.phi_variance
            )
        assert errors[1] < errors[0]


class TestSequentialUpdater:
    def test_resample_policy_trigger(self):
        # with per-sample chunks the driver must resample exactly when the
        # ESS drops below half the cloud size
        xs, thetas = rotating_dataset(1.0, 3, total=40)
        driver_cloud = init_prior(1, 2000)
        updater = SequentialUpdater(
            driver_cloud, np.random.default_rng(42), efficiency=0.8, fixed_r=0.8, chunk_size=1
        )
        manual_cloud = init_prior(1, 2000)
        manual_rng = np.random.default_rng(42)
        manual_resamples = 0
        for x, theta in zip(xs, thetas):
            updater.observe_batch(np.array([x]), theta)
            update_weights(manual_cloud, float(x), theta, 0.8, fixed_r=0.8)
            if effective_sample_size(manual_cloud) < manual_cloud.n_particles / 2:
                resample(manual_cloud, manual_rng)
                manual_resamples += 1
            assert np.array_equal(driver_cloud.weights, manual_cloud.weights)
            assert np.array_equal(driver_cloud.positions, manual_cloud.positions)
        assert updater.resample_count == manual_resamples
        assert manual_resamples > 0

    def test_no_resample_when_uninformative(self):
        cloud = init_prior(1, 2000)
        updater = SequentialUpdater(cloud, np.random.default_rng(0), efficiency=1.0, fixed_r=0.0)
        updater.observe_batch(np.random.default_rng(1).normal(0, 0.5, 200), 0.2)
        assert updater.resample_count == 0

    def test_posterior_variance_contracts_on_average(self):
        # informative batches shrink the posterior in expectation
        shrink_count = 0
        for seed in range(50):
            xs, thetas = rotating_dataset(1.1, 600 + seed, total=120)
            cloud = init_prior(1, 3000)
            updater = SequentialUpdater(
                cloud, np.random.default_rng(seed), efficiency=0.8, fixed_r=0.8
            )
            updater.observe_batch(xs[:60], 0.0)
            early = summarize(cloud).phi_variance
            updater.observe_batch(xs[60:], math.pi / 4)
            late = summarize(cloud).phi_variance
            if late <= early:
                shrink_count += 1
        assert shrink_count >= 45


class TestEtaProfile:
    def _cloud_at(self, phi, r):
        positions = np.column_stack([np.full(64, phi), np.full(64, r)])
        return ParticleCloud(
            positions=positions, weights=np.full(64, 1 / 64), r_range=(0.0, 3.0)
        )

    def test_flat_profile_keeps_midpoint(self):
        profile = make_eta_profile()
        assert profile.low_information
        assert profile.eta_hat == pytest.approx(0.75, rel=1e-12)

    def test_single_point_grid(self):
        profile = make_eta_profile(0.9, 0.9, 1)
        assert profile.eta_hat == pytest.approx(0.9, rel=1e-12)

    def test_ties_resolve_to_larger_eta(self):
        profile = make_eta_profile(0.5, 1.0, 11)
        bumped = profile.log_posterior.copy()
        bumped[[2, 7]] = 1.0
        tied = type(profile)(grid=profile.grid, log_posterior=bumped, updates=1)
        assert tied.eta_hat == pytest.approx(profile.grid[7], rel=1e-12)

    def test_update_concentrates_on_truth(self):
        rng = np.random.default_rng(12)
        truth = ProbeParams(0.9, 0.8, 0.85)
        profile = make_eta_profile()
        cloud = self._cloud_at(0.9, 0.8)
        for _ in range(40):
            theta = 0.9 - 0.18
            xs = draw_samples(rng, truth, theta, 500)
            profile = eta_ml_update(profile, xs, theta, cloud)
        assert not profile.low_information
        assert abs(profile.eta_hat - 0.85) <= 0.01

    def test_requires_joint_cloud(self):
        profile = make_eta_profile()
        cloud = init_prior(1, 100)
        with pytest.raises(ValueError):
            eta_ml_update(profile, np.array([0.1]), 0.0, cloud)
