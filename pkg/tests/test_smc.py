import numpy as np
import pytest
from scipy import stats

from sebm.model import ModelConfig, build_system, mu_theta, simulate, transition_logpdf
from sebm.observation import obs_logpdf, observe_trajectory
from sebm.posterior import GAUSSIAN_MEAN, ClimatologicalPrior
from sebm.smc import (DegenerateWeightsError, build_proposal, normalize_logweights, optimal_proposal_params,
                      predictive_logweight, resample_indices, sir_filter)

CLIM = ClimatologicalPrior(u_c=1.0, sigma_c=0.08, sigma_o=0.05)
U_PREV = np.linspace(0.95, 1.05, 12)
Y = np.array([1.01, 0.99, 1.02, 1.0, 0.98, 1.03])


def test_weak_observation_limit():
    system = build_system(ModelConfig(sigma_eps=1e3))
    mean, cov = optimal_proposal_params(U_PREV, Y, GAUSSIAN_MEAN, system)
    assert np.linalg.norm(mean - mu_theta(U_PREV, GAUSSIAN_MEAN, system.ops)) < 1e-4
    np.testing.assert_allclose(cov, system.noise.R, atol=1e-8 * np.abs(system.noise.R).max())


def test_exact_observation_limit():
    system = build_system(ModelConfig(sigma_eps=1e-7, observed_nodes=tuple(range(12))))
    y = np.linspace(0.97, 1.03, 12)
    mean, _ = optimal_proposal_params(U_PREV, y, GAUSSIAN_MEAN, system)
    np.testing.assert_allclose(mean, y, atol=1e-6)


@pytest.mark.parametrize("clim", [None, CLIM])
def test_gain_forms_agree(system, clim):
    k = build_proposal(system, clim)
    np.testing.assert_allclose(k.gain, (k.cov @ k.H.T) / k.Q, atol=1e-10 * np.abs(k.gain).max())
    # unsymmetrized covariance form
    R = system.noise.R
    np.testing.assert_allclose(k.cov, R - k.gain @ k.H @ R, atol=1e-12)


def test_gain_forms_agree_random_spd():
    rng = np.random.default_rng(0)
    for _ in range(5):
        B = rng.standard_normal((12, 12))
        R = B @ B.T / 12 + 0.1 * np.eye(12)
        H = np.eye(12)[[0, 3, 5, 9]]
        Q = rng.uniform(0.1, 2.0, 4)
        gain = R @ H.T @ np.linalg.inv(np.diag(Q) + H @ R @ H.T)
        Sigma = R - gain @ H @ R
        np.testing.assert_allclose(gain, Sigma @ H.T / Q, atol=1e-10)


@pytest.mark.parametrize("clim", [None, CLIM])
def test_weight_is_sample_independent(system, clim):
    kernel = build_proposal(system, clim)
    mean, cov = optimal_proposal_params(U_PREV, Y, GAUSSIAN_MEAN, system, clim)
    log_alpha = predictive_logweight(U_PREV, Y, GAUSSIAN_MEAN, system, clim)
    q = stats.multivariate_normal(mean, cov)
    draws = np.random.default_rng(1).multivariate_normal(mean, cov, size=100)
    ratio = (transition_logpdf(draws, U_PREV, GAUSSIAN_MEAN, system.noise, system.ops)
             + obs_logpdf(Y, draws, system.config) - q.logpdf(draws))
    if clim is not None:
        ratio += np.sum(stats.norm.logpdf(draws, clim.u_c, clim.sigma_c), axis=1)
    np.testing.assert_allclose(ratio, log_alpha, atol=1e-8)
    assert kernel.d_a == (18 if clim else 6)


def test_predictive_dense_oracle(system):
    mu = mu_theta(U_PREV, GAUSSIAN_MEAN, system.ops)
    H = np.vstack([system.H(), np.eye(12)])
    Q = np.diag(np.r_[np.full(6, 1e-4), np.full(12, CLIM.sigma_c**2)])
    y_aug = np.r_[Y, np.ones(12)]
    oracle = stats.multivariate_normal(H @ mu, Q + H @ system.noise.R @ H.T).logpdf(y_aug)
    assert predictive_logweight(U_PREV, Y, GAUSSIAN_MEAN, system, CLIM) == pytest.approx(oracle, abs=1e-10)


def test_predictive_small_forcing_limit():
    system = build_system(ModelConfig(sigma_f=1e-6, observed_nodes=tuple(range(12))))
    y = np.linspace(0.97, 1.03, 12)
    mu = mu_theta(U_PREV, GAUSSIAN_MEAN, system.ops)
    limit = np.sum(stats.norm.logpdf(y, mu, 0.01)) + np.sum(stats.norm.logpdf(1.0, mu, CLIM.sigma_c))
    assert predictive_logweight(U_PREV, y, GAUSSIAN_MEAN, system, CLIM) == pytest.approx(limit, abs=1e-6)


def test_resampling():
    rng = np.random.default_rng(2)
    assert np.all(resample_indices(np.eye(6)[0], 50, rng) == 0)
    assert set(resample_indices(np.r_[0.5, 0.5, np.zeros(4)], 500, rng)) <= {0, 1}
    M, n = 7, 100_000
    counts = np.bincount(resample_indices(np.full(M, 1 / M), n, rng), minlength=M)
    se = np.sqrt(n * (1 / M) * (1 - 1 / M))
    assert np.all(np.abs(counts - n / M) < 3 * se)
    with pytest.raises(ValueError):
        resample_indices(np.array([0.5, 0.4]), 3, rng)


def test_normalize_logweights():
    w = normalize_logweights([-1e4, -1e4 + np.log(3), -np.inf])
    np.testing.assert_allclose(w, [0.25, 0.75, 0.0])
    with pytest.raises(FloatingPointError):
        normalize_logweights([-np.inf, -np.inf])


def test_filter_structure_and_determinism(system, synthetic):
    _, obs, clim = synthetic
    a = sir_filter(GAUSSIAN_MEAN, obs, system, 8, clim, np.random.default_rng(3))
    b = sir_filter(GAUSSIAN_MEAN, obs, system, 8, clim, np.random.default_rng(3))
    assert a.particles.shape == (40, 8, 12) and a.ancestors.shape == (39, 8)
    np.testing.assert_allclose(a.weights.sum(axis=1), 1.0, atol=1e-12)
    assert a.ancestors.min() >= 0 and a.ancestors.max() < 8
    np.testing.assert_array_equal(a.particles, b.particles)
    # weights are a function of the resampled ancestors alone
    kernel = build_proposal(system, clim)
    for n in (5, 20):
        prev = a.particles[n - 1, a.ancestors[n - 1]]
        recomputed = kernel.log_predictive(mu_theta(prev, GAUSSIAN_MEAN, system.ops), kernel.augment(obs.y[n]))
        np.testing.assert_array_equal(recomputed, a.log_incr[n])
    assert np.all(a.ess() >= 1 - 1e-12) and np.all(a.ess() <= 8 + 1e-9)


def test_single_particle_filter(system, synthetic):
    _, obs, clim = synthetic
    ps = sir_filter(GAUSSIAN_MEAN, obs, system, 1, clim, np.random.default_rng(4))
    assert np.all(ps.weights == 1.0)
    assert np.all(ps.ancestors == 0)


def test_filter_tracks_truth(system):
    rng = np.random.default_rng(5)
    traj = simulate(GAUSSIAN_MEAN, system.config, system.ops, system.noise, rng, N=100)
    obs = observe_trajectory(traj, system.config, rng)
    ps = sir_filter(GAUSSIAN_MEAN, obs, system, 50, None, rng)
    est = np.einsum("nm,nmd->nd", ps.weights, ps.particles)
    nodes = list(system.config.observed_nodes)
    rms = np.sqrt(np.mean((est[:, nodes] - traj.states[:, nodes]) ** 2))
    assert rms < 3 * 0.01


def test_degenerate_weights_report_step(system, synthetic):
    _, obs, _ = synthetic
    y = obs.y.copy()
    y[6, 0] = 1e200  # squared innovation overflows
    bad = type(obs)(y=y, observed_nodes=obs.observed_nodes, sigma_eps=obs.sigma_eps)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(DegenerateWeightsError) as info:
            sir_filter(GAUSSIAN_MEAN, bad, system, 4, None, np.random.default_rng(6))
    assert info.value.step == 7


def test_ess_csv(tmp_path, system, synthetic):
    _, obs, clim = synthetic
    ps = sir_filter(GAUSSIAN_MEAN, obs, system, 4, clim, np.random.default_rng(7))
    ps.ess_to_csv(tmp_path / "ess.csv")
    data = np.loadtxt(tmp_path / "ess.csv", delimiter=",", skiprows=1)
    np.testing.assert_allclose(data[:, 1], ps.ess())
