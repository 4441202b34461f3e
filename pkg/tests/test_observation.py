import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from sebm.model import ModelConfig, Trajectory, simulate
from sebm.observation import (Observations, obs_logpdf, observation_matrix, observe_trajectory,
                              observed_nodes_preset)
from sebm.posterior import GAUSSIAN_MEAN


def test_presets():
    assert observed_nodes_preset("6") == (0, 2, 4, 6, 8, 10)
    assert observed_nodes_preset("2") == (0, 6)
    assert observed_nodes_preset("all") == tuple(range(12))
    with pytest.raises(ValueError):
        observed_nodes_preset("7")


@settings(max_examples=30, deadline=None)
@given(st.sets(st.integers(0, 11), min_size=1, max_size=12))
def test_selection_matrix(nodes):
    H = observation_matrix(sorted(nodes), 12)
    assert np.all(H.sum(axis=1) == 1)
    assert set(np.unique(H)) <= {0.0, 1.0}
    np.testing.assert_array_equal(H @ H.T, np.eye(len(nodes)))


def test_noiseless_observation_selects_components():
    states = np.random.default_rng(0).uniform(0.9, 1.1, (5, 12))
    traj = Trajectory(states)
    cfg = ModelConfig(sigma_eps=0.0)
    obs = observe_trajectory(traj, cfg, np.random.default_rng(1))
    np.testing.assert_array_equal(obs.y, states[:, list(cfg.observed_nodes)])
    full = observe_trajectory(traj, ModelConfig(sigma_eps=0.0, observed_nodes=tuple(range(12))),
                              np.random.default_rng(1))
    np.testing.assert_array_equal(full.y, states)


def test_noise_variance(system):
    traj = simulate(GAUSSIAN_MEAN, system.config, system.ops, system.noise, np.random.default_rng(2), N=5000)
    obs = observe_trajectory(traj, system.config, np.random.default_rng(3))
    resid = obs.y - traj.states[:, list(system.config.observed_nodes)]
    assert resid.var() == pytest.approx(0.01**2, rel=0.1)


def test_logpdf_oracle_and_shape():
    cfg = ModelConfig()
    rng = np.random.default_rng(4)
    u = rng.uniform(0.9, 1.1, (3, 12))
    y = rng.uniform(0.9, 1.1, 6)
    dense = stats.multivariate_normal(np.zeros(6), 0.01**2 * np.eye(6))
    for k in range(3):
        assert obs_logpdf(y, u[k], cfg) == pytest.approx(dense.logpdf(y - u[k, ::2]), abs=1e-12)
    assert obs_logpdf(y, u, cfg).shape == (3,)


def test_logpdf_peak_and_quadratic():
    cfg = ModelConfig()
    u = np.linspace(0.9, 1.1, 12)
    y = u[list(cfg.observed_nodes)].copy()
    peak = obs_logpdf(y, u, cfg)
    assert peak == pytest.approx(-3 * np.log(2 * np.pi * 1e-4), abs=1e-12)
    y[2] += 0.004
    assert obs_logpdf(y, u, cfg) - peak == pytest.approx(-0.004**2 / (2e-4), abs=1e-10)


def test_heteroscedastic_noise():
    sig = (0.01, 0.02, 0.01, 0.02, 0.01, 0.02)
    cfg = ModelConfig(sigma_eps=sig)
    u = np.ones(12)
    y = np.full(6, 1.01)
    expected = np.sum(stats.norm.logpdf(y, 1.0, sig))
    assert obs_logpdf(y, u, cfg) == pytest.approx(expected, abs=1e-12)


def test_csv_roundtrip_and_validation(tmp_path, synthetic):
    _, obs, _ = synthetic
    cfg = ModelConfig()
    obs.to_csv(tmp_path / "y.csv")
    back = Observations.from_csv(tmp_path / "y.csv", cfg)
    np.testing.assert_array_equal(back.y, obs.y)
    with pytest.raises(ValueError):
        Observations.from_csv(tmp_path / "y.csv", ModelConfig(observed_nodes=(0, 6)))
    lines = (tmp_path / "y.csv").read_text().splitlines()
    (tmp_path / "gap.csv").write_text("\n".join(lines[:1] + lines[7:]) + "\n")
    with pytest.raises(ValueError, match="steps"):
        Observations.from_csv(tmp_path / "gap.csv", cfg)


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        Observations(y=np.ones((2, 3)), observed_nodes=(0, 1), sigma_eps=0.01)
    with pytest.raises(ValueError):
        Observations(y=np.array([[np.nan, 1.0]]), observed_nodes=(0, 1), sigma_eps=0.01)
