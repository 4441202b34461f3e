"""Parameter priors, the climatological state prior and the regularized posterior.

All log-densities are unnormalized where a constant is intractable; every
consumer (Gibbs updates, particle weights, MAP over samples) is invariant to
additive constants.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .model import System, Trajectory, mu_theta, theta_array, transition_logpdf
from .observation import Observations, obs_logpdf

UNIFORM_BOUNDS = np.array([[27.64, 32.57], [-25.46, -22.70], [-6.00, -4.80]])
GAUSSIAN_MEAN = np.array([30.11, -24.08, -5.40])
GAUSSIAN_STD = np.array([0.82, 0.46, 0.20])


@dataclass(frozen=True)
class ParamPrior:
    kind: str = "gaussian"
    mean: np.ndarray = field(default_factory=lambda: GAUSSIAN_MEAN.copy())
    std: np.ndarray = field(default_factory=lambda: GAUSSIAN_STD.copy())
    bounds: np.ndarray = field(default_factory=lambda: UNIFORM_BOUNDS.copy())

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=float))
        object.__setattr__(self, "bounds", np.asarray(self.bounds, dtype=float))
        if self.kind == "gaussian" and np.any(self.std <= 0):
            raise ValueError("gaussian prior stds must be positive")
        if self.kind == "uniform" and np.any(self.bounds[:, 1] <= self.bounds[:, 0]):
            raise ValueError("uniform prior box is empty")

    @classmethod
    def gaussian(cls) -> "ParamPrior":
        return cls(kind="gaussian")

    @classmethod
    def uniform(cls) -> "ParamPrior":
        return cls(kind="uniform")

    @classmethod
    def from_name(cls, name: str) -> "ParamPrior":
        return cls(kind=name)

    @property
    def precision(self) -> np.ndarray:
        return np.diag(1.0 / self.std**2)

    def contains(self, theta) -> bool:
        t = theta_array(theta)
        return bool(np.all((t >= self.bounds[:, 0]) & (t <= self.bounds[:, 1])))

    def sample(self, rng: np.random.Generator, size=None) -> np.ndarray:
        shape = (3,) if size is None else (size, 3)
        if self.kind == "gaussian":
            return self.mean + self.std * rng.standard_normal(shape)
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return lo + (hi - lo) * rng.random(shape)

    def support(self, width: float = 5.0) -> np.ndarray:
        """Per-coordinate plotting range: the box, or mean +- width*std."""
        if self.kind == "uniform":
            return self.bounds.copy()
        return np.column_stack([self.mean - width * self.std, self.mean + width * self.std])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "mean": self.mean.tolist(), "std": self.std.tolist(),
                "bounds": self.bounds.tolist()}


def log_param_prior(theta, prior: ParamPrior) -> float:
    t = theta_array(theta)
    if prior.kind == "gaussian":
        z = (t - prior.mean) / prior.std
        return float(np.sum(-0.5 * np.log(2 * np.pi * prior.std**2) - 0.5 * z**2))
    if not prior.contains(t):
        return -np.inf
    return float(-np.sum(np.log(prior.bounds[:, 1] - prior.bounds[:, 0])))


@dataclass(frozen=True)
class ClimatologicalPrior:
    u_c: float
    sigma_c: float
    sigma_o: float

    def __post_init__(self):
        if not self.sigma_c > 0:
            raise ValueError("sigma_c must be positive")


def fit_climatological_prior(obs: Observations, sigma_eps=None, inflation: float = 2.0) -> ClimatologicalPrior:
    """Gaussian fit to all observation entries, widened by ``inflation``."""
    sigma_eps = obs.sigma_eps if sigma_eps is None else sigma_eps
    noise_var = float(np.mean(np.asarray(sigma_eps, dtype=float) ** 2))
    u_c = float(np.mean(obs.y))
    sigma_o = float(np.std(obs.y))
    if sigma_o**2 <= noise_var:
        raise ValueError("observations less variable than noise")
    return ClimatologicalPrior(u_c=u_c, sigma_c=inflation * np.sqrt(sigma_o**2 - noise_var), sigma_o=sigma_o)


def log_climatological(traj, clim: ClimatologicalPrior) -> float:
    states = traj.states if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    z = (states - clim.u_c) / clim.sigma_c
    return float(-0.5 * states.size * np.log(2 * np.pi * clim.sigma_c**2) - 0.5 * np.sum(z**2))


def log_state_density(theta, states, system: System) -> float:
    """log p_theta(u_{1:N}), the first transition taken from the fixed U_0."""
    prev = np.vstack([system.u0, states[:-1]])
    return float(np.sum(transition_logpdf(states, prev, theta, system.noise, system.ops)))


def log_obs_likelihood(states, obs: Observations, system: System) -> float:
    cfg = system.config
    if tuple(obs.observed_nodes) != tuple(cfg.observed_nodes):
        raise ValueError("observations and system disagree on observed nodes")
    return float(np.sum(obs_logpdf(obs.y, states, cfg)))


def log_regularized_posterior(theta, traj, obs: Observations, prior: ParamPrior,
                              clim: ClimatologicalPrior | None, system: System) -> float:
    """Unnormalized log of the regularized posterior.

    ``log p(theta) + (log p^c(u) + log p_theta(u) + log p(y|u)) / N``; the
    normalizer and the data evidence term are dropped.
    """
    lp = log_param_prior(theta, prior)
    if not np.isfinite(lp):
        return -np.inf
    states = traj.states if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    N = states.shape[0]
    total = log_state_density(theta, states, system) + log_obs_likelihood(states, obs, system)
    if clim is not None:
        total += log_climatological(states, clim)
    return lp + total / N


def regularized_cost(theta, traj, obs: Observations, prior: ParamPrior,
                     clim: ClimatologicalPrior | None, system: System) -> float:
    """Variational cost whose minimizer is the MAP; evaluated term by term with dense densities."""
    states = traj.states if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    N = states.shape[0]
    noise_dist = stats.multivariate_normal(mean=np.zeros(system.d_b), cov=system.noise.R)
    obs_cov = np.diag(obs.variances())
    nodes = list(obs.observed_nodes)
    cost = 0.0
    prev = system.u0
    for n in range(N):
        cost -= noise_dist.logpdf(states[n] - mu_theta(prev, theta, system.ops))
        cost -= stats.multivariate_normal.logpdf(obs.y[n], mean=states[n, nodes], cov=obs_cov)
        prev = states[n]
    lp = log_param_prior(theta, prior)
    if not np.isfinite(lp):
        return np.inf
    cost -= N * lp
    if clim is not None:
        cost -= np.sum(stats.norm.logpdf(states, loc=clim.u_c, scale=clim.sigma_c))
    return float(cost)
