"""Sequential importance resampling with the optimal (Gaussian) proposal.

With a Gaussian transition and a linear Gaussian observation the proposal
``q(u_n | u_{n-1}, y_n) ∝ p(u_n | u_{n-1}) p(y_n | u_n)`` is Gaussian and the
incremental weight reduces to the predictive density of ``y_n``, which does
not depend on the proposed state. The climatological state prior enters as
a pseudo-observation ``u_c * 1`` of every node with variance ``sigma_c^2``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .forcing import NotPositiveDefiniteError, cholesky_lower
from .model import System, mu_theta, theta_array
from .observation import Observations
from .posterior import ClimatologicalPrior

LOG_2PI = np.log(2 * np.pi)


class DegenerateWeightsError(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"all particle weights vanish at step {step}")
        self.step = step


@dataclass(frozen=True)
class ProposalKernel:
    """Theta- and state-independent pieces of the optimal proposal."""

    H: np.ndarray  # augmented observation matrix (d_a, d_b)
    Q: np.ndarray  # augmented noise variances (d_a,)
    clim_block: np.ndarray | None  # pseudo-observation appended to y_n
    gain: np.ndarray  # R H' (Q + H R H')^{-1}, (d_b, d_a)
    cov: np.ndarray  # proposal covariance Sigma
    cov_chol: np.ndarray
    S_inv_chol: np.ndarray  # L_S^{-1} with S = L_S L_S'
    S_logdet: float

    @property
    def d_a(self) -> int:
        return self.H.shape[0]

    def augment(self, y_n) -> np.ndarray:
        y_n = np.asarray(y_n, dtype=float)
        if self.clim_block is None:
            return y_n
        return np.concatenate([y_n, self.clim_block])

    def log_predictive(self, mu, y_aug) -> np.ndarray:
        innov = y_aug - mu @ self.H.T
        z = innov @ self.S_inv_chol.T
        return -0.5 * (self.d_a * LOG_2PI + self.S_logdet) - 0.5 * np.sum(z**2, axis=-1)

    def mean(self, mu, y_aug) -> np.ndarray:
        return mu + (y_aug - mu @ self.H.T) @ self.gain.T


def build_proposal(system: System, clim: ClimatologicalPrior | None = None, obs_var=None) -> ProposalKernel:
    cfg = system.config
    R = system.noise.R
    H = system.H()
    Q = cfg.obs_variances() if obs_var is None else np.broadcast_to(np.asarray(obs_var, float), (cfg.d_o,))
    clim_block = None
    if clim is not None:
        H = np.vstack([H, np.eye(system.d_b)])
        Q = np.concatenate([Q, np.full(system.d_b, clim.sigma_c**2)])
        clim_block = np.full(system.d_b, clim.u_c)
    S = np.diag(Q) + H @ R @ H.T
    S = 0.5 * (S + S.T)
    L_S = cholesky_lower(S, "predictive covariance")
    gain = linalg.cho_solve((L_S, True), H @ R).T
    # Joseph form keeps Sigma symmetric PSD when Q is tiny
    IKH = np.eye(system.d_b) - gain @ H
    cov = IKH @ R @ IKH.T + (gain * Q) @ gain.T
    cov = 0.5 * (cov + cov.T)
    try:
        cov_chol = cholesky_lower(cov, "proposal covariance")
    except NotPositiveDefiniteError:
        w = linalg.eigvalsh(cov)
        raise NotPositiveDefiniteError(f"proposal covariance not PSD (min eigenvalue {w[0]:.3e})") from None
    S_inv_chol = linalg.solve_triangular(L_S, np.eye(len(Q)), lower=True)
    return ProposalKernel(H=H, Q=np.asarray(Q, float), clim_block=clim_block, gain=gain, cov=cov,
                          cov_chol=cov_chol, S_inv_chol=S_inv_chol,
                          S_logdet=float(2 * np.sum(np.log(np.diag(L_S)))))


def optimal_proposal_params(U_prev, y_n, theta, system: System, clim: ClimatologicalPrior | None = None,
                            kernel: ProposalKernel | None = None):
    """Mean and covariance of the optimal proposal given the previous state."""
    kernel = build_proposal(system, clim) if kernel is None else kernel
    mu = mu_theta(U_prev, theta, system.ops)
    return kernel.mean(mu, kernel.augment(y_n)), kernel.cov.copy()


def predictive_logweight(U_prev, y_n, theta, system: System, clim: ClimatologicalPrior | None = None,
                         kernel: ProposalKernel | None = None):
    """log alpha: Gaussian log-density of the (augmented) observation given U_prev."""
    kernel = build_proposal(system, clim) if kernel is None else kernel
    mu = mu_theta(U_prev, theta, system.ops)
    return kernel.log_predictive(mu, kernel.augment(y_n))


def normalize_logweights(logw) -> np.ndarray:
    logw = np.asarray(logw, dtype=float)
    top = np.max(logw)
    if not np.isfinite(top):
        raise FloatingPointError("cannot normalize: no finite log-weight")
    w = np.exp(logw - top)
    return w / w.sum()


def resample_indices(weights, M_out: int, rng: np.random.Generator) -> np.ndarray:
    """Multinomial draws from the discrete distribution given by ``weights``."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be non-negative and sum to one")
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    return np.searchsorted(cdf, rng.random(M_out), side="right")


@dataclass
class ParticleSystem:
    particles: np.ndarray  # (N, M, d_b)
    weights: np.ndarray  # (N, M), normalized rows
    ancestors: np.ndarray  # (N-1, M); ancestors[n-1, m] is the parent at time n-1 of particle m at time n
    log_incr: np.ndarray  # (N, M)

    @property
    def N(self) -> int:
        return self.particles.shape[0]

    @property
    def M(self) -> int:
        return self.particles.shape[1]

    def lineage(self, m: int) -> np.ndarray:
        """Particle index at every time along the genealogy ending in ``m``."""
        idx = np.empty(self.N, dtype=int)
        idx[-1] = m
        for n in range(self.N - 1, 0, -1):
            idx[n - 1] = self.ancestors[n - 1, idx[n]]
        return idx

    def trajectory(self, m: int) -> np.ndarray:
        idx = self.lineage(m)
        return self.particles[np.arange(self.N), idx]

    def ess(self) -> np.ndarray:
        return 1.0 / np.sum(self.weights**2, axis=1)

    def ess_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "ess"])
            for n, e in enumerate(self.ess(), start=1):
                writer.writerow([n, repr(float(e))])


def _check_obs(obs: Observations, system: System):
    if tuple(obs.observed_nodes) != tuple(system.config.observed_nodes):
        raise ValueError("observations and system disagree on observed nodes")


def sir_filter(theta, obs: Observations, system: System, M: int, clim: ClimatologicalPrior | None,
               rng: np.random.Generator, kernel: ProposalKernel | None = None) -> ParticleSystem:
    """Algorithm: propose from the optimal density, weight, resample multinomially."""
    if M < 1:
        raise ValueError("need at least one particle")
    _check_obs(obs, system)
    kernel = build_proposal(system, clim) if kernel is None else kernel
    th = theta_array(theta)
    N, d_b = obs.N, system.d_b
    X = np.empty((N, M, d_b))
    W = np.empty((N, M))
    A = np.empty((max(N - 1, 0), M), dtype=int)
    logs = np.empty((N, M))
    prev = np.broadcast_to(system.u0, (M, d_b))
    for n in range(N):
        if n > 0:
            A[n - 1] = resample_indices(W[n - 1], M, rng)
            prev = X[n - 1, A[n - 1]]
        y_aug = kernel.augment(obs.y[n])
        mu = mu_theta(prev, th, system.ops)
        logs[n] = kernel.log_predictive(mu, y_aug)
        if not np.any(np.isfinite(logs[n])):
            raise DegenerateWeightsError(n + 1)
        X[n] = kernel.mean(mu, y_aug) + rng.standard_normal((M, d_b)) @ kernel.cov_chol.T
        W[n] = normalize_logweights(logs[n])
    return ParticleSystem(particles=X, weights=W, ancestors=A, log_incr=logs)
