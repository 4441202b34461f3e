"""Particle Gibbs with ancestor sampling for the joint (theta, U_{1:N}) chain."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .estimators import sample_theta_conditional, sufficient_stats
from .model import System, ThetaParams, Trajectory, mu_theta, theta_array, transition_logpdf
from .observation import Observations
from .posterior import ClimatologicalPrior, ParamPrior
from .smc import (DegenerateWeightsError, ProposalKernel, build_proposal, normalize_logweights,
                  resample_indices, sir_filter)


class ChainError(RuntimeError):
    def __init__(self, iteration: int, cause: Exception):
        super().__init__(f"chain aborted at iteration {iteration}: {cause}")
        self.iteration = iteration


@dataclass
class Chain:
    theta_samples: np.ndarray  # (L, 3)
    traj_samples: np.ndarray  # (L // thin, N, d_b), iterations 0, thin, 2*thin, ...
    update_flags: np.ndarray  # (L, N); row 0 (initialization) is all False
    thin: int = 1
    config: dict = field(default_factory=dict)
    seed: int | None = None
    timings: dict = field(default_factory=dict)

    @property
    def L(self) -> int:
        return self.theta_samples.shape[0]

    @property
    def N(self) -> int:
        return self.update_flags.shape[1]

    def stored_iterations(self) -> np.ndarray:
        return np.arange(0, self.L, self.thin)[: self.traj_samples.shape[0]]

    def burn(self, fraction: float = 0.1) -> int:
        """Number of leading iterations to discard."""
        return int(np.floor(fraction * self.L))

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "theta_samples.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["l", "theta0", "theta1", "theta4"])
            for l, row in enumerate(self.theta_samples):
                w.writerow([l] + [repr(float(x)) for x in row])
        with open(directory / "states.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["l", "n", "node", "value"])
            for l, traj in zip(self.stored_iterations(), self.traj_samples):
                for n, row in enumerate(traj, start=1):
                    for node, x in enumerate(row):
                        w.writerow([int(l), n, node, repr(float(x))])
        with open(directory / "flags.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["l"] + [f"n{n}" for n in range(1, self.N + 1)])
            for l, row in enumerate(self.update_flags):
                w.writerow([l] + [int(x) for x in row])
        manifest = {"L": self.L, "N": self.N, "thin": self.thin, "seed": self.seed,
                    "config": self.config, "timings": self.timings}
        (directory / "chain.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))

    @classmethod
    def load(cls, directory) -> "Chain":
        directory = Path(directory)
        meta = json.loads((directory / "chain.json").read_text())
        theta = np.loadtxt(directory / "theta_samples.csv", delimiter=",", skiprows=1, ndmin=2)[:, 1:]
        flags = np.loadtxt(directory / "flags.csv", delimiter=",", skiprows=1, ndmin=2)[:, 1:].astype(bool)
        raw = np.loadtxt(directory / "states.csv", delimiter=",", skiprows=1, ndmin=2)
        n_stored = len(np.unique(raw[:, 0]))
        d_b = int(raw[:, 2].max()) + 1
        trajs = raw[:, 3].reshape(n_stored, meta["N"], d_b)
        return cls(theta_samples=theta, traj_samples=trajs, update_flags=flags, thin=meta["thin"],
                   config=meta["config"], seed=meta["seed"], timings=meta.get("timings", {}))


def ancestor_logweights(ref_state_n, particles_prev, weights_prev, theta, system: System,
                        step: int = -1, mu_prev=None) -> np.ndarray:
    """Unnormalized log ancestor weights for the reference particle.

    ``log w_{n-1}^m + log p_theta(ref_n | U_{n-1}^m)``; the observation factor
    at the reference state is common to every m and left out. ``mu_prev``
    may carry the already computed drift of ``particles_prev``.
    """
    with np.errstate(divide="ignore"):
        logw = np.log(np.asarray(weights_prev, dtype=float))
    if mu_prev is None:
        trans = transition_logpdf(np.broadcast_to(ref_state_n, particles_prev.shape), particles_prev, theta,
                                  system.noise, system.ops)
    else:
        z = (ref_state_n - mu_prev) @ system.noise.R_chol_inv.T
        trans = -0.5 * system.noise.R_inv_logdet - 0.5 * np.sum(z**2, axis=-1)
    out = logw + trans
    if not np.any(np.isfinite(out)):
        raise DegenerateWeightsError(step)
    return out


def csmc_as(theta, obs: Observations, ref_traj, M: int, clim: ClimatologicalPrior | None,
            rng: np.random.Generator, system: System, kernel: ProposalKernel | None = None,
            ref_slot: int | None = None, return_particles: bool = False):
    """Conditional SMC with ancestor sampling.

    Returns the new trajectory and a length-N boolean array marking the time
    steps where it differs from the reference. The reference occupies slot
    ``ref_slot`` (default: the last particle) at every step. With
    ``return_particles`` the particle array (N, M, d_b) and ancestor array
    (N-1, M) are appended to the result.
    """
    if M < 1:
        raise ValueError("need at least one particle")
    kernel = build_proposal(system, clim) if kernel is None else kernel
    ref = ref_traj.states if isinstance(ref_traj, Trajectory) else np.asarray(ref_traj, dtype=float)
    th = theta_array(theta)
    N, d_b = ref.shape
    if obs.N != N:
        raise ValueError("reference trajectory and observations differ in length")
    r = M - 1 if ref_slot is None else int(ref_slot)
    free = np.array([m for m in range(M) if m != r], dtype=int)
    ops = system.ops

    X = np.empty((N, M, d_b))
    A = np.empty((max(N - 1, 0), M), dtype=int)
    y_aug = kernel.augment(obs.y[0])
    mu0 = mu_theta(system.u0, th, ops)
    X[0, free] = kernel.mean(mu0, y_aug) + rng.standard_normal((M - 1, d_b)) @ kernel.cov_chol.T
    X[0, r] = ref[0]
    w = np.full(M, 1.0 / M)  # every particle shares the parent U_0
    for n in range(1, N):
        A[n - 1, free] = resample_indices(w, M - 1, rng)
        mu_prev = mu_theta(X[n - 1], th, ops)
        y_aug = kernel.augment(obs.y[n])
        X[n, free] = (kernel.mean(mu_prev[A[n - 1, free]], y_aug)
                      + rng.standard_normal((M - 1, d_b)) @ kernel.cov_chol.T)
        X[n, r] = ref[n]
        if M > 1:
            log_as = ancestor_logweights(ref[n], X[n - 1], w, th, system, step=n + 1, mu_prev=mu_prev)
            A[n - 1, r] = resample_indices(normalize_logweights(log_as), 1, rng)[0]
        else:
            A[n - 1, r] = 0
        logs = kernel.log_predictive(mu_prev, y_aug)[A[n - 1]]
        if not np.any(np.isfinite(logs)):
            raise DegenerateWeightsError(n + 1)
        w = normalize_logweights(logs)
    b = resample_indices(w, 1, rng)[0] if M > 1 else 0
    idx = np.empty(N, dtype=int)
    idx[-1] = b
    for n in range(N - 1, 0, -1):
        idx[n - 1] = A[n - 1, idx[n]]
    new = X[np.arange(N), idx]
    flags = np.any(new != ref, axis=1)
    out = Trajectory(states=new, theta_used=ThetaParams.from_array(th))
    if return_particles:
        return out, flags, X, A
    return out, flags


def run_pgas(prior: ParamPrior, obs: Observations, system: System, L: int, M: int,
             clim: ClimatologicalPrior | None, rng: np.random.Generator, theta_init=None,
             thin: int = 1, seed: int | None = None, progress=None) -> Chain:
    """Particle Gibbs chain of length ``L``: theta update, then CSMC-AS state update."""
    if L < 1:
        raise ValueError("chain length must be at least 1")
    if thin < 1:
        raise ValueError("thin must be at least 1")
    kernel = build_proposal(system, clim)
    N, d_b = obs.N, system.d_b
    thetas = np.empty((L, 3))
    trajs = np.empty(((L + thin - 1) // thin, N, d_b))
    flags = np.zeros((L, N), dtype=bool)
    t_start = time.perf_counter()

    theta = ThetaParams.from_array(prior.sample(rng) if theta_init is None else theta_array(theta_init))
    ps = sir_filter(theta, obs, system, M, clim, rng, kernel=kernel)
    current = ps.trajectory(resample_indices(ps.weights[-1], 1, rng)[0])
    thetas[0] = theta.as_array()
    trajs[0] = current
    for l in range(1, L):
        try:
            stats = sufficient_stats(current, system.ops, system.noise, system.u0)
            theta = sample_theta_conditional(stats, prior, rng, theta_init=theta)
            new, flags[l] = csmc_as(theta, obs, current, M, clim, rng, system, kernel=kernel)
        except Exception as exc:  # noqa: BLE001 - rethrown with the iteration index
            raise ChainError(l, exc) from exc
        current = new.states
        thetas[l] = theta.as_array()
        if l % thin == 0:
            trajs[l // thin] = current
        if progress is not None:
            progress(l)
    timings = {"sampling_seconds": time.perf_counter() - t_start}
    return Chain(theta_samples=thetas, traj_samples=trajs, update_flags=flags, thin=thin,
                 config=system.config.to_dict(), seed=seed, timings=timings)
