"""Likelihood of theta given states: sufficient statistics, MLE, and the
tempered theta-conditional used inside the particle Gibbs sampler.

Because the drift is affine in theta, the state log-likelihood is exactly

    log p_theta(u_{1:N}) = const - N/2 * (theta' F_N theta - 2 theta' b_N),

with ``F_N`` the scaled Fisher matrix and ``b_N`` the matching linear term.
Raising the likelihood to the power 1/N leaves a Gaussian in theta with
precision ``F_N`` and natural parameter ``b_N``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import linalg, special

from .forcing import NoiseModel
from .mesh_fem import FemOperators
from .model import ThetaParams, Trajectory, g_basis
from .posterior import ParamPrior

SINGULAR_CONDITION = 1e15


class SingularFisherError(linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class SufficientStats:
    F_N: np.ndarray  # (3, 3)
    b_N: np.ndarray  # (3,)
    N: int

    def to_json(self) -> str:
        return json.dumps({"F_N": self.F_N.tolist(), "b_N": self.b_N.tolist(), "N": self.N})

    @classmethod
    def from_json(cls, text: str) -> "SufficientStats":
        d = json.loads(text)
        return cls(F_N=np.asarray(d["F_N"], dtype=float), b_N=np.asarray(d["b_N"], dtype=float), N=int(d["N"]))

    def scaled(self, c: float) -> "SufficientStats":
        return SufficientStats(F_N=c * self.F_N, b_N=c * self.b_N, N=self.N)


def _whitened_terms(states, ops: FemOperators, noise: NoiseModel, U0):
    """Per-step whitened basis vectors (N, 3, d_b) and residuals (N, d_b)."""
    if noise.R_chol is None:
        raise ValueError("sufficient statistics need sigma_f > 0")
    states = np.atleast_2d(np.asarray(states, dtype=float))
    prev = np.vstack([np.asarray(U0, dtype=float)[None, :], states[:-1]])
    G = g_basis(prev, ops)  # (N, 3, d_b)
    resid = states - prev @ ops.drift_matrix.T
    L = noise.R_chol
    d = L.shape[0]
    Gw = linalg.solve_triangular(L, G.reshape(-1, d).T, lower=True).T.reshape(G.shape)
    rw = linalg.solve_triangular(L, resid.T, lower=True).T
    return Gw, rw


def sufficient_stats(traj, ops: FemOperators, noise: NoiseModel, U0) -> SufficientStats:
    states = traj.states if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    Gw, rw = _whitened_terms(states, ops, noise, U0)
    N = states.shape[0]
    F = np.einsum("nkd,nld->kl", Gw, Gw) / N
    b = np.einsum("nkd,nd->k", Gw, rw) / N
    return SufficientStats(F_N=0.5 * (F + F.T), b_N=b, N=N)


def prefix_stats(traj, ops: FemOperators, noise: NoiseModel, U0, lengths) -> list[SufficientStats]:
    """Statistics of the first ``n`` states for each ``n`` in ``lengths``."""
    states = traj.states if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    Gw, rw = _whitened_terms(states, ops, noise, U0)
    Fc = np.cumsum(np.einsum("nkd,nld->nkl", Gw, Gw), axis=0)
    bc = np.cumsum(np.einsum("nkd,nd->nk", Gw, rw), axis=0)
    out = []
    for n in lengths:
        if not 1 <= n <= states.shape[0]:
            raise ValueError(f"prefix length {n} outside 1..{states.shape[0]}")
        F = Fc[n - 1] / n
        out.append(SufficientStats(F_N=0.5 * (F + F.T), b_N=bc[n - 1] / n, N=int(n)))
    return out


def condition_number(F_N) -> float:
    s = linalg.svdvals(np.asarray(F_N, dtype=float))
    if s[0] == 0:
        raise ValueError("condition number of the zero matrix is undefined")
    if s[-1] == 0:
        return np.inf
    return float(s[0] / s[-1])


def mle(stats: SufficientStats) -> ThetaParams:
    """Solve F_N theta = b_N through the SVD."""
    U, s, Vt = linalg.svd(stats.F_N)
    if s[0] == 0 or s[0] > SINGULAR_CONDITION * s[-1]:
        raise SingularFisherError("Fisher matrix numerically singular")
    return ThetaParams.from_array(Vt.T @ ((U.T @ stats.b_N) / s))


def _truncated_normal(mean, sd, lo, hi, rng):
    """One draw of N(mean, sd^2) restricted to [lo, hi], by inversion in log space."""
    if not lo < hi:
        return lo
    if not np.isfinite(sd):
        return rng.uniform(lo, hi)
    a, b = (lo - mean) / sd, (hi - mean) / sd
    sign = 1.0
    if a > 0:  # mirror into the lower tail where log_ndtr is accurate
        a, b, sign = -b, -a, -1.0
    la, lb = special.log_ndtr(a), special.log_ndtr(b)
    log_mass = lb + np.log1p(-np.exp(la - lb)) if la > -np.inf else lb
    x = special.ndtri_exp(np.logaddexp(la, np.log(rng.random()) + log_mass))
    return float(mean + sd * sign * np.clip(x, a, b))


def _line_interval(x, v, lo, hi):
    """Range of t with lo <= x + t v <= hi."""
    with np.errstate(divide="ignore"):
        t1 = (lo - x) / v
        t2 = (hi - x) / v
    active = np.abs(v) > 1e-300
    tmin = np.max(np.minimum(t1, t2)[active])
    tmax = np.min(np.maximum(t1, t2)[active])
    return tmin, tmax


def _box_gibbs(F, b, bounds, x, rng, n_sweeps):
    """Gibbs updates along the eigenvectors of F for N(F^{-1}b, F^{-1}) restricted to a box."""
    lo, hi = bounds[:, 0], bounds[:, 1]
    _, V = linalg.eigh(F)
    x = np.array(x, dtype=float)
    for _ in range(n_sweeps):
        for v in V.T:
            a = float(v @ F @ v)
            c = float(v @ (b - F @ x))
            tmin, tmax = _line_interval(x, v, lo, hi)
            if a > 1e-300:
                t = _truncated_normal(c / a, 1.0 / np.sqrt(a), tmin, tmax, rng)
            else:
                t = rng.uniform(tmin, tmax)
            x = np.clip(x + t * v, lo, hi)
    return x


def sample_theta_conditional(stats: SufficientStats, prior: ParamPrior, rng: np.random.Generator,
                             theta_init=None, max_rejections: int = 1000, n_sweeps: int = 10) -> ThetaParams:
    """Draw theta from p(theta) * [p_theta(u_{1:N})]^(1/N).

    Gaussian priors are conjugate and sampled exactly. For the uniform prior
    the tempered likelihood is truncated to the box: plain rejection first,
    then (after ``max_rejections`` misses) Gibbs moves along the eigenvectors
    of ``F_N``, started from ``theta_init`` when it lies in the box. Started
    that way the fallback is a valid Markov kernel for the conditional.
    """
    F = np.asarray(stats.F_N, dtype=float)
    b = np.asarray(stats.b_N, dtype=float)
    if not (np.all(np.isfinite(F)) and np.all(np.isfinite(b))):
        raise ValueError("non-finite sufficient statistics")

    if prior.kind == "gaussian":
        Pp = prior.precision
        P = F + Pp
        try:
            L = linalg.cholesky(0.5 * (P + P.T), lower=True)
        except linalg.LinAlgError as exc:
            raise SingularFisherError("combined precision is not positive definite") from exc
        mean = linalg.cho_solve((L, True), b + Pp @ prior.mean)
        z = rng.standard_normal(3)
        return ThetaParams.from_array(mean + linalg.solve_triangular(L, z, lower=True, trans="T"))

    bounds = prior.bounds
    if not np.any(F) and not np.any(b):
        return ThetaParams.from_array(prior.sample(rng))
    s = linalg.svdvals(F)
    if s[0] > 0 and s[0] < 1e12 * s[-1]:
        L = linalg.cholesky(F, lower=True)
        mean = linalg.cho_solve((L, True), b)
        drawn = 0
        while drawn < max_rejections:
            batch = min(100, max_rejections - drawn)
            z = rng.standard_normal((batch, 3))
            cand = mean + linalg.solve_triangular(L, z.T, lower=True, trans="T").T
            ok = np.all((cand >= bounds[:, 0]) & (cand <= bounds[:, 1]), axis=1)
            if ok.any():
                return ThetaParams.from_array(cand[np.argmax(ok)])
            drawn += batch

    if theta_init is not None and prior.contains(theta_init):
        x0 = theta_init.as_array() if isinstance(theta_init, ThetaParams) else np.asarray(theta_init, dtype=float)
        sweeps = n_sweeps
    else:
        # cold start: run longer so the draw forgets the box centre
        x0 = bounds.mean(axis=1)
        sweeps = 5 * n_sweeps
    return ThetaParams.from_array(_box_gibbs(F, b, bounds, x0, rng, sweeps))
