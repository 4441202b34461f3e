"""GMRF representation of the Matern (order 1) forcing and the state noise.

With ``Mh`` the lumped mass and ``K = Mh / rho^2 + M1`` the Matern operator,
the nodal load of the forcing has covariance ``sigma_f^2 * Mh K^{-1} Mh K^{-1} Mh``.
Its (unscaled) precision ``P = Mh^{-1} K Mh^{-1} K Mh^{-1}`` is factored as
``P = C C^T`` with ``C`` lower triangular, and loads are drawn as ``C^{-T} z``.
``matern_mass="consistent"`` uses ``K = M_rho`` (consistent mass) instead.
One semi-implicit step turns the load into
``W = sqrt(dt) * sigma_f * M_dt^{-1} C^{-T} z``, so that
``R = sigma_f^2 dt M_dt^{-1} C^{-T} C^{-1} M_dt^{-T}``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from .mesh_fem import FemOperators


class NotPositiveDefiniteError(linalg.LinAlgError):
    pass


def cholesky_lower(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Lower Cholesky factor; the error names the first failing pivot."""
    c, info = lapack.dpotrf(np.asarray(a, dtype=float), lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefiniteError(
            f"{name} is not positive definite (leading minor of order {info} fails)"
        )
    if info < 0:
        raise ValueError(f"invalid argument {-info} to dpotrf")
    return c


@dataclass(frozen=True)
class NoiseModel:
    C: np.ndarray  # lower Cholesky factor of the load precision
    R: np.ndarray
    R_chol: np.ndarray | None  # None when sigma_f == 0
    R_inv_logdet: float  # log det(2 pi R)
    sigma_f: float
    dt: float

    @property
    def d_b(self) -> int:
        return self.R.shape[0]

    @cached_property
    def load_covariance(self) -> np.ndarray:
        """Covariance of the forcing load vector M0 F (lumped), closed form."""
        ci = linalg.solve_triangular(self.C, np.eye(self.C.shape[0]), lower=True)
        return self.sigma_f**2 * ci.T @ ci

    @cached_property
    def R_chol_inv(self) -> np.ndarray:
        """Inverse of the lower Cholesky factor of R (whitening matrix)."""
        if self.R_chol is None:
            raise ValueError("R is degenerate when sigma_f = 0")
        return linalg.solve_triangular(self.R_chol, np.eye(self.d_b), lower=True)

    def export_csv(self, path) -> None:
        np.savetxt(Path(path), self.R, delimiter=",", fmt="%.17g")


def build_noise_model(ops: FemOperators, sigma_f: float, dt: float | None = None,
                      matern_mass: str = "lumped") -> NoiseModel:
    if sigma_f < 0:
        raise ValueError("sigma_f must be non-negative")
    dt = ops.dt if dt is None else float(dt)
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not np.isclose(dt, ops.dt):
        raise ValueError(f"dt={dt} does not match the operators' dt={ops.dt}")
    if matern_mass == "lumped":
        K = ops.M0_lumped / ops.rho**2 + ops.M1
    elif matern_mass == "consistent":
        K = ops.M_rho
    else:
        raise ValueError(f"matern_mass must be 'lumped' or 'consistent', got {matern_mass!r}")
    inv_lumped = 1.0 / np.diag(ops.M0_lumped)
    P = (inv_lumped[:, None] * K) * inv_lumped[None, :]
    P = P @ K * inv_lumped[None, :]
    P = 0.5 * (P + P.T)
    C = cholesky_lower(P, "forcing precision")

    # B = M_dt^{-1} C^{-T}; R = sigma_f^2 dt B B^T
    Ct_inv = linalg.solve_triangular(C, np.eye(ops.d_b), lower=True, trans="T")
    B = linalg.cho_solve(ops.M_dt_cho, Ct_inv)
    R = sigma_f**2 * dt * (B @ B.T)
    R = 0.5 * (R + R.T)
    if sigma_f == 0:
        R_chol, logdet = None, -np.inf
    else:
        R_chol = cholesky_lower(R, "state noise covariance")
        logdet = ops.d_b * np.log(2 * np.pi) + 2.0 * np.sum(np.log(np.diag(R_chol)))
    return NoiseModel(C=C, R=R, R_chol=R_chol, R_inv_logdet=float(logdet), sigma_f=float(sigma_f), dt=dt)


def sample_load(model: NoiseModel, rng: np.random.Generator, size=None) -> np.ndarray:
    """Forcing load vectors ``sigma_f * C^{-T} z`` (rows when ``size`` is given)."""
    d = model.C.shape[0]
    shape = (d,) if size is None else (size, d)
    z = rng.standard_normal(shape)
    x = linalg.solve_triangular(model.C, z.T, lower=True, trans="T")
    return model.sigma_f * x.T


def sample_state_noise(model: NoiseModel, ops: FemOperators, rng: np.random.Generator, size=None) -> np.ndarray:
    """Draw W ~ N(0, R) via triangular solves; rows when ``size`` is given."""
    load = sample_load(model, rng, size)
    w = linalg.cho_solve(ops.M_dt_cho, load.T).T
    return np.sqrt(model.dt) * w
