"""Discretized stochastic energy balance model.

One semi-backward Euler step reads ``U_{n+1} = mu_theta(U_n) + W_n`` with

    mu_theta(U) = M_dt^{-1} M0 U + sum_k theta_k G_k(U),
    G_k(U) = dt M_dt^{-1} A_T (A U)**k,   k in (0, 1, 4),

and ``W_n ~ N(0, R)`` from :mod:`sebm.forcing`.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .forcing import NoiseModel, build_noise_model, sample_state_noise
from .mesh_fem import FemOperators, SphereMesh, assemble_operators, build_icosahedron_mesh

POWERS = (0, 1, 4)


class BlowUpError(FloatingPointError):
    def __init__(self, step: int):
        super().__init__(f"non-finite state at step {step}")
        self.step = step


@dataclass(frozen=True)
class ThetaParams:
    theta0: float
    theta1: float
    theta4: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError(f"non-finite parameters {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.theta0, self.theta1, self.theta4], dtype=float)

    @classmethod
    def from_array(cls, values) -> "ThetaParams":
        t0, t1, t4 = np.asarray(values, dtype=float)
        return cls(float(t0), float(t1), float(t4))

    def g(self, u):
        """Source/sink function theta0 + theta1 u + theta4 u^4."""
        u = np.asarray(u, dtype=float)
        return self.theta0 + self.theta1 * u + self.theta4 * u**4


def theta_array(theta) -> np.ndarray:
    if isinstance(theta, ThetaParams):
        return theta.as_array()
    arr = np.asarray(theta, dtype=float)
    if arr.shape != (3,):
        raise ValueError(f"theta must have three entries, got shape {arr.shape}")
    return arr


@dataclass
class ModelConfig:
    """Physical and discretization settings (defaults follow the desk setup)."""

    nu: float = 0.1
    sigma_f: float = 0.1
    rho: float = 1.0
    matern_order: int = 1
    matern_mass: str = "lumped"
    dt: float = 0.01
    sigma_eps: float | tuple = 0.01
    observed_nodes: tuple = (0, 2, 4, 6, 8, 10)
    N: int = 100
    u_init: float = 1.0
    mesh_level: int = 0

    def __post_init__(self):
        self.observed_nodes = tuple(int(i) for i in self.observed_nodes)
        if isinstance(self.sigma_eps, (list, tuple, np.ndarray)):
            self.sigma_eps = tuple(float(s) for s in self.sigma_eps)
        self.validate()

    def validate(self, d_b: int | None = None) -> None:
        for name in ("nu", "sigma_f", "rho", "dt"):
            value = getattr(self, name)
            if name == "sigma_f":
                if value < 0:
                    raise ValueError("sigma_f must be non-negative")
            elif value <= 0:
                raise ValueError(f"{name} must be positive")
        if self.matern_mass not in ("lumped", "consistent"):
            raise ValueError("matern_mass must be 'lumped' or 'consistent'")
        if self.matern_order != 1:
            raise ValueError("only Matern order 1 is supported")
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if len(set(self.observed_nodes)) != len(self.observed_nodes):
            raise ValueError("observed_nodes must be distinct")
        if any(i < 0 for i in self.observed_nodes):
            raise ValueError("observed_nodes must be non-negative")
        if d_b is not None and any(i >= d_b for i in self.observed_nodes):
            raise ValueError(f"observed node index out of range for d_b={d_b}")
        if np.any(np.asarray(self.sigma_eps) < 0):
            raise ValueError("sigma_eps must be non-negative")
        if isinstance(self.sigma_eps, tuple) and len(self.sigma_eps) != len(self.observed_nodes):
            raise ValueError("per-node sigma_eps must match observed_nodes")

    @property
    def d_o(self) -> int:
        return len(self.observed_nodes)

    def obs_variances(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.sigma_eps, dtype=float) ** 2, (self.d_o,)).copy()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["observed_nodes"] = list(self.observed_nodes)
        if isinstance(self.sigma_eps, tuple):
            d["sigma_eps"] = list(self.sigma_eps)
        return d


@dataclass
class Trajectory:
    states: np.ndarray  # (N, d_b), U_1..U_N
    theta_used: ThetaParams | None = None

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if self.states.shape[0] < 1:
            raise ValueError("trajectory needs at least one state")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("trajectory has non-finite entries")

    @property
    def N(self) -> int:
        return self.states.shape[0]

    @property
    def d_b(self) -> int:
        return self.states.shape[1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step"] + [f"u{i}" for i in range(self.d_b)])
            for n, row in enumerate(self.states, start=1):
                writer.writerow([n] + [repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        steps = data[:, 0].astype(int)
        if not np.array_equal(steps, np.arange(1, len(steps) + 1)):
            raise ValueError(f"{path}: steps must run 1..N in order")
        return cls(states=data[:, 1:])


@dataclass(frozen=True)
class System:
    """Everything derived from a ModelConfig: mesh, FEM operators, noise."""

    config: ModelConfig
    mesh: SphereMesh
    ops: FemOperators
    noise: NoiseModel

    @property
    def d_b(self) -> int:
        return self.mesh.d_b

    @property
    def u0(self) -> np.ndarray:
        return np.full(self.d_b, float(self.config.u_init))

    def H(self) -> np.ndarray:
        H = np.zeros((self.config.d_o, self.d_b))
        H[np.arange(self.config.d_o), list(self.config.observed_nodes)] = 1.0
        return H


def build_system(config: ModelConfig | None = None) -> System:
    config = ModelConfig() if config is None else config
    mesh = build_icosahedron_mesh(config.mesh_level)
    config.validate(mesh.d_b)
    ops = assemble_operators(mesh, config.nu, config.rho, config.dt)
    noise = build_noise_model(ops, config.sigma_f, config.dt, matern_mass=config.matern_mass)
    return System(config=config, mesh=mesh, ops=ops, noise=noise)


def g_basis(U, ops: FemOperators, dt: float | None = None) -> np.ndarray:
    """The three vectors G_k(U), k = 0, 1, 4, stacked on the second-to-last axis.

    ``U`` may be a single state ``(d_b,)`` or a batch ``(..., d_b)``; the
    result has shape ``(..., 3, d_b)``.
    """
    if dt is not None and not np.isclose(dt, ops.dt):
        raise ValueError(f"dt={dt} does not match the operators' dt={ops.dt}")
    AU = np.asarray(U, dtype=float) @ ops.A.T
    powers = np.stack([np.ones_like(AU), AU, AU**4], axis=-2)
    return powers @ ops.basis_matrix.T


def mu_theta(U, theta, ops: FemOperators, dt: float | None = None) -> np.ndarray:
    """Deterministic part of one step; batched over leading axes of ``U``."""
    if dt is not None and not np.isclose(dt, ops.dt):
        raise ValueError(f"dt={dt} does not match the operators' dt={ops.dt}")
    t0, t1, t4 = theta_array(theta)
    U = np.asarray(U, dtype=float)
    AU = U @ ops.A.T
    g = t0 + AU * (t1 + t4 * AU**3)
    return U @ ops.drift_matrix.T + g @ ops.basis_matrix.T


def step(U, theta, ops: FemOperators, noise: NoiseModel, rng: np.random.Generator, index: int = 0) -> np.ndarray:
    out = mu_theta(U, theta, ops)
    if noise.sigma_f > 0:
        out = out + sample_state_noise(noise, ops, rng)
    if not np.all(np.isfinite(out)):
        raise BlowUpError(index)
    return out


def simulate(theta, config: ModelConfig, ops: FemOperators, noise: NoiseModel, rng: np.random.Generator,
             N: int | None = None, u0=None) -> Trajectory:
    """Run ``N`` steps (default ``config.N``) from the constant initial state."""
    N = config.N if N is None else int(N)
    if N < 1:
        raise ValueError("N must be at least 1")
    d_b = ops.d_b
    u = np.full(d_b, float(config.u_init)) if u0 is None else np.asarray(u0, dtype=float)
    th = theta_array(theta)
    # one block draw consumes the stream exactly as N single-step draws
    if noise.sigma_f > 0:
        W = sample_state_noise(noise, ops, rng, size=N)
    else:
        W = np.zeros((N, d_b))
    states = np.empty((N, d_b))
    for n in range(N):
        u = mu_theta(u, th, ops) + W[n]
        if not np.all(np.isfinite(u)):
            raise BlowUpError(n + 1)
        states[n] = u
    theta_used = theta if isinstance(theta, ThetaParams) else ThetaParams.from_array(th)
    return Trajectory(states=states, theta_used=theta_used)


def transition_logpdf(u_next, u, theta, noise: NoiseModel, ops: FemOperators) -> np.ndarray:
    """log p_theta(u_next | u), batched over matching leading axes."""
    if noise.R_chol is None:
        raise ValueError("transition density is degenerate when sigma_f = 0")
    resid = np.asarray(u_next, dtype=float) - mu_theta(u, theta, ops)
    z = resid @ noise.R_chol_inv.T
    quad = np.sum(z**2, axis=-1)
    return -0.5 * noise.R_inv_logdet - 0.5 * quad
