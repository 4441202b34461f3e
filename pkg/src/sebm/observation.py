"""Linear Gaussian observations of selected mesh nodes."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import ModelConfig, Trajectory

OBS_PRESETS = {
    "6": (0, 2, 4, 6, 8, 10),
    "2": (0, 6),
}


def observed_nodes_preset(preset: str, d_b: int = 12) -> tuple:
    if preset == "all":
        return tuple(range(d_b))
    try:
        return OBS_PRESETS[str(preset)]
    except KeyError:
        raise ValueError(f"unknown observation preset {preset!r}; use 6, 2 or all") from None


def observation_matrix(observed_nodes, d_b: int) -> np.ndarray:
    nodes = list(observed_nodes)
    H = np.zeros((len(nodes), d_b))
    H[np.arange(len(nodes)), nodes] = 1.0
    return H


@dataclass
class Observations:
    y: np.ndarray  # (N, d_o)
    observed_nodes: tuple
    sigma_eps: float | tuple

    def __post_init__(self):
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        self.observed_nodes = tuple(int(i) for i in self.observed_nodes)
        if self.y.shape[1] != len(self.observed_nodes):
            raise ValueError("y columns do not match observed_nodes")
        if not np.all(np.isfinite(self.y)):
            raise ValueError("observations contain non-finite values")

    @property
    def N(self) -> int:
        return self.y.shape[0]

    @property
    def d_o(self) -> int:
        return self.y.shape[1]

    def variances(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.sigma_eps, dtype=float) ** 2, (self.d_o,)).copy()

    def to_csv(self, path) -> None:
        """Long format: one row per (step, node_index, value), steps from 1."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "node_index", "value"])
            for n, row in enumerate(self.y, start=1):
                for node, value in zip(self.observed_nodes, row):
                    writer.writerow([n, node, repr(float(value))])

    @classmethod
    def from_csv(cls, path, config: ModelConfig) -> "Observations":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for rec in reader:
                rows.append((int(rec["step"]), int(rec["node_index"]), float(rec["value"])))
        if not rows:
            raise ValueError(f"{path}: no observations")
        steps = sorted({r[0] for r in rows})
        nodes = sorted({r[1] for r in rows})
        if nodes != sorted(config.observed_nodes):
            raise ValueError(f"{path}: nodes {nodes} do not match config {list(config.observed_nodes)}")
        if steps != list(range(1, len(steps) + 1)):
            raise ValueError(f"{path}: steps must be 1..N without gaps")
        col = {node: j for j, node in enumerate(config.observed_nodes)}
        y = np.full((len(steps), len(nodes)), np.nan)
        for n, node, value in rows:
            y[n - 1, col[node]] = value
        if np.isnan(y).any():
            raise ValueError(f"{path}: missing (step, node) entries")
        return cls(y=y, observed_nodes=config.observed_nodes, sigma_eps=config.sigma_eps)


def observe_trajectory(traj: Trajectory, config: ModelConfig, rng: np.random.Generator) -> Observations:
    nodes = list(config.observed_nodes)
    if max(nodes) >= traj.d_b:
        raise ValueError("observed node index out of range")
    clean = traj.states[:, nodes]
    std = np.sqrt(config.obs_variances())
    y = clean + std * rng.standard_normal(clean.shape)
    return Observations(y=y, observed_nodes=config.observed_nodes, sigma_eps=config.sigma_eps)


def obs_logpdf(y_n, u, config: ModelConfig) -> np.ndarray:
    """log p(y_n | u) for Q = diag(sigma_eps^2); batched over leading axes of ``u``."""
    var = config.obs_variances()
    resid = np.asarray(y_n, dtype=float) - np.asarray(u, dtype=float)[..., list(config.observed_nodes)]
    return -0.5 * np.sum(np.log(2 * np.pi * var)) - 0.5 * np.sum(resid**2 / var, axis=-1)
