"""Spherical triangulation and linear finite element operators.

The mesh is the regular icosahedron (12 vertices), optionally refined by
midpoint subdivision with projection back to the unit sphere. All matrices
are assembled on the flat embedded triangles.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.spatial import ConvexHull

DEGENERATE_AREA = 1e-14


@dataclass(frozen=True)
class SphereMesh:
    vertices: np.ndarray  # (d_b, 3), unit norm
    triangles: np.ndarray  # (d_e, 3), outward (counter-clockwise) orientation

    @property
    def d_b(self) -> int:
        return self.vertices.shape[0]

    @property
    def d_e(self) -> int:
        return self.triangles.shape[0]

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as a sorted (E, 2) index array."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def centers(self) -> np.ndarray:
        """Centroids of the flat triangles (not projected to the sphere)."""
        return self.vertices[self.triangles].mean(axis=1)

    def to_json(self, path) -> None:
        payload = {
            "vertices": self.vertices.tolist(),
            "triangles": self.triangles.tolist(),
        }
        Path(path).write_text(json.dumps(payload, indent=1))

    @classmethod
    def from_json(cls, path) -> "SphereMesh":
        payload = json.loads(Path(path).read_text())
        return cls(
            vertices=np.asarray(payload["vertices"], dtype=float),
            triangles=np.asarray(payload["triangles"], dtype=int),
        )


def _orient_outward(vertices, triangles):
    tri = np.array(triangles, dtype=int)
    p = vertices[tri]
    normal = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    flip = np.einsum("ij,ij->i", normal, p.mean(axis=1)) < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    return tri


def _subdivide(vertices, triangles):
    verts = [v for v in vertices]
    midpoint = {}

    def mid(i, j):
        key = (min(i, j), max(i, j))
        if key not in midpoint:
            m = vertices[i] + vertices[j]
            verts.append(m / np.linalg.norm(m))
            midpoint[key] = len(verts) - 1
        return midpoint[key]

    new = []
    for a, b, c in triangles:
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
    return np.array(verts), np.array(new, dtype=int)


def build_icosahedron_mesh(level: int = 0) -> SphereMesh:
    """Regular icosahedron on the unit sphere, refined ``level`` times.

    Level 0 gives 12 vertices and 20 triangles; each refinement splits every
    triangle into four.
    """
    if level < 0:
        raise ValueError("subdivision level must be non-negative")
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    raw = []
    for s1 in (-1.0, 1.0):
        for s2 in (-1.0, 1.0):
            raw += [(0.0, s1, s2 * phi), (s1, s2 * phi, 0.0), (s2 * phi, 0.0, s1)]
    vertices = np.array(raw)
    vertices /= np.linalg.norm(vertices, axis=1, keepdims=True)
    triangles = _orient_outward(vertices, ConvexHull(vertices).simplices)
    for _ in range(level):
        vertices, triangles = _subdivide(vertices, triangles)
    return SphereMesh(vertices=vertices, triangles=_orient_outward(vertices, triangles))


@dataclass(frozen=True)
class FemOperators:
    """Discretization matrices for one mesh and one (nu, rho, dt) setting.

    ``M1`` already carries the diffusivity. ``A_T`` maps element values to
    nodal load contributions (area/3 per incident vertex) and ``A`` evaluates
    a nodal field at the element centroids.
    """

    M0: np.ndarray
    M0_lumped: np.ndarray
    M1: np.ndarray
    M_rho: np.ndarray
    M_dt: np.ndarray
    A_T: np.ndarray
    A: np.ndarray
    areas: np.ndarray
    nu: float
    rho: float
    dt: float

    @property
    def d_b(self) -> int:
        return self.M0.shape[0]

    @property
    def d_e(self) -> int:
        return self.A.shape[0]

    @cached_property
    def M_dt_cho(self):
        return linalg.cho_factor(self.M_dt, lower=True)

    @cached_property
    def drift_matrix(self) -> np.ndarray:
        """M_dt^{-1} M0, the linear (diffusive) part of one time step."""
        return linalg.cho_solve(self.M_dt_cho, self.M0)

    @cached_property
    def basis_matrix(self) -> np.ndarray:
        """dt * M_dt^{-1} A_T, mapping centroid values to the state increment."""
        return self.dt * linalg.cho_solve(self.M_dt_cho, self.A_T)

    def export_csv(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name in ("M0", "M0_lumped", "M1", "M_rho", "M_dt", "A_T", "A"):
            np.savetxt(directory / f"{name}.csv", getattr(self, name), delimiter=",", fmt="%.17g")


def _local_matrices(p):
    """Mass and unscaled stiffness blocks for one flat triangle ``p`` (3x3)."""
    e = np.array([p[2] - p[1], p[0] - p[2], p[1] - p[0]])
    area = 0.5 * np.linalg.norm(np.cross(e[2], -e[1]))
    if area < DEGENERATE_AREA:
        raise ValueError(f"degenerate triangle with area {area:.3e}")
    mass = area / 12.0 * (np.ones((3, 3)) + np.eye(3))
    stiff = e @ e.T / (4.0 * area)
    return area, mass, stiff


def assemble_operators(mesh: SphereMesh, nu: float, rho: float, dt: float) -> FemOperators:
    if nu <= 0 or rho <= 0 or dt <= 0:
        raise ValueError("nu, rho and dt must all be positive")
    d_b, d_e = mesh.d_b, mesh.d_e
    M0 = np.zeros((d_b, d_b))
    K = np.zeros((d_b, d_b))
    A = np.zeros((d_e, d_b))
    A_T = np.zeros((d_b, d_e))
    areas = np.empty(d_e)
    for k, tri in enumerate(mesh.triangles):
        area, mass, stiff = _local_matrices(mesh.vertices[tri])
        idx = np.ix_(tri, tri)
        M0[idx] += mass
        K[idx] += stiff
        areas[k] = area
        A[k, tri] = 1.0 / 3.0
        A_T[tri, k] = area / 3.0
    M1 = nu * K
    M0_lumped = np.diag(M0.sum(axis=1))
    return FemOperators(
        M0=M0,
        M0_lumped=M0_lumped,
        M1=M1,
        M_rho=M0 / rho**2 + M1,
        M_dt=M0 + dt * M1,
        A_T=A_T,
        A=A,
        areas=areas,
        nu=float(nu),
        rho=float(rho),
        dt=float(dt),
    )
