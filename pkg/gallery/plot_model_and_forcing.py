"""
The energy balance model on a coarse sphere
===========================================

Build the 12-node icosahedral mesh, assemble the finite element operators,
look at the spatially correlated forcing and run the model for a while.
"""

import numpy as np

from sebm import ModelConfig, build_system, simulate
from sebm.posterior import GAUSSIAN_MEAN

##############################################################################
# Mesh and operators
# ------------------
#
# The default configuration uses the icosahedron itself (``mesh_level=0``).
# Every node carries the same lumped mass, and the stiffness matrix
# annihilates constants.

system = build_system(ModelConfig())
ops = system.ops
print("nodes:", system.d_b)
print("total area: %.6f (sphere: %.6f)" % (ops.areas.sum(), 4 * np.pi))
print("lumped mass:", np.unique(np.round(np.diag(ops.M0_lumped), 12)))
print("max |M1 @ 1|: %.1e" % np.abs(ops.M1 @ np.ones(system.d_b)).max())

##############################################################################
# Forcing
# -------
#
# One step of forcing enters the state as a Gaussian increment with
# covariance ``R``. Neighbouring nodes are mildly anti-correlated because the
# time step keeps the consistent mass matrix.

R = system.noise.R
sd = np.sqrt(np.diag(R))
corr = R / np.outer(sd, sd)
print("per-node increment sd: %.4f" % sd.mean())
print("correlation of node 0 with the others:")
print(np.round(corr[0], 2))

##############################################################################
# A long run
# ----------
#
# With the prior-mean parameters the temperature relaxes to the root of
# ``g(u) = theta0 + theta1 u + theta4 u^4`` near 1.01 and fluctuates around it.

rng = np.random.default_rng(0)
traj = simulate(GAUSSIAN_MEAN, system.config, ops, system.noise, rng, N=5000)
u = traj.states[500:]
print("mean %.4f, std %.4f, range [%.3f, %.3f]" % (u.mean(), u.std(), u.min(), u.max()))

counts, edges = np.histogram(u, bins=12)
for c, a in zip(counts, edges):
    print("%.3f %s" % (a, "#" * int(60 * c / counts.max())))
