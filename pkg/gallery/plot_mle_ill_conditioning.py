"""
Why the maximum likelihood estimate fails
=========================================

The drift is affine in the parameters, so the likelihood of a state
trajectory is Gaussian in theta with precision ``N F_N``. The matrix
``F_N`` is nearly singular, and small state errors blow the estimate up.
"""

import numpy as np

from sebm import ModelConfig, build_system, simulate
from sebm.estimators import condition_number, mle, prefix_stats
from sebm.posterior import ParamPrior

##############################################################################
# One long trajectory, nested lengths
# -----------------------------------

system = build_system(ModelConfig())
rng = np.random.default_rng(1)
theta = ParamPrior.gaussian().sample(rng)
traj = simulate(theta, system.config, system.ops, system.noise, rng, N=10_000)
noisy = traj.states + 0.01 * rng.standard_normal(traj.states.shape)

lengths = [100, 1000, 10_000]
for kind, states in (("true", traj.states), ("noisy", noisy)):
    for st in prefix_stats(states, system.ops, system.noise, system.u0, lengths):
        err = mle(st).as_array() - theta
        print("%-5s N=%6d  cond=%.2e  error=%s" % (kind, st.N, condition_number(st.F_N),
                                                   np.array2string(err, precision=2)))

##############################################################################
# The stiff direction
# -------------------
#
# The eigenvector of the smallest eigenvalue is nearly the direction that
# leaves ``g`` unchanged near u = 1, so the data cannot tell those
# parameter combinations apart.

st = prefix_stats(traj.states, system.ops, system.noise, system.u0, [10_000])[0]
w, V = np.linalg.eigh(st.F_N)
print("eigenvalues:", w)
print("weakest direction:", np.round(V[:, 0], 3))
print("g along it at u=1: %.3f" % (V[0, 0] + V[1, 0] + V[2, 0]))
