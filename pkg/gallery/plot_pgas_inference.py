"""
Joint inference with particle Gibbs
===================================

Simulate a truth, observe six of the twelve nodes and run the particle
Gibbs sampler with ancestor sampling. The run is short so the script
finishes in a few seconds; the command line tool runs the full length.
"""

import numpy as np

from sebm import ModelConfig, build_system, simulate
from sebm.diagnostics import build_report, equilibrium_and_feedback
from sebm.observation import observe_trajectory
from sebm.pgas import run_pgas
from sebm.posterior import ParamPrior, fit_climatological_prior, log_regularized_posterior

##############################################################################
# Data
# ----

system = build_system(ModelConfig())
rng = np.random.default_rng(2)
prior = ParamPrior.gaussian()
theta_true = prior.sample(rng)
truth = simulate(theta_true, system.config, system.ops, system.noise, rng)
obs = observe_trajectory(truth, system.config, rng)
clim = fit_climatological_prior(obs)
print("climatology: u_c=%.4f sigma_c=%.4f" % (clim.u_c, clim.sigma_c))

##############################################################################
# Sampling
# --------

chain = run_pgas(prior, obs, system, L=300, M=5, clim=clim, rng=rng)


def log_post(theta, states):
    return log_regularized_posterior(theta, states, obs, prior, clim, system)


report = build_report(chain, log_post=log_post, true_states=truth.states, max_lag=50)

##############################################################################
# Parameters
# ----------
#
# The posterior mean stays close to the truth because the tempered
# likelihood only adds information along the well-determined directions.

print("true theta:     ", np.round(theta_true, 3))
print("posterior mean: ", np.round(report.theta_mean, 3))
print("MAP sample:     ", np.round(report.theta_map, 3))
print("u_e, g'(u_e) true:      %.4f %.2f" % equilibrium_and_feedback(theta_true))
print("u_e, g'(u_e) estimated: %.4f %.2f" % (report.equilibrium, report.feedback))

##############################################################################
# States and mixing
# -----------------

print("trajectory relative error: %.2f%%" % report.state_rel_error_traj)
print("coverage of 90%% intervals: %.1f%%" % report.coverage_probability)
rates = np.array(report.update_rate_per_step)
print("update rate: mean %.2f, last step %.2f" % (rates.mean(), rates[-1]))
print("theta correlation lengths:", report.correlation_lengths)
