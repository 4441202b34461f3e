"""Bayesian joint state-parameter estimation for a stochastic energy balance model on the sphere."""
from .diagnostics import (DiagnosticsReport, acf_and_corrlength, build_report, equilibrium_and_feedback,
                          posterior_summary, state_metrics, update_rate)
from .estimators import SufficientStats, condition_number, mle, prefix_stats, sample_theta_conditional, sufficient_stats
from .forcing import NoiseModel, build_noise_model, sample_state_noise
from .harness import RunConfig, cmd_infer, cmd_mle_study, cmd_report, cmd_simulate
from .mesh_fem import FemOperators, SphereMesh, assemble_operators, build_icosahedron_mesh
from .model import ModelConfig, System, ThetaParams, Trajectory, build_system, mu_theta, simulate, transition_logpdf
from .observation import Observations, observation_matrix, observe_trajectory
from .pgas import Chain, ancestor_logweights, csmc_as, run_pgas
from .posterior import (ClimatologicalPrior, ParamPrior, fit_climatological_prior, log_regularized_posterior,
                        regularized_cost)
from .smc import ParticleSystem, build_proposal, optimal_proposal_params, predictive_logweight, sir_filter

__version__ = "0.1.0"
