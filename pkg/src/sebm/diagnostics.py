"""Chain diagnostics and estimation metrics."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from .model import theta_array
from .pgas import Chain

THETA_NAMES = ("theta0", "theta1", "theta4")


def update_rate(chain: Chain) -> np.ndarray:
    """Fraction of sweeps l >= 1 that changed the state at each time step."""
    if chain.L < 2:
        raise ValueError("update rate needs at least two chain iterations")
    return chain.update_flags[1:].mean(axis=0)


def acf(series, max_lag: int) -> np.ndarray:
    """Biased empirical autocorrelation for lags 0..max_lag."""
    x = np.asarray(series, dtype=float)
    x = x - x.mean()
    denom = np.dot(x, x)
    if denom == 0 or not np.isfinite(denom):
        raise ValueError("autocorrelation of a constant series is undefined")
    max_lag = min(int(max_lag), len(x) - 1)
    full = np.correlate(x, x, mode="full")[len(x) - 1: len(x) + max_lag]
    out = full / denom
    out[0] = 1.0
    return out


def acf_and_corrlength(series, max_lag: int, threshold: float = 0.1):
    """ACF and the first lag where |ACF| drops below ``threshold``.

    The length is ``max_lag + 1`` when the ACF never falls inside the band.
    """
    r = acf(series, max_lag)
    below = np.flatnonzero(np.abs(r) < threshold)
    length = int(below[0]) if below.size else len(r)
    return r, length


def _burned(chain: Chain, burn_in: float):
    b = chain.burn(burn_in)
    if b >= chain.L:
        raise ValueError("no samples left after burn-in")
    stored = chain.stored_iterations()
    keep = stored >= b
    if not keep.any():
        keep[-1] = True
    return b, keep


def posterior_summary(chain: Chain, log_post=None, burn_in: float = 0.1, bins: int = 40, support=None):
    """Posterior mean, MAP over samples and marginal histograms of theta.

    ``log_post(theta, states)`` scores a stored sample; without it the MAP
    is reported as None. ``support`` is a (3, 2) array of histogram ranges.
    """
    b, keep = _burned(chain, burn_in)
    thetas = chain.theta_samples[b:]
    mean = thetas.mean(axis=0)
    theta_map = None
    if log_post is not None:
        iters = chain.stored_iterations()[keep]
        scores = np.array([log_post(chain.theta_samples[l], chain.traj_samples[i])
                           for i, l in zip(np.flatnonzero(keep), iters)])
        theta_map = chain.theta_samples[iters[int(np.argmax(scores))]].copy()
    if support is None:
        lo, hi = thetas.min(axis=0), thetas.max(axis=0)
        support = np.column_stack([lo, np.where(hi > lo, hi, lo + 1e-12)])
    hists = {}
    for k, name in enumerate(THETA_NAMES):
        counts, edges = np.histogram(thetas[:, k], bins=bins, range=tuple(support[k]), density=True)
        hists[name] = {"density": counts.tolist(), "edges": edges.tolist()}
    return mean, theta_map, hists


def state_metrics(chain: Chain, true_states, credible_level: float = 0.9, burn_in: float = 0.1):
    """Relative errors (percent) of the posterior-mean trajectory and the coverage probability.

    Returns (error per time step, trajectory error, CP), all in percent.
    """
    truth = np.asarray(true_states, dtype=float)
    _, keep = _burned(chain, burn_in)
    samples = chain.traj_samples[keep]
    if samples.shape[1:] != truth.shape:
        raise ValueError(f"chain states {samples.shape[1:]} do not match truth {truth.shape}")
    est = samples.mean(axis=0)
    rel = np.abs(est - truth) / np.abs(truth)
    per_step = 100 * rel.mean(axis=1)
    tail = 0.5 * (1 - credible_level)
    lo, hi = np.quantile(samples, [tail, 1 - tail], axis=0)
    cp = 100 * np.mean((lo <= truth) & (truth <= hi))
    return per_step, float(per_step.mean()), float(cp)


def ensemble_at(chain: Chain, node: int, burn_in: float = 0.1) -> np.ndarray:
    """Post burn-in samples of one node's trajectory, shape (samples, N)."""
    _, keep = _burned(chain, burn_in)
    return chain.traj_samples[keep][:, :, node]


def g_theta(theta, u):
    t = theta_array(theta)
    u = np.asarray(u, dtype=float)
    return t[0] + t[1] * u + t[2] * u**4


def dg_theta(theta, u):
    t = theta_array(theta)
    u = np.asarray(u, dtype=float)
    return t[1] + 4 * t[2] * u**3


def equilibrium_and_feedback(theta, bracket=(0.5, 1.5)):
    """Root u_e of g_theta in ``bracket`` and the feedback g'(u_e)."""
    a, b = bracket
    ga, gb = g_theta(theta, a), g_theta(theta, b)
    if ga == 0:
        return float(a), float(dg_theta(theta, a))
    if gb == 0:
        return float(b), float(dg_theta(theta, b))
    if np.sign(ga) == np.sign(gb):
        raise ValueError(f"g_theta has no sign change on [{a}, {b}]")
    u_e = optimize.brentq(lambda u: g_theta(theta, u), a, b, xtol=1e-12, rtol=4 * np.finfo(float).eps)
    return float(u_e), float(dg_theta(theta, u_e))


@dataclass
class DiagnosticsReport:
    update_rate_per_step: list
    acf_tables: dict
    correlation_lengths: dict
    theta_mean: list
    theta_map: list | None
    theta_hist: dict
    state_rel_error_traj: float | None = None
    state_rel_error_at: dict = field(default_factory=dict)
    coverage_probability: float | None = None
    equilibrium: float | None = None
    feedback: float | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=1, sort_keys=True))

    @classmethod
    def from_json(cls, path) -> "DiagnosticsReport":
        return cls(**json.loads(Path(path).read_text()))

    def write_tables(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "update_rate.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "rate"])
            for n, r in enumerate(self.update_rate_per_step, start=1):
                w.writerow([n, repr(float(r))])
        with open(directory / "acf.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            names = sorted(self.acf_tables)
            w.writerow(["lag"] + names)
            n_lags = max((len(v) for v in self.acf_tables.values()), default=0)
            for lag in range(n_lags):
                w.writerow([lag] + [repr(float(self.acf_tables[k][lag])) if lag < len(self.acf_tables[k]) else ""
                                    for k in names])
        with open(directory / "theta_hist.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["param", "left", "right", "density"])
            for name, h in self.theta_hist.items():
                for left, right, dens in zip(h["edges"][:-1], h["edges"][1:], h["density"]):
                    w.writerow([name, repr(left), repr(right), repr(dens)])


def build_report(chain: Chain, log_post=None, true_states=None, max_lag: int = 200, burn_in: float = 0.1,
                 bins: int = 40, support=None, credible_level: float = 0.9) -> DiagnosticsReport:
    b = chain.burn(burn_in)
    acfs, lengths = {}, {}
    for k, name in enumerate(THETA_NAMES):
        series = chain.theta_samples[b:, k]
        if len(series) < 2 or np.ptp(series) == 0:
            continue
        r, length = acf_and_corrlength(series, max_lag)
        acfs[name] = r.tolist()
        lengths[name] = length
    mean, theta_map, hists = posterior_summary(chain, log_post, burn_in, bins, support)
    rates = update_rate(chain).tolist() if chain.L >= 2 else [0.0] * chain.N
    report = DiagnosticsReport(update_rate_per_step=rates, acf_tables=acfs, correlation_lengths=lengths,
                               theta_mean=mean.tolist(),
                               theta_map=None if theta_map is None else theta_map.tolist(), theta_hist=hists)
    if true_states is not None:
        per_step, traj_err, cp = state_metrics(chain, true_states, credible_level, burn_in)
        report.state_rel_error_traj = traj_err
        report.state_rel_error_at = {str(n): float(e) for n, e in enumerate(per_step, start=1)}
        report.coverage_probability = cp
    try:
        report.equilibrium, report.feedback = equilibrium_and_feedback(mean)
    except ValueError:
        pass
    return report
