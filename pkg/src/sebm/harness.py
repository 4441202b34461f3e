"""Experiment recipes behind the command line: simulate, MLE study, inference, report."""
from __future__ import annotations

import csv
import json
import platform
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy

from .diagnostics import build_report, ensemble_at
from .estimators import SingularFisherError, condition_number, mle, prefix_stats
from .model import ModelConfig, Trajectory, build_system, simulate
from .observation import Observations, observe_trajectory, observed_nodes_preset
from .pgas import run_pgas
from .posterior import ParamPrior, fit_climatological_prior, log_regularized_posterior

MODEL_FIELDS = tuple(f.name for f in fields(ModelConfig))


@dataclass
class RunConfig:
    """Flat run configuration; model fields mirror :class:`ModelConfig`."""

    # model
    nu: float = 0.1
    sigma_f: float = 0.1
    rho: float = 1.0
    matern_order: int = 1
    matern_mass: str = "lumped"
    dt: float = 0.01
    sigma_eps: float = 0.01
    N: int = 100
    u_init: float = 1.0
    mesh_level: int = 0
    obs_preset: str = "6"
    # inference
    prior: str = "gaussian"
    L: int = 10_000
    M: int = 5
    thin: int = 1
    burn_in: float = 0.1
    use_climatology: bool = True
    # study
    replicates: int = 20
    theta_source: str = "prior"  # "prior" or "explicit"
    theta: list | None = None
    mle_length: int = 10_000
    mle_lengths: list = field(default_factory=lambda: [100, 1000, 10_000])
    workers: int = 1
    plot_nodes: list | None = None  # defaults to first observed and first unobserved
    seed: int = 0
    out: str = "runs"

    def __post_init__(self):
        self.obs_preset = str(self.obs_preset)
        if self.prior not in ("gaussian", "uniform"):
            raise ValueError(f"prior must be gaussian or uniform, got {self.prior!r}")
        if self.theta_source not in ("prior", "explicit"):
            raise ValueError("theta_source must be 'prior' or 'explicit'")
        if self.theta_source == "explicit" and (self.theta is None or len(self.theta) != 3):
            raise ValueError("explicit theta_source needs three theta values")
        if self.L < 1 or self.M < 1 or self.replicates < 1:
            raise ValueError("L, M and replicates must be positive")
        if not 0 <= self.burn_in < 1:
            raise ValueError("burn_in must lie in [0, 1)")
        self.model_config()  # validates the model part

    @classmethod
    def from_json(cls, path, **overrides) -> "RunConfig":
        data = json.loads(Path(path).read_text()) if path else {}
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def model_config(self, **changes) -> ModelConfig:
        nodes = observed_nodes_preset(self.obs_preset, 10 * 4**self.mesh_level + 2)
        kw = {k: getattr(self, k) for k in MODEL_FIELDS if k != "observed_nodes"}
        kw.update(observed_nodes=nodes)
        kw.update(changes)
        return ModelConfig(**kw)

    def param_prior(self) -> ParamPrior:
        return ParamPrior.from_name(self.prior)


def replicate_seed(master: int, replicate: int) -> np.random.SeedSequence:
    """Independent stream for replicate ``r`` derived from the master seed."""
    return np.random.SeedSequence([int(master) & (2**64 - 1), int(replicate)])


def _rng(master: int, replicate: int) -> np.random.Generator:
    return np.random.default_rng(replicate_seed(master, replicate))


def _manifest_base(cfg: RunConfig, command: str) -> dict:
    return {"command": command, "config": cfg.to_dict(), "seed": cfg.seed,
            "versions": {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}}


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=1, sort_keys=True, default=_json_default))


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _true_theta(cfg: RunConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.theta_source == "explicit":
        return np.asarray(cfg.theta, dtype=float)
    return cfg.param_prior().sample(rng)


def _histogram_rows(values, edges):
    counts, _ = np.histogram(values, bins=edges, density=True)
    return counts


# ---------------------------------------------------------------- simulate

def cmd_simulate(cfg: RunConfig, out=None) -> dict:
    """Simulate one truth, observe it and write trajectory, observations, climatology and manifest."""
    out = Path(out or cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    model = cfg.model_config()
    system = build_system(model)
    rng = _rng(cfg.seed, 0)
    theta = _true_theta(cfg, rng)
    traj = simulate(theta, model, system.ops, system.noise, rng)
    obs = observe_trajectory(traj, model, rng)
    paths = {"trajectory": out / "trajectory.csv", "observations": out / "observations.csv",
             "climatology": out / "climatology_hist.csv", "manifest": out / "manifest.json"}
    traj.to_csv(paths["trajectory"])
    obs.to_csv(paths["observations"])
    lo = min(traj.states.min(), obs.y.min())
    hi = max(traj.states.max(), obs.y.max())
    edges = np.linspace(lo, hi, 41)
    h_state = _histogram_rows(traj.states.ravel(), edges)
    h_obs = _histogram_rows(obs.y.ravel(), edges)
    with open(paths["climatology"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["left", "right", "state_density", "obs_density"])
        for a, b, s, o in zip(edges[:-1], edges[1:], h_state, h_obs):
            w.writerow([repr(float(a)), repr(float(b)), repr(float(s)), repr(float(o))])
    manifest = _manifest_base(cfg, "simulate")
    manifest.update(theta_true=theta, state_mean=float(traj.states.mean()), state_std=float(traj.states.std()))
    _write_json(paths["manifest"], manifest)
    return paths


# ---------------------------------------------------------------- MLE study

def mle_replicate(cfg: RunConfig, replicate: int) -> list[dict]:
    """Condition numbers and MLE errors on nested prefixes of one long trajectory."""
    rng = _rng(cfg.seed, replicate)
    model = cfg.model_config(N=int(cfg.mle_length))
    system = build_system(model)
    theta = _true_theta(cfg, rng)
    traj = simulate(theta, model, system.ops, system.noise, rng)
    noise = cfg.sigma_eps * rng.standard_normal(traj.states.shape)
    noisy = traj.states + noise
    lengths = sorted(int(n) for n in cfg.mle_lengths if n <= cfg.mle_length)
    rows = []
    for kind, states in (("true", traj.states), ("noisy", noisy)):
        for st in prefix_stats(states, system.ops, system.noise, system.u0, lengths):
            try:
                err = mle(st).as_array() - theta
            except SingularFisherError:
                err = np.full(3, np.nan)
            rows.append({"replicate": replicate, "N": st.N, "kind": kind, "cond": condition_number(st.F_N),
                         "err0": err[0], "err1": err[1], "err4": err[2]})
    return rows


def summarize_mle(rows: list[dict]) -> list[dict]:
    out = []
    keys = sorted({(r["kind"], r["N"]) for r in rows}, key=lambda k: (k[0] != "true", k[1]))
    for kind, N in keys:
        sel = [r for r in rows if r["kind"] == kind and r["N"] == N]
        rec = {"kind": kind, "N": N, "replicates": len(sel)}
        cond = np.array([r["cond"] for r in sel])
        rec["cond_mean"], rec["cond_std"] = float(np.mean(cond)), float(np.std(cond, ddof=1)) if len(sel) > 1 else 0.0
        for k in ("err0", "err1", "err4"):
            v = np.array([r[k] for r in sel], dtype=float)
            rec[f"{k}_mean"] = float(np.nanmean(v))
            rec[f"{k}_std"] = float(np.nanstd(v, ddof=1)) if len(sel) > 1 else 0.0
        out.append(rec)
    return out


def _write_rows(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v for k, v in r.items()})


def _map_replicates(func, cfg: RunConfig, replicates):
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(func, [cfg] * len(replicates), replicates))
    return [func(cfg, r) for r in replicates]


def cmd_mle_study(cfg: RunConfig, out=None) -> dict:
    if cfg.replicates < 2:
        raise ValueError("the MLE study needs at least two replicates")
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    per_rep = _map_replicates(mle_replicate, cfg, range(cfg.replicates))
    rows = [r for rep in per_rep for r in rep]
    summary = summarize_mle(rows)
    paths = {"rows": out / "mle_replicates.csv", "summary": out / "mle_summary.csv", "manifest": out / "manifest.json"}
    _write_rows(paths["rows"], rows)
    _write_rows(paths["summary"], summary)
    manifest = _manifest_base(cfg, "mle-study")
    manifest.update(summary=summary, timings={"seconds": time.perf_counter() - t0})
    _write_json(paths["manifest"], manifest)
    return paths


# ---------------------------------------------------------------- inference

def infer_replicate(cfg: RunConfig, replicate: int, out: Path | None = None, obs: Observations | None = None,
                    truth: Trajectory | None = None, theta_true=None) -> dict:
    """Simulate (unless data are given), run PGAS and the diagnostics; returns the manifest."""
    rng = _rng(cfg.seed, replicate)
    model = cfg.model_config()
    system = build_system(model)
    prior = cfg.param_prior()
    if obs is None:
        theta_true = _true_theta(cfg, rng)
        truth = simulate(theta_true, model, system.ops, system.noise, rng)
        obs = observe_trajectory(truth, model, rng)
    clim = fit_climatological_prior(obs) if cfg.use_climatology else None

    chain = run_pgas(prior, obs, system, cfg.L, cfg.M, clim, rng, thin=cfg.thin, seed=cfg.seed)

    def log_post(theta, states):
        return log_regularized_posterior(theta, states, obs, prior, clim, system)

    report = build_report(chain, log_post=log_post, true_states=None if truth is None else truth.states,
                          burn_in=cfg.burn_in, support=prior.support(), max_lag=min(200, max(cfg.L - 1, 1)))
    metrics = {
        "prior": cfg.prior, "obs_preset": cfg.obs_preset, "replicate": replicate,
        "theta_true": None if theta_true is None else np.asarray(theta_true, dtype=float),
        "theta_mean": report.theta_mean, "theta_map": report.theta_map,
        "state_rel_error_traj": report.state_rel_error_traj,
        "state_rel_error_at": {t: report.state_rel_error_at[t] for t in ("20", "60", "100")
                               if t in report.state_rel_error_at},
        "coverage_probability": report.coverage_probability,
        "mean_update_rate": float(np.mean(report.update_rate_per_step)),
        "correlation_lengths": report.correlation_lengths,
        "box_violations": int(np.sum(~np.array([prior.contains(t) for t in chain.theta_samples])))
        if prior.kind == "uniform" else None,
        "climatology": None if clim is None else {"u_c": clim.u_c, "sigma_c": float(clim.sigma_c),
                                                   "sigma_o": clim.sigma_o},
        "timings": chain.timings,
    }
    if theta_true is not None:
        metrics["theta_mean_error"] = np.asarray(report.theta_mean) - theta_true
        if report.theta_map is not None:
            metrics["theta_map_error"] = np.asarray(report.theta_map) - theta_true
    manifest = _manifest_base(cfg, "infer")
    manifest["replicate_seed"] = {"master": cfg.seed, "replicate": replicate}
    manifest["metrics"] = metrics
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        chain.save(out / "chain")
        report.to_json(out / "report.json")
        report.write_tables(out)
        obs.to_csv(out / "observations.csv")
        if truth is not None:
            truth.to_csv(out / "trajectory.csv")
        _write_ensembles(out / "ensembles.csv", chain, model, cfg)
        _write_json(out / "manifest.json", manifest)
    manifest["_chain"] = chain
    manifest["_report"] = report
    manifest["_truth"] = truth
    return manifest


def _write_ensembles(path: Path, chain, model: ModelConfig, cfg: RunConfig) -> None:
    """Posterior quantile bands of selected nodes over time."""
    nodes = cfg.plot_nodes
    if nodes is None:
        unobserved = [i for i in range(chain.traj_samples.shape[2]) if i not in model.observed_nodes]
        nodes = [model.observed_nodes[0]] + unobserved[:1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "step", "q05", "q25", "mean", "q75", "q95"])
        for node in nodes:
            ens = ensemble_at(chain, node, cfg.burn_in)
            q = np.quantile(ens, [0.05, 0.25, 0.75, 0.95], axis=0)
            for n in range(ens.shape[1]):
                w.writerow([node, n + 1, *(repr(float(x)) for x in (q[0, n], q[1, n], ens[:, n].mean(),
                                                                    q[2, n], q[3, n]))])


def _infer_worker(cfg: RunConfig, replicate: int) -> dict:
    out = Path(cfg.out) / f"rep_{replicate:03d}" if cfg.replicates > 1 else Path(cfg.out)
    man = infer_replicate(cfg, replicate, out)
    return {k: v for k, v in man.items() if not k.startswith("_")}


def cmd_infer(cfg: RunConfig, out=None, obs_path=None, truth_path=None) -> list[dict]:
    """Run one or more inference replicates; with ``obs_path`` the data are read instead of simulated."""
    if out is not None:
        cfg = RunConfig(**{**cfg.to_dict(), "out": str(out)})
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    if obs_path is not None:
        model = cfg.model_config()
        obs = Observations.from_csv(obs_path, model)
        truth = Trajectory.from_csv(truth_path) if truth_path else None
        if obs.N != cfg.N:
            cfg = RunConfig(**{**cfg.to_dict(), "N": obs.N})
        man = infer_replicate(cfg, 0, Path(cfg.out), obs=obs, truth=truth)
        return [{k: v for k, v in man.items() if not k.startswith("_")}]
    return _map_replicates(_infer_worker, cfg, range(cfg.replicates))


# ---------------------------------------------------------------- report

def _find_manifests(run_dirs) -> list[Path]:
    found = []
    for d in run_dirs:
        d = Path(d)
        if d.is_file():
            found.append(d)
            continue
        found.extend(sorted(p for p in d.rglob("manifest.json")))
    return found


def _mean_std(values):
    v = np.array([x for x in values if x is not None], dtype=float)
    if v.size == 0:
        return None, None
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def cmd_report(run_dirs, out) -> dict:
    """Aggregate inference manifests into parameter- and state-error tables grouped by prior and preset."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    groups: dict[tuple, list] = {}
    for path in _find_manifests(run_dirs):
        try:
            man = json.loads(path.read_text())
            if man.get("command") != "infer":
                continue
            m = man["metrics"]
            groups.setdefault((m["prior"], str(m["obs_preset"])), []).append(m)
        except (OSError, ValueError, KeyError) as exc:
            warnings.warn(f"skipping {path}: {exc}")
    if not groups:
        raise ValueError("no completed inference runs found")
    param_rows, state_rows = [], []
    for (prior, preset), ms in sorted(groups.items()):
        for est in ("mean", "map"):
            errs = [m.get(f"theta_{est}_error") for m in ms if m.get(f"theta_{est}_error") is not None]
            if not errs:
                continue
            row = {"prior": prior, "obs_preset": preset, "estimator": est, "runs": len(errs)}
            for k, name in enumerate(("theta0", "theta1", "theta4")):
                row[f"{name}_err_mean"], row[f"{name}_err_std"] = _mean_std([e[k] for e in errs])
            param_rows.append(row)
        row = {"prior": prior, "obs_preset": preset, "runs": len(ms)}
        row["traj_err_mean"], row["traj_err_std"] = _mean_std([m.get("state_rel_error_traj") for m in ms])
        for t in ("20", "60", "100"):
            row[f"err_t{t}_mean"], row[f"err_t{t}_std"] = _mean_std(
                [m.get("state_rel_error_at", {}).get(t) for m in ms])
        row["cp_mean"], row["cp_std"] = _mean_std([m.get("coverage_probability") for m in ms])
        row["update_rate_mean"], _ = _mean_std([m.get("mean_update_rate") for m in ms])
        state_rows.append(row)
    paths = {"parameters": out / "parameter_errors.csv", "states": out / "state_errors.csv"}
    if param_rows:
        _write_rows(paths["parameters"], param_rows)
    _write_rows(paths["states"], state_rows)
    _write_json(out / "report_manifest.json", {"parameters": param_rows, "states": state_rows})
    return {"parameters": param_rows, "states": state_rows, "paths": paths}
