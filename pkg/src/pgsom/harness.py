"""Experiment grid over update rules x stabilizers, outputs and the oracle audit."""

import csv
import dataclasses
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import oracle
from .agent import METHODS, STABILIZERS, PolicyGradientAgent
from .env import make_env

log = logging.getLogger(__name__)

MODEL_NAMES = {"pg": "Policy Gradient", "hessian": "Hessian Policy Gradient", "rk": "Runge–Kutta"}
THRESHOLDS = (200, 400)
SMOOTHING_WINDOW = 10


@dataclass
class RunConfig:
    method: str = "pg"
    stabilizer: str = "none"
    episodes: int = 500
    seeds: tuple = (0, 1, 2, 3, 4)
    lr: float = None  # None: 0.002, doubled under clipping
    clip_norm: float = 50.0
    gamma: float = 0.99
    env: str = "cartpole"
    policy: str = "softmax-linear"
    hidden: int = 16
    convention: str = "from-step"
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    alpha: float = 0.5
    kappa: float = None  # None: same as the effective lr
    entropy_coeff: float = 0.01
    baseline_decay: float = 0.9
    baseline_target: str = "mean-return-to-go"

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if self.lr is not None and self.lr <= 0:
            raise ValueError("lr must be positive")

    @classmethod
    def from_dict(cls, doc):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def agent_params(self):
        skip = {"seeds", "env"}
        return {k: v for k, v in dataclasses.asdict(self).items() if k not in skip}


@dataclass
class RunRecord:
    method: str
    stabilizer: str
    seeds: tuple
    returns: np.ndarray  # (n_seeds, episodes)
    seconds: np.ndarray  # (n_seeds, episodes)
    trajectory_returns: list = field(default_factory=list)  # per seed, every rollout
    diverged: list = field(default_factory=list)
    update_passes: np.ndarray = None  # (n_seeds, episodes)
    update_rollouts: np.ndarray = None

    @property
    def model(self):
        name = MODEL_NAMES.get(self.method, self.method)
        return name if self.stabilizer == "none" else f"{name} + {self.stabilizer}"

    @property
    def final_returns(self):
        return self.returns[:, -1]

    @property
    def final_mean(self):
        return float(np.mean(self.final_returns))

    @property
    def final_std(self):
        return float(np.std(self.final_returns))

    @property
    def trajectories_per_update(self):
        return int(self.update_rollouts[0, 0]) if self.update_rollouts is not None else 1

    def episodes_to_threshold(self, threshold):
        """Median over seeds of the first episode whose trailing moving average reaches ``threshold``."""
        return float(np.median([episodes_to_threshold(r, threshold) for r in self.returns]))


def episodes_to_threshold(returns, threshold, window=SMOOTHING_WINDOW):
    """1-based episode index; ``inf`` when the smoothed curve never gets there."""
    returns = np.asarray(returns, dtype=np.float64)
    if len(returns) < window:
        return np.inf
    ma = np.convolve(returns, np.ones(window) / window, mode="valid")
    hit = np.flatnonzero(ma >= threshold)
    return float(hit[0] + window) if hit.size else np.inf


def _fit_one(params, env_name, seed):
    agent = PolicyGradientAgent(**params, random_state=seed).fit(make_env(env_name))
    return (
        agent.returns_,
        agent.episode_seconds_,
        agent.trajectory_returns_,
        agent.diverged_,
        agent.update_derivative_passes_,
        agent.update_rollouts_,
    )


def _map(fn, jobs, n_jobs):
    if n_jobs is None or n_jobs <= 1 or len(jobs) <= 1:
        return [fn(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as ex:
        return list(ex.map(fn, *zip(*jobs)))


def _record(config, results):
    returns, seconds, traj, div, passes, rolls = zip(*results)
    if any(div):
        log.warning("%s/%s diverged on seeds %s", config.method, config.stabilizer,
                    [s for s, d in zip(config.seeds, div) if d])
    return RunRecord(
        config.method,
        config.stabilizer,
        config.seeds,
        np.vstack(returns),
        np.vstack(seconds),
        list(traj),
        list(div),
        np.vstack(passes),
        np.vstack(rolls),
    )


def run_experiment(config, n_jobs=1):
    """Train one (method, stabilizer) variant on every seed."""
    params = config.agent_params()
    jobs = [(params, config.env, s) for s in config.seeds]
    return _record(config, _map(_fit_one, jobs, n_jobs))


def run_grid(base, n_jobs=1, methods=METHODS, stabilizers=STABILIZERS):
    """All method x stabilizer combinations; keys are ``(method, stabilizer)``."""
    configs = [dataclasses.replace(base, method=m, stabilizer=s) for m in methods for s in stabilizers]
    jobs = [(c.agent_params(), c.env, seed) for c in configs for seed in c.seeds]
    results = _map(_fit_one, jobs, n_jobs)
    out, i = {}, 0
    for c in configs:
        n = len(c.seeds)
        out[(c.method, c.stabilizer)] = _record(c, results[i : i + n])
        i += n
    return out


def summary_table(records):
    """Rows ``{"model", "mean", "std"}`` of final-episode return."""
    return [{"model": r.model, "mean": r.final_mean, "std": r.final_std} for r in _as_list(records)]


def _as_list(records):
    if isinstance(records, RunRecord):
        return [records]
    if isinstance(records, dict):
        return list(records.values())
    return list(records)


def _fmt(x):
    return repr(float(x))


def emit_outputs(records, out_dir):
    """Write curves.csv, summary.csv, table1.csv, efficiency.csv and SVG plots."""
    records = _as_list(records)
    if not records:
        raise ValueError("no run records to write")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir!r}: {exc}") from exc
    if not os.access(out_dir, os.W_OK):
        raise PermissionError(f"output directory {out_dir!r} is not writable")

    paths = {}
    paths["curves"] = os.path.join(out_dir, "curves.csv")
    with open(paths["curves"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "stabilizer", "seed", "episode", "return"])
        for r in records:
            for seed, rets in zip(r.seeds, r.returns):
                for ep, ret in enumerate(rets, start=1):
                    w.writerow([r.method, r.stabilizer, seed, ep, _fmt(ret)])

    paths["summary"] = os.path.join(out_dir, "summary.csv")
    with open(paths["summary"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "stabilizer", "final_mean", "final_std", "episodes_to_200"])
        for r in records:
            w.writerow([r.method, r.stabilizer, _fmt(r.final_mean), _fmt(r.final_std), _fmt(r.episodes_to_threshold(200))])

    paths["table1"] = os.path.join(out_dir, "table1.csv")
    with open(paths["table1"], "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["model", "mean", "std"])
        w.writeheader()
        for row in summary_table(records):
            w.writerow({"model": row["model"], "mean": f"{row['mean']:.2f}", "std": f"{row['std']:.2f}"})

    # both sample-efficiency axes: optimizer updates (episodes) and rollouts consumed
    paths["efficiency"] = os.path.join(out_dir, "efficiency.csv")
    with open(paths["efficiency"], "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["method", "stabilizer", "trajectories_per_update", "diverged_seeds", "mean_seconds_per_episode"]
        for R in THRESHOLDS:
            header += [f"episodes_to_{R}", f"trajectories_to_{R}"]
        w.writerow(header)
        for r in records:
            k = r.trajectories_per_update
            row = [r.method, r.stabilizer, k, sum(r.diverged), _fmt(r.seconds.mean())]
            for R in THRESHOLDS:
                e = r.episodes_to_threshold(R)
                row += [_fmt(e), _fmt(e * k)]
            w.writerow(row)

    paths.update(_plot(records, out_dir))
    return paths


def _plot(records, out_dir):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "pgsom"
    out = {}

    def band(ax, r, label):
        x = np.arange(1, r.returns.shape[1] + 1)
        mu, sd = r.returns.mean(axis=0), r.returns.std(axis=0)
        ax.plot(x, mu, label=label, lw=1.2)
        ax.fill_between(x, mu - sd, mu + sd, alpha=0.2)

    for method in dict.fromkeys(r.method for r in records):
        fig, ax = plt.subplots(figsize=(6, 4))
        for r in records:
            if r.method == method:
                band(ax, r, r.stabilizer)
        ax.set(xlabel="episode", ylabel="return", title=MODEL_NAMES.get(method, method))
        ax.legend(loc="upper left", fontsize=8)
        path = os.path.join(out_dir, f"curves_{method}.svg")
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        out[f"curves_{method}"] = path

    base = [r for r in records if r.stabilizer == "none"]
    if len(base) > 1:
        fig, ax = plt.subplots(figsize=(6, 4))
        for r in base:
            band(ax, r, MODEL_NAMES.get(r.method, r.method))
        ax.axhline(200, color="grey", lw=0.8, ls="--")
        ax.set(xlabel="episode", ylabel="return", title="mean ± 1 std across seeds")
        ax.legend(loc="upper left", fontsize=8)
        path = os.path.join(out_dir, "comparison.svg")
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        out["comparison"] = path

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(range(len(records)), [r.final_mean for r in records], yerr=[r.final_std for r in records], capsize=3)
    ax.set_xticks(range(len(records)), [r.model for r in records], rotation=60, ha="right", fontsize=7)
    ax.set(ylabel="final-episode return")
    fig.tight_layout()
    path = os.path.join(out_dir, "final_returns.svg")
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    out["final_returns"] = path
    return out


def run_audit(out_path=None, **kwargs):
    """Run the oracle checks; returns the report dict and optionally writes it as JSON."""
    checks = oracle.audit(**kwargs)
    report = {"passed": all(c["passed"] for c in checks), "checks": checks}
    if out_path is not None:
        os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
        with open(out_path, "w") as fh:
            json.dump(report, fh, indent=2)
    return report
