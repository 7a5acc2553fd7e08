"""Estimator-style front end: ``PolicyGradientAgent(...).fit(env)``.

The agent follows the scikit-learn conventions (constructor stores
hyperparameters verbatim, learned state gets a trailing underscore,
``get_params``/``set_params``/``clone`` work) so that experiment grids can
be expressed as parameter sweeps.
"""

import time

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import ContractError, NonFiniteError
from .estimator import (
    BaselineState,
    EstimatorConfig,
    GradEstimate,
    PassCounter,
    baseline_update,
    estimate,
    returns_to_go,
    rollout,
)
from .optim import ClipConfig, RkConfig, SomState, clip_gradient, pgsom_step, rk_round, vanilla_step
from .policy import PolicySpec, action_distribution, init_params

METHODS = ("pg", "hessian", "rk")
STABILIZERS = ("none", "clip", "entropy", "baseline")
BASE_LR = 0.002


def parse_stabilizers(stabilizer):
    """``"clip"`` -> {"clip"}; combinations are written ``"clip+entropy"``."""
    parts = {p.strip() for p in str(stabilizer).split("+")} - {"none", ""}
    unknown = parts - set(STABILIZERS)
    if unknown:
        raise ContractError(f"unknown stabilizer(s) {sorted(unknown)}; choose from {STABILIZERS}")
    return parts


class PolicyGradientAgent(BaseEstimator):
    """REINFORCE-family learner for a categorical policy.

    Parameters
    ----------
    method : {"pg", "hessian", "rk"}
        Plain gradient ascent, curvature-preconditioned momentum, or the
        two-stage lookahead update.
    stabilizer : str
        ``"none"``, ``"clip"``, ``"entropy"``, ``"baseline"`` or a
        ``+``-joined combination.
    lr : float or None
        Step size. ``None`` means 0.002, doubled when clipping is on.
    kappa : float or None
        Lookahead scale for ``rk``; ``None`` uses the effective ``lr``.
    baseline_target : {"mean-return-to-go", "episode-return"}
        What the running-mean baseline tracks: the average per-step weight
        of each trajectory, or its undiscounted total reward.
    """

    def __init__(
        self,
        method="pg",
        stabilizer="none",
        episodes=500,
        lr=None,
        clip_norm=50.0,
        gamma=0.99,
        convention="from-step",
        policy="softmax-linear",
        hidden=16,
        beta1=0.9,
        beta2=0.999,
        epsilon=1e-8,
        alpha=0.5,
        kappa=None,
        entropy_coeff=0.01,
        baseline_decay=0.9,
        baseline_target="mean-return-to-go",
        init_scale=0.01,
        random_state=None,
    ):
        self.method = method
        self.stabilizer = stabilizer
        self.episodes = episodes
        self.lr = lr
        self.clip_norm = clip_norm
        self.gamma = gamma
        self.convention = convention
        self.policy = policy
        self.hidden = hidden
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.alpha = alpha
        self.kappa = kappa
        self.entropy_coeff = entropy_coeff
        self.baseline_decay = baseline_decay
        self.baseline_target = baseline_target
        self.init_scale = init_scale
        self.random_state = random_state

    @property
    def effective_lr(self):
        if self.lr is not None:
            return float(self.lr)
        return 2 * BASE_LR if "clip" in parse_stabilizers(self.stabilizer) else BASE_LR

    def _validate_params(self):
        if self.method not in METHODS:
            raise ContractError(f"method must be one of {METHODS}, got {self.method!r}")
        if int(self.episodes) < 1:
            raise ContractError("episodes must be >= 1")
        if self.effective_lr <= 0:
            raise ContractError("lr must be positive")
        if self.baseline_target not in ("mean-return-to-go", "episode-return"):
            raise ContractError(f"unknown baseline_target {self.baseline_target!r}")
        return parse_stabilizers(self.stabilizer)

    def _estimator_config(self, stabs):
        return EstimatorConfig(
            discount=self.gamma,
            convention=self.convention,
            baseline="running-mean" if "baseline" in stabs else "none",
            entropy_coeff=self.entropy_coeff if "entropy" in stabs else 0.0,
            baseline_decay=self.baseline_decay,
        )

    def fit(self, env, y=None):
        """Train for ``episodes`` updates on ``env``.

        One episode is one optimizer update; ``rk`` draws two rollouts per
        update and the per-episode return is that of the first.
        """
        stabs = self._validate_params()
        rng = np.random.default_rng(self.random_state)
        spec = PolicySpec(
            self.policy, env.obs_dim, env.n_actions, self.hidden if self.policy == "mlp-1h" else 0
        )
        config = self._estimator_config(stabs)
        clip = ClipConfig(self.clip_norm, enabled="clip" in stabs)
        lr = self.effective_lr
        theta = init_params(spec, rng, self.init_scale)
        som = SomState.zeros(spec.n_params, beta1=self.beta1, beta2=self.beta2, eta=lr, epsilon=self.epsilon)
        rk = RkConfig(self.alpha, lr if self.kappa is None else self.kappa, lr)
        self._baseline = BaselineState()

        n = int(self.episodes)
        returns = np.empty(n)
        seconds = np.zeros(n)
        traj_returns = []
        update_passes, update_rollouts = [], []
        self.diverged_ = False
        self.diverged_at_ = None

        for ep in range(n):
            t0 = time.perf_counter()
            counter = PassCounter()
            collected = []
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    if self.method == "rk":
                        sampler = self._sampler(env, spec, config, clip, rng, counter, collected, False)
                        new_theta = rk_round(theta, rk, sampler)
                    else:
                        sampler = self._sampler(env, spec, config, clip, rng, counter, collected, self.method == "hessian")
                        est = sampler(theta)
                        if self.method == "pg":
                            new_theta = vanilla_step(theta, est.g, lr)
                        else:
                            som, new_theta = pgsom_step(som, theta, est)
                if not np.all(np.isfinite(new_theta)):
                    raise NonFiniteError("parameters became non-finite")
            except NonFiniteError:
                new_theta = None
            seconds[ep] = time.perf_counter() - t0
            returns[ep] = collected[0]
            traj_returns.extend(collected)
            update_passes.append(counter.derivative_passes)
            update_rollouts.append(counter.rollouts)
            if new_theta is None:
                # keep the grid complete: hold the last finite return
                returns[ep + 1 :] = returns[ep]
                self.diverged_ = True
                self.diverged_at_ = ep
                break
            theta = new_theta

        self.policy_spec_ = spec
        self.theta_ = theta
        self.returns_ = returns
        self.episode_seconds_ = seconds
        self.trajectory_returns_ = np.asarray(traj_returns)
        self.update_derivative_passes_ = np.asarray(update_passes)
        self.update_rollouts_ = np.asarray(update_rollouts)
        self.n_features_in_ = spec.obs_dim
        return self

    def _sampler(self, env, spec, config, clip, rng, counter, collected, second_order):
        def sample(params):
            traj = rollout(env, spec, params, rng, counter)
            collected.append(traj.total_reward)
            b = self._baseline.running_mean if config.baseline == "running-mean" else 0.0
            est = estimate(traj, spec, params, config, baseline=b, second_order=second_order, counter=counter)
            if config.baseline == "running-mean":
                target = traj
                if self.baseline_target == "mean-return-to-go":
                    # same units as the weights the baseline is subtracted from
                    target = float(np.mean(returns_to_go(traj.rewards, config.discount, config.convention)))
                self._baseline = baseline_update(self._baseline, target, config.baseline_decay)
            g = clip_gradient(est.g, clip)
            h = None if est.h is None else clip_gradient(est.h, clip)
            return GradEstimate(g, h, est.n_trajectories)

        return sample

    def predict_proba(self, X):
        check_is_fitted(self, "theta_")
        X = check_array(X, ensure_2d=True)
        if X.shape[1] != self.n_features_in_:
            raise ContractError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return action_distribution(self.policy_spec_, self.theta_, X)

    def predict(self, X):
        """Most probable action per observation row."""
        return np.argmax(self.predict_proba(X), axis=1)

    def score(self, env, n_episodes=10, random_state=None):
        """Mean undiscounted return of fresh on-policy rollouts."""
        check_is_fitted(self, "theta_")
        rng = np.random.default_rng(random_state)
        rets = [rollout(env, self.policy_spec_, self.theta_, rng).total_reward for _ in range(n_episodes)]
        return float(np.mean(rets))
