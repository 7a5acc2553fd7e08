"""Gradient and diagonal-Hessian estimates of the expected return from rollouts.

A trajectory contributes through the surrogate

    psi(theta) = sum_h w_h * ln pi_theta(a_h | s_h)

where the weights ``w_h`` are returns-to-go (optionally minus a scalar
baseline) and are held constant in theta. Then

    grad J  = E[grad psi]
    diag ∇²J = E[diag ∇²psi + score ⊙ grad psi]

with ``score = sum_h grad ln pi(a_h | s_h)``. Nothing here reads the
environment's transition model.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from ._validation import ContractError
from .policy import entropy_grad, log_prob_derivatives_batch, sample_action

CONVENTIONS = ("from-start", "from-step")
BASELINES = ("none", "running-mean")


@dataclass
class Trajectory:
    obs: np.ndarray  # (T, obs_dim)
    actions: np.ndarray  # (T,)
    rewards: np.ndarray  # (T,)
    log_probs: Optional[np.ndarray] = None  # ln pi at collection parameters

    def __post_init__(self):
        self.obs = np.atleast_2d(np.asarray(self.obs, dtype=np.float64))
        self.actions = np.asarray(self.actions, dtype=np.intp).reshape(-1)
        self.rewards = np.asarray(self.rewards, dtype=np.float64).reshape(-1)
        if len(self.actions) == 0:
            self.obs = self.obs.reshape(0, self.obs.shape[-1] if self.obs.size else 0)
        if not (len(self.obs) == len(self.actions) == len(self.rewards)):
            raise ContractError("obs, actions and rewards must have equal length")
        if not np.all(np.isfinite(self.rewards)):
            raise ContractError("rewards must be finite")

    def __len__(self):
        return len(self.actions)

    @property
    def total_reward(self):
        return float(self.rewards.sum())


class GradEstimate(NamedTuple):
    g: np.ndarray
    h: Optional[np.ndarray]
    n_trajectories: int


@dataclass(frozen=True)
class EstimatorConfig:
    discount: float = 0.99
    convention: str = "from-step"
    baseline: str = "none"
    entropy_coeff: float = 0.0
    baseline_decay: float = 0.9

    def __post_init__(self):
        if self.convention not in CONVENTIONS:
            raise ContractError(f"convention must be one of {CONVENTIONS}")
        if self.baseline not in BASELINES:
            raise ContractError(f"baseline must be one of {BASELINES}")
        if not 0.0 < self.discount <= 1.0:
            raise ContractError("discount must lie in (0, 1]")
        if not (np.isfinite(self.entropy_coeff) and self.entropy_coeff >= 0):
            raise ContractError("entropy_coeff must be finite and >= 0")
        if not 0.0 <= self.baseline_decay < 1.0:
            raise ContractError("baseline_decay must lie in [0, 1)")


@dataclass(frozen=True)
class BaselineState:
    running_mean: float = 0.0
    initialized: bool = False


@dataclass
class PassCounter:
    """Instrumentation: derivative passes over trajectories and rollouts drawn."""

    grad_passes: int = 0
    hess_passes: int = 0
    rollouts: int = 0

    @property
    def derivative_passes(self):
        return self.grad_passes + self.hess_passes


def rollout(env, spec, theta, rng, counter=None):
    """Run one episode under ``pi_theta`` and cache per-step log-probs."""
    obs_list, actions, rewards = [], [], []
    obs = env.reset(rng)
    done = False
    while not done:
        a = sample_action(spec, theta, obs, rng)
        obs_list.append(obs)
        actions.append(a)
        obs, r, done = env.step(a, rng)
        rewards.append(r)
    traj = Trajectory(np.array(obs_list), actions, rewards)
    traj.log_probs = log_prob_derivatives_batch(spec, theta, traj.obs, traj.actions, hessian=False).value
    if counter is not None:
        counter.rollouts += 1
    return traj


def returns_to_go(rewards, discount, convention="from-step"):
    """``from-step``: sum_k gamma^(k-t) r_k; ``from-start``: sum_k gamma^k r_k."""
    if convention not in CONVENTIONS:
        raise ContractError(f"convention must be one of {CONVENTIONS}")
    r = np.asarray(getattr(rewards, "rewards", rewards), dtype=np.float64)
    G = np.empty_like(r)
    acc = 0.0
    for t in range(len(r) - 1, -1, -1):
        acc = r[t] + discount * acc
        G[t] = acc
    if convention == "from-start":
        G *= discount ** np.arange(len(r))
    return G


def _weights(traj, config, baseline):
    return returns_to_go(traj.rewards, config.discount, config.convention) - baseline


def psi_derivatives(traj, spec, theta, config, baseline=0.0, hessian=True, counter=None):
    """``(psi, grad psi, diag ∇²psi)`` for one trajectory; weights are constants."""
    D = spec.n_params
    if len(traj) == 0:
        return 0.0, np.zeros(D), np.zeros(D) if hessian else None
    w = _weights(traj, config, baseline)
    value, grad, hess = log_prob_derivatives_batch(spec, theta, traj.obs, traj.actions, hessian)
    if counter is not None:
        counter.grad_passes += 1
        counter.hess_passes += int(hessian)
    return float(w @ value), w @ grad, None if hess is None else w @ hess


def score(traj, spec, theta):
    """Gradient of the trajectory log-likelihood: the policy terms only."""
    if len(traj) == 0:
        return np.zeros(spec.n_params)
    _, grad, _ = log_prob_derivatives_batch(spec, theta, traj.obs, traj.actions, hessian=False)
    return grad.sum(axis=0)


def _check_batch(trajs):
    if isinstance(trajs, Trajectory):
        trajs = [trajs]
    if len(trajs) == 0:
        raise ContractError("trajectory batch must be non-empty")
    return trajs


def estimate(trajs, spec, theta, config, baseline=0.0, second_order=True, counter=None):
    """Gradient (and optionally diagonal-Hessian) estimate from a batch.

    The score is the column sum of the per-step gradients already computed
    for ``grad psi``, so the second-order estimate costs exactly one extra
    derivative pass per trajectory.
    """
    trajs = _check_batch(trajs)
    D = spec.n_params
    g = np.zeros(D)
    h = np.zeros(D) if second_order else None
    for traj in trajs:
        if len(traj) == 0:
            continue
        w = _weights(traj, config, baseline)
        _, grad, hess = log_prob_derivatives_batch(spec, theta, traj.obs, traj.actions, second_order)
        if counter is not None:
            counter.grad_passes += 1
            counter.hess_passes += int(second_order)
        grad_psi = w @ grad
        g += grad_psi
        if second_order:
            h += w @ hess + grad.sum(axis=0) * grad_psi
    n = len(trajs)
    g /= n
    if second_order:
        h /= n

    if config.entropy_coeff > 0:
        steps = [t.obs for t in trajs if len(t)]
        if steps:
            g = g + config.entropy_coeff * entropy_grad(spec, theta, np.concatenate(steps)).mean(axis=0)
    return GradEstimate(g, h, n)


def grad_estimate(trajs, spec, theta, config, baseline=0.0):
    return estimate(trajs, spec, theta, config, baseline, second_order=False).g


def hess_diag_estimate(trajs, spec, theta, config, baseline=0.0):
    return estimate(trajs, spec, theta, config, baseline, second_order=True).h


def baseline_update(state, traj, decay):
    ret = traj.total_reward if isinstance(traj, Trajectory) else float(traj)
    if not state.initialized:
        return BaselineState(ret, True)
    return BaselineState(decay * state.running_mean + (1.0 - decay) * ret, True)
