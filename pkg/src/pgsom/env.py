"""Episodic environments: the cart-pole benchmark and enumerable tabular MDPs.

Both environment classes share one small contract::

    obs = env.reset(rng)
    obs, reward, done = env.step(action, rng)

with ``env.obs_dim`` and ``env.n_actions`` fixed per instance.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from ._validation import ContractError, check_rng

# classic-control constants
GRAVITY = 9.8
CART_MASS = 1.0
POLE_MASS = 0.1
TOTAL_MASS = CART_MASS + POLE_MASS
POLE_HALF_LENGTH = 0.5
POLE_MASS_LENGTH = POLE_MASS * POLE_HALF_LENGTH
FORCE_MAG = 10.0
TAU = 0.02
X_THRESHOLD = 2.4
THETA_THRESHOLD = 12 * math.pi / 180
MAX_EPISODE_STEPS = 500

PUSH_LEFT, PUSH_RIGHT = 0, 1


@dataclass(frozen=True)
class CartPoleState:
    x: float
    x_dot: float
    theta: float
    theta_dot: float
    steps_elapsed: int = 0

    @property
    def out_of_bounds(self):
        return abs(self.x) > X_THRESHOLD or abs(self.theta) > THETA_THRESHOLD

    @property
    def terminal(self):
        return self.out_of_bounds or self.steps_elapsed >= MAX_EPISODE_STEPS

    def observation(self):
        return np.array([self.x, self.x_dot, self.theta, self.theta_dot])


def cartpole_reset(rng=None):
    rng = check_rng(rng)
    x, x_dot, theta, theta_dot = rng.uniform(-0.05, 0.05, size=4)
    return CartPoleState(float(x), float(x_dot), float(theta), float(theta_dot), 0)


def cartpole_step(state, action):
    """Advance one semi-implicit Euler step; returns ``(state, reward, done)``."""
    if state.terminal:
        raise ContractError("cannot step a terminal cart-pole state")
    if action not in (PUSH_LEFT, PUSH_RIGHT):
        raise ContractError(f"action must be 0 or 1, got {action!r}")

    force = FORCE_MAG if action == PUSH_RIGHT else -FORCE_MAG
    cos_t = math.cos(state.theta)
    sin_t = math.sin(state.theta)
    temp = (force + POLE_MASS_LENGTH * state.theta_dot**2 * sin_t) / TOTAL_MASS
    theta_acc = (GRAVITY * sin_t - cos_t * temp) / (
        POLE_HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos_t**2 / TOTAL_MASS)
    )
    x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos_t / TOTAL_MASS

    # velocities first, then positions
    x_dot = state.x_dot + TAU * x_acc
    x = state.x + TAU * x_dot
    theta_dot = state.theta_dot + TAU * theta_acc
    theta = state.theta + TAU * theta_dot

    nxt = CartPoleState(x, x_dot, theta, theta_dot, state.steps_elapsed + 1)
    return nxt, 1.0, nxt.terminal


class CartPoleEnv:
    obs_dim = 4
    n_actions = 2

    def __init__(self):
        self.state = None

    def reset(self, rng=None):
        self.state = cartpole_reset(rng)
        return self.state.observation()

    def step(self, action, rng=None):
        self.state, reward, done = cartpole_step(self.state, int(action))
        return self.state.observation(), reward, done


@dataclass
class TabularMDP:
    """Finite-horizon MDP small enough to enumerate.

    ``transition[s, a, s']`` are probabilities, ``reward[s, a]`` is the
    per-step reward and ``horizon`` is the number of actions per episode.
    """

    transition: np.ndarray
    reward: np.ndarray
    initial_dist: np.ndarray
    horizon: int
    discount: float = 1.0

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.reward = np.asarray(self.reward, dtype=np.float64)
        self.initial_dist = np.asarray(self.initial_dist, dtype=np.float64)
        self.horizon = int(self.horizon)
        self.discount = float(self.discount)
        self.validate()

    @property
    def n_states(self):
        return self.transition.shape[0]

    @property
    def n_actions(self):
        return self.transition.shape[1]

    def validate(self):
        P = self.transition
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ContractError(f"transition must have shape (S, A, S), got {P.shape}")
        if self.reward.shape != P.shape[:2]:
            raise ContractError(f"reward must have shape {P.shape[:2]}, got {self.reward.shape}")
        if self.initial_dist.shape != (P.shape[0],):
            raise ContractError("initial_dist length must equal n_states")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1.0)) > 1e-12:
            raise ContractError("every transition row must be non-negative and sum to 1")
        if np.any(self.initial_dist < 0) or abs(self.initial_dist.sum() - 1.0) > 1e-12:
            raise ContractError("initial_dist must be non-negative and sum to 1")
        if not np.all(np.isfinite(self.reward)):
            raise ContractError("rewards must be finite")
        if self.horizon < 1:
            raise ContractError("horizon must be >= 1")
        if not 0.0 < self.discount <= 1.0:
            raise ContractError("discount must lie in (0, 1]")

    def to_dict(self):
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "initial_dist": self.initial_dist.tolist(),
            "horizon": self.horizon,
            "discount": self.discount,
        }

    @classmethod
    def from_dict(cls, doc):
        mdp = cls(
            transition=doc["transition"],
            reward=doc["reward"],
            initial_dist=doc["initial_dist"],
            horizon=doc["horizon"],
            discount=doc.get("discount", 1.0),
        )
        if "n_states" in doc and doc["n_states"] != mdp.n_states:
            raise ContractError("n_states disagrees with transition shape")
        if "n_actions" in doc and doc["n_actions"] != mdp.n_actions:
            raise ContractError("n_actions disagrees with transition shape")
        return mdp

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def random_mdp(n_states=2, n_actions=2, horizon=3, discount=0.9, rng=None):
    """Dense random instance (every transition stochastic), rewards in [0, 1)."""
    rng = check_rng(rng)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    P /= P.sum(axis=2, keepdims=True)
    rho = rng.dirichlet(np.ones(n_states))
    rho /= rho.sum()
    return TabularMDP(P, rng.random((n_states, n_actions)), rho, horizon, discount)


def _draw(p, rng):
    idx = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
    return min(idx, len(p) - 1)


def mdp_reset(mdp, rng=None):
    return _draw(mdp.initial_dist, check_rng(rng))


def mdp_step(mdp, s, a, rng=None, t=0):
    """Sample ``s' ~ P[s, a]``; ``t`` is the 0-based index of this transition."""
    if not (0 <= s < mdp.n_states and 0 <= a < mdp.n_actions):
        raise ContractError(f"state/action ({s}, {a}) out of range")
    s_next = _draw(mdp.transition[s, a], check_rng(rng))
    return s_next, float(mdp.reward[s, a]), t + 1 >= mdp.horizon


def one_hot(s, n):
    v = np.zeros(n)
    v[s] = 1.0
    return v


class TabularEnv:
    """Episodic wrapper around a :class:`TabularMDP` with one-hot observations."""

    def __init__(self, mdp):
        self.mdp = mdp
        self.obs_dim = mdp.n_states
        self.n_actions = mdp.n_actions
        self.state = None
        self.t = 0

    def reset(self, rng=None):
        self.state = mdp_reset(self.mdp, rng)
        self.t = 0
        return one_hot(self.state, self.obs_dim)

    def step(self, action, rng=None):
        if self.t >= self.mdp.horizon:
            raise ContractError("episode already finished")
        self.state, reward, done = mdp_step(self.mdp, self.state, int(action), rng, self.t)
        self.t += 1
        return one_hot(self.state, self.obs_dim), reward, done


def make_env(name):
    """``"cartpole"`` or ``"mdp:<path-to-json>"``."""
    if name == "cartpole":
        return CartPoleEnv()
    if name.startswith("mdp:"):
        return TabularEnv(TabularMDP.from_json(name[4:]))
    raise ValueError(f"unknown environment {name!r}")
