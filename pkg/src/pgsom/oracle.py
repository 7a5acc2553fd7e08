"""Ground truth on enumerable tabular MDPs.

Exact returns come from backward induction; trajectory expectations come
from full enumeration with exact path probabilities. Finite differences of
the exact return provide derivative references that share no code with the
estimators under test.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._validation import ContractError, check_rng
from .env import TabularMDP, random_mdp
from .estimator import EstimatorConfig, Trajectory, estimate, psi_derivatives, score
from .policy import PolicySpec, action_distribution

ENUMERATION_CAP = 10**6


class EnumerationTooLarge(ContractError):
    pass


@dataclass
class EnumeratedTrajectory:
    states: np.ndarray  # (H + 1,) including the terminal state
    actions: np.ndarray  # (H,)
    rewards: np.ndarray  # (H,)
    probability: float
    return_weights: np.ndarray  # from-start returns-to-go

    def to_trajectory(self, n_states):
        obs = np.eye(n_states)[self.states[:-1]]
        return Trajectory(obs, self.actions, self.rewards)


class ValueTables(NamedTuple):
    V: np.ndarray  # (H + 1, S); V[H] = 0
    Q: np.ndarray  # (H, S, A)
    occupancy: np.ndarray  # (S,) sum_t gamma^t Pr(s_t = s)
    state_marginals: np.ndarray  # (H, S)


def policy_table(mdp, spec, theta):
    """``pi[s, a]`` for one-hot state observations."""
    if spec.obs_dim != mdp.n_states or spec.n_actions != mdp.n_actions:
        raise ContractError("policy spec does not match the MDP (one-hot observations)")
    return action_distribution(spec, theta, np.eye(mdp.n_states))


def enumeration_size(mdp):
    return (mdp.n_states * mdp.n_actions) ** mdp.horizon


def enumerate_trajectories(mdp, spec, theta, cap=ENUMERATION_CAP):
    """Every positive-probability trajectory exactly once, with p(tau)."""
    size = enumeration_size(mdp)
    if size > cap:
        raise EnumerationTooLarge(
            f"(n_states*n_actions)^H = ({mdp.n_states}*{mdp.n_actions})^{mdp.horizon} = {size} "
            f"exceeds the enumeration cap {cap}"
        )
    pi = policy_table(mdp, spec, theta)
    S, A, H = mdp.n_states, mdp.n_actions, mdp.horizon
    # prefixes: (states, actions, prob)
    prefixes = [((s,), (), p) for s, p in enumerate(mdp.initial_dist) if p > 0]
    for _ in range(H):
        nxt = []
        for states, actions, prob in prefixes:
            s = states[-1]
            for a in range(A):
                pa = prob * pi[s, a]
                if pa <= 0:
                    continue
                for s2 in range(S):
                    p = pa * mdp.transition[s, a, s2]
                    if p > 0:
                        nxt.append((states + (s2,), actions + (a,), p))
        prefixes = nxt

    disc = mdp.discount ** np.arange(H)
    out = []
    for states, actions, prob in prefixes:
        st = np.array(states, dtype=np.intp)
        ac = np.array(actions, dtype=np.intp)
        r = mdp.reward[st[:-1], ac]
        weights = np.cumsum((disc * r)[::-1])[::-1]
        out.append(EnumeratedTrajectory(st, ac, r, prob, weights))
    return out


def value_tables(mdp, spec, theta):
    pi = policy_table(mdp, spec, theta)
    S, H, gamma = mdp.n_states, mdp.horizon, mdp.discount
    V = np.zeros((H + 1, S))
    Q = np.zeros((H, S, mdp.n_actions))
    for t in range(H - 1, -1, -1):
        Q[t] = mdp.reward + gamma * mdp.transition @ V[t + 1]
        V[t] = (pi * Q[t]).sum(axis=1)
    marg = np.zeros((H, S))
    marg[0] = mdp.initial_dist
    for t in range(1, H):
        # Pr(s_t = s') = sum_{s,a} Pr(s_{t-1}=s) pi(a|s) P(s'|s,a)
        marg[t] = np.einsum("s,sa,sau->u", marg[t - 1], pi, mdp.transition)
    occupancy = (gamma ** np.arange(H)) @ marg
    return ValueTables(V, Q, occupancy, marg)


def exact_return(mdp, spec, theta):
    """Expected discounted return by backward induction (no enumeration cap)."""
    return float(mdp.initial_dist @ value_tables(mdp, spec, theta).V[0])


def occupancy_return(mdp, spec, theta):
    """The same quantity written as sum_s d(s) sum_a pi(a|s) r(s, a)."""
    pi = policy_table(mdp, spec, theta)
    d = value_tables(mdp, spec, theta).occupancy
    return float(d @ (pi * mdp.reward).sum(axis=1))


def enumerated_return(mdp, spec, theta):
    return float(sum(tr.probability * tr.return_weights[0] for tr in enumerate_trajectories(mdp, spec, theta)))


def fd_gradient(mdp, spec, theta, step=1e-5):
    if step <= 0:
        raise ContractError("step must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    out = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = step
        out[i] = (exact_return(mdp, spec, theta + e) - exact_return(mdp, spec, theta - e)) / (2 * step)
    return out


def fd_hessian_diag(mdp, spec, theta, step=1e-3):
    if step <= 0:
        raise ContractError("step must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    j0 = exact_return(mdp, spec, theta)
    out = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = step
        out[i] = (exact_return(mdp, spec, theta + e) - 2 * j0 + exact_return(mdp, spec, theta - e)) / step**2
    return out


def estimator_expectation(mdp, spec, theta, estimator, cap=ENUMERATION_CAP):
    """sum_tau p(tau) * estimator(trajectory)."""
    total = None
    for tr in enumerate_trajectories(mdp, spec, theta, cap):
        val = tr.probability * np.asarray(estimator(tr.to_trajectory(mdp.n_states)), dtype=np.float64)
        total = val if total is None else total + val
    return total


def oracle_config(mdp, **kw):
    """Estimator settings under which the enumerated expectations are exact."""
    return EstimatorConfig(discount=mdp.discount, convention="from-start", **kw)


def grad_psi_fn(spec, theta, config, baseline=0.0):
    return lambda traj: psi_derivatives(traj, spec, theta, config, baseline, hessian=False)[1]


def hess_integrand_fn(spec, theta, config, baseline=0.0):
    return lambda traj: estimate(traj, spec, theta, config, baseline).h


def score_fn(spec, theta):
    return lambda traj: score(traj, spec, theta)


# ---------------------------------------------------------------------------
# audit suite


def default_fixtures(seed=2024):
    """2 states x 2 actions x H=3 instances, one per policy kind."""
    rng = np.random.default_rng(seed)
    mdp = random_mdp(2, 2, horizon=3, discount=0.9, rng=rng)
    return {
        "tiny-softmax": (mdp, PolicySpec("softmax-linear", 2, 2)),
        "tiny-mlp": (mdp, PolicySpec("mlp-1h", 2, 2, hidden=3)),
    }


def _check(name, err, tol, **extra):
    return {
        "name": name,
        "max_abs_error": float(err),
        "tolerance": tol,
        "passed": bool(err < tol) if tol is not None else True,
        **extra,
    }


def audit(fixtures=None, n_theta=20, seed=0, hess_estimator=None, fd_grad_step=1e-5, fd_hess_step=1e-3):
    """Run every oracle check; returns a list of check dicts.

    ``hess_estimator(spec, theta, config)`` may replace the diagonal-Hessian
    integrand (fault injection in tests).
    """
    fixtures = default_fixtures() if fixtures is None else fixtures
    rng = check_rng(seed)
    hess_estimator = hess_estimator or hess_integrand_fn
    checks = []
    for fx, (mdp, spec) in fixtures.items():
        config = oracle_config(mdp)
        errs = {k: 0.0 for k in ("prob", "ret", "occ", "vq", "adv", "score", "grad", "hess", "base", "kernel")}
        signs = []
        other = random_mdp(mdp.n_states, mdp.n_actions, mdp.horizon, mdp.discount, rng)
        for _ in range(n_theta):
            theta = rng.normal(size=spec.n_params)
            trajs = enumerate_trajectories(mdp, spec, theta)
            errs["prob"] = max(errs["prob"], abs(sum(t.probability for t in trajs) - 1.0))
            J = exact_return(mdp, spec, theta)
            J_enum = sum(t.probability * t.return_weights[0] for t in trajs)
            errs["ret"] = max(errs["ret"], abs(J - J_enum))
            errs["occ"] = max(errs["occ"], abs(J - occupancy_return(mdp, spec, theta)))

            pi = policy_table(mdp, spec, theta)
            vt = value_tables(mdp, spec, theta)
            errs["vq"] = max(errs["vq"], np.abs(vt.V[:-1] - (pi[None] * vt.Q).sum(-1)).max())
            adv = vt.Q - vt.V[:-1, :, None]
            errs["adv"] = max(errs["adv"], np.abs((pi[None] * adv).sum(-1)).max())

            e_score = estimator_expectation(mdp, spec, theta, score_fn(spec, theta))
            errs["score"] = max(errs["score"], np.abs(e_score).max())
            e_grad = estimator_expectation(mdp, spec, theta, grad_psi_fn(spec, theta, config))
            errs["grad"] = max(errs["grad"], np.abs(e_grad - fd_gradient(mdp, spec, theta, fd_grad_step)).max())
            e_hess = estimator_expectation(mdp, spec, theta, hess_estimator(spec, theta, config))
            errs["hess"] = max(errs["hess"], np.abs(e_hess - fd_hessian_diag(mdp, spec, theta, fd_hess_step)).max())
            signs.append(np.sign(e_hess).astype(int).tolist())

            b = float(rng.normal(scale=5.0))
            e_base = estimator_expectation(mdp, spec, theta, grad_psi_fn(spec, theta, config, baseline=b))
            errs["base"] = max(errs["base"], np.abs(e_base - e_grad).max())

            # identical trajectories scored under two different kernels
            swapped = TabularMDP(other.transition, mdp.reward, mdp.initial_dist, mdp.horizon, mdp.discount)
            by_path = {(t.states.tobytes(), t.actions.tobytes()): t for t in enumerate_trajectories(swapped, spec, theta)}
            for t in trajs:
                twin = by_path.get((t.states.tobytes(), t.actions.tobytes()))
                if twin is None:
                    continue
                s1 = score(t.to_trajectory(mdp.n_states), spec, theta)
                s2 = score(twin.to_trajectory(swapped.n_states), spec, theta)
                errs["kernel"] = max(errs["kernel"], np.abs(s1 - s2).max())

        checks += [
            _check(f"{fx}/enumeration_probability_sum", errs["prob"], 1e-10),
            _check(f"{fx}/return_backward_vs_enumeration", errs["ret"], 1e-10),
            _check(f"{fx}/occupancy_decomposition", errs["occ"], 1e-10),
            _check(f"{fx}/value_q_consistency", errs["vq"], 1e-12),
            _check(f"{fx}/advantage_centering", errs["adv"], 1e-12),
            _check(f"{fx}/expected_score_zero", errs["score"], 1e-10),
            _check(f"{fx}/gradient_unbiasedness", errs["grad"], 1e-6),
            _check(f"{fx}/hessian_diag_unbiasedness", errs["hess"], 1e-5),
            _check(f"{fx}/baseline_invariance", errs["base"], 1e-8),
            _check(f"{fx}/kernel_independence", errs["kernel"], 1e-15),
            _check(f"{fx}/hessian_diag_sign_pattern", 0.0, None, sign_patterns=signs),
        ]
    return checks
