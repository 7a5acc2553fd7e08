"""Categorical policies with exact log-probability derivatives.

Two parameterisations are supported:

``softmax-linear``
    logits = x @ W with ``W`` of shape (obs_dim, n_actions). Gradient and
    Hessian diagonal of ``ln pi`` are closed form.
``mlp-1h``
    logits = tanh(x @ W1 + b1) @ W2 + b2. The gradient is accumulated in
    reverse mode; the Hessian diagonal comes from pushing every basis
    tangent through that reverse pass in forward mode (one
    Hessian-vector product per coordinate).

The flat parameter vector stores blocks in the order above, each block
row-major.
"""

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._validation import ContractError, check_finite, check_rng

LOG_PROB_FLOOR = 1e-12
KINDS = ("softmax-linear", "mlp-1h")


@dataclass(frozen=True)
class PolicySpec:
    kind: str
    obs_dim: int
    n_actions: int
    hidden: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.obs_dim < 1 or self.n_actions < 2:
            raise ContractError("need obs_dim >= 1 and n_actions >= 2")
        if self.kind == "mlp-1h" and self.hidden < 1:
            raise ContractError("mlp-1h needs hidden >= 1")

    @property
    def n_params(self):
        if self.kind == "softmax-linear":
            return self.obs_dim * self.n_actions
        d, h, a = self.obs_dim, self.hidden, self.n_actions
        return d * h + h + h * a + a


class LogProbDerivatives(NamedTuple):
    value: np.ndarray
    grad: np.ndarray
    hess_diag: np.ndarray


def init_params(spec, rng=None, scale=0.01):
    """Uniform draws in [-scale, scale]."""
    return check_rng(rng).uniform(-scale, scale, size=spec.n_params)


def check_params(spec, theta):
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (spec.n_params,):
        raise ContractError(f"theta must have shape ({spec.n_params},), got {theta.shape}")
    return check_finite(theta, "theta")


def _as_batch(spec, obs):
    obs = np.asarray(obs, dtype=np.float64)
    single = obs.ndim == 1
    obs = np.atleast_2d(obs)
    if obs.ndim != 2 or obs.shape[1] != spec.obs_dim:
        raise ContractError(f"observation dimension must be {spec.obs_dim}, got {obs.shape}")
    return obs, single


def _unpack_mlp(spec, theta):
    d, h, a = spec.obs_dim, spec.hidden, spec.n_actions
    i = 0
    W1 = theta[i : i + d * h].reshape(d, h)
    i += d * h
    b1 = theta[i : i + h]
    i += h
    W2 = theta[i : i + h * a].reshape(h, a)
    i += h * a
    b2 = theta[i : i + a]
    return W1, b1, W2, b2


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _forward(spec, theta, X):
    """Logits for a batch; for the MLP also returns hidden activations."""
    if spec.kind == "softmax-linear":
        return X @ theta.reshape(spec.obs_dim, spec.n_actions), None
    W1, b1, W2, b2 = _unpack_mlp(spec, theta)
    Hh = np.tanh(X @ W1 + b1)
    return Hh @ W2 + b2, Hh


def _backward(spec, theta, X, Hh, dZ):
    """Pull a logit cotangent ``dZ`` (T, A) back to parameters (T, D)."""
    T = X.shape[0]
    if spec.kind == "softmax-linear":
        return (X[:, :, None] * dZ[:, None, :]).reshape(T, -1)
    W1, b1, W2, b2 = _unpack_mlp(spec, theta)
    gW2 = Hh[:, :, None] * dZ[:, None, :]
    dU = (dZ @ W2.T) * (1.0 - Hh**2)
    gW1 = X[:, :, None] * dU[:, None, :]
    return np.concatenate([gW1.reshape(T, -1), dU, gW2.reshape(T, -1), dZ], axis=1)


def action_distribution(spec, theta, obs):
    X, single = _as_batch(spec, obs)
    Z, _ = _forward(spec, np.asarray(theta, dtype=np.float64), X)
    P = _softmax(Z)
    return P[0] if single else P


def sample_action(spec, theta, obs, rng):
    p = action_distribution(spec, theta, obs)
    idx = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
    return min(idx, spec.n_actions - 1)


def _mlp_hess_diag(spec, theta, X, Hh, P, dZ):
    """Diagonal of the Hessian of ``ln pi`` for the MLP.

    Forward-mode tangents along all D basis directions are pushed through
    the reverse pass; only the matching coordinate of each output tangent
    is kept.
    """
    d, nh, na = spec.obs_dim, spec.hidden, spec.n_actions
    D = spec.n_params
    W1, b1, W2, b2 = _unpack_mlp(spec, theta)
    V = np.eye(D)
    vW1, vb1, vW2, vb2 = (
        V[:, : d * nh].reshape(D, d, nh),
        V[:, d * nh : d * nh + nh],
        V[:, d * nh + nh : d * nh + nh + nh * na].reshape(D, nh, na),
        V[:, D - na :],
    )
    act_grad = 1.0 - Hh**2  # (T, nh)

    # forward tangents
    dot_U = np.einsum("ti,kih->tkh", X, vW1) + vb1[None]
    dot_H = act_grad[:, None, :] * dot_U
    dot_Z = np.einsum("tkh,ha->tka", dot_H, W2) + np.einsum("th,kha->tka", Hh, vW2) + vb2[None]
    dot_P = P[:, None, :] * (dot_Z - np.einsum("ta,tka->tk", P, dot_Z)[:, :, None])

    # tangents of the reverse pass
    dot_dZ = -dot_P
    dH = dZ @ W2.T
    dot_dH = np.einsum("kha,ta->tkh", vW2, dZ) + np.einsum("tka,ha->tkh", dot_dZ, W2)
    dot_dU = dot_dH * act_grad[:, None, :] - 2.0 * (Hh * dH)[:, None, :] * dot_H

    k = np.arange(D)
    out = np.empty((X.shape[0], D))
    # W1 block: coordinate (i, h)
    sl = k[: d * nh]
    i_idx, h_idx = np.divmod(sl, nh)
    out[:, sl] = X[:, i_idx] * dot_dU[:, sl, h_idx]
    # b1 block
    sl = k[d * nh : d * nh + nh]
    out[:, sl] = dot_dU[:, sl, sl - d * nh]
    # W2 block: coordinate (h, a)
    sl = k[d * nh + nh : D - na]
    h_idx, a_idx = np.divmod(sl - (d * nh + nh), na)
    out[:, sl] = dot_H[:, sl, h_idx] * dZ[:, a_idx] + Hh[:, h_idx] * dot_dZ[:, sl, a_idx]
    # b2 block
    sl = k[D - na :]
    out[:, sl] = dot_dZ[:, sl, sl - (D - na)]
    return out


def log_prob_derivatives_batch(spec, theta, obs, actions, hessian=True):
    """Value, gradient and (optionally) Hessian diagonal of ``ln pi(a|x)``.

    Returns arrays with a leading batch axis; ``hess_diag`` is ``None``
    when ``hessian`` is false.
    """
    theta = np.asarray(theta, dtype=np.float64)
    X, _ = _as_batch(spec, obs)
    actions = np.asarray(actions, dtype=np.intp).reshape(-1)
    if actions.shape[0] != X.shape[0]:
        raise ContractError("one action per observation required")
    if np.any(actions < 0) or np.any(actions >= spec.n_actions):
        raise ContractError("action index out of range")

    T = X.shape[0]
    Z, Hh = _forward(spec, theta, X)
    logP = _log_softmax(Z)
    P = np.exp(logP)
    value = np.maximum(logP[np.arange(T), actions], np.log(LOG_PROB_FLOOR))
    dZ = -P
    dZ[np.arange(T), actions] += 1.0
    grad = _backward(spec, theta, X, Hh, dZ)
    if not hessian:
        return LogProbDerivatives(value, grad, None)

    if spec.kind == "softmax-linear":
        # d^2 ln pi / dW[i,b]^2 = -x_i^2 pi_b (1 - pi_b), independent of the action
        hd = -(X[:, :, None] ** 2) * (P * (1.0 - P))[:, None, :]
        hess = hd.reshape(T, -1)
    else:
        hess = _mlp_hess_diag(spec, theta, X, Hh, P, dZ)
    return LogProbDerivatives(value, grad, hess)


def log_prob_derivatives(spec, theta, obs, action, hessian=True):
    X, single = _as_batch(spec, obs)
    if not single:
        raise ContractError("log_prob_derivatives takes one observation; use the batch variant")
    v, g, h = log_prob_derivatives_batch(spec, theta, X, [action], hessian)
    return LogProbDerivatives(float(v[0]), g[0], None if h is None else h[0])


def _entropy_terms(P):
    # x ln x -> 0 as x -> 0
    with np.errstate(divide="ignore", invalid="ignore"):
        logP = np.where(P > 0, np.log(np.where(P > 0, P, 1.0)), 0.0)
    return logP, -(P * logP).sum(axis=-1)


def entropy(spec, theta, obs):
    P = action_distribution(spec, theta, obs)
    return _entropy_terms(P)[1] if P.ndim == 2 else float(_entropy_terms(P)[1])


def entropy_grad(spec, theta, obs):
    """Exact gradient of the policy entropy at each observation."""
    theta = np.asarray(theta, dtype=np.float64)
    X, single = _as_batch(spec, obs)
    Z, Hh = _forward(spec, theta, X)
    P = _softmax(Z)
    logP, H = _entropy_terms(P)
    # dH/dz_b = -pi_b (ln pi_b + H)
    dZ = -P * (logP + H[:, None])
    g = _backward(spec, theta, X, Hh, dZ)
    return g[0] if single else g


def save_params(theta, path):
    """Write a parameter vector as a JSON list (``.json``) or raw little-endian float64 otherwise."""
    theta = np.asarray(theta, dtype=np.float64)
    if str(path).endswith(".json"):
        with open(path, "w") as fh:
            json.dump([float(v) for v in theta], fh)
    else:
        theta.astype("<f8").tofile(path)


def load_params(path):
    if str(path).endswith(".json"):
        with open(path) as fh:
            return np.asarray(json.load(fh), dtype=np.float64)
    return np.fromfile(path, dtype="<f8").astype(np.float64)
