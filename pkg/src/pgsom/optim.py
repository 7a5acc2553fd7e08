"""Parameter-update rules for gradient ascent on the expected return."""

from dataclasses import dataclass, replace

import numpy as np

from ._validation import ContractError, NonFiniteError, check_finite


@dataclass(frozen=True)
class SomState:
    """Moment estimates for the curvature-preconditioned momentum update."""

    g: np.ndarray
    h: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eta: float = 0.002
    epsilon: float = 1e-8

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ContractError("beta1 and beta2 must lie in [0, 1)")
        if self.eta <= 0 or self.epsilon < 0:
            raise ContractError("need eta > 0 and epsilon >= 0")

    @classmethod
    def zeros(cls, n_params, **hyper):
        return cls(np.zeros(n_params), np.zeros(n_params), 0, **hyper)


@dataclass(frozen=True)
class RkConfig:
    alpha: float = 0.5
    kappa: float = 0.002
    eta: float = 0.002

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractError("alpha must lie in [0, 1]")
        if self.kappa < 0 or self.eta <= 0:
            raise ContractError("need kappa >= 0 and eta > 0")


@dataclass(frozen=True)
class ClipConfig:
    max_norm: float = 50.0
    enabled: bool = True

    def __post_init__(self):
        if not (np.isfinite(self.max_norm) and self.max_norm > 0):
            raise ContractError("max_norm must be finite and positive")


def pgsom_step(state, theta, est):
    """One bias-corrected, curvature-preconditioned ascent step.

    ``est`` is a :class:`~pgsom.estimator.GradEstimate` (or any object with
    ``g`` and ``h``). The preconditioner is ``1 / (|h_hat| + epsilon)``,
    which is positive, so the displacement never opposes ``g_hat``.
    Returns ``(new_state, new_theta)``.
    """
    g_est = check_finite(est.g, "gradient estimate")
    h_est = check_finite(est.h, "Hessian estimate")
    if g_est.shape != state.g.shape or h_est.shape != state.h.shape:
        raise ContractError("estimate dimension does not match optimizer state")

    b1, b2 = state.beta1, state.beta2
    g = b1 * state.g + (1.0 - b1) * g_est
    h = b2 * state.h + (1.0 - b2) * h_est
    t = state.t + 1
    g_hat = g / (1.0 - b1**t)
    h_hat = h / (1.0 - b2**t)
    theta = np.asarray(theta, dtype=np.float64) + state.eta * (g_hat / (np.abs(h_hat) + state.epsilon))
    return replace(state, g=g, h=h, t=t), theta


def vanilla_step(theta, g, eta):
    theta = np.asarray(theta, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if theta.shape != g.shape:
        raise ContractError("theta and gradient dimensions differ")
    return theta + eta * g


def clip_gradient(g, config):
    """Rescale ``g`` to L2 norm ``max_norm`` when it is larger."""
    g = np.asarray(g, dtype=np.float64)
    if not config.enabled:
        return g
    norm = np.linalg.norm(g)
    if norm <= config.max_norm:
        return g
    scale = config.max_norm / norm
    out = g * scale
    # rounding can leave the result an ulp above the bound; nudge it down
    while np.linalg.norm(out) > config.max_norm:
        scale = np.nextafter(scale, 0.0)
        out = g * scale
    return out


def rk_round(theta, config, sampler):
    """Two-stage update: gradient at ``theta`` and at a lookahead point.

    ``sampler(params)`` must draw fresh on-policy rollouts at ``params`` and
    return an object with a gradient field ``g``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    g1 = sampler(theta).g
    if not np.all(np.isfinite(g1)):
        raise NonFiniteError("stage-1 gradient is non-finite")
    lookahead = theta + config.kappa * g1
    g2 = sampler(lookahead).g
    if not np.all(np.isfinite(g2)):
        raise NonFiniteError("stage-2 gradient is non-finite")
    return theta + config.eta * (config.alpha * g1 + (1.0 - config.alpha) * g2)
