import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pgsom._validation import ContractError, NonFiniteError
from pgsom.estimator import GradEstimate
from pgsom.optim import ClipConfig, RkConfig, SomState, clip_gradient, pgsom_step, rk_round, vanilla_step

finite = st.floats(-1e6, 1e6, allow_nan=False)


def est(g, h):
    return GradEstimate(np.asarray(g, float), np.asarray(h, float), 1)


@pytest.mark.parametrize("beta1", [0.0, 0.5, 0.9, 0.999])
def test_first_step_bias_correction(beta1):
    v = np.array([0.3, -1.7, 2.5])
    s0 = SomState.zeros(3, beta1=beta1)
    s1, _ = pgsom_step(s0, np.zeros(3), est(v, np.ones(3)))
    np.testing.assert_allclose(s1.g / (1 - beta1), v, rtol=1e-15)
    assert s1.t == 1


def test_hand_evaluated_update():
    s0 = SomState.zeros(2, beta1=0.0, beta2=0.0, eta=0.1, epsilon=0.0)
    _, theta = pgsom_step(s0, np.zeros(2), est([2.0, -4.0], [1.0, 2.0]))
    np.testing.assert_allclose(theta, 0.1 * np.array([2.0, -2.0]))


def momentum_reference(theta, grads, beta1, eta):
    m = np.zeros_like(theta)
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1.0 - beta1) * g
        theta = theta + eta * (m / (1.0 - beta1**t))
    return theta


def test_unit_preconditioner_is_momentum_ascent_bitwise():
    rng = np.random.default_rng(0)
    grads = rng.normal(size=(10, 5))
    theta0 = rng.normal(size=5)
    state = SomState.zeros(5, beta1=0.9, beta2=0.0, eta=0.01, epsilon=0.0)
    theta = theta0
    for g in grads:
        state, theta = pgsom_step(state, theta, est(g, np.ones(5)))
    assert np.array_equal(theta, momentum_reference(theta0, grads, 0.9, 0.01))


def test_constant_estimate_bias_correction_exact():
    v = np.array([0.25, -3.0])
    hv = np.array([2.0, 0.5])
    state = SomState.zeros(2, beta1=0.9, beta2=0.999)
    for _ in range(30):
        state, _ = pgsom_step(state, np.zeros(2), est(v, hv))
        t = state.t
        np.testing.assert_allclose(state.g / (1 - 0.9**t), v, rtol=1e-12)
        np.testing.assert_allclose(state.h / (1 - 0.999**t), hv, rtol=1e-12)


@settings(max_examples=200)
@given(g=arrays(float, 4, elements=finite), h=arrays(float, 4, elements=finite))
def test_ascent_direction_preserved(g, h):
    state = SomState.zeros(4, beta1=0.0, beta2=0.0, eta=1.0, epsilon=1e-8)
    _, disp = pgsom_step(state, np.zeros(4), est(g, h))
    assert disp @ g >= 0


@settings(max_examples=100)
@given(
    g=arrays(float, 3, elements=st.floats(-1e3, 1e3)),
    h=arrays(float, 3, elements=st.floats(0.01, 1e3)),
    c=st.floats(0.1, 10.0),
)
def test_preconditioner_homogeneity(g, h, c):
    state = SomState.zeros(3, beta1=0.5, beta2=0.5, eta=1.0, epsilon=0.0)
    _, d1 = pgsom_step(state, np.zeros(3), est(g, h))
    _, dc = pgsom_step(state, np.zeros(3), est(g, c * h))
    np.testing.assert_allclose(dc, d1 / c, rtol=1e-12, atol=1e-300)


def test_non_finite_estimate_rejected():
    state = SomState.zeros(2)
    with pytest.raises(NonFiniteError):
        pgsom_step(state, np.zeros(2), est([np.nan, 0.0], [1.0, 1.0]))
    with pytest.raises(NonFiniteError):
        pgsom_step(state, np.zeros(2), est([0.0, 0.0], [np.inf, 1.0]))
    with pytest.raises(ContractError):
        pgsom_step(state, np.zeros(2), est([0.0], [1.0]))


def test_hyperparameter_validation():
    with pytest.raises(ContractError):
        SomState.zeros(2, beta1=1.0)
    with pytest.raises(ContractError):
        RkConfig(alpha=1.5)
    with pytest.raises(ContractError):
        ClipConfig(max_norm=0.0)


def test_clip_examples():
    cfg = ClipConfig(50.0)
    g = np.array([6.0, 8.0])
    np.testing.assert_array_equal(clip_gradient(g, cfg), g)
    np.testing.assert_allclose(clip_gradient(np.array([60.0, 80.0]), cfg), [30.0, 40.0], rtol=1e-15)
    big = np.array([600.0, 800.0])
    np.testing.assert_array_equal(clip_gradient(big, ClipConfig(50.0, enabled=False)), big)


@settings(max_examples=200)
@given(g=arrays(float, 6, elements=finite))
def test_clip_norm_bound_and_idempotence(g):
    cfg = ClipConfig(50.0)
    c = clip_gradient(g, cfg)
    assert np.linalg.norm(c) <= 50.0
    np.testing.assert_allclose(clip_gradient(c, cfg), c, rtol=1e-15)


def test_vanilla_examples():
    theta = np.array([1.0, 1.0])
    np.testing.assert_array_equal(vanilla_step(theta, np.zeros(2), 0.3), theta)
    np.testing.assert_array_equal(vanilla_step(theta, np.array([2.0, 3.0]), 0.0), theta)
    np.testing.assert_array_equal(vanilla_step(theta, np.array([1.0, -1.0]), 0.5), [1.5, 0.5])


class QuadSampler:
    """Exact gradient of J(theta) = -theta^2 (optionally with a noise stream)."""

    def __init__(self, noise=None):
        self.calls = []
        self.noise = noise

    def __call__(self, theta):
        self.calls.append(np.array(theta))
        g = -2.0 * theta
        if self.noise is not None:
            g = g + self.noise.normal(size=theta.shape)
        return GradEstimate(g, None, 1)


def test_rk_alpha_one_is_vanilla():
    s = QuadSampler()
    theta = np.array([1.5, -0.5])
    out = rk_round(theta, RkConfig(alpha=1.0, kappa=0.1, eta=0.1), s)
    np.testing.assert_array_equal(out, vanilla_step(theta, -2.0 * theta, 0.1))
    assert len(s.calls) == 2


def test_rk_zero_lookahead_averages_two_estimates_at_theta():
    s = QuadSampler(np.random.default_rng(0))
    theta = np.array([1.0, 2.0])
    out = rk_round(theta, RkConfig(alpha=0.3, kappa=0.0, eta=0.1), s)
    np.testing.assert_array_equal(s.calls[0], s.calls[1])
    g1 = -2 * theta + np.random.default_rng(0).normal(size=2)
    rng = np.random.default_rng(0)
    rng.normal(size=2)
    g2 = -2 * theta + rng.normal(size=2)
    np.testing.assert_allclose(out, theta + 0.1 * (0.3 * g1 + 0.7 * g2), rtol=1e-15)


@pytest.mark.parametrize("eta", [0.01, 0.1, 0.25, 0.4])
def test_rk_scalar_quadratic_closed_form(eta):
    # g(x) = -2x, lookahead x(1 - 2 eta): one round multiplies x by 1 - 2 eta + 2 eta^2,
    # the second-order Taylor polynomial of the gradient-flow factor exp(-2 eta)
    x = 0.8
    out = rk_round(np.array([x]), RkConfig(alpha=0.5, kappa=eta, eta=eta), QuadSampler())[0]
    assert out == pytest.approx(x * (1 - 2 * eta + 2 * eta**2), rel=1e-14)
    flow = x * math.exp(-2 * eta)
    assert abs(out - flow) < abs(x * (1 - 2 * eta) - flow)
    assert 0 < out < x


def test_rk_rejects_non_finite():
    with pytest.raises(NonFiniteError):
        rk_round(np.zeros(1), RkConfig(), lambda th: GradEstimate(np.array([np.inf]), None, 1))


def test_pgsom_deterministic():
    rng = np.random.default_rng(1)
    gs, hs = rng.normal(size=(2, 20, 3))

    def run():
        state, theta = SomState.zeros(3), np.zeros(3)
        for g, h in zip(gs, hs):
            state, theta = pgsom_step(state, theta, est(g, h))
        return theta

    assert np.array_equal(run(), run())
