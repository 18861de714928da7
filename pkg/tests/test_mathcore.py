import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gensep.errors import ConfigError, DimensionError, OracleError
from gensep.mathcore import (Rmsprop, RmspropState, activation_grads, activate,
                             clip_inplace, finite_diff_grad, rmsprop_step, softplus)

finite = st.floats(-700, 700, allow_nan=False, allow_infinity=False)


def test_softplus_values():
    assert softplus(0.0) == pytest.approx(np.log(2.0), abs=1e-15)
    assert softplus(800.0) == pytest.approx(800.0)
    big_neg = softplus(-800.0)
    assert big_neg >= 0.0 and big_neg < 1e-300


def test_softplus_no_overflow_warning():
    with np.errstate(over="raise"):
        softplus(np.array([1e4, -1e4, 0.0]))


@given(arrays(np.float64, st.integers(1, 30), elements=finite))
def test_softplus_bounds(x):
    y = softplus(x)
    assert np.all(y >= x)
    assert np.all(y >= 0)
    # strictly positive wherever exp(-|x|) does not underflow
    assert np.all(y[x > -700] > 0)


def test_activation_grad_examples():
    assert activation_grads(np.zeros(1), "softplus")[0] == 0.5
    assert activation_grads(np.zeros(1), "tanh")[0] == 1.0
    x = np.random.default_rng(0).normal(size=(3, 4))
    assert np.array_equal(activation_grads(x, "identity"), np.ones_like(x))
    with pytest.raises(ConfigError):
        activation_grads(x, "swish")


@pytest.mark.parametrize("kind", ["softplus", "tanh", "sigmoid", "identity"])
def test_activation_grads_match_finite_differences(kind):
    rng = np.random.default_rng(1)
    for _ in range(20):
        x = rng.normal(size=(3, 2)) * 3
        fd = np.array([
            (activate(x + 1e-6 * e, kind) - activate(x - 1e-6 * e, kind))[np.unravel_index(i, x.shape)]
            / 2e-6
            for i, e in enumerate(np.eye(x.size).reshape(x.size, *x.shape))
        ]).reshape(x.shape)
        np.testing.assert_allclose(activation_grads(x, kind), fd, rtol=1e-6, atol=1e-9)


def test_relu_grad():
    x = np.array([-1.0, 0.0, 2.0])
    assert list(activation_grads(x, "relu")) == [0.0, 0.0, 1.0]


def test_rmsprop_single_step():
    p = np.zeros(1)
    state = RmspropState.fresh(p, decay=0.9, epsilon=1e-8, learning_rate=0.001)
    rmsprop_step(p, np.ones(1), state, "minimize")
    # mean_sq = 0.1, step = 0.001 / (sqrt(0.1) + 1e-8)
    assert state.mean_sq[0] == pytest.approx(0.1, abs=1e-15)
    assert p[0] == pytest.approx(-0.0031622776, abs=1e-9)


def test_rmsprop_zero_grad_decays_only():
    p = np.array([0.5, -1.0])
    state = RmspropState(np.array([0.4, 0.2]))
    rmsprop_step(p, np.zeros(2), state)
    assert list(p) == [0.5, -1.0]
    np.testing.assert_allclose(state.mean_sq, [0.36, 0.18], rtol=1e-15)


def test_rmsprop_maximize_mirrors_minimize():
    g = np.array([0.3, -2.0, 0.0])
    a, b = np.zeros(3), np.zeros(3)
    sa, sb = RmspropState.fresh(a), RmspropState.fresh(b)
    rmsprop_step(a, g, sa, "minimize")
    rmsprop_step(b, g, sb, "maximize")
    assert np.array_equal(a, -b)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_rmsprop_maximize_f_equals_minimize_neg_f(seed):
    rng = np.random.default_rng(seed)
    target = rng.normal(size=4)
    x1 = rng.normal(size=4)
    x2 = x1.copy()
    s1, s2 = RmspropState.fresh(x1), RmspropState.fresh(x2)
    for _ in range(30):
        # f(x) = -|x - target|^2 maximized vs -f minimized
        rmsprop_step(x1, -2 * (x1 - target), s1, "maximize")
        rmsprop_step(x2, 2 * (x2 - target), s2, "minimize")
    assert np.array_equal(x1, x2)


def test_rmsprop_errors():
    with pytest.raises(DimensionError):
        rmsprop_step(np.zeros(2), np.zeros(3), RmspropState.fresh(np.zeros(2)))
    with pytest.raises(ConfigError):
        RmspropState(np.zeros(1), decay=1.0)
    with pytest.raises(ConfigError):
        RmspropState(np.zeros(1), epsilon=0.0)


def test_rmsprop_group_counts_steps():
    params = {"a": np.zeros(2), "b": np.ones((2, 2))}
    opt = Rmsprop(params)
    opt.step(params, {"a": np.ones(2), "b": np.ones((2, 2))})
    assert opt.steps == 1
    assert np.all(params["a"] < 0) and np.all(params["b"] < 1)


def test_clip_examples():
    p = np.array([0.05, -0.02, 0.005])
    clip_inplace(p, -0.01, 0.01)
    assert list(p) == [0.01, -0.01, 0.005]
    with pytest.raises(ConfigError):
        clip_inplace(p, 0.1, -0.1)


@given(arrays(np.float64, st.integers(1, 50), elements=st.floats(-1, 1)))
def test_clip_idempotent(x):
    once = clip_inplace(x.copy(), -0.01, 0.01)
    twice = clip_inplace(once.copy(), -0.01, 0.01)
    assert once.tobytes() == twice.tobytes()
    assert np.all(np.abs(once) <= 0.01)
    inside = np.abs(x) <= 0.01
    assert np.array_equal(once[inside], x[inside])


def test_finite_diff_examples():
    g = finite_diff_grad(lambda v: float(np.sum(v ** 2)), np.array([1.0, 2.0]))
    np.testing.assert_allclose(g, [2.0, 4.0], rtol=1e-8)
    assert np.all(finite_diff_grad(lambda v: 3.0, np.ones(4)) == 0)
    g = finite_diff_grad(lambda v: float(np.sum(softplus(v))), np.zeros(3))
    np.testing.assert_allclose(g, activation_grads(np.zeros(3), "softplus"), rtol=1e-9)


def test_finite_diff_restores_input_and_flags_nan():
    x = np.array([0.5, 1.5])
    finite_diff_grad(lambda v: float(np.sum(v)), x)
    assert list(x) == [0.5, 1.5]
    with pytest.raises(OracleError):
        finite_diff_grad(lambda v: float("nan"), x)
    with pytest.raises(ConfigError):
        finite_diff_grad(lambda v: 0.0, x, h=0.0)
