"""Numerical kernel: activations, RMSprop, clipping and a gradient oracle.

Matrices are plain float64 numpy arrays. Everything here either returns a
new array or mutates an array the caller owns.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, OracleError

ACTIVATIONS = ("softplus", "tanh", "sigmoid", "relu", "identity")


def as_mat(x):
    return np.asarray(x, dtype=np.float64)


def softplus(x):
    """log(1 + exp(x)) without overflow for large |x|."""
    x = as_mat(x)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    x = as_mat(x)
    # exp of a non-positive argument only, so nothing overflows
    e = np.exp(-np.abs(x))
    num = np.where(x >= 0, 1.0, e)
    e += 1.0
    return np.divide(num, e, out=num)


def softplus_sigmoid(x):
    """``(softplus(x), sigmoid(x))`` sharing one exponential; the hot path of backprop."""
    x = as_mat(x)
    e = np.abs(x)
    np.negative(e, out=e)
    np.exp(e, out=e)
    sp = np.log1p(e)
    sp += np.maximum(x, 0.0)
    num = np.where(x >= 0, 1.0, e)
    e += 1.0
    np.divide(num, e, out=num)
    return sp, num


def relu(x):
    return np.maximum(as_mat(x), 0.0)


def activate(x, kind):
    if kind == "softplus":
        return softplus(x)
    if kind == "tanh":
        return np.tanh(as_mat(x))
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "relu":
        return relu(x)
    if kind == "identity":
        return as_mat(x).copy()
    raise ConfigError(f"unknown activation {kind!r}")


def activation_grads(x, kind):
    """Elementwise derivative of ``activate(x, kind)`` with respect to x."""
    x = as_mat(x)
    if kind == "softplus":
        return sigmoid(x)
    if kind == "tanh":
        return 1.0 - np.tanh(x) ** 2
    if kind == "sigmoid":
        s = sigmoid(x)
        return s * (1.0 - s)
    if kind == "relu":
        return (x > 0).astype(np.float64)
    if kind == "identity":
        return np.ones_like(x)
    raise ConfigError(f"unknown activation {kind!r}")


@dataclass
class RmspropState:
    mean_sq: np.ndarray
    decay: float = 0.9
    epsilon: float = 1e-8
    learning_rate: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise ConfigError(f"RMSprop decay must lie in (0, 1), got {self.decay}")
        if self.epsilon <= 0:
            raise ConfigError(f"RMSprop epsilon must be positive, got {self.epsilon}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")

    @classmethod
    def fresh(cls, like, **kwargs):
        return cls(np.zeros(np.shape(like)), **kwargs)


def rmsprop_step(param, grad, state, direction="minimize"):
    """One RMSprop update of ``param`` in place; returns ``(param, state)``.

    ``direction="maximize"`` ascends instead of descending. The two are exact
    mirror images, so maximizing f traces the same path as minimizing -f.
    """
    if param.shape != grad.shape or param.shape != state.mean_sq.shape:
        raise DimensionError(
            f"rmsprop shapes differ: param {param.shape}, grad {grad.shape}, "
            f"state {state.mean_sq.shape}")
    if direction not in ("minimize", "maximize"):
        raise ConfigError(f"unknown direction {direction!r}")
    ms = state.mean_sq
    ms *= state.decay
    sq = grad * grad
    sq *= 1.0 - state.decay
    ms += sq
    denom = np.sqrt(ms, out=sq)
    denom += state.epsilon
    step = state.learning_rate * grad
    step /= denom
    if direction == "minimize":
        param -= step
    else:
        param += step
    return param, state


class Rmsprop:
    """RMSprop over a dict of named parameter arrays."""

    def __init__(self, params, learning_rate=1e-3, decay=0.9, epsilon=1e-8):
        self.states = {
            name: RmspropState.fresh(p, decay=decay, epsilon=epsilon,
                                     learning_rate=learning_rate)
            for name, p in params.items()
        }
        self.steps = 0

    def step(self, params, grads, direction="minimize"):
        for name, state in self.states.items():
            rmsprop_step(params[name], grads[name], state, direction)
        self.steps += 1


def clip_inplace(param, lo, hi):
    if lo > hi:
        raise ConfigError(f"clip bounds reversed: lo={lo} > hi={hi}")
    np.clip(param, lo, hi, out=param)
    return param


def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f`` at ``x`` (test oracle).

    ``x`` is perturbed in place and restored after each probe, so ``f`` may
    close over the very array being differentiated.
    """
    if h <= 0:
        raise ConfigError("finite-difference step must be positive")
    x = np.asarray(x)
    if x.dtype != np.float64 or not x.flags.c_contiguous:
        raise ConfigError("finite_diff_grad needs a contiguous float64 array to perturb")
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise OracleError(f"non-finite function value probing entry {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a, b, floor=1e-8):
    """max |a-b| / max(|a|, |b|, floor), the yardstick for gradient checks."""
    a = as_mat(a)
    b = as_mat(b)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0), floor)
    return float(np.max(np.abs(a - b), initial=0.0) / scale)


def all_finite(*arrays):
    return all(np.all(np.isfinite(a)) for a in arrays)
