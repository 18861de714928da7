"""Test-time separation by latent optimization against trained source models.

For neural models the latent trajectories of both sources are optimized
jointly by RMSprop ascent on

    (1/T) sum_t -KL(x_t || f1(h1_t) + f2(h2_t))
  + (alpha/T) sum_t [D1(f1(h1_t)) + D2(f2(h2_t))]
  - (beta/(T-1)) sum_t sum_k |f_k(h_k_{t+1}) - f_k(h_k_t)|_1

with model weights frozen. The critic term only exists for adversarially
trained models; standard-GAN discriminators enter through log D. NMF models
instead run multiplicative activation updates against the stacked dictionary.
"""
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ConfigError, DimensionError, InputError, NumericalError
from .mathcore import Rmsprop, softplus
from .models import (GeneratorParams, VaeParams, critic_backward,
                     critic_forward, generator_backward, generator_forward,
                     kl_divergence, nmf_update_h, poisson_grad, vae_decode,
                     vae_decode_backward)
from .signal import MagnitudeSpectrogram

DATA_INIT_KINDS = ("ml_ae", "ae_wgan")


@dataclass
class SeparationConfig:
    alpha: float = 0.1
    beta: float = 0.1
    iterations: int = 20000
    learning_rate: float = 1e-3
    seed: int = 0
    trace_every: int = 100
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-8

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError(f"alpha and beta must be >= 0, got {self.alpha}, {self.beta}")
        for name in ("iterations", "trace_every"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        return self

    def replace(self, **kw):
        d = asdict(self)
        d.update(kw)
        return SeparationConfig(**d)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown separation options: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SeparationResult:
    s1_hat: MagnitudeSpectrogram
    s2_hat: MagnitudeSpectrogram
    latents: tuple
    trace: list = field(default_factory=list)

    @property
    def estimates(self):
        return self.s1_hat, self.s2_hat


class _Source:
    """Uniform forward/backward view of a trained model's generator side."""

    def __init__(self, model, alpha):
        self.model = model
        g = model.generator
        if isinstance(g, GeneratorParams):
            self.forward = lambda H: generator_forward(g, H)
            self.backward = lambda c, up: generator_backward(c, up, need_params=False)["H"]
        elif isinstance(g, VaeParams):
            self.forward = lambda H: vae_decode(g, H)
            self.backward = lambda c, up: vae_decode_backward(c, up, need_params=False)["Z"]
        else:
            raise ConfigError(f"model kind {model.kind!r} has no differentiable generator")
        self.critic = model.critic if alpha > 0 else None
        self.latent_dim = model.latent_dim
        self.data_dim = model.data_dim


def _mix_array(x):
    X = np.asarray(getattr(x, "mag", x), dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"mixture must be F x T, got shape {X.shape}")
    if np.any(X < 0) or not np.all(np.isfinite(X)):
        raise InputError("mixture magnitudes must be finite and non-negative")
    return X


def _wrap(like, mag):
    if isinstance(like, MagnitudeSpectrogram):
        return MagnitudeSpectrogram(mag, like.n_fft, like.hop, like.length, like.sample_rate)
    return MagnitudeSpectrogram(mag)


def _check_shapes(X, sources, latents):
    for k, (src, H) in enumerate(zip(sources, latents), 1):
        if src.data_dim != X.shape[0]:
            raise DimensionError(f"model {k} emits {src.data_dim} bins, mixture has {X.shape[0]}")
        if np.shape(H) != (src.latent_dim, X.shape[1]):
            raise DimensionError(f"latent {k} must be {src.latent_dim} x {X.shape[1]}, "
                                 f"got {np.shape(H)}")


def _evaluate(X, sources, latents, alpha, beta, want_value=True, want_grad=True):
    """Objective value and/or its gradient with respect to each latent block."""
    T = X.shape[1]
    outs, caches = zip(*(s.forward(H) for s, H in zip(sources, latents)))
    rate = outs[0] + outs[1]
    value = 0.0
    if want_value:
        value = -kl_divergence(X, rate) / T
    ups = []
    if want_grad:
        base = poisson_grad(X, rate)
        base *= -1.0 / T
        ups = [base.copy(), base]

    for k, (src, out) in enumerate(zip(sources, outs)):
        crit = src.critic
        if crit is None:
            continue
        scores, ccache = critic_forward(crit, out)
        if crit.output_kind == "sigmoid":
            # log D(s) = -softplus(-logit); d/dlogit = 1 - D
            if want_value:
                value -= alpha / T * float(np.sum(softplus(-ccache.logits)))
            if want_grad:
                up = alpha / T * (1.0 - scores)
                ups[k] += critic_backward(ccache, up, wrt_logit=True, need_params=False)["S"]
        else:
            if want_value:
                value += alpha / T * float(np.sum(scores))
            if want_grad:
                up = np.full((1, T), alpha / T)
                ups[k] += critic_backward(ccache, up, need_params=False)["S"]

    if beta > 0 and T >= 2:
        c = beta / (T - 1)
        for k, out in enumerate(outs):
            diff = out[:, 1:] - out[:, :-1]
            if want_value:
                value -= c * float(np.abs(diff).sum())
            if want_grad:
                sg = c * np.sign(diff)
                ups[k][:, 1:] -= sg
                ups[k][:, :-1] += sg

    grads = None
    if want_grad:
        grads = tuple(src.backward(cache, up) for src, cache, up in zip(sources, caches, ups))
    return value, grads, outs


def _prepare(x, m1, m2, cfg, H1, H2):
    X = _mix_array(x)
    sources = (_Source(m1, cfg.alpha), _Source(m2, cfg.alpha))
    _check_shapes(X, sources, (H1, H2))
    return X, sources


def objective(x, m1, m2, H1, H2, cfg):
    X, sources = _prepare(x, m1, m2, cfg, H1, H2)
    return _evaluate(X, sources, (H1, H2), cfg.alpha, cfg.beta, want_grad=False)[0]


def objective_grad(x, m1, m2, H1, H2, cfg):
    """Gradients of :func:`objective` w.r.t. (H1, H2); sign(0) = 0 at L1 kinks."""
    X, sources = _prepare(x, m1, m2, cfg, H1, H2)
    return _evaluate(X, sources, (H1, H2), cfg.alpha, cfg.beta, want_value=False)[1]


def decode(model, H):
    """Magnitude frames a trained model emits for latents ``H``."""
    if model.kind == "nmf":
        return model.generator.W @ H
    return _Source(model, 0.0).forward(H)[0]


def init_latents(model, X, rng):
    if model.kind in DATA_INIT_KINDS:
        return X.copy()
    return rng.standard_normal((model.latent_dim, X.shape[1]))


def separate(x, m1, m2, cfg, callback=None):
    """Estimate both source spectrograms from the mixture magnitudes ``x``."""
    nmf_flags = (m1.kind == "nmf", m2.kind == "nmf")
    if all(nmf_flags):
        return nmf_separate(x, m1, m2, cfg, callback)
    if any(nmf_flags):
        raise ConfigError("cannot pair an NMF model with a neural model in one separation")
    X = _mix_array(x)
    rng = np.random.default_rng(cfg.seed)
    H1 = init_latents(m1, X, rng)
    H2 = init_latents(m2, X, rng)
    sources = (_Source(m1, cfg.alpha), _Source(m2, cfg.alpha))
    _check_shapes(X, sources, (H1, H2))
    latents = {"H1": H1, "H2": H2}
    opt = Rmsprop(latents, learning_rate=cfg.learning_rate, decay=cfg.rmsprop_decay,
                  epsilon=cfg.rmsprop_epsilon)
    trace = []
    for it in range(cfg.iterations):
        traced = it % cfg.trace_every == 0
        value, (g1, g2), _ = _evaluate(X, sources, (H1, H2), cfg.alpha, cfg.beta,
                                       want_value=traced)
        if traced:
            trace.append((it, value))
        if not (np.isfinite(value) and np.all(np.isfinite(g1)) and np.all(np.isfinite(g2))):
            raise NumericalError(f"separation diverged at iteration {it}",
                                 telemetry={"trace": trace})
        opt.step(latents, {"H1": g1, "H2": g2}, "maximize")
        if callback:
            callback(it, latents)
    value, _, (o1, o2) = _evaluate(X, sources, (H1, H2), cfg.alpha, cfg.beta, want_grad=False)
    trace.append((cfg.iterations, value))
    return SeparationResult(_wrap(x, o1), _wrap(x, o2), (H1, H2), trace)


def nmf_separate(x, m1, m2, cfg, callback=None):
    """Fit activations for the stacked dictionary [W1 | W2] by KL updates.

    ``callback(it, {"H1": ..., "H2": ...})`` sees views of the current
    activations after every update, as in :func:`separate`.
    """
    if m1.kind != "nmf" or m2.kind != "nmf":
        raise ConfigError("nmf_separate needs two NMF models")
    X = _mix_array(x)
    W1, W2 = m1.generator.W, m2.generator.W
    if W1.shape[0] != X.shape[0] or W2.shape[0] != X.shape[0]:
        raise DimensionError(f"dictionaries have {W1.shape[0]}/{W2.shape[0]} bins, "
                             f"mixture has {X.shape[0]}")
    W = np.hstack([W1, W2])
    T = X.shape[1]
    rng = np.random.default_rng(cfg.seed)
    H = rng.uniform(0.1, 1.0, size=(W.shape[1], T))
    K1 = W1.shape[1]
    trace = []
    for it in range(cfg.iterations):
        if it % cfg.trace_every == 0:
            trace.append((it, -kl_divergence(X, W @ H) / T))
        H = nmf_update_h(W, H, X, check=False)
        if callback:
            callback(it, {"H1": H[:K1], "H2": H[K1:]})
    trace.append((cfg.iterations, -kl_divergence(X, W @ H) / T))
    if not np.all(np.isfinite(H)):
        raise NumericalError("NMF separation produced non-finite activations")
    H1, H2 = H[:K1], H[K1:]
    return SeparationResult(_wrap(x, W1 @ H1), _wrap(x, W2 @ H2), (H1, H2), trace)

