"""Source models over magnitude-spectrum frames, with hand-written backprop.

Frames are columns: a batch of T frames with F bins is an F x T array.
Gradients come back as dicts keyed like the parameter fields, plus the
input (``"H"``, ``"S"`` or ``"Z"``) where that is meaningful.
"""
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError, DimensionError, InputError, UsageError
from .mathcore import relu, sigmoid, softplus, softplus_sigmoid

DATA_DIM = 513
GEN_HIDDEN = 100
CRITIC_HIDDEN = 90
VAE_HIDDEN = 100
VAE_LATENT = 20
NMF_RANK = 100
INIT_STD = 0.01
RATE_FLOOR = 1e-12
# Multiplicative updates shrink unused entries geometrically; left alone they
# reach subnormal range, where BLAS slows down by orders of magnitude. Any
# product of two floored entries stays a normal float.
FACTOR_FLOOR = 1e-150


class _Params:
    """Mixin: parameter containers expose their arrays by field name."""

    def arrays(self):
        return {f.name: getattr(self, f.name) for f in fields(self)
                if isinstance(getattr(self, f.name), np.ndarray)}

    def copy(self):
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update({k: v.copy() for k, v in self.arrays().items()})
        return type(self)(**kw)

    def shapes(self):
        return {k: list(v.shape) for k, v in self.arrays().items()}

    def all_finite(self):
        return all(np.all(np.isfinite(v)) for v in self.arrays().values())


@dataclass
class GeneratorParams(_Params):
    """Two softplus layers: out = SP(W2 SP(W1 h + b1) + b2)."""
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @property
    def input_dim(self):
        return self.W1.shape[1]

    @property
    def output_dim(self):
        return self.W2.shape[0]


@dataclass
class CriticParams(_Params):
    """score = out(V2 tanh(V1 s + c1) + c2), out = sigmoid or identity."""
    V1: np.ndarray
    c1: np.ndarray
    V2: np.ndarray
    c2: np.ndarray
    output_kind: str = "identity"

    def __post_init__(self):
        if self.output_kind not in ("sigmoid", "identity"):
            raise ConfigError(f"critic output must be sigmoid or identity, got {self.output_kind!r}")


@dataclass
class VaeParams(_Params):
    enc_W1: np.ndarray
    enc_b1: np.ndarray
    mu_W2: np.ndarray
    mu_b2: np.ndarray
    logvar_W2: np.ndarray
    logvar_b2: np.ndarray
    dec_W3: np.ndarray
    dec_b3: np.ndarray

    @property
    def latent_dim(self):
        return self.dec_W3.shape[1]


@dataclass
class NmfParams(_Params):
    W: np.ndarray

    def __post_init__(self):
        if np.any(self.W < 0):
            raise InputError("NMF dictionary must be non-negative")

    @property
    def rank(self):
        return self.W.shape[1]


PARAM_TYPES = {"generator": GeneratorParams, "critic": CriticParams,
               "vae": VaeParams, "nmf": NmfParams}


def init_params(kind, seed, data_dim=DATA_DIM, input_dim=None, hidden=None,
                latent_dim=VAE_LATENT, rank=NMF_RANK, output_kind="identity"):
    """Fresh parameters: N(0, 0.01^2) weights, zero biases, U(0.1, 1) NMF atoms."""
    rng = np.random.default_rng(seed)

    def w(*shape):
        return rng.normal(0.0, INIT_STD, size=shape)

    if kind == "generator":
        hidden = hidden or GEN_HIDDEN
        input_dim = input_dim or data_dim
        return GeneratorParams(w(hidden, input_dim), np.zeros(hidden),
                               w(data_dim, hidden), np.zeros(data_dim))
    if kind == "critic":
        hidden = hidden or CRITIC_HIDDEN
        return CriticParams(w(hidden, data_dim), np.zeros(hidden), w(1, hidden),
                            np.zeros(1), output_kind)
    if kind == "vae":
        hidden = hidden or VAE_HIDDEN
        return VaeParams(w(hidden, data_dim), np.zeros(hidden),
                         w(latent_dim, hidden), np.zeros(latent_dim),
                         w(latent_dim, hidden), np.zeros(latent_dim),
                         w(data_dim, latent_dim), np.zeros(data_dim))
    if kind == "nmf":
        return NmfParams(rng.uniform(0.1, 1.0, size=(data_dim, rank)))
    raise ConfigError(f"unknown parameter kind {kind!r}")


def params_to_dict(p):
    out = {"type": next(k for k, t in PARAM_TYPES.items() if isinstance(p, t)),
           "shapes": p.shapes(),
           "arrays": {k: v.reshape(-1).tolist() for k, v in p.arrays().items()}}
    if isinstance(p, CriticParams):
        out["output_kind"] = p.output_kind
    return out


def params_from_dict(d):
    try:
        cls = PARAM_TYPES[d["type"]]
        kw = {k: np.asarray(v, dtype=np.float64).reshape(d["shapes"][k])
              for k, v in d["arrays"].items()}
    except (KeyError, ValueError, TypeError) as exc:
        raise InputError(f"malformed parameter block: {exc}") from exc
    if cls is CriticParams:
        kw["output_kind"] = d.get("output_kind", "identity")
    return cls(**kw)


# ---------------------------------------------------------------- generator

@dataclass
class GeneratorCache:
    params: GeneratorParams
    H: np.ndarray
    U: np.ndarray
    sig1: np.ndarray    # softplus' of the hidden pre-activation
    sig2: np.ndarray    # softplus' of the output pre-activation
    out_shape: tuple = field(default=())


def generator_forward(p, H):
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != p.W1.shape[1]:
        raise DimensionError(f"generator expects {p.W1.shape[1]} x T input, got {H.shape}")
    A1 = p.W1 @ H
    A1 += p.b1[:, None]
    U, sig1 = softplus_sigmoid(A1)
    A2 = p.W2 @ U
    A2 += p.b2[:, None]
    out, sig2 = softplus_sigmoid(A2)
    return out, GeneratorCache(p, H, U, sig1, sig2, out.shape)


def generator_backward(cache, upstream, need_params=True):
    """Gradients of sum(upstream * out) for W1, b1, W2, b2 and the input H.

    ``need_params=False`` skips the weight gradients (latent inference only).
    """
    if not isinstance(cache, GeneratorCache):
        raise UsageError("generator_backward needs the cache from generator_forward")
    if upstream.shape != cache.out_shape:
        raise UsageError(f"upstream gradient {upstream.shape} does not match "
                         f"forward output {cache.out_shape}")
    p = cache.params
    dA2 = upstream * cache.sig2
    dU = p.W2.T @ dA2
    dA1 = dU * cache.sig1
    grads = {"H": p.W1.T @ dA1}
    if need_params:
        grads["W2"] = dA2 @ cache.U.T
        grads["b2"] = dA2.sum(axis=1)
        grads["W1"] = dA1 @ cache.H.T
        grads["b1"] = dA1.sum(axis=1)
    return grads


# ------------------------------------------------------------------- critic

@dataclass
class CriticCache:
    params: CriticParams
    S: np.ndarray
    Hc: np.ndarray
    logits: np.ndarray
    scores: np.ndarray


def critic_forward(p, S):
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != p.V1.shape[1]:
        raise DimensionError(f"critic expects {p.V1.shape[1]} x T input, got {S.shape}")
    A = p.V1 @ S
    A += p.c1[:, None]
    Hc = np.tanh(A)
    logits = p.V2 @ Hc + p.c2[0]
    scores = sigmoid(logits) if p.output_kind == "sigmoid" else logits
    return scores, CriticCache(p, S, Hc, logits, scores)


def critic_backward(cache, upstream, wrt_logit=False, need_params=True, need_input=True):
    """Gradients of sum(upstream * scores) for V1, c1, V2, c2 and input S.

    With ``wrt_logit=True`` the upstream is taken with respect to the
    pre-sigmoid logit, which lets log-likelihood losses skip the 1/D factor.
    """
    if not isinstance(cache, CriticCache):
        raise UsageError("critic_backward needs the cache from critic_forward")
    upstream = np.asarray(upstream, dtype=np.float64).reshape(1, -1)
    if upstream.shape != cache.scores.shape:
        raise UsageError(f"upstream gradient {upstream.shape} does not match "
                         f"forward scores {cache.scores.shape}")
    p = cache.params
    if p.output_kind == "sigmoid" and not wrt_logit:
        dlogit = upstream * cache.scores * (1.0 - cache.scores)
    else:
        dlogit = upstream
    dHc = p.V2.T @ dlogit
    dA = dHc * (1.0 - cache.Hc ** 2)
    grads = {"S": p.V1.T @ dA} if need_input else {}
    if need_params:
        grads["V2"] = dlogit @ cache.Hc.T
        grads["c2"] = np.array([dlogit.sum()])
        grads["V1"] = dA @ cache.S.T
        grads["c1"] = dA.sum(axis=1)
    return grads


# --------------------------------------------------------- poisson / KL fit

def poisson_fit(target, rate):
    """Unnormalized KL divergence KL(target || rate) and its gradient in rate.

    Minimizing this maximizes the Poisson log-likelihood of ``target`` up to
    a term that depends on the target only.
    """
    target = np.asarray(target, dtype=np.float64)
    if np.any(target < 0):
        raise InputError("Poisson target must be non-negative")
    if np.shape(rate) != target.shape:
        raise DimensionError(f"target {target.shape} and rate {np.shape(rate)} differ")
    r = np.maximum(rate, RATE_FLOOR)
    return _kl_value(target, r), 1.0 - target / r


def poisson_grad(target, rate):
    """Gradient half of :func:`poisson_fit`, without validation or the loss."""
    g = target / np.maximum(rate, RATE_FLOOR)
    np.subtract(1.0, g, out=g)
    return g


def _kl_value(target, r):
    pos = target > 0
    safe = np.where(pos, target, 1.0)
    return float(np.sum(target * (np.log(safe) - np.log(r))) - target.sum() + r.sum())


def kl_divergence(V, approx):
    V = np.asarray(V, dtype=np.float64)
    return _kl_value(V, np.maximum(approx, RATE_FLOOR))


# ---------------------------------------------------------------------- NMF

def _check_nonneg(**arrays):
    for name, a in arrays.items():
        if np.any(np.asarray(a) < 0):
            raise InputError(f"NMF input {name} has negative entries")


def _update_h(W, H, V):
    ratio = V / np.maximum(W @ H, RATE_FLOOR)
    den = np.maximum(W.sum(axis=0), np.finfo(float).tiny)
    return np.maximum(H * (W.T @ ratio) / den[:, None], FACTOR_FLOOR)


def _update_w(W, H, V):
    ratio = V / np.maximum(W @ H, RATE_FLOOR)
    den = np.maximum(H.sum(axis=1), np.finfo(float).tiny)
    return np.maximum(W * (ratio @ H.T) / den[None, :], FACTOR_FLOOR)


def nmf_update(W, H, V, check=True):
    """One KL multiplicative sweep: H first, then W against the new H."""
    W = getattr(W, "W", W)
    if W.shape[0] != V.shape[0] or W.shape[1] != H.shape[0] or H.shape[1] != V.shape[1]:
        raise DimensionError(f"NMF shapes disagree: W {W.shape}, H {H.shape}, V {V.shape}")
    if check:
        _check_nonneg(W=W, H=H, V=V)
    H = _update_h(W, H, V)
    W = _update_w(W, H, V)
    return W, H


def nmf_update_h(W, H, V, check=True):
    """Activation-only sweep with the dictionary held fixed."""
    W = getattr(W, "W", W)
    if W.shape[1] != H.shape[0] or W.shape[0] != V.shape[0] or H.shape[1] != V.shape[1]:
        raise DimensionError(f"NMF shapes disagree: W {W.shape}, H {H.shape}, V {V.shape}")
    if check:
        _check_nonneg(W=W, H=H, V=V)
    return _update_h(W, H, V)


# ---------------------------------------------------------------------- VAE

@dataclass
class DecoderCache:
    params: VaeParams
    Z: np.ndarray
    P: np.ndarray


def vae_decode(p, Z):
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] != p.dec_W3.shape[1]:
        raise DimensionError(f"VAE decoder expects {p.dec_W3.shape[1]} x T, got {Z.shape}")
    P = p.dec_W3 @ Z
    P += p.dec_b3[:, None]
    return softplus(P), DecoderCache(p, Z, P)


def vae_decode_backward(cache, upstream, need_params=True):
    if not isinstance(cache, DecoderCache):
        raise UsageError("vae_decode_backward needs the cache from vae_decode")
    if upstream.shape != cache.P.shape:
        raise UsageError(f"upstream {upstream.shape} does not match decoder output {cache.P.shape}")
    dP = upstream * sigmoid(cache.P)
    grads = {"Z": cache.params.dec_W3.T @ dP}
    if need_params:
        grads["dec_W3"] = dP @ cache.Z.T
        grads["dec_b3"] = dP.sum(axis=1)
    return grads


@dataclass
class VaeCache:
    params: VaeParams
    S: np.ndarray
    A: np.ndarray
    hidden: np.ndarray
    mu: np.ndarray
    logvar: np.ndarray
    noise: np.ndarray
    std: np.ndarray
    dec: DecoderCache


def vae_forward(p, S, noise):
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != p.enc_W1.shape[1]:
        raise DimensionError(f"VAE encoder expects {p.enc_W1.shape[1]} x T, got {S.shape}")
    if noise.shape != (p.latent_dim, S.shape[1]):
        raise DimensionError(f"noise must be {p.latent_dim} x {S.shape[1]}, got {noise.shape}")
    A = p.enc_W1 @ S + p.enc_b1[:, None]
    hidden = relu(A)
    mu = p.mu_W2 @ hidden + p.mu_b2[:, None]
    logvar = p.logvar_W2 @ hidden + p.logvar_b2[:, None]
    std = np.exp(0.5 * logvar)
    z = mu + std * noise
    rate, dec = vae_decode(p, z)
    return rate, mu, logvar, VaeCache(p, S, A, hidden, mu, logvar, noise, std, dec)


def gaussian_kl(mu, logvar):
    """KL(N(mu, exp(logvar)) || N(0, I)) summed over all entries."""
    return float(0.5 * np.sum(np.exp(logvar) + mu ** 2 - 1.0 - logvar))


def vae_elbo(p, S, noise):
    """Single-sample ELBO (to maximize), its parameter gradients, and its terms."""
    rate, mu, logvar, c = vae_forward(p, S, noise)
    recon, drate = poisson_fit(c.S, rate)
    kl = gaussian_kl(mu, logvar)
    grads = vae_decode_backward(c.dec, -drate)
    dz = grads.pop("Z")
    dmu = dz - mu
    dlogvar = 0.5 * dz * noise * c.std - 0.5 * (np.exp(logvar) - 1.0)
    grads["mu_W2"] = dmu @ c.hidden.T
    grads["mu_b2"] = dmu.sum(axis=1)
    grads["logvar_W2"] = dlogvar @ c.hidden.T
    grads["logvar_b2"] = dlogvar.sum(axis=1)
    dhidden = p.mu_W2.T @ dmu + p.logvar_W2.T @ dlogvar
    dA = dhidden * (c.A > 0)
    grads["enc_W1"] = dA @ c.S.T
    grads["enc_b1"] = dA.sum(axis=1)
    return -recon - kl, grads, {"recon": recon, "kl": kl}
