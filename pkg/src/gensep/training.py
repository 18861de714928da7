"""Training loops for the six source-model families, plus checkpoint I/O."""
import csv
from dataclasses import asdict, dataclass, field, fields
import json

import numpy as np

from .errors import ConfigError, InputError, NumericalError
from .mathcore import Rmsprop, clip_inplace
from .models import (CriticParams, GeneratorParams, NmfParams, VaeParams,
                     critic_backward, critic_forward, generator_backward,
                     generator_forward, init_params, kl_divergence, nmf_update,
                     params_from_dict, params_to_dict, poisson_fit, vae_elbo)

MODEL_KINDS = ("nmf", "ml_ae", "vae", "gan", "wgan", "ae_wgan")
ADVERSARIAL_KINDS = ("gan", "wgan", "ae_wgan")
CHECKPOINT_FORMAT = "gensep-checkpoint/1"


@dataclass
class TrainConfig:
    model_kind: str = "wgan"
    iterations: int = 4000
    learning_rate: float = 1e-3
    critic_steps_per_gen: int = 5
    clip_lo: float = -0.01
    clip_hi: float = 0.01
    batch_size: int = 100
    seed: int = 0
    gen_hidden: int = 100
    # None means "same as the data dimension" (513 for a 1024-point FFT)
    latent_dim: int | None = None
    critic_hidden: int = 90
    vae_hidden: int = 100
    vae_latent: int = 20
    nmf_rank: int = 100
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-8
    literal_gan_loss: bool = False
    telemetry_every: int = 10

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"model_kind must be one of {MODEL_KINDS}, got {self.model_kind!r}")
        for name in ("iterations", "critic_steps_per_gen", "batch_size", "gen_hidden",
                     "critic_hidden", "vae_hidden", "vae_latent", "nmf_rank",
                     "telemetry_every"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.latent_dim is not None and self.latent_dim <= 0:
            raise ConfigError(f"latent_dim must be positive, got {self.latent_dim}")
        if not self.clip_lo < 0 < self.clip_hi:
            raise ConfigError(f"need clip_lo < 0 < clip_hi, got {self.clip_lo}, {self.clip_hi}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        return self

    def replace(self, **kw):
        d = asdict(self)
        d.update(kw)
        return TrainConfig(**d)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainedSourceModel:
    kind: str
    generator: GeneratorParams | VaeParams | NmfParams
    critic: CriticParams | None = None
    telemetry: dict = field(default_factory=lambda: {
        "loss_curve": [], "critic_steps": 0, "generator_steps": 0})
    seed: int = 0
    config: dict = field(default_factory=dict)

    @property
    def loss_curve(self):
        return self.telemetry["loss_curve"]

    @property
    def data_dim(self):
        g = self.generator
        if isinstance(g, GeneratorParams):
            return g.output_dim
        if isinstance(g, VaeParams):
            return g.dec_W3.shape[0]
        return g.W.shape[0]

    @property
    def latent_dim(self):
        g = self.generator
        if isinstance(g, GeneratorParams):
            return g.input_dim
        if isinstance(g, VaeParams):
            return g.latent_dim
        return g.rank


def sample_latent(batch, dim, rng):
    """i.i.d. standard normal latents, one column per sample."""
    if batch <= 0 or dim <= 0:
        raise ConfigError(f"latent batch and dim must be positive, got {batch}, {dim}")
    return rng.standard_normal((dim, batch))


def _frames(data):
    X = np.asarray(getattr(data, "mag", data), dtype=np.float64)
    if X.ndim != 2 or X.shape[1] == 0 or X.shape[0] == 0:
        raise InputError(f"training data must be a non-empty F x N frame matrix, got {X.shape}")
    if np.any(X < 0) or not np.all(np.isfinite(X)):
        raise InputError("training frames must be finite and non-negative")
    return X


def _seeds(seed, n):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def _batch(XT, rng, size):
    """Columns drawn with replacement; ``XT`` is the frame matrix transposed."""
    return XT[rng.integers(0, XT.shape[0], size)].T


def _guard(model, it, *values):
    finite = all(np.all(np.isfinite(v)) for v in values)
    finite = finite and model.generator.all_finite()
    finite = finite and (model.critic is None or model.critic.all_finite())
    if not finite:
        model.telemetry["failed_iteration"] = it
        raise NumericalError(f"{model.kind} training diverged at iteration {it}",
                             telemetry=model.telemetry)


def _record(model, cfg, it, loss):
    if it % cfg.telemetry_every == 0 or it == cfg.iterations - 1:
        model.telemetry["loss_curve"].append((it, float(loss)))


def _new_model(kind, cfg, generator, critic=None):
    return TrainedSourceModel(kind, generator, critic, seed=cfg.seed, config=asdict(cfg))


def _check_kind(cfg, allowed):
    if cfg.model_kind not in allowed:
        raise ConfigError(f"this trainer handles {allowed}, got model_kind={cfg.model_kind!r}")


def train_wgan(data, cfg, callback=None):
    """Wasserstein GAN with weight clipping; ``ae_wgan`` feeds real frames as input.

    Each iteration runs ``critic_steps_per_gen`` critic ascents on
    E D(real) - E D(fake), clipping after every step, then one generator
    ascent on E D(fake). The curve records the critic objective.
    """
    _check_kind(cfg, ("wgan", "ae_wgan"))
    return _train_adversarial(_frames(data), cfg, callback)


def train_gan(data, cfg, callback=None):
    """Standard GAN with a sigmoid discriminator and the same 5:1 schedule.

    The generator ascends log D(fake) unless ``literal_gan_loss`` asks for
    descent on log(1 - D(fake)). The curve records the discriminator loss.
    """
    _check_kind(cfg, ("gan",))
    return _train_adversarial(_frames(data), cfg, callback)


def _train_adversarial(X, cfg, callback):
    F = X.shape[0]
    if X.shape[1] < cfg.batch_size:
        raise InputError(f"need at least batch_size={cfg.batch_size} training frames, "
                         f"got {X.shape[1]}")
    wasserstein = cfg.model_kind in ("wgan", "ae_wgan")
    autoencoding = cfg.model_kind == "ae_wgan"
    latent = F if autoencoding else (cfg.latent_dim or F)
    gseed, cseed, dseed = _seeds(cfg.seed, 3)
    gen = init_params("generator", gseed, data_dim=F, input_dim=latent, hidden=cfg.gen_hidden)
    crit = init_params("critic", cseed, data_dim=F, hidden=cfg.critic_hidden,
                       output_kind="identity" if wasserstein else "sigmoid")
    if wasserstein:
        for p in crit.arrays().values():
            clip_inplace(p, cfg.clip_lo, cfg.clip_hi)
    model = _new_model(cfg.model_kind, cfg, gen, crit)
    rng = np.random.default_rng(dseed)
    opt_kw = dict(learning_rate=cfg.learning_rate, decay=cfg.rmsprop_decay,
                  epsilon=cfg.rmsprop_epsilon)
    gopt = Rmsprop(gen.arrays(), **opt_kw)
    copt = Rmsprop(crit.arrays(), **opt_kw)
    B = cfg.batch_size
    XT = np.ascontiguousarray(X.T)
    inv = np.full((1, B), 1.0 / B)
    tel = model.telemetry

    def gen_input():
        return _batch(XT, rng, B) if autoencoding else sample_latent(B, latent, rng)

    for it in range(cfg.iterations):
        for _ in range(cfg.critic_steps_per_gen):
            real = _batch(XT, rng, B)
            fake, _ = generator_forward(gen, gen_input())
            d_real, c_real = critic_forward(crit, real)
            d_fake, c_fake = critic_forward(crit, fake)
            if wasserstein:
                objective = d_real.mean() - d_fake.mean()
                g_real = critic_backward(c_real, inv, need_input=False)
                g_fake = critic_backward(c_fake, -inv, need_input=False)
            else:
                objective = (np.log(np.maximum(d_real, 1e-300)).mean()
                             + np.log(np.maximum(1.0 - d_fake, 1e-300)).mean())
                g_real = critic_backward(c_real, (1.0 - d_real) / B, wrt_logit=True,
                                         need_input=False)
                g_fake = critic_backward(c_fake, -d_fake / B, wrt_logit=True,
                                         need_input=False)
            grads = {k: g_real[k] + g_fake[k] for k in copt.states}
            copt.step(crit.arrays(), grads, "maximize")
            if wasserstein:
                for p in crit.arrays().values():
                    clip_inplace(p, cfg.clip_lo, cfg.clip_hi)
            tel["critic_steps"] += 1
            if callback:
                callback("critic_step", model, {"iteration": it})

        fake, gcache = generator_forward(gen, gen_input())
        d_fake, c_fake = critic_forward(crit, fake)
        if wasserstein:
            up, direction, wrt_logit = inv, "maximize", False
        elif cfg.literal_gan_loss:
            up, direction, wrt_logit = -d_fake / B, "minimize", True
        else:
            up, direction, wrt_logit = (1.0 - d_fake) / B, "maximize", True
        dS = critic_backward(c_fake, up, wrt_logit=wrt_logit, need_params=False)["S"]
        ggrads = generator_backward(gcache, dS)
        gopt.step(gen.arrays(), ggrads, direction)
        tel["generator_steps"] += 1

        loss = objective if wasserstein else -objective
        _guard(model, it, loss)
        _record(model, cfg, it, loss)
        if callback:
            callback("generator_step", model, {"iteration": it})
    return model


def train_ml_autoencoder(data, cfg, callback=None):
    """Poisson-likelihood autoencoder: SP(W2 SP(W1 s + b1) + b2) reconstructs s.

    The first layer plays the encoder and the second the decoder. The curve
    records the per-frame KL reconstruction loss of the current batch.
    """
    _check_kind(cfg, ("ml_ae",))
    X = _frames(data)
    F = X.shape[0]
    gseed, dseed = _seeds(cfg.seed, 2)
    net = init_params("generator", gseed, data_dim=F, input_dim=F, hidden=cfg.gen_hidden)
    model = _new_model("ml_ae", cfg, net)
    rng = np.random.default_rng(dseed)
    opt = Rmsprop(net.arrays(), learning_rate=cfg.learning_rate, decay=cfg.rmsprop_decay,
                  epsilon=cfg.rmsprop_epsilon)
    B = cfg.batch_size
    XT = np.ascontiguousarray(X.T)
    for it in range(cfg.iterations):
        batch = _batch(XT, rng, B)
        out, cache = generator_forward(net, batch)
        loss, drate = poisson_fit(batch, out)
        grads = generator_backward(cache, drate / B)
        opt.step(net.arrays(), grads, "minimize")
        model.telemetry["generator_steps"] += 1
        _guard(model, it, loss)
        _record(model, cfg, it, loss / B)
        if callback:
            callback("iteration", model, {"iteration": it, "loss": loss / B})
    return model


def train_vae(data, cfg, callback=None):
    """Variational autoencoder trained by ascent on a single-sample ELBO."""
    _check_kind(cfg, ("vae",))
    X = _frames(data)
    F = X.shape[0]
    pseed, dseed = _seeds(cfg.seed, 2)
    vae = init_params("vae", pseed, data_dim=F, hidden=cfg.vae_hidden,
                      latent_dim=cfg.vae_latent)
    model = _new_model("vae", cfg, vae)
    model.telemetry["kl_curve"] = []
    rng = np.random.default_rng(dseed)
    opt = Rmsprop(vae.arrays(), learning_rate=cfg.learning_rate, decay=cfg.rmsprop_decay,
                  epsilon=cfg.rmsprop_epsilon)
    B = cfg.batch_size
    XT = np.ascontiguousarray(X.T)
    for it in range(cfg.iterations):
        batch = _batch(XT, rng, B)
        noise = rng.standard_normal((cfg.vae_latent, B))
        elbo, grads, terms = vae_elbo(vae, batch, noise)
        opt.step(vae.arrays(), {k: g / B for k, g in grads.items()}, "maximize")
        model.telemetry["generator_steps"] += 1
        _guard(model, it, elbo)
        _record(model, cfg, it, elbo / B)
        if it % cfg.telemetry_every == 0 or it == cfg.iterations - 1:
            model.telemetry["kl_curve"].append((it, terms["kl"] / B))
        if callback:
            callback("iteration", model, {"iteration": it, "elbo": elbo / B,
                                          "kl": terms["kl"] / B})
    return model


def train_nmf(data, cfg, callback=None):
    """KL-NMF by full-batch multiplicative updates; only the dictionary is kept."""
    _check_kind(cfg, ("nmf",))
    X = _frames(data)
    wseed, hseed = _seeds(cfg.seed, 2)
    W = init_params("nmf", wseed, data_dim=X.shape[0], rank=cfg.nmf_rank).W
    H = np.random.default_rng(hseed).uniform(0.1, 1.0, size=(cfg.nmf_rank, X.shape[1]))
    model = _new_model("nmf", cfg, NmfParams(W))
    for it in range(cfg.iterations):
        W, H = nmf_update(W, H, X, check=False)
        model.generator.W = W
        model.telemetry["generator_steps"] += 1
        if it % cfg.telemetry_every == 0 or it == cfg.iterations - 1:
            loss = kl_divergence(X, W @ H)
            _guard(model, it, loss, H)
            model.telemetry["loss_curve"].append((it, loss))
        if callback:
            callback("iteration", model, {"iteration": it, "H": H})
    return model


TRAINERS = {"nmf": train_nmf, "ml_ae": train_ml_autoencoder, "vae": train_vae,
            "gan": train_gan, "wgan": train_wgan, "ae_wgan": train_wgan}


def train(data, cfg, callback=None):
    return TRAINERS[cfg.model_kind](data, cfg, callback)


# -------------------------------------------------------------- checkpoints

def model_to_dict(model):
    g = model.generator
    blocks = {"generator": params_to_dict(g)}
    if model.critic is not None:
        blocks["critic"] = params_to_dict(model.critic)
    return {
        "format": CHECKPOINT_FORMAT,
        "kind": model.kind,
        "seed": model.seed,
        "shapes": {name: b["shapes"] for name, b in blocks.items()},
        "params": blocks,
        "config": model.config,
        "telemetry": {k: v for k, v in model.telemetry.items() if k != "loss_curve"},
    }


def model_from_dict(d):
    if d.get("format") != CHECKPOINT_FORMAT:
        raise InputError(f"not a checkpoint (format={d.get('format')!r})")
    kind = d.get("kind")
    if kind not in MODEL_KINDS:
        raise InputError(f"checkpoint has unknown model kind {kind!r}")
    params = d.get("params", {})
    gen = params_from_dict(params["generator"])
    critic = params_from_dict(params["critic"]) if "critic" in params else None
    if (critic is not None) != (kind in ADVERSARIAL_KINDS):
        raise InputError(f"checkpoint of kind {kind!r} has inconsistent critic block")
    telemetry = {"loss_curve": []}
    telemetry.update(d.get("telemetry", {}))
    return TrainedSourceModel(kind, gen, critic, telemetry, d.get("seed", 0), d.get("config", {}))


def save_checkpoint(path, model):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh)


def load_checkpoint(path):
    try:
        with open(path) as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read checkpoint {path}: {exc}") from exc
    return model_from_dict(d)


def write_loss_csv(path, model):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "loss"])
        for it, loss in model.loss_curve:
            w.writerow([it, repr(float(loss))])
