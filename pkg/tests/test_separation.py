import numpy as np
import pytest

from gensep.errors import ConfigError, DimensionError, InputError
from gensep.evaluation import score_pair
from gensep.mathcore import finite_diff_grad, relative_error
from gensep.models import (CriticParams, GeneratorParams, NmfParams, VaeParams,
                           kl_divergence)
from gensep.separation import (SeparationConfig, _Source, decode, nmf_separate, objective,
                               objective_grad, separate)
from gensep.signal import Waveform, magnitude_phase, stft
from gensep.training import TrainedSourceModel

F, K, HID, T = 7, 4, 5, 5


def gen_model(rng, kind="ml_ae", latent=K, critic=None):
    g = GeneratorParams(0.7 * rng.normal(size=(HID, latent)), 0.3 * rng.normal(size=HID),
                        0.7 * rng.normal(size=(F, HID)), 0.3 * rng.normal(size=F))
    c = None
    if critic:
        c = CriticParams(rng.normal(size=(3, F)), rng.normal(size=3),
                         rng.normal(size=(1, 3)), rng.normal(size=1), critic)
    return TrainedSourceModel(kind, g, c)


def vae_model(rng, z=3):
    n = lambda *s: 0.5 * rng.normal(size=s)
    return TrainedSourceModel("vae", VaeParams(n(HID, F), n(HID), n(z, HID), n(z),
                                               n(z, HID), n(z), n(F, z), n(F)))


def model_pair(rng, case):
    if case == "wgan":
        return gen_model(rng, "wgan", critic="identity"), gen_model(rng, "wgan", critic="identity")
    if case == "gan":
        return gen_model(rng, "gan", critic="sigmoid"), gen_model(rng, "gan", critic="sigmoid")
    if case == "vae":
        return vae_model(rng), vae_model(rng)
    return gen_model(rng), gen_model(rng)


def away_from_kinks(m1, m2, H1, H2):
    return all(np.min(np.abs(np.diff(_forward(m, H), axis=1))) >= 1e-6
               for m, H in ((m1, H1), (m2, H2)))


def _forward(m, H):
    return _Source(m, 0.0).forward(H)[0]


CASES = ["ml_ae", "wgan", "gan", "vae"]


@pytest.mark.parametrize("case", CASES)
@pytest.mark.parametrize("seed", range(5))
def test_objective_gradient_matches_finite_differences(case, seed):
    rng = np.random.default_rng(1000 * CASES.index(case) + seed)
    m1, m2 = model_pair(rng, case)
    x = rng.random((F, T)) * 2
    while True:
        H1 = rng.normal(size=(m1.latent_dim, T))
        H2 = rng.normal(size=(m2.latent_dim, T))
        if away_from_kinks(m1, m2, H1, H2):
            break
    cfg = SeparationConfig(alpha=rng.uniform(0.05, 0.5), beta=rng.uniform(0.05, 0.5))
    g1, g2 = objective_grad(x, m1, m2, H1, H2, cfg)
    f = lambda _: objective(x, m1, m2, H1, H2, cfg)
    assert relative_error(g1, finite_diff_grad(f, H1, h=1e-6)) <= 1e-4
    assert relative_error(g2, finite_diff_grad(f, H2, h=1e-6)) <= 1e-4


def test_objective_zero_at_perfect_reconstruction():
    rng = np.random.default_rng(0)
    m1, m2 = model_pair(rng, "ml_ae")
    H1, H2 = rng.normal(size=(K, T)), rng.normal(size=(K, T))
    x = _forward(m1, H1) + _forward(m2, H2)
    cfg = SeparationConfig(alpha=0.0, beta=0.0)
    assert objective(x, m1, m2, H1, H2, cfg) == pytest.approx(0.0, abs=1e-12)


def test_smoothness_vanishes_for_single_frame_and_constant_frames():
    rng = np.random.default_rng(1)
    m1, m2 = model_pair(rng, "ml_ae")
    on, off = SeparationConfig(alpha=0.0, beta=0.5), SeparationConfig(alpha=0.0, beta=0.0)
    x1 = rng.random((F, 1))
    H1, H2 = rng.normal(size=(K, 1)), rng.normal(size=(K, 1))
    assert objective(x1, m1, m2, H1, H2, on) == objective(x1, m1, m2, H1, H2, off)
    x = rng.random((F, T))
    H1c, H2c = np.repeat(H1, T, axis=1), np.repeat(H2, T, axis=1)
    assert objective(x, m1, m2, H1c, H2c, on) == objective(x, m1, m2, H1c, H2c, off)


def test_smoothness_is_a_penalty():
    rng = np.random.default_rng(2)
    m1, m2 = model_pair(rng, "ml_ae")
    x = rng.random((F, T))
    H1, H2 = rng.normal(size=(K, T)), rng.normal(size=(K, T))
    penalized = objective(x, m1, m2, H1, H2, SeparationConfig(alpha=0.0, beta=1.0))
    plain = objective(x, m1, m2, H1, H2, SeparationConfig(alpha=0.0, beta=0.0))
    l1 = sum(np.abs(np.diff(_forward(m, H), axis=1)).sum() for m, H in ((m1, H1), (m2, H2)))
    assert penalized == pytest.approx(plain - l1 / (T - 1), rel=1e-12)


def test_critic_ablation_alpha_zero():
    rng = np.random.default_rng(3)
    w1, w2 = model_pair(rng, "wgan")
    bare1 = TrainedSourceModel("ml_ae", w1.generator)
    bare2 = TrainedSourceModel("ml_ae", w2.generator)
    x = rng.random((F, T))
    cfg = SeparationConfig(alpha=0.0, beta=0.1, iterations=50, trace_every=10)
    # same latent init for both runs: data-shaped latents come from the mixture
    w1.kind = w2.kind = "ae_wgan"
    w1.generator = GeneratorParams(rng.normal(size=(HID, F)), np.zeros(HID),
                                   rng.normal(size=(F, HID)), np.zeros(F))
    w2.generator = GeneratorParams(rng.normal(size=(HID, F)), np.zeros(HID),
                                   rng.normal(size=(F, HID)), np.zeros(F))
    bare1.generator, bare2.generator = w1.generator, w2.generator
    a = separate(x, w1, w2, cfg)
    b = separate(x, bare1, bare2, cfg)
    assert a.s1_hat.mag.tobytes() == b.s1_hat.mag.tobytes()
    assert a.trace == b.trace


def test_objective_errors():
    rng = np.random.default_rng(4)
    m1, m2 = model_pair(rng, "ml_ae")
    x = rng.random((F, T))
    good = rng.normal(size=(K, T))
    with pytest.raises(DimensionError):
        objective(x, m1, m2, good[:, :-1], good, SeparationConfig())
    with pytest.raises(DimensionError):
        objective(rng.random((F + 1, T)), m1, m2, good, good, SeparationConfig())
    with pytest.raises(InputError):
        objective(-x, m1, m2, good, good, SeparationConfig())
    with pytest.raises(ConfigError):
        SeparationConfig(alpha=-1.0)
    with pytest.raises(ConfigError):
        SeparationConfig(iterations=0)


def test_separation_defaults():
    cfg = SeparationConfig()
    assert (cfg.alpha, cfg.beta, cfg.iterations, cfg.learning_rate) == (0.1, 0.1, 20000, 1e-3)


# ----------------------------------------------------------------- separate

def test_separate_contract_and_trace():
    rng = np.random.default_rng(5)
    m1, m2 = model_pair(rng, "wgan")
    x = rng.random((F, 12)) * 3
    res = separate(x, m1, m2, SeparationConfig(iterations=1000))
    assert res.s1_hat.shape == x.shape and res.s2_hat.shape == x.shape
    assert np.all(res.s1_hat.mag >= 0) and np.all(res.s2_hat.mag >= 0)
    values = np.array([v for _, v in res.trace])
    assert np.all(np.isfinite(values))
    assert [it for it, _ in res.trace] == list(range(0, 1000, 100)) + [1000]
    best = np.maximum.accumulate(values)
    assert np.all(np.diff(best) >= 0)
    assert values[-1] > values[0]


def test_separate_zero_mixture_stays_finite():
    rng = np.random.default_rng(6)
    m1, m2 = gen_model(rng, latent=F), gen_model(rng, latent=F)
    res = separate(np.zeros((F, 6)), m1, m2, SeparationConfig(iterations=300))
    assert np.all(np.isfinite(res.s1_hat.mag))
    assert all(np.isfinite(v) for _, v in res.trace)
    # the fit pushes both outputs down toward their smallest reachable frames
    assert res.trace[-1][1] > res.trace[0][1]


def test_separate_is_deterministic():
    rng = np.random.default_rng(7)
    m1, m2 = model_pair(rng, "gan")
    x = rng.random((F, 8))
    a = separate(x, m1, m2, SeparationConfig(iterations=100, seed=3))
    b = separate(x, m1, m2, SeparationConfig(iterations=100, seed=3))
    assert a.s1_hat.mag.tobytes() == b.s1_hat.mag.tobytes()


def test_separate_rejects_mixed_kinds():
    rng = np.random.default_rng(8)
    m1, _ = model_pair(rng, "ml_ae")
    nmf = TrainedSourceModel("nmf", NmfParams(rng.random((F, 3))))
    with pytest.raises(ConfigError):
        separate(rng.random((F, 4)), m1, nmf, SeparationConfig(iterations=1))


def band_model(F, band, hidden):
    """A model that can only emit energy inside ``band``; elsewhere ~1e-17."""
    idx = np.flatnonzero(band)
    W1 = np.zeros((hidden, F))
    W1[np.arange(idx.size), idx] = 1.0
    W2 = np.zeros((F, hidden))
    W2[idx, np.arange(idx.size)] = 1.0
    b2 = np.where(band, 0.0, -40.0)
    return TrainedSourceModel("ml_ae", GeneratorParams(W1, np.zeros(hidden), W2, b2))


def test_disjoint_support_oracle():
    sr, n = 16000, 16000
    rng = np.random.default_rng(11)
    freqs = np.fft.rfftfreq(n, 1 / sr)

    def band_noise(lo, hi):
        spec = np.fft.rfft(rng.standard_normal(n))
        spec[(freqs < lo) | (freqs > hi)] = 0
        return np.fft.irfft(spec, n)

    low, high = band_noise(200, 2500), band_noise(4500, 7500)
    mix = Waveform(low + high, sr)
    mag, phase = magnitude_phase(stft(mix))
    bins = np.fft.rfftfreq(1024, 1 / sr)
    split = bins < 3500
    m1 = band_model(513, split, int(split.sum()))
    m2 = band_model(513, ~split, int((~split).sum()))
    res = separate(mag, m1, m2, SeparationConfig(alpha=0.0, beta=0.1, iterations=200))
    scores = score_pair(res, [Waveform(low, sr), Waveform(high, sr)], (mag, phase))
    assert scores.permutation == (0, 1)
    for s in scores.per_source:
        assert s.sdr >= 20.0


# ---------------------------------------------------------------------- NMF

def nmf_models(rng, F=20, k=3):
    return (TrainedSourceModel("nmf", NmfParams(rng.uniform(0.1, 1, (F, k)))),
            TrainedSourceModel("nmf", NmfParams(rng.uniform(0.1, 1, (F, k)))))


def test_nmf_separate_monotone_and_span():
    rng = np.random.default_rng(9)
    m1, m2 = nmf_models(rng)
    W = np.hstack([m1.generator.W, m2.generator.W])
    x = W @ rng.uniform(0, 2, (6, 15))
    res = nmf_separate(x, m1, m2, SeparationConfig(iterations=2000, trace_every=1))
    values = [v for _, v in res.trace]
    assert all(b >= a - 1e-12 * abs(a) for a, b in zip(values, values[1:]))
    assert np.all(res.latents[0] >= 0) and np.all(res.latents[1] >= 0)
    fit = kl_divergence(x, res.s1_hat.mag + res.s2_hat.mag)
    assert fit < 1e-3 * kl_divergence(x, np.full_like(x, x.mean()))


def test_nmf_separate_via_separate_and_errors():
    rng = np.random.default_rng(10)
    m1, m2 = nmf_models(rng)
    x = rng.random((20, 5))
    res = separate(x, m1, m2, SeparationConfig(iterations=10))
    assert res.s1_hat.shape == (20, 5)
    with pytest.raises(DimensionError):
        nmf_separate(rng.random((21, 5)), m1, m2, SeparationConfig(iterations=1))
    g, _ = model_pair(rng, "ml_ae")
    with pytest.raises(ConfigError):
        nmf_separate(x, m1, g, SeparationConfig(iterations=1))


def test_callback_and_decode_agree_with_result():
    rng = np.random.default_rng(12)
    for m1, m2, x in [(*model_pair(rng, "wgan"), rng.random((F, 6))),
                      (*nmf_models(rng), rng.random((20, 6)))]:
        seen = {}

        def cb(it, lat):
            seen["it"] = it
            seen["est"] = decode(m1, lat["H1"]).copy()

        res = separate(x, m1, m2, SeparationConfig(iterations=30), callback=cb)
        assert seen["it"] == 29
        np.testing.assert_allclose(seen["est"], res.s1_hat.mag, rtol=1e-13)
