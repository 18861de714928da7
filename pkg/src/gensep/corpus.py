"""Synthetic two-speaker corpora and WAV-directory ingestion.

The synthetic voices are harmonic sources with a gliding, vibrato-modulated
pitch, syllable-like amplitude envelopes and a formant filter that changes
per syllable. "Male-like" and "female-like" speakers differ in pitch range
and formant scaling, so pairs overlap spectrally but remain separable.
"""
from dataclasses import asdict, dataclass, field
import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError
from .signal import (DEFAULT_HOP, DEFAULT_N_FFT, DEFAULT_SAMPLE_RATE,
                     MagnitudeSpectrogram, Waveform, magnitude_phase,
                     mix_at_0db, read_wav, stft, write_wav)

MANIFEST_FORMAT = "gensep-corpus/1"
PEAK = 0.9


@dataclass
class SpeakerProfile:
    f0_range: tuple
    formants: tuple            # (centre Hz, bandwidth Hz, gain) triples
    vibrato: tuple = (5.0, 0.01)   # (rate Hz, relative depth)
    tilt: float = 0.7          # harmonic amplitude ~ (k f0 / 100 Hz) ** -tilt
    breath: float = 0.02       # relative level of the aspiration noise

    def validate(self):
        lo, hi = self.f0_range
        if not 0 < lo <= hi:
            raise ConfigError(f"bad f0 range {self.f0_range}")
        if not self.formants or any(f <= 0 or b <= 0 for f, b, _ in self.formants):
            raise ConfigError("formants need positive centres and bandwidths")
        rate, depth = self.vibrato
        if rate < 0 or not 0 <= depth < 0.5:
            raise ConfigError(f"bad vibrato {self.vibrato}")
        return self


MALE = SpeakerProfile(f0_range=(85.0, 155.0),
                      formants=((500, 90, 1.0), (1450, 110, 0.6), (2450, 160, 0.3),
                                (3400, 220, 0.15)))
FEMALE = SpeakerProfile(f0_range=(165.0, 255.0),
                        formants=((620, 100, 1.0), (1800, 130, 0.7), (2950, 180, 0.35),
                                  (4100, 260, 0.2)))
PROFILES = {"male": MALE, "female": FEMALE}


@dataclass
class SignalConfig:
    sample_rate: int = DEFAULT_SAMPLE_RATE
    n_fft: int = DEFAULT_N_FFT
    hop: int = DEFAULT_HOP

    def validate(self):
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        if self.n_fft <= 0 or self.n_fft & (self.n_fft - 1):
            raise ConfigError(f"n_fft must be a power of two, got {self.n_fft}")
        if not 0 < self.hop <= self.n_fft:
            raise ConfigError(f"hop must be in (0, n_fft], got {self.hop}")
        return self


@dataclass
class CorpusConfig:
    pairs: int = 25
    seed: int = 0
    train_seconds: float = 30.0
    test_seconds: float = 3.0
    utterances: int = 10

    def validate(self):
        if self.pairs <= 0:
            raise ConfigError("pairs must be positive")
        if self.utterances < 2:
            raise ConfigError("need at least 2 utterances per speaker (train + test)")
        if self.train_seconds <= 0 or self.test_seconds <= 0:
            raise ConfigError("durations must be positive")
        return self


@dataclass
class SourceCorpus:
    train_frames: MagnitudeSpectrogram
    test_waveform: Waveform
    label: str
    seed: int
    train_utterances: list = field(default_factory=list)


@dataclass
class ExperimentPair:
    pair_id: str
    seed: int
    sources: tuple
    mixture: Waveform
    references: tuple

    def mixture_spectrogram(self, signal_cfg):
        return magnitude_phase(stft(self.mixture, signal_cfg.n_fft, signal_cfg.hop))


@dataclass
class ExperimentSet:
    pairs: list
    signal: SignalConfig
    config: CorpusConfig | None = None

    @property
    def count(self):
        return len(self.pairs)

    def digest(self):
        return corpus_hash(self)


def make_speaker(base, rng):
    """Draw one speaker: a pitch sub-range and formant scaling around ``base``."""
    lo, hi = base.f0_range
    centre = rng.uniform(lo + 0.25 * (hi - lo), hi - 0.25 * (hi - lo))
    half = 0.25 * (hi - lo)
    scale = rng.uniform(0.93, 1.07)
    formants = tuple((f * scale, b, g) for f, b, g in base.formants)
    vibrato = (rng.uniform(4.0, 6.5), rng.uniform(0.005, 0.02))
    return SpeakerProfile((centre - half, centre + half), formants, vibrato,
                          base.tilt, base.breath)


def _formant_gain(freqs, formants):
    g = np.full(freqs.shape, 0.02)
    for centre, bw, gain in formants:
        g += gain / (1.0 + ((freqs - centre) / (0.5 * bw)) ** 2)
    return g


def _segments(n, sr, rng):
    """Voiced spans as (start, stop) sample indices with pauses between."""
    spans = []
    pos = int(rng.uniform(0.02, 0.1) * sr)
    while pos < n:
        length = int(rng.uniform(0.12, 0.35) * sr)
        spans.append((pos, min(pos + length, n)))
        pos += length + int(rng.uniform(0.03, 0.12) * sr)
    return spans


def synth_source(profile, duration, sample_rate=DEFAULT_SAMPLE_RATE, seed=0):
    """One utterance from ``profile``: deterministic in ``seed``, peak 0.9."""
    if isinstance(profile, str):
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}")
        profile = PROFILES[profile]
    profile.validate()
    if duration <= 0:
        raise ConfigError("duration must be positive")
    rng = np.random.default_rng(seed)
    sr = sample_rate
    n = int(round(duration * sr))
    nyq = 0.5 * sr
    lo, hi = profile.f0_range
    out = np.zeros(n)
    t_all = np.arange(n) / sr
    vib_rate, vib_depth = profile.vibrato
    vib_phase = rng.uniform(0, 2 * np.pi)
    fmax = min(0.95 * nyq, 5000.0 + profile.formants[-1][0])

    for start, stop in _segments(n, sr, rng):
        m = stop - start
        if m < 8:
            continue
        t = t_all[start:stop]
        f_start, f_end = rng.uniform(lo, hi, size=2)
        f0 = np.linspace(f_start, f_end, m)
        f0 *= 1.0 + vib_depth * np.sin(2 * np.pi * vib_rate * t + vib_phase)
        phase = 2 * np.pi * np.cumsum(f0) / sr + rng.uniform(0, 2 * np.pi)
        # per-syllable vowel colour
        shift = rng.uniform(0.85, 1.15, size=len(profile.formants))
        formants = [(f * s, b, g) for (f, b, g), s in zip(profile.formants, shift)]
        seg = np.zeros(m)
        for k in range(1, int(fmax / lo) + 1):
            fk = k * f0
            active = fk < fmax
            if not active.any():
                break
            amp = _formant_gain(fk, formants) * (fk / 100.0) ** (-profile.tilt)
            seg += np.where(active, amp, 0.0) * np.sin(k * phase)
        env = np.sin(np.pi * np.arange(m) / m) ** 1.5
        level = rng.uniform(0.6, 1.0)
        breath = profile.breath * rng.standard_normal(m)
        out[start:stop] += level * env * (seg + breath * np.abs(seg).max())

    peak = np.abs(out).max()
    if peak == 0:
        raise InputError("synthesized an empty utterance (duration too short)")
    return Waveform(PEAK * out / peak, sr)


def spectral_centroid(w, n_fft=DEFAULT_N_FFT, hop=DEFAULT_HOP):
    """Energy-weighted mean frequency of a waveform, in Hz."""
    mag = np.abs(stft(w, n_fft, hop).data)
    power = mag ** 2
    freqs = np.arange(mag.shape[0]) * w.sample_rate / n_fft
    return float((freqs[:, None] * power).sum() / power.sum())


def _frames_of(utterances, signal_cfg):
    mags = [magnitude_phase(stft(u, signal_cfg.n_fft, signal_cfg.hop))[0].mag for u in utterances]
    return MagnitudeSpectrogram(np.hstack(mags), signal_cfg.n_fft, signal_cfg.hop, None,
                                signal_cfg.sample_rate)


def build_source_corpus(speaker, label, seed, corpus_cfg, signal_cfg):
    n_train = corpus_cfg.utterances - 1
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n_train + 1)]
    per = corpus_cfg.train_seconds / n_train
    train = [synth_source(speaker, per, signal_cfg.sample_rate, s) for s in seeds[:-1]]
    test = synth_source(speaker, corpus_cfg.test_seconds, signal_cfg.sample_rate, seeds[-1])
    return SourceCorpus(_frames_of(train, signal_cfg), test, label, seed, train)


def ingest_wav_dir(path, signal_cfg=None, label=None):
    """Load a speaker directory: the lexicographically last WAV is the test file."""
    signal_cfg = signal_cfg or SignalConfig()
    path = Path(path)
    if not path.is_dir():
        raise InputError(f"{path} is not a directory")
    files = sorted(p for p in path.iterdir() if p.suffix.lower() == ".wav")
    if len(files) < 2:
        raise InputError(f"{path}: need at least 2 WAV files (train + test), found {len(files)}")
    waves = [read_wav(f, signal_cfg.sample_rate) for f in files]
    return SourceCorpus(_frames_of(waves[:-1], signal_cfg), waves[-1], label or path.name, 0,
                        waves[:-1])


def build_experiment_set(corpus_cfg=None, signal_cfg=None):
    """Speaker pairs (male-like, female-like) with test mixtures at 0 dB."""
    corpus_cfg = (corpus_cfg or CorpusConfig()).validate()
    signal_cfg = (signal_cfg or SignalConfig()).validate()
    pair_seqs = np.random.SeedSequence(corpus_cfg.seed).spawn(corpus_cfg.pairs)
    pairs = []
    for idx, seq in enumerate(pair_seqs):
        pair_seed = int(seq.generate_state(1)[0])
        spk_seq, a_seq, b_seq = seq.spawn(3)
        rng = np.random.default_rng(spk_seq)
        male = make_speaker(MALE, rng)
        female = make_speaker(FEMALE, rng)
        a = build_source_corpus(male, "male", int(a_seq.generate_state(1)[0]), corpus_cfg,
                                signal_cfg)
        b = build_source_corpus(female, "female", int(b_seq.generate_state(1)[0]), corpus_cfg,
                                signal_cfg)
        mix, ra, rb = mix_at_0db(a.test_waveform, b.test_waveform)
        gain = min(1.0, PEAK / np.abs(mix.samples).max())
        mix, ra, rb = (Waveform(w.samples * gain, w.sample_rate) for w in (mix, ra, rb))
        pairs.append(ExperimentPair(f"pair_{idx:02d}", pair_seed, (a, b), mix, (ra, rb)))
    return ExperimentSet(pairs, signal_cfg, corpus_cfg)


def corpus_hash(es):
    h = hashlib.sha256()
    h.update(json.dumps(asdict(es.signal), sort_keys=True).encode())
    for pair in es.pairs:
        h.update(pair.pair_id.encode())
        for src in pair.sources:
            h.update(np.ascontiguousarray(src.train_frames.mag).tobytes())
        for w in (pair.mixture, *pair.references):
            h.update(w.samples.tobytes())
    return h.hexdigest()[:16]


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_experiment_set(es, out_dir):
    """Write WAVs plus ``manifest.json``; returns the manifest dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for pair in es.pairs:
        pdir = out / pair.pair_id
        src_entries = []
        for k, src in enumerate(pair.sources, 1):
            sdir = pdir / f"source_{k}"
            sdir.mkdir(parents=True, exist_ok=True)
            files = []
            for u, wav in enumerate([*src.train_utterances, src.test_waveform]):
                fp = sdir / f"utt_{u:02d}.wav"
                write_wav(fp, wav)
                files.append({"path": str(fp.relative_to(out)), "sha256": _sha256(fp)})
            src_entries.append({"label": src.label, "seed": src.seed,
                                "dir": str(sdir.relative_to(out)), "files": files})
        audio = {}
        for name, wav in (("mixture", pair.mixture), ("ref_1", pair.references[0]),
                          ("ref_2", pair.references[1])):
            fp = pdir / f"{name}.wav"
            write_wav(fp, wav)
            audio[name] = {"path": str(fp.relative_to(out)), "sha256": _sha256(fp)}
        entries.append({"pair_id": pair.pair_id, "seed": pair.seed, "sources": src_entries,
                        **audio})
    manifest = {"format": MANIFEST_FORMAT, "signal": asdict(es.signal),
                "corpus": asdict(es.config) if es.config else None, "pairs": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_experiment_set(corpus_dir):
    root = Path(corpus_dir)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read corpus manifest in {root}: {exc}") from exc
    if manifest.get("format") != MANIFEST_FORMAT:
        raise InputError(f"{root}: unrecognised manifest format {manifest.get('format')!r}")
    signal_cfg = SignalConfig(**manifest["signal"]).validate()
    pairs = []
    for entry in manifest["pairs"]:
        sources = tuple(ingest_wav_dir(root / s["dir"], signal_cfg, s["label"])
                        for s in entry["sources"])
        for src, s in zip(sources, entry["sources"]):
            src.seed = s["seed"]
        mix = read_wav(root / entry["mixture"]["path"], signal_cfg.sample_rate)
        refs = tuple(read_wav(root / entry[k]["path"], signal_cfg.sample_rate)
                     for k in ("ref_1", "ref_2"))
        pairs.append(ExperimentPair(entry["pair_id"], entry["seed"], sources, mix, refs))
    cfg = CorpusConfig(**manifest["corpus"]) if manifest.get("corpus") else None
    return ExperimentSet(pairs, signal_cfg, cfg)
