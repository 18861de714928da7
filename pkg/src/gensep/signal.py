"""STFT analysis/synthesis, 0 dB mixing, Wiener reconstruction and WAV I/O."""
from dataclasses import dataclass
import wave

import numpy as np

from .errors import ConfigError, DimensionError, InputError

DEFAULT_SAMPLE_RATE = 16000
DEFAULT_N_FFT = 1024
DEFAULT_HOP = 256
MASK_FLOOR = 1e-12


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ConfigError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise InputError("waveform contains non-finite samples")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.samples.size / self.sample_rate

    def rms(self):
        return float(np.sqrt(np.mean(self.samples ** 2))) if self.samples.size else 0.0


@dataclass
class ComplexSpectrogram:
    """One-sided STFT, F x T with F = n_fft // 2 + 1.

    ``length`` is the sample count of the analysed waveform; when known,
    ``istft`` strips the analysis padding and returns exactly that many samples.
    """
    data: np.ndarray
    n_fft: int = DEFAULT_N_FFT
    hop: int = DEFAULT_HOP
    length: int | None = None
    sample_rate: int = DEFAULT_SAMPLE_RATE

    @property
    def re(self):
        return self.data.real

    @property
    def im(self):
        return self.data.imag

    @property
    def shape(self):
        return self.data.shape


@dataclass
class MagnitudeSpectrogram:
    mag: np.ndarray
    n_fft: int = DEFAULT_N_FFT
    hop: int = DEFAULT_HOP
    length: int | None = None
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.mag = np.asarray(self.mag, dtype=np.float64)
        if np.any(self.mag < 0):
            raise InputError("magnitude spectrogram has negative entries")

    @property
    def shape(self):
        return self.mag.shape


def hann(n):
    """Periodic Hann window; satisfies COLA at hop n/4 for squared overlap-add."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _check_frame_params(n_fft, hop):
    if n_fft <= 0 or n_fft & (n_fft - 1):
        raise ConfigError(f"n_fft must be a power of two, got {n_fft}")
    if not 0 < hop <= n_fft:
        raise ConfigError(f"hop must satisfy 0 < hop <= n_fft, got {hop}")


def _pad_widths(length, n_fft, hop):
    # Leading pad puts the first real sample where n_fft/hop frames overlap.
    lead = n_fft - hop
    total = lead + length + lead
    extra = (-(total - n_fft)) % hop
    return lead, lead + extra


def stft(w, n_fft=DEFAULT_N_FFT, hop=DEFAULT_HOP):
    _check_frame_params(n_fft, hop)
    x = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    rate = w.sample_rate if isinstance(w, Waveform) else DEFAULT_SAMPLE_RATE
    if x.size == 0:
        raise InputError("cannot take the STFT of an empty waveform")
    lead, trail = _pad_widths(x.size, n_fft, hop)
    padded = np.concatenate([np.zeros(lead), x, np.zeros(trail)])
    n_frames = 1 + (padded.size - n_fft) // hop
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = padded[idx] * hann(n_fft)
    data = np.fft.rfft(frames, axis=1).T
    return ComplexSpectrogram(np.ascontiguousarray(data), n_fft, hop, x.size, rate)


def _ola_envelope(win_sq, hop, n_frames):
    n_fft = win_sq.size
    env = np.zeros((n_frames - 1) * hop + n_fft)
    for t in range(n_frames):
        env[t * hop:t * hop + n_fft] += win_sq
    return env


def istft(S):
    """Weighted overlap-add inverse of :func:`stft`.

    When the window/hop pair satisfies COLA the synthesis gain is the constant
    ``sum(w**2) / hop``; otherwise the exact overlap envelope is divided out.
    """
    F, T = S.data.shape
    n_fft, hop = S.n_fft, S.hop
    _check_frame_params(n_fft, hop)
    if F != n_fft // 2 + 1:
        raise DimensionError(f"spectrogram has {F} bins, expected {n_fft // 2 + 1}")
    win = hann(n_fft)
    frames = np.fft.irfft(S.data.T, n=n_fft, axis=1) * win
    out = np.zeros((T - 1) * hop + n_fft)
    for t in range(T):
        out[t * hop:t * hop + n_fft] += frames[t]

    win_sq = win * win
    gain = win_sq.sum() / hop
    probe = _ola_envelope(win_sq, hop, n_fft // hop + 2)
    interior = probe[n_fft - hop:probe.size - (n_fft - hop)]
    if interior.size and np.allclose(interior, gain, rtol=1e-10, atol=0):
        out /= gain
    else:
        env = _ola_envelope(win_sq, hop, T)
        nz = env > 1e-10
        out[nz] /= env[nz]
        out[~nz] = 0.0

    if S.length is not None:
        lead = n_fft - hop
        out = out[lead:lead + S.length]
    return Waveform(out, S.sample_rate)


def magnitude_phase(S):
    """Split into magnitude and unit-modulus phase; zero cells get phase 1+0j."""
    data = S.data
    mag = np.abs(data)
    phase = np.ones_like(data)
    nz = mag > 0
    phase[nz] = data[nz] / mag[nz]
    return MagnitudeSpectrogram(mag, S.n_fft, S.hop, S.length, S.sample_rate), phase


def mix_at_0db(a, b):
    """Rescale ``b`` to the RMS of ``a`` and add them.

    Returns ``(mixture, a_scaled, b_scaled)``, all zero-padded to the longer
    length. ``a_scaled`` is ``a`` itself (padded).
    """
    if a.sample_rate != b.sample_rate:
        raise InputError(f"sample rates differ: {a.sample_rate} vs {b.sample_rate}")
    ra, rb = a.rms(), b.rms()
    if ra == 0 or rb == 0:
        raise InputError("cannot mix a silent signal at 0 dB")
    n = max(len(a), len(b))
    sa = np.zeros(n)
    sa[:len(a)] = a.samples
    sb = np.zeros(n)
    sb[:len(b)] = b.samples * (ra / rb)
    rate = a.sample_rate
    return Waveform(sa + sb, rate), Waveform(sa, rate), Waveform(sb, rate)


def wiener_masks(s1_hat, s2_hat):
    s1 = np.asarray(getattr(s1_hat, "mag", s1_hat), dtype=np.float64)
    s2 = np.asarray(getattr(s2_hat, "mag", s2_hat), dtype=np.float64)
    if s1.shape != s2.shape:
        raise DimensionError(f"estimate shapes differ: {s1.shape} vs {s2.shape}")
    if np.any(s1 < 0) or np.any(s2 < 0):
        raise InputError("source estimates must be non-negative")
    total = s1 + s2
    floored = np.maximum(total, MASK_FLOOR)
    m1 = np.where(total > MASK_FLOOR, s1 / floored, 0.5)
    return m1, 1.0 - m1


def wiener_reconstruct(s1_hat, s2_hat, mix_mag, mix_phase):
    """Soft-mask the mixture by each estimate's share and invert to waveforms."""
    m1, m2 = wiener_masks(s1_hat, s2_hat)
    if m1.shape != mix_mag.mag.shape or m1.shape != np.shape(mix_phase):
        raise DimensionError(
            f"estimate shape {m1.shape} does not match mixture {mix_mag.mag.shape}")
    mix = mix_mag.mag * mix_phase
    meta = dict(n_fft=mix_mag.n_fft, hop=mix_mag.hop, length=mix_mag.length,
                sample_rate=mix_mag.sample_rate)
    y1 = istft(ComplexSpectrogram(m1 * mix, **meta))
    y2 = istft(ComplexSpectrogram(m2 * mix, **meta))
    return y1, y2


def read_wav(path, expected_rate=None):
    """Read a 16-bit PCM mono WAV as floats in [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError) as exc:
        raise InputError(f"{path}: not a readable WAV file ({exc})") from exc
    if channels != 1 or width != 2:
        raise InputError(f"{path}: expected 16-bit mono PCM, got {channels} ch x {8 * width} bit")
    if expected_rate is not None and rate != expected_rate:
        raise InputError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz "
                         "(resampling is not supported)")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def write_wav(path, w):
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(w.sample_rate))
        fh.writeframes(pcm.tobytes())
