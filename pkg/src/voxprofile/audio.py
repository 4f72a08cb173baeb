"""Audio frontend: loading, stochastic augmentations, log-mel features.

All augmentations are pure functions of (input, parameters, rng state): the
same seeded numpy Generator produces bit-identical output, so data loading
can run in parallel across examples without shared state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile
from scipy.signal import fftconvolve, resample_poly

from .errors import (
    AudioFormatError,
    DataError,
    DegenerateInputError,
    ParameterError,
    ShapeError,
)

PIPELINE_RATE = 16000
MEL_BINS = 128
WIN_LENGTH = 400   # 25 ms at 16 kHz
HOP_LENGTH = 160   # 10 ms at 16 kHz
N_FFT = 512
LOG_FLOOR = 1e-10


@dataclass
class Waveform:
    """Mono audio: float samples nominally in [-1, 1] plus a sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DataError(f"expected mono samples, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise DataError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def num_samples(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return self.num_samples / self.sample_rate

    def power(self) -> float:
        return float(np.mean(self.samples**2)) if self.num_samples else 0.0


@dataclass
class MelSpectrogram:
    """Log-energy mel features, shape (128, T)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != MEL_BINS:
            raise ShapeError(
                f"expected ({MEL_BINS}, T) mel matrix, got shape {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise DataError("mel spectrogram contains non-finite values")

    @property
    def num_frames(self) -> int:
        return self.values.shape[1]


@dataclass
class AugmentationPolicy:
    """Ranges and enable flags for the four training-time augmentations.

    Each enabled augmentation fires independently with ``apply_prob`` per
    example per epoch, in the order: reverb, noise, drop frequency, time cut.
    """

    snr_db_range: tuple = (10.0, 20.0)
    reverb_decay_range: tuple = (0.5, 2.0)
    drop_band_range: tuple = (500.0, 2000.0)
    cut_range_ms: tuple = (100.0, 500.0)
    enable_reverb: bool = True
    enable_noise: bool = True
    enable_drop_frequency: bool = True
    enable_time_cut: bool = True
    apply_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("snr_db_range", "reverb_decay_range", "drop_band_range", "cut_range_ms"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ParameterError(f"{name}: low {lo} > high {hi}")
        if not 0.0 <= self.apply_prob <= 1.0:
            raise ParameterError(f"apply_prob must be in [0, 1], got {self.apply_prob}")

    @classmethod
    def from_dict(cls, raw: dict) -> "AugmentationPolicy":
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(raw) - known
        if unknown:
            raise DataError(f"unknown augmentation policy keys: {sorted(unknown)}")
        coerced = {
            k: tuple(v) if isinstance(v, (list, tuple)) else v for k, v in raw.items()
        }
        return cls(**coerced)


def load_and_resample(path, target_rate: int = PIPELINE_RATE) -> Waveform:
    """Read a PCM wav file, down-mix to mono, and resample to target_rate."""
    try:
        rate, data = wavfile.read(path)
    except OSError:
        raise
    except Exception as exc:  # scipy raises ValueError on undecodable content
        raise AudioFormatError(f"cannot decode {path}: {exc}") from exc
    if data.ndim == 2:
        data = data.mean(axis=1)
    elif data.ndim != 1:
        raise AudioFormatError(f"unsupported channel layout {data.shape} in {path}")
    if np.issubdtype(data.dtype, np.integer):
        scale = float(np.iinfo(data.dtype).max)
        samples = data.astype(np.float64) / scale
    else:
        samples = data.astype(np.float64)
    samples = np.clip(samples, -1.0, 1.0)
    wav = Waveform(samples, int(rate))
    return resample(wav, target_rate)


def resample(wav: Waveform, target_rate: int) -> Waveform:
    """Polyphase resample; identity when rates already match."""
    if target_rate <= 0:
        raise ParameterError(f"target_rate must be positive, got {target_rate}")
    if wav.sample_rate == target_rate:
        return wav
    from math import gcd

    g = gcd(wav.sample_rate, target_rate)
    up, down = target_rate // g, wav.sample_rate // g
    out = resample_poly(wav.samples, up, down)
    return Waveform(out, target_rate)


def add_noise(wav: Waveform, snr_db: float, rng: np.random.Generator) -> Waveform:
    """Add white noise scaled so that 10*log10(P_signal/P_noise) == snr_db."""
    p_signal = wav.power()
    if p_signal <= 0.0:
        raise DegenerateInputError("SNR undefined for silent input")
    noise = rng.standard_normal(wav.num_samples)
    p_noise_raw = float(np.mean(noise**2))
    target_p_noise = p_signal / (10.0 ** (snr_db / 10.0))
    noise *= np.sqrt(target_p_noise / p_noise_raw)
    return Waveform(wav.samples + noise, wav.sample_rate)


def exponential_ir(decay_s: float, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """Synthetic room impulse response: unit direct path followed by a
    white-noise tail whose energy decays 60 dB over decay_s seconds."""
    if decay_s <= 0:
        raise ParameterError(f"decay must be positive, got {decay_s}")
    n = max(int(round(decay_s * sample_rate)), 2)
    t = np.arange(n) / sample_rate
    # amplitude envelope exp(-k t) with 20*log10(exp(-k*decay_s)) == -60
    k = 3.0 * np.log(10.0) / decay_s
    tail = rng.standard_normal(n) * np.exp(-k * t)
    ir = tail
    ir[0] = 1.0
    return ir / np.sqrt(np.sum(ir**2))


def convolve_ir(wav: Waveform, ir: np.ndarray) -> Waveform:
    """Convolve with an impulse response, truncated to the input length."""
    ir = np.asarray(ir, dtype=np.float64)
    if ir.ndim != 1 or len(ir) == 0:
        raise ParameterError("impulse response must be a non-empty 1-d array")
    out = fftconvolve(wav.samples, ir)[: wav.num_samples]
    return Waveform(out, wav.sample_rate)


def add_reverb(wav: Waveform, decay_s: float, rng: np.random.Generator) -> Waveform:
    return convolve_ir(wav, exponential_ir(decay_s, wav.sample_rate, rng))


def band_stop(wav: Waveform, low_hz: float, high_hz: float, attenuation_db: float = 30.0) -> Waveform:
    """Attenuate [low_hz, high_hz] by attenuation_db via an FFT mask.

    Bins outside the band are untouched, so out-of-band energy change is 0.
    """
    if not 0 < low_hz < high_hz < wav.sample_rate / 2:
        raise ParameterError(f"invalid band [{low_hz}, {high_hz}] at fs={wav.sample_rate}")
    spectrum = np.fft.rfft(wav.samples)
    freqs = np.fft.rfftfreq(wav.num_samples, d=1.0 / wav.sample_rate)
    in_band = (freqs >= low_hz) & (freqs <= high_hz)
    spectrum[in_band] *= 10.0 ** (-attenuation_db / 20.0)
    out = np.fft.irfft(spectrum, n=wav.num_samples)
    return Waveform(out, wav.sample_rate)


def draw_drop_band(rng: np.random.Generator, band_range=(500.0, 2000.0), min_width_hz: float = 100.0):
    """Pick a random band inside band_range, at least min_width_hz wide."""
    lo_limit, hi_limit = band_range
    low = rng.uniform(lo_limit, hi_limit - min_width_hz)
    high = rng.uniform(low + min_width_hz, hi_limit)
    return float(low), float(high)


def drop_frequency(wav: Waveform, rng: np.random.Generator, policy: AugmentationPolicy | None = None) -> Waveform:
    """Attenuate a randomly drawn band inside the policy's drop range."""
    band_range = policy.drop_band_range if policy else (500.0, 2000.0)
    low, high = draw_drop_band(rng, band_range)
    return band_stop(wav, low, high)


def random_time_cut(wav: Waveform, rng: np.random.Generator, cut_range_ms=(100.0, 500.0)) -> Waveform:
    """Excise one contiguous segment of cut_range_ms duration."""
    max_cut = int(round(cut_range_ms[1] / 1000.0 * wav.sample_rate))
    if wav.num_samples <= max_cut + HOP_LENGTH:
        raise DegenerateInputError(
            f"input of {wav.num_samples} samples too short for a {cut_range_ms[1]} ms cut"
        )
    cut_ms = rng.uniform(*cut_range_ms)
    cut = int(round(cut_ms / 1000.0 * wav.sample_rate))
    start = int(rng.integers(0, wav.num_samples - cut + 1))
    out = np.concatenate([wav.samples[:start], wav.samples[start + cut:]])
    return Waveform(out, wav.sample_rate)


def apply_augmentations(wav: Waveform, policy: AugmentationPolicy, rng: np.random.Generator) -> Waveform:
    """Run the augmentation pipeline; each enabled stage fires with apply_prob."""
    if policy.enable_reverb and rng.random() < policy.apply_prob:
        wav = add_reverb(wav, float(rng.uniform(*policy.reverb_decay_range)), rng)
    if policy.enable_noise and rng.random() < policy.apply_prob:
        wav = add_noise(wav, float(rng.uniform(*policy.snr_db_range)), rng)
    if policy.enable_drop_frequency and rng.random() < policy.apply_prob:
        wav = drop_frequency(wav, rng, policy)
    if policy.enable_time_cut and rng.random() < policy.apply_prob:
        min_cut = int(round(policy.cut_range_ms[1] / 1000.0 * wav.sample_rate))
        if wav.num_samples > min_cut + HOP_LENGTH:
            wav = random_time_cut(wav, rng, policy.cut_range_ms)
    return wav


def frame_count(num_samples: int) -> int:
    """Frames fully inside the signal: 1 + floor((N - 400) / 160)."""
    return 1 + (num_samples - WIN_LENGTH) // HOP_LENGTH


def mel_filterbank(n_mels: int = MEL_BINS, n_fft: int = N_FFT, sample_rate: int = PIPELINE_RATE,
                   f_min: float = 0.0, f_max: float | None = None) -> np.ndarray:
    """Triangular mel filterbank (HTK mel scale), shape (n_mels, n_fft//2 + 1)."""
    f_max = f_max if f_max is not None else sample_rate / 2.0

    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)

    mel_points = np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    bin_freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    fb = np.zeros((n_mels, len(bin_freqs)))
    for i in range(n_mels):
        left, center, right = hz_points[i], hz_points[i + 1], hz_points[i + 2]
        rising = (bin_freqs - left) / max(center - left, 1e-12)
        falling = (right - bin_freqs) / max(right - center, 1e-12)
        fb[i] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


_FILTERBANK_CACHE: dict = {}


def _cached_filterbank() -> np.ndarray:
    key = (MEL_BINS, N_FFT, PIPELINE_RATE)
    if key not in _FILTERBANK_CACHE:
        _FILTERBANK_CACHE[key] = mel_filterbank()
    return _FILTERBANK_CACHE[key]


def log_mel(wav: Waveform) -> MelSpectrogram:
    """128-bin log-mel features: 25 ms Hamming window, 10 ms hop, no padding."""
    if wav.sample_rate != PIPELINE_RATE:
        raise ParameterError(
            f"log_mel expects {PIPELINE_RATE} Hz input, got {wav.sample_rate}"
        )
    n = wav.num_samples
    if n < WIN_LENGTH:
        raise DegenerateInputError(f"need at least {WIN_LENGTH} samples, got {n}")
    t = frame_count(n)
    strides = wav.samples.strides[0]
    frames = np.lib.stride_tricks.as_strided(
        wav.samples, shape=(t, WIN_LENGTH), strides=(HOP_LENGTH * strides, strides)
    )
    window = np.hamming(WIN_LENGTH)
    spectrum = np.fft.rfft(frames * window, n=N_FFT, axis=1)
    power = np.abs(spectrum) ** 2
    mel_energy = power @ _cached_filterbank().T
    values = np.log(np.maximum(mel_energy, LOG_FLOOR)).T
    return MelSpectrogram(values)
