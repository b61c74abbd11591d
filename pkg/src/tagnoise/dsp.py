"""Audio front-end: resampling, snippets, STFT power, mel projection, dB scaling."""
import struct
from dataclasses import dataclass
from functools import lru_cache
from math import gcd

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.io import wavfile
from scipy.signal import resample_poly
from .errors import InvalidInput

SAMPLE_RATE = 16000
N_FFT = 2048
HOP = 512
N_MELS = 96
F_MIN = 40.0
F_MAX = 8000.0
SNIPPET_SECONDS = 3.0
SNIPPET_SAMPLES = int(SNIPPET_SECONDS * SAMPLE_RATE)
AMIN = 1e-10
DB_FLOOR = -100.0


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or s.size == 0:
            raise InvalidInput("waveform must be a non-empty 1-D sample array")
        if not np.all(np.isfinite(s)):
            raise InvalidInput("waveform contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise InvalidInput(f"sample rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray
    center_freqs: np.ndarray
    f_min: float
    f_max: float
    sample_rate: int
    n_fft: int

    @property
    def n_mels(self):
        return self.weights.shape[0]


@dataclass(frozen=True)
class MelSpectrogram:
    values: np.ndarray
    hop: int = HOP
    frame_len: int = N_FFT

    @property
    def frames(self):
        return self.values.shape[0]


def resample(w, target_rate):
    """Polyphase windowed-sinc resampling; returns ``w`` itself when rates match."""
    if target_rate <= 0:
        raise InvalidInput(f"target rate must be positive, got {target_rate}")
    if w.sample_rate == target_rate:
        return w
    g = gcd(int(target_rate), w.sample_rate)
    up, down = int(target_rate) // g, w.sample_rate // g
    return Waveform(resample_poly(w.samples, up, down), int(target_rate))


def circular_pad(w, target_len):
    """Tile ``w`` until it is at least ``target_len`` samples long."""
    if target_len <= 0:
        raise InvalidInput("target length must be positive")
    n = len(w)
    if n >= target_len:
        return w
    return Waveform(np.resize(w.samples, target_len), w.sample_rate)


def extract_snippet(w, rng, duration_s=SNIPPET_SECONDS):
    if w.sample_rate != SAMPLE_RATE:
        raise InvalidInput(f"snippets are cut from {SAMPLE_RATE} Hz audio, got {w.sample_rate} Hz")
    n = int(round(duration_s * w.sample_rate))
    if len(w) <= n:
        return circular_pad(w, n)
    start = int(rng.integers(0, len(w) - n + 1))
    return Waveform(w.samples[start : start + n], w.sample_rate)


def n_frames(length, n_fft=N_FFT, hop=HOP):
    return 1 + (length - n_fft) // hop


@lru_cache(maxsize=None)
def hann(n=N_FFT):
    # periodic Hann, the usual STFT analysis window
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_power(w, n_fft=N_FFT, hop=HOP):
    """Frames x (n_fft/2 + 1) squared magnitudes; frame t starts at sample t*hop."""
    x = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    if x.size < n_fft:
        raise InvalidInput(f"waveform has {x.size} samples, shorter than one {n_fft}-sample frame")
    frames = sliding_window_view(x, n_fft)[::hop] * hann(n_fft)
    spec = np.fft.rfft(frames, axis=1)
    return spec.real**2 + spec.imag**2


def hz_to_mel(f):
    """HTK mel scale."""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise InvalidInput("frequency must be non-negative")
    m = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(m) if m.ndim == 0 else m


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def build_mel_filterbank(sr=SAMPLE_RATE, n_fft=N_FFT, n_mels=N_MELS, f_min=F_MIN, f_max=F_MAX):
    """Triangular filters with peaks equally spaced in mel between ``f_min`` and ``f_max``.

    Filter k rises from edge k to a unit peak at edge k+1 and falls to zero at
    edge k+2, where the n_mels + 2 edges span [f_min, f_max] uniformly in mel.
    """
    if not 0 <= f_min < f_max:
        raise InvalidInput(f"need 0 <= f_min < f_max, got {f_min}, {f_max}")
    if f_max > sr / 2:
        raise InvalidInput(f"f_max {f_max} exceeds Nyquist {sr / 2}")
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    fft_freqs = np.arange(n_fft // 2 + 1) * sr / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (fft_freqs - lo) / (mid - lo)
    falling = (hi - fft_freqs) / (hi - mid)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    weights.setflags(write=False)
    centers = edges[1:-1].copy()
    centers.setflags(write=False)
    return MelFilterbank(weights, centers, float(f_min), float(f_max), int(sr), int(n_fft))


def power_to_db(p):
    p = np.asarray(p, dtype=np.float64)
    return np.maximum(10.0 * np.log10(np.maximum(p, AMIN)), DB_FLOOR)


def compute_features(w):
    """dB mel spectrogram (frames x 96) of ``w``; no normalisation is applied.

    Audio at other rates is resampled to 16 kHz first. Inputs shorter than one
    FFT frame are rejected; callers pad.
    """
    w = resample(w, SAMPLE_RATE)
    fb = build_mel_filterbank()
    mel = stft_power(w) @ fb.weights.T
    return MelSpectrogram(power_to_db(mel))


def read_wav(path):
    """Load PCM16/PCM32/float WAV audio, averaging channels down to mono."""
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        x = data / 32768.0
    elif data.dtype == np.int32:
        x = data / 2147483648.0
    elif data.dtype.kind == "f":
        x = data.astype(np.float64)
    else:
        raise InvalidInput(f"{path}: unsupported WAV sample type {data.dtype}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    return Waveform(x, rate)


def write_wav(path, w, float32=False):
    if float32:
        wavfile.write(path, w.sample_rate, w.samples.astype(np.float32))
    else:
        pcm = np.round(np.clip(w.samples, -1.0, 32767 / 32768) * 32768.0).astype("<i2")
        wavfile.write(path, w.sample_rate, pcm)


def save_features(path, mel):
    v = np.ascontiguousarray(mel.values, dtype="<f4")
    with open(path, "wb") as f:
        f.write(struct.pack("<II", *v.shape))
        f.write(v.tobytes())


def load_features(path):
    with open(path, "rb") as f:
        blob = f.read()
    frames, bins = struct.unpack_from("<II", blob)
    if len(blob) != 8 + 4 * frames * bins:
        raise InvalidInput(f"{path}: feature cache size does not match its header")
    values = np.frombuffer(blob, dtype="<f4", offset=8).reshape(frames, bins)
    return MelSpectrogram(values.astype(np.float64))
