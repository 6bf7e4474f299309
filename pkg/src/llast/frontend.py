"""Waveform ingestion, integer-factor resampling and log-mel features."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels as K
from .errors import ConfigError, IntegrityError, LengthError

ACCEPTED_RATES = (16000, 48000)
RAW_MAGIC = b"RAWF"


@dataclass
class AudioWaveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ConfigError("waveform must be a non-empty 1-D array")
        if int(self.sample_rate) <= 0:
            raise ConfigError(f"sample rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)

    @property
    def duration(self):
        return self.samples.size / self.sample_rate


@dataclass
class AcousticFeatures:
    frames: np.ndarray  # [T, n_mels]
    frame_hop_s: float
    n_mels: int

    @property
    def T(self):
        return self.frames.shape[0]


@dataclass
class FrontendConfig:
    sample_rate: int = 16000
    n_mels: int = 80
    win: int = 400
    hop: int = 160
    log_floor: float = math.log(1e-10)
    normalize: bool = True

    def __post_init__(self):
        if self.sample_rate != 16000:
            raise ConfigError("features are computed at 16 kHz")
        if self.n_mels < 1 or self.win < 2 or self.hop < 1:
            raise ConfigError(f"bad frontend dims: n_mels={self.n_mels} win={self.win} hop={self.hop}")


# ---------------------------------------------------------------------------
# IO
# ---------------------------------------------------------------------------


def write_raw(path, w: AudioWaveform):
    data = np.asarray(w.samples, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC + struct.pack("<II", w.sample_rate, data.size) + data.tobytes())


def read_raw(path) -> AudioWaveform:
    buf = Path(path).read_bytes()
    if len(buf) < 12 or buf[:4] != RAW_MAGIC:
        raise IntegrityError(f"{path}: not a RAWF file")
    rate, n = struct.unpack("<II", buf[4:12])
    if len(buf) != 12 + 4 * n:
        raise IntegrityError(f"{path}: header says {n} samples, payload has {(len(buf) - 12) // 4}")
    return _ingest(np.frombuffer(buf, dtype="<f4", offset=12, count=n).astype(np.float32), rate, path)


def read_wav(path) -> AudioWaveform:
    from scipy.io import wavfile

    try:
        rate, data = wavfile.read(path)
    except ValueError as e:
        raise IntegrityError(f"{path}: {e}") from None
    if data.ndim != 1:
        raise ConfigError(f"{path}: only single-channel audio is supported")
    if data.dtype == np.int16:
        data = data.astype(np.float32) / 32768.0
    elif data.dtype == np.float32:
        pass
    else:
        raise ConfigError(f"{path}: unsupported sample format {data.dtype}")
    return _ingest(data, rate, path)


def load_audio(path) -> AudioWaveform:
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == RAW_MAGIC:
        return read_raw(path)
    if head == b"RIFF":
        return read_wav(path)
    raise IntegrityError(f"{path}: unrecognized audio format")


def _ingest(samples, rate, path):
    if rate not in ACCEPTED_RATES:
        raise ConfigError(f"{path}: sample rate {rate} not in {ACCEPTED_RATES}")
    if samples.size == 0:
        raise IntegrityError(f"{path}: empty audio")
    return AudioWaveform(samples, rate)


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------


def lowpass_taps(factor, half_width=None):
    """Hann-windowed sinc with cutoff at 1/factor of the (upsampled) Nyquist rate."""
    half = 10 * factor if half_width is None else half_width
    n = np.arange(-half, half + 1)
    cutoff = 1.0 / factor
    h = cutoff * np.sinc(cutoff * n)
    h *= 0.5 * (1.0 + np.cos(np.pi * n / (half + 1)))
    return h / h.sum()


def resample(w: AudioWaveform, target_rate: int) -> AudioWaveform:
    src = w.sample_rate
    if target_rate == src:
        return AudioWaveform(w.samples.copy(), src)
    if target_rate <= 0:
        raise ConfigError(f"bad target rate {target_rate}")
    if src % target_rate == 0:
        up, down = 1, src // target_rate
    elif target_rate % src == 0:
        up, down = target_rate // src, 1
    else:
        raise ConfigError(f"unsupported rate pair {src} -> {target_rate}: not an integer factor")
    h = lowpass_taps(max(up, down)) * up
    half = (h.size - 1) // 2
    out_len = int(math.floor(w.samples.size * target_rate / src + 0.5))
    out = K.fir_resample(w.samples, h, up, down, out_len, half)
    return AudioWaveform(out.astype(np.float32), target_rate)


# ---------------------------------------------------------------------------
# mel features
# ---------------------------------------------------------------------------


def hz_to_mel(f):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    f = np.asarray(f, dtype=np.float64)
    f_sp = 200.0 / 3
    mel = f / f_sp
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = math.log(6.4) / 27.0
    return np.where(f >= min_log_hz, min_log_mel + np.log(np.maximum(f, 1e-12) / min_log_hz) / logstep, mel)


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = math.log(6.4) / 27.0
    return np.where(m >= min_log_mel, min_log_hz * np.exp(logstep * (m - min_log_mel)), f_sp * m)


def mel_band_edges(n_mels, sample_rate=16000):
    """``n_mels + 2`` Hz points; filter ``k`` rises from edge ``k`` and peaks at edge ``k + 1``."""
    return mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2), n_mels + 2))


def mel_filterbank(n_mels=80, n_fft=400, sample_rate=16000):
    """Triangular filters ``[n_mels, n_fft // 2 + 1]`` with unit peak."""
    edges = mel_band_edges(n_mels, sample_rate)
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def mel_center_hz(k, n_mels=80, sample_rate=16000):
    return float(mel_band_edges(n_mels, sample_rate)[k + 1])


def frame_count(n_samples, win=400, hop=160):
    if n_samples < win:
        raise LengthError(f"waveform of {n_samples} samples is shorter than one {win}-sample window")
    return 1 + (n_samples - win) // hop


def hann(win):
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(win) / win)


def log_mel_spectrogram(w: AudioWaveform, cfg: FrontendConfig | None = None) -> AcousticFeatures:
    cfg = cfg or FrontendConfig()
    if w.sample_rate != cfg.sample_rate:
        raise ConfigError(f"log-mel expects {cfg.sample_rate} Hz audio, got {w.sample_rate}")
    T = frame_count(w.samples.size, cfg.win, cfg.hop)
    x = w.samples.astype(np.float64)
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.win)[:: cfg.hop][:T]
    power = np.abs(np.fft.rfft(frames * hann(cfg.win), axis=1)) ** 2
    mel = power @ mel_filterbank(cfg.n_mels, cfg.win, cfg.sample_rate).T
    with np.errstate(divide="ignore"):
        feats = np.maximum(np.log(mel), cfg.log_floor)
    return AcousticFeatures(feats.astype(np.float32), cfg.hop / cfg.sample_rate, cfg.n_mels)


def normalize_features(f: AcousticFeatures) -> AcousticFeatures:
    """Per-utterance mean/variance normalization over all cells."""
    x = f.frames.astype(np.float64)
    out = (x - x.mean()) / (x.std() + 1e-5)
    return AcousticFeatures(out.astype(np.float32), f.frame_hop_s, f.n_mels)


def extract(w: AudioWaveform, cfg: FrontendConfig | None = None) -> AcousticFeatures:
    """Resample to 16 kHz if needed, compute log-mel, optionally normalize."""
    cfg = cfg or FrontendConfig()
    if w.sample_rate != cfg.sample_rate:
        w = resample(w, cfg.sample_rate)
    feats = log_mel_spectrogram(w, cfg)
    return normalize_features(feats) if cfg.normalize else feats
