"""MFCC frontend: framing, Hann window, power spectrum, mel filterbank,
log, DCT-II.

Pipeline per frame:

    frame -> periodic Hann -> |rFFT|^2 -> mel filterbank -> ln(max(., floor))
          -> orthonormal DCT-II -> first n_mfcc coefficients

All knobs live in FrontendConfig and are embedded in saved models so
training and serving cannot drift apart.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, asdict

import numpy as np

from .audio_io import AudioClip
from .errors import ClipTooShort, ConfigInvalid

FEATURE_MAGIC = b"MFCC"
FEATURE_VERSION = 1


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class FrontendConfig:
    """MFCC extraction parameters (25 ms frames / 10 ms hop at 16 kHz)."""

    frame_len: int = 400
    hop_len: int = 160
    n_fft: int = 512
    n_mels: int = 40
    fmin_hz: float = 20.0
    fmax_hz: float = 8000.0
    n_mfcc: int = 13
    log_floor: float = 1e-10

    def validate(self, sample_rate_hz: int = 16_000) -> "FrontendConfig":
        if self.frame_len <= 0 or self.hop_len <= 0:
            raise ConfigInvalid("frame_len and hop_len must be positive")
        if self.n_fft < self.frame_len or self.n_fft & (self.n_fft - 1):
            raise ConfigInvalid("n_fft must be a power of two >= frame_len")
        if not (0 <= self.fmin_hz < self.fmax_hz <= sample_rate_hz / 2):
            raise ConfigInvalid("need fmin < fmax <= sample_rate/2")
        if not (0 < self.n_mfcc <= self.n_mels):
            raise ConfigInvalid("need 0 < n_mfcc <= n_mels")
        if self.log_floor <= 0:
            raise ConfigInvalid("log_floor must be positive")
        return self

    def frame_count(self, clip_len: int) -> int:
        if clip_len < self.frame_len:
            raise ClipTooShort(
                f"clip of {clip_len} samples shorter than one {self.frame_len}-sample frame"
            )
        return 1 + (clip_len - self.frame_len) // self.hop_len

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FrontendConfig":
        return cls(**d)


@dataclass(frozen=True)
class MfccMatrix:
    """T x n_mfcc cepstral coefficients plus the config that produced them."""

    values: np.ndarray
    config: FrontendConfig

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_mfcc(self) -> int:
        return self.values.shape[1]


def frame_signal(clip: AudioClip, cfg: FrontendConfig) -> np.ndarray:
    """Slice a clip into overlapping frames; frame t covers
    [t*hop, t*hop + frame_len). No padding beyond the last full frame."""
    x = clip.samples
    n_frames = cfg.frame_count(len(x))
    idx = np.arange(cfg.frame_len)[None, :] + cfg.hop_len * np.arange(n_frames)[:, None]
    return x[idx]


def hann_window(n: int) -> np.ndarray:
    # Periodic form (denominator n, not n-1), the variant used for
    # spectral analysis.
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def power_spectrum(frames: np.ndarray, cfg: FrontendConfig) -> np.ndarray:
    """Windowed, zero-padded power spectrum: entry k is |X_k|^2 of the
    unnormalized DFT, bins 0..n_fft/2."""
    windowed = frames * hann_window(cfg.frame_len)
    spectrum = np.fft.rfft(windowed, n=cfg.n_fft, axis=1)
    return np.abs(spectrum) ** 2


def mel_filterbank(cfg: FrontendConfig, sample_rate_hz: int = 16_000) -> np.ndarray:
    """Triangular mel filters as an (n_mels, n_fft/2+1) matrix.

    Centers are uniformly spaced on the mel scale between fmin and fmax;
    triangles are unnormalized with unit peak, evaluated on the FFT bin
    frequency grid.
    """
    cfg.validate(sample_rate_hz)
    mel_points = np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz), cfg.n_mels + 2)
    edges_hz = mel_to_hz(mel_points)
    bin_hz = np.arange(cfg.n_fft // 2 + 1) * (sample_rate_hz / cfg.n_fft)

    fb = np.zeros((cfg.n_mels, cfg.n_fft // 2 + 1))
    for m in range(cfg.n_mels):
        lo, center, hi = edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]
        rising = (bin_hz - lo) / (center - lo)
        falling = (hi - bin_hz) / (hi - center)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


def filter_centers_hz(cfg: FrontendConfig) -> np.ndarray:
    """Center frequency of each mel filter in Hz."""
    mel_points = np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz), cfg.n_mels + 2)
    return mel_to_hz(mel_points[1:-1])


def dct_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Orthonormal DCT-II basis, rows = output coefficients."""
    n = np.arange(n_in)
    k = np.arange(n_out)[:, None]
    mat = np.cos(np.pi * k * (2 * n + 1) / (2 * n_in))
    mat *= np.sqrt(2.0 / n_in)
    mat[0] /= np.sqrt(2.0)
    return mat


def mfcc(clip: AudioClip, cfg: FrontendConfig | None = None) -> MfccMatrix:
    """Extract MFCC features from a 16 kHz clip."""
    cfg = (cfg or FrontendConfig()).validate()
    clip.require_rate()
    frames = frame_signal(clip, cfg)
    power = power_spectrum(frames, cfg)
    mel_energy = power @ mel_filterbank(cfg, clip.sample_rate_hz).T
    log_mel = np.log(np.maximum(mel_energy, cfg.log_floor))
    coeffs = log_mel @ dct_matrix(cfg.n_mfcc, cfg.n_mels).T
    return MfccMatrix(values=coeffs, config=cfg)


def save_features(path, mat: MfccMatrix | np.ndarray) -> int:
    """Write a feature cache file: magic, version u16, T u32, n u16,
    float32 row-major payload. Little-endian throughout."""
    values = mat.values if isinstance(mat, MfccMatrix) else np.asarray(mat)
    t, n = values.shape
    blob = (
        FEATURE_MAGIC
        + struct.pack("<HIH", FEATURE_VERSION, t, n)
        + values.astype("<f4").tobytes()
    )
    with open(str(path), "wb") as fh:
        fh.write(blob)
    return len(blob)


def load_features(path) -> np.ndarray:
    """Read a feature cache file back as a float32 (T, n) array."""
    with open(str(path), "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != FEATURE_MAGIC:
        raise ConfigInvalid(f"{path}: not a feature cache file")
    version, t, n = struct.unpack_from("<HIH", data, 4)
    if version != FEATURE_VERSION:
        raise ConfigInvalid(f"{path}: unsupported feature cache version {version}")
    payload = np.frombuffer(data, dtype="<f4", offset=12)
    if payload.size != t * n:
        raise ConfigInvalid(f"{path}: payload size mismatch")
    return payload.reshape(t, n).copy()
