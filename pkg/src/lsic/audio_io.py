"""WAV reading/writing and clip shaping.

The pipeline operates on mono float arrays in [-1, 1] at 16 kHz. Files at
other rates are read verbatim; callers that need 16 kHz reject them with
WrongSampleRate (no resampling here — inputs are standardized offline).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import MalformedWav, UnsupportedEncoding, WrongSampleRate

PIPELINE_RATE_HZ = 16_000
# Fixed model window: 2 s at 16 kHz. Commands are short phrases; every
# clip entering training or inference is fitted to this length.
MODEL_WINDOW_SAMPLES = 32_000

_FMT_PCM = 1
_FMT_IEEE_FLOAT = 3


@dataclass(frozen=True)
class AudioClip:
    """Mono audio: samples in [-1, 1], sample rate, optional origin tag."""

    samples: np.ndarray
    sample_rate_hz: int
    source_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))

    def __len__(self) -> int:
        return len(self.samples)

    def rms(self) -> float:
        if len(self.samples) == 0:
            return 0.0
        return float(np.sqrt(np.mean(self.samples ** 2)))

    def require_rate(self, rate_hz: int = PIPELINE_RATE_HZ) -> "AudioClip":
        if self.sample_rate_hz != rate_hz:
            raise WrongSampleRate(
                f"clip {self.source_id or '<memory>'} is {self.sample_rate_hz} Hz, "
                f"pipeline requires {rate_hz} Hz"
            )
        return self


def read_wav(path) -> AudioClip:
    """Read a RIFF/WAVE file: PCM16 or IEEE float32, mono or stereo.

    Stereo is downmixed by channel average; PCM16 samples are scaled by
    1/32768. The sample rate is recorded verbatim — validation against the
    pipeline rate is the caller's job.
    """
    path = str(path)
    with open(path, "rb") as fh:
        data = fh.read()

    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedWav(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise MalformedWav(f"{path}: chunk {cid!r} truncated")
        if cid == b"fmt ":
            if size < 16:
                raise MalformedWav(f"{path}: fmt chunk too small")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            payload = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None or payload is None:
        raise MalformedWav(f"{path}: missing fmt or data chunk")

    audio_format, n_channels, sample_rate, _, _, bits = fmt
    if n_channels < 1:
        raise MalformedWav(f"{path}: zero channels")

    if audio_format == _FMT_PCM and bits == 16:
        raw = np.frombuffer(payload[: len(payload) // 2 * 2], dtype="<i2")
        samples = raw.astype(np.float64) / 32768.0
    elif audio_format == _FMT_IEEE_FLOAT and bits == 32:
        raw = np.frombuffer(payload[: len(payload) // 4 * 4], dtype="<f4")
        samples = raw.astype(np.float64)
    else:
        raise UnsupportedEncoding(
            f"{path}: format code {audio_format} / {bits}-bit not supported "
            "(PCM16 or float32 only)"
        )

    if n_channels > 1:
        usable = len(samples) // n_channels * n_channels
        samples = samples[:usable].reshape(-1, n_channels).mean(axis=1)

    return AudioClip(samples=samples, sample_rate_hz=int(sample_rate), source_id=path)


def write_wav(path, clip: AudioClip) -> int:
    """Write a mono PCM16 WAV file; returns bytes written.

    Values are clamped to [-1, 1] before conversion, so a full-scale +1.0
    sample lands on 32767.
    """
    path = str(path)
    scaled = np.round(np.clip(clip.samples, -1.0, 1.0) * 32768.0)
    pcm = np.clip(scaled, -32768, 32767).astype("<i2")
    body = pcm.tobytes()
    fmt = struct.pack("<HHIIHH", _FMT_PCM, 1, clip.sample_rate_hz,
                      clip.sample_rate_hz * 2, 2, 16)
    blob = (
        b"RIFF" + struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(body)) + b"WAVE"
        + b"fmt " + struct.pack("<I", len(fmt)) + fmt
        + b"data" + struct.pack("<I", len(body)) + body
    )
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


def fit_length(clip: AudioClip, target_samples: int) -> AudioClip:
    """Zero-pad (symmetrically, extra sample on the right) or center-crop
    to exactly target_samples."""
    if target_samples <= 0:
        raise ValueError("target_samples must be positive")
    n = len(clip.samples)
    if n == target_samples:
        return clip
    if n < target_samples:
        deficit = target_samples - n
        left = deficit // 2
        right = deficit - left
        out = np.concatenate([
            np.zeros(left, dtype=np.float64),
            clip.samples,
            np.zeros(right, dtype=np.float64),
        ])
    else:
        start = (n - target_samples) // 2
        out = clip.samples[start:start + target_samples].copy()
    return replace(clip, samples=out)


def peak_normalize(clip: AudioClip) -> AudioClip:
    """Scale so max|sample| == 1.0; all-zero clips pass through unchanged."""
    peak = float(np.max(np.abs(clip.samples))) if len(clip.samples) else 0.0
    if peak == 0.0 or peak == 1.0:
        return clip
    return replace(clip, samples=clip.samples / peak)
