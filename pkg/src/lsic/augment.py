"""Training-set augmentation: each clip expands to three variants —
original, white-noise, pitch-scaled. Applied to the training split only;
validation and test features always come from clean clips.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .audio_io import AudioClip, fit_length
from .errors import SignalSilent


@dataclass(frozen=True)
class AugmentParams:
    """Noise level, pitch shift, and RNG seed for the triplet expansion.

    Defaults are mild, speech-preserving values: 20 dB SNR noise and a
    +2 semitone shift.
    """

    snr_db: float = 20.0
    semitones: float = 2.0
    seed: int = 0


def add_white_noise(clip: AudioClip, snr_db: float, seed: int) -> AudioClip:
    """Mix in seeded Gaussian noise at the requested SNR; output stays
    within [-1, 1]."""
    rms = clip.rms()
    if rms == 0.0:
        raise SignalSilent("cannot set an SNR against a silent clip")
    sigma = rms / (10.0 ** (snr_db / 20.0))
    rng = np.random.default_rng(seed)
    noisy = clip.samples + sigma * rng.standard_normal(len(clip.samples))
    return replace(clip, samples=np.clip(noisy, -1.0, 1.0))


def pitch_scale(clip: AudioClip, semitones: float) -> AudioClip:
    """Shift pitch by resampling (linear interpolation) and refitting to
    the original length.

    Accepts the tempo side effect of plain resampling; adequate for the
    small shifts used in augmentation. Output length == input length.
    """
    n = len(clip.samples)
    if n == 0:
        return clip
    ratio = 2.0 ** (semitones / 12.0)
    if ratio == 1.0:
        return clip
    # Reading the signal at positions spaced `ratio` apart raises every
    # frequency by that factor (and shortens the clip for ratio > 1).
    out_len = max(1, int(round(n / ratio)))
    positions = np.arange(out_len) * ratio
    positions = np.minimum(positions, n - 1)
    resampled = np.interp(positions, np.arange(n), clip.samples)
    return fit_length(replace(clip, samples=resampled), n)


def augment_triplet(clip: AudioClip, params: AugmentParams) -> list[AudioClip]:
    """[original, +white noise, pitch-scaled] — the 3x training expansion."""
    if clip.rms() == 0.0:
        raise SignalSilent("cannot augment a silent clip")
    return [
        clip,
        add_white_noise(clip, params.snr_db, params.seed),
        pitch_scale(clip, params.semitones),
    ]
