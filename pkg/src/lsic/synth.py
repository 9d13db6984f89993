"""Synthetic mini-corpus: sine/chirp stand-ins for the 20 intents.

Real recordings are an optional external download; tests and demos run on
this generated corpus instead. Each intent gets a distinct spectral
signature (a two-tone chord for the first ten, a chirp for the rest) with
per-clip jitter, so a small model can separate the classes quickly but
not trivially memorize byte-identical inputs.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio_io import AudioClip, write_wav
from .dataset_eval import Manifest, ManifestRecord, save_manifest
from .labels import CANONICAL

DEFAULT_SPEAKERS = {
    "train": ("spk00", "spk01", "spk02", "spk03"),
    "val": ("spk04", "spk05"),
    "test": ("spk06", "spk07"),
}


def _mel_spaced_hz(idx: int, count: int, lo: float = 280.0, hi: float = 5600.0) -> float:
    mel = 2595.0 * np.log10(1.0 + np.array([lo, hi]) / 700.0)
    m = mel[0] + (mel[1] - mel[0]) * idx / (count - 1)
    return float(700.0 * (10.0 ** (m / 2595.0) - 1.0))


def class_signal(intent_idx: int, n_samples: int, rng: np.random.Generator,
                 sample_rate: int = 16_000) -> np.ndarray:
    """Deterministic-by-seed waveform with a per-class spectral signature.

    Fundamentals are mel-spaced so neighboring classes land in different
    filterbank bands; even classes are steady two-tone chords, odd classes
    chirp upward, and the harmonic mix varies with the class index.
    """
    t = np.arange(n_samples) / sample_rate
    jitter = 1.0 + 0.005 * rng.standard_normal()
    phase = rng.uniform(0, 2 * np.pi)
    f0 = _mel_spaced_hz(intent_idx, 20) * jitter
    harmonic = 1.5 + 0.5 * (intent_idx % 3)  # 1.5x / 2x / 2.5x overtone
    if intent_idx % 2 == 0:
        sig = (np.sin(2 * np.pi * f0 * t + phase)
               + 0.6 * np.sin(2 * np.pi * harmonic * f0 * t))
    else:
        # Chirp from f0 to 1.3*f0 plus the overtone.
        sweep = f0 * (t + 0.3 * t ** 2 / (2 * t[-1]))
        sig = (np.sin(2 * np.pi * sweep + phase)
               + 0.6 * np.sin(2 * np.pi * harmonic * f0 * t))
    sig += 0.003 * rng.standard_normal(n_samples)
    amp = rng.uniform(0.55, 0.7)
    return amp * sig / np.max(np.abs(sig))


def make_corpus(root, clips_per_class: dict[str, int] | None = None,
                seed: int = 0, duration_range: tuple[float, float] = (1.7, 2.3),
                speakers: dict[str, tuple[str, ...]] | None = None) -> Manifest:
    """Write WAV files and a manifest under `root`; returns the Manifest.

    clips_per_class maps split -> clips per intent (default 2/1/1).
    Speaker ids are disjoint across splits by default.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    clips_per_class = clips_per_class or {"train": 2, "val": 1, "test": 1}
    speakers = speakers or DEFAULT_SPEAKERS
    rng = np.random.default_rng(seed)
    records = []
    for split, per_class in clips_per_class.items():
        pool = speakers[split]
        for idx, intent in enumerate(CANONICAL.intents):
            obj, action = CANONICAL.split_intent(intent)
            for k in range(per_class):
                duration = rng.uniform(*duration_range)
                n = int(round(duration * 16_000))
                samples = class_signal(idx, n, rng)
                path = root / split / f"{intent}_{k:02d}.wav"
                path.parent.mkdir(parents=True, exist_ok=True)
                write_wav(path, AudioClip(samples, 16_000))
                records.append(ManifestRecord(
                    path=str(path), intent=intent, action=action, object=obj,
                    speaker_id=pool[(idx * per_class + k) % len(pool)],
                    split=split, duration_s=round(n / 16_000, 3),
                ))
    manifest = Manifest(tuple(records))
    save_manifest(root / "manifest.jsonl", manifest)
    return manifest
