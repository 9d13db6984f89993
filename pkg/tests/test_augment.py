import numpy as np
import pytest

from lsic.audio_io import AudioClip
from lsic.augment import AugmentParams, add_white_noise, augment_triplet, pitch_scale
from lsic.errors import SignalSilent


def _sine(freq=440.0, amplitude=0.5, n=32_000):
    t = np.arange(n) / 16_000
    return AudioClip(amplitude * np.sin(2 * np.pi * freq * t), 16_000)


class TestWhiteNoise:
    def test_snr_sets_noise_rms(self):
        clip = _sine(amplitude=0.1 * np.sqrt(2))  # RMS 0.1
        out = add_white_noise(clip, snr_db=20.0, seed=1)
        noise = out.samples - clip.samples
        noise_rms = np.sqrt(np.mean(noise ** 2))
        assert noise_rms == pytest.approx(0.01, rel=0.05)

    def test_deterministic_per_seed(self):
        clip = _sine()
        a = add_white_noise(clip, 20.0, seed=9)
        b = add_white_noise(clip, 20.0, seed=9)
        np.testing.assert_array_equal(a.samples, b.samples)
        c = add_white_noise(clip, 20.0, seed=10)
        assert not np.array_equal(a.samples, c.samples)

    def test_silent_clip_rejected(self):
        with pytest.raises(SignalSilent):
            add_white_noise(AudioClip(np.zeros(1000), 16_000), 20.0, seed=0)

    def test_output_bounded(self):
        clip = _sine(amplitude=0.99)
        out = add_white_noise(clip, snr_db=0.0, seed=2)
        assert np.all(np.abs(out.samples) <= 1.0)


class TestPitchScale:
    def test_zero_semitones_identity(self):
        clip = _sine()
        out = pitch_scale(clip, 0.0)
        np.testing.assert_array_equal(out.samples, clip.samples)

    def test_octave_up_doubles_frequency(self):
        clip = _sine(freq=440.0)
        out = pitch_scale(clip, 12.0)
        spectrum = np.abs(np.fft.rfft(out.samples))
        peak_hz = np.argmax(spectrum) * 16_000 / len(out.samples)
        bin_width = 16_000 / len(out.samples)
        assert abs(peak_hz - 880.0) <= bin_width

    def test_length_preserved(self):
        for n in (1000, 31_999, 32_000):
            clip = AudioClip(np.random.default_rng(0).uniform(-1, 1, n), 16_000)
            for st in (-3.0, 2.0, 7.0):
                assert len(pitch_scale(clip, st)) == n

    def test_downshift_halves_frequency(self):
        clip = _sine(freq=880.0)
        out = pitch_scale(clip, -12.0)
        spectrum = np.abs(np.fft.rfft(out.samples))
        peak_hz = np.argmax(spectrum) * 16_000 / len(out.samples)
        assert abs(peak_hz - 440.0) <= 16_000 / len(out.samples)


class TestTriplet:
    def test_order_and_identity(self):
        clip = _sine()
        out = augment_triplet(clip, AugmentParams(seed=4))
        assert len(out) == 3
        np.testing.assert_array_equal(out[0].samples, clip.samples)
        assert not np.array_equal(out[1].samples, clip.samples)
        assert not np.array_equal(out[2].samples, clip.samples)

    def test_reproducible(self):
        clip = _sine()
        params = AugmentParams(seed=21)
        first = augment_triplet(clip, params)
        second = augment_triplet(clip, params)
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.samples, b.samples)

    def test_silent_propagates(self):
        with pytest.raises(SignalSilent):
            augment_triplet(AudioClip(np.zeros(100), 16_000), AugmentParams())

    def test_all_within_unit_range(self):
        clip = _sine(amplitude=0.95)
        for variant in augment_triplet(clip, AugmentParams(snr_db=6.0)):
            assert np.all(np.abs(variant.samples) <= 1.0)
