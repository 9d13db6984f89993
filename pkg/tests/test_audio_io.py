import numpy as np
import pytest
from hypothesis import given, strategies as st

from lsic.audio_io import (
    AudioClip, fit_length, peak_normalize, read_wav, write_wav,
)
from lsic.errors import MalformedWav, UnsupportedEncoding, WrongSampleRate


def test_read_zero_clip(tmp_path):
    path = tmp_path / "zeros.wav"
    write_wav(path, AudioClip(np.zeros(16_000), 16_000))
    clip = read_wav(path)
    assert len(clip) == 16_000
    assert clip.sample_rate_hz == 16_000
    assert np.all(clip.samples == 0.0)


def test_pcm16_scaling(tmp_path):
    import struct
    pcm = struct.pack("<h", 16384)
    fmt = struct.pack("<HHIIHH", 1, 1, 16_000, 32_000, 2, 16)
    blob = (b"RIFF" + struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(pcm)) + b"WAVE"
            + b"fmt " + struct.pack("<I", len(fmt)) + fmt
            + b"data" + struct.pack("<I", len(pcm)) + pcm)
    path = tmp_path / "one.wav"
    path.write_bytes(blob)
    clip = read_wav(path)
    assert clip.samples[0] == pytest.approx(0.5)


def test_stereo_downmix_average(tmp_path):
    import struct
    frames = 4
    left, right = 0.2, 0.6
    pcm = b""
    for _ in range(frames):
        pcm += struct.pack("<hh", int(round(left * 32768)), int(round(right * 32768)))
    fmt = struct.pack("<HHIIHH", 1, 2, 16_000, 64_000, 4, 16)
    blob = (b"RIFF" + struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(pcm)) + b"WAVE"
            + b"fmt " + struct.pack("<I", len(fmt)) + fmt
            + b"data" + struct.pack("<I", len(pcm)) + pcm)
    path = tmp_path / "stereo.wav"
    path.write_bytes(blob)
    clip = read_wav(path)
    assert len(clip) == frames
    np.testing.assert_allclose(clip.samples, 0.4, atol=1e-4)


def test_float32_wav(tmp_path):
    import struct
    payload = np.array([0.25, -0.75], dtype="<f4").tobytes()
    fmt = struct.pack("<HHIIHH", 3, 1, 16_000, 64_000, 4, 32)
    blob = (b"RIFF" + struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(payload)) + b"WAVE"
            + b"fmt " + struct.pack("<I", len(fmt)) + fmt
            + b"data" + struct.pack("<I", len(payload)) + payload)
    path = tmp_path / "f32.wav"
    path.write_bytes(blob)
    clip = read_wav(path)
    np.testing.assert_allclose(clip.samples, [0.25, -0.75], rtol=1e-7)


def test_malformed_header(tmp_path):
    path = tmp_path / "bad.wav"
    path.write_bytes(b"RIFX" + b"\x00" * 40)
    with pytest.raises(MalformedWav):
        read_wav(path)


def test_truncated_chunk(tmp_path):
    import struct
    path = tmp_path / "trunc.wav"
    path.write_bytes(b"RIFF" + struct.pack("<I", 100) + b"WAVE"
                     + b"fmt " + struct.pack("<I", 1000) + b"\x00" * 8)
    with pytest.raises(MalformedWav):
        read_wav(path)


def test_unsupported_codec(tmp_path):
    import struct
    fmt = struct.pack("<HHIIHH", 85, 1, 16_000, 32_000, 2, 16)  # MP3 code
    blob = (b"RIFF" + struct.pack("<I", 4 + 8 + len(fmt) + 8) + b"WAVE"
            + b"fmt " + struct.pack("<I", len(fmt)) + fmt
            + b"data" + struct.pack("<I", 0))
    path = tmp_path / "mp3ish.wav"
    path.write_bytes(blob)
    with pytest.raises(UnsupportedEncoding):
        read_wav(path)


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    pcm_values = rng.integers(-32768, 32768, size=5000)
    clip = AudioClip(pcm_values / 32768.0, 16_000)
    path = tmp_path / "rt.wav"
    write_wav(path, clip)
    back = read_wav(path)
    np.testing.assert_array_equal(back.samples * 32768.0, pcm_values)


def test_require_rate():
    clip = AudioClip(np.zeros(10), 44_100)
    with pytest.raises(WrongSampleRate):
        clip.require_rate()


class TestFitLength:
    def test_symmetric_pad(self):
        clip = AudioClip(np.ones(16_000), 16_000)
        out = fit_length(clip, 32_000)
        assert len(out) == 32_000
        assert np.all(out.samples[:8000] == 0)
        assert np.all(out.samples[8000:24_000] == 1)
        assert np.all(out.samples[24_000:] == 0)

    def test_odd_pad_extra_on_right(self):
        clip = AudioClip(np.ones(5), 16_000)
        out = fit_length(clip, 8)
        np.testing.assert_array_equal(out.samples, [0, 1, 1, 1, 1, 1, 0, 0])

    def test_identity(self):
        clip = AudioClip(np.arange(32_000, dtype=float) / 32_000, 16_000)
        out = fit_length(clip, 32_000)
        np.testing.assert_array_equal(out.samples, clip.samples)

    def test_center_crop(self):
        clip = AudioClip(np.arange(48_000, dtype=float), 16_000)
        out = fit_length(clip, 32_000)
        np.testing.assert_array_equal(out.samples, np.arange(8000, 40_000))

    @given(st.integers(min_value=1, max_value=200), st.integers(min_value=1, max_value=200))
    def test_exact_output_length(self, n, target):
        clip = AudioClip(np.linspace(-1, 1, n), 16_000)
        assert len(fit_length(clip, target)) == target


class TestPeakNormalize:
    def test_scales_to_unit_peak(self):
        clip = AudioClip(np.array([0.5, -0.25, 0.1]), 16_000)
        out = peak_normalize(clip)
        np.testing.assert_allclose(out.samples, [1.0, -0.5, 0.2])

    def test_zero_clip_unchanged(self):
        clip = AudioClip(np.zeros(100), 16_000)
        out = peak_normalize(clip)
        assert np.all(out.samples == 0)

    def test_idempotent(self):
        clip = AudioClip(np.array([0.3, -0.9, 0.7]), 16_000)
        once = peak_normalize(clip)
        twice = peak_normalize(once)
        np.testing.assert_array_equal(once.samples, twice.samples)
