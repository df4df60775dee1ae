import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lipsync import audio
from lipsync.errors import AudioFormatError, EmptyInputError, UnsupportedAudioError


def wav_bytes(frames, rate=16000, channels=1, bits=16, audio_format=1):
    """Hand-assembled RIFF/WAVE container for fixture files."""
    payload = struct.pack(f"<{len(frames)}h", *frames)
    fmt = struct.pack(
        "<HHIIHH", audio_format, channels, rate, rate * channels * bits // 8, channels * bits // 8, bits
    )
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", len(body)) + body


def write_wav(tmp_path, name, **kw):
    p = tmp_path / name
    p.write_bytes(wav_bytes(**kw))
    return p


class TestLoadWav:
    def test_int16_scaling(self, tmp_path):
        p = write_wav(tmp_path, "a.wav", frames=[0, 16384, -32768])
        w = audio.load_wav(p)
        assert np.array_equal(w.samples, [0.0, 0.5, -1.0])
        assert w.sample_rate == 16000

    def test_stereo_averaged(self, tmp_path):
        # one stereo frame: left 0.5, right 0.0 -> mono 0.25
        p = write_wav(tmp_path, "s.wav", frames=[16384, 0], channels=2)
        w = audio.load_wav(p)
        assert np.array_equal(w.samples, [0.25])

    def test_duration_one_second(self, tmp_path):
        p = write_wav(tmp_path, "d.wav", frames=[0] * 16000)
        w = audio.load_wav(p)
        assert len(w.samples) == 16000
        assert w.duration == 1.0

    def test_malformed_header(self, tmp_path):
        p = tmp_path / "bad.wav"
        p.write_bytes(b"RIFX" + b"\x00" * 40)
        with pytest.raises(AudioFormatError):
            audio.load_wav(p)

    def test_truncated_chunk(self, tmp_path):
        raw = wav_bytes(frames=[0] * 100)
        p = tmp_path / "trunc.wav"
        p.write_bytes(raw[:-50])
        with pytest.raises(AudioFormatError):
            audio.load_wav(p)

    def test_non_pcm_codec(self, tmp_path):
        p = write_wav(tmp_path, "f.wav", frames=[0, 0], audio_format=3)
        with pytest.raises(UnsupportedAudioError):
            audio.load_wav(p)

    def test_zero_length_data(self, tmp_path):
        p = write_wav(tmp_path, "e.wav", frames=[])
        with pytest.raises(EmptyInputError):
            audio.load_wav(p)

    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        w = audio.Waveform(samples=rng.uniform(-0.9, 0.9, 500), sample_rate=16000)
        audio.save_wav(w, tmp_path / "r.wav")
        back = audio.load_wav(tmp_path / "r.wav")
        assert back.sample_rate == 16000
        assert np.allclose(back.samples, w.samples, atol=1.0 / 32768)


class TestResample:
    def test_48k_to_16k_length(self):
        w = audio.Waveform(samples=np.zeros(48000), sample_rate=48000)
        out = audio.resample(w, 16000)
        assert len(out.samples) == 16000
        assert out.sample_rate == 16000

    def test_identity_rate_returns_input(self):
        w = audio.Waveform(samples=np.zeros(100), sample_rate=16000)
        assert audio.resample(w, 16000) is w

    def test_sine_tone_preserved(self):
        # oracle: the dominant DFT bin of a 440 Hz tone stays at 440 Hz
        t = np.arange(48000) / 48000.0
        w = audio.Waveform(samples=0.5 * np.sin(2 * np.pi * 440.0 * t), sample_rate=48000)
        out = audio.resample(w, 16000)
        spectrum = np.abs(np.fft.rfft(out.samples))
        peak = int(np.argmax(spectrum))  # 1 s of output -> 1 Hz bins
        assert abs(peak - 440) <= 1

    def test_invalid_rate(self):
        w = audio.Waveform(samples=np.zeros(10), sample_rate=16000)
        with pytest.raises(ValueError):
            audio.resample(w, 0)

    @settings(max_examples=40, deadline=None)
    @given(
        n=st.integers(min_value=200, max_value=5000),
        rates=st.sampled_from([(48000, 16000), (44100, 16000), (16000, 48000), (8000, 16000)]),
    )
    def test_duration_preserved_within_one_sample(self, n, rates):
        src, dst = rates
        w = audio.Waveform(samples=np.zeros(n), sample_rate=src)
        out = audio.resample(w, dst)
        assert len(out.samples) == round(n * dst / src)
        assert abs(out.duration - w.duration) <= 1.0 / dst


def speechlike(seconds=1.0):
    # tones (including one low enough for the first mel band) plus broadband
    # noise, so every filterbank energy stays far above the log floor even at
    # a 0.1 gain, and a peak low enough that a 4x gain cannot clip
    n = int(16000 * seconds)
    t = np.arange(n) / 16000.0
    x = (
        np.sin(2 * np.pi * 220 * t)
        + 0.5 * np.sin(2 * np.pi * 880 * t + 0.3)
        + 0.25 * np.sin(2 * np.pi * 1760 * t + 1.1)
        + 0.5 * np.sin(2 * np.pi * 50 * t)
        + 0.3 * np.random.default_rng(1234).standard_normal(n)
    )
    raw = (0.5 * (1 - np.cos(2 * np.pi * 4 * t)) + 0.3) * x
    return audio.Waveform(samples=raw * (0.98 / (4.0 * np.abs(raw).max())), sample_rate=16000)


class TestMfcc:
    def test_silence_constant_frames(self):
        w = audio.Waveform(samples=np.zeros(16000), sample_rate=16000)
        m = audio.mfcc(w)
        # every frame identical; energy floor puts the whole log vector at a
        # constant, whose DCT lives entirely in c0
        assert np.ptp(m.frames, axis=0).max() == 0.0
        assert np.all(np.abs(m.frames[:, 1:]) < 1e-10)
        assert abs(m.frames[0, 0]) > 1.0

    def test_one_second_gives_98_frames(self):
        # floor((16000 - 400) / 160) + 1
        m = audio.mfcc(speechlike(1.0))
        assert m.n_frames == 98
        assert m.frame_rate == 100
        assert m.source_duration == 1.0

    @settings(max_examples=100, deadline=None)
    @given(n=st.integers(min_value=400, max_value=40000))
    def test_frame_count_formula(self, n):
        w = audio.Waveform(samples=np.zeros(n), sample_rate=16000)
        assert audio.mfcc(w).n_frames == (n - 400) // 160 + 1

    def test_gain_shifts_only_c0(self):
        base = speechlike()
        ref = audio.mfcc(base).frames
        for gain in (0.1, 0.5, 2.0, 4.0):
            scaled = audio.mfcc(audio.Waveform(samples=base.samples * gain, sample_rate=16000)).frames
            assert np.allclose(scaled[:, 1:], ref[:, 1:], rtol=1e-6, atol=1e-9)
            if gain != 1.0:
                assert not np.allclose(scaled[:, 0], ref[:, 0], rtol=1e-6)

    def test_deterministic(self):
        w = speechlike()
        a = audio.mfcc(w)
        b = audio.mfcc(w)
        assert np.array_equal(a.frames, b.frames)
        assert a.config_fingerprint == b.config_fingerprint != ""

    def test_too_short_raises(self):
        w = audio.Waveform(samples=np.zeros(399), sample_rate=16000)
        with pytest.raises(EmptyInputError):
            audio.mfcc(w)

    def test_wrong_rate_rejected(self):
        w = audio.Waveform(samples=np.zeros(48000), sample_rate=48000)
        with pytest.raises(ValueError):
            audio.mfcc(w)
