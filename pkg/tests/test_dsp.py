"""WAV decoding and log-mel spectrogram tests."""

import struct

import numpy as np
import pytest

from velocorr.dsp import (
    AudioClip,
    AudioParseError,
    MelConfig,
    UnsupportedAudioError,
    frame_count,
    hz_to_mel,
    log_mel,
    mel_center_frequencies,
    mel_filterbank,
    mel_for_window,
    mel_to_hz,
    read_wav,
    write_wav,
)

CFG = MelConfig()
LOG_FLOOR = np.log(CFG.power_floor)


def wav_bytes(samples, rate=16000, fmt=1, channels=1):
    if fmt == 1:
        payload = np.asarray(samples, dtype="<i2").tobytes()
        bits = 16
    else:
        payload = np.asarray(samples, dtype="<f4").tobytes()
        bits = 32
    block = channels * bits // 8
    fmt_body = struct.pack("<HHIIHH", fmt, channels, rate, rate * block, block, bits)
    body = b"WAVE"
    body += b"fmt " + struct.pack("<I", len(fmt_body)) + fmt_body
    body += b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", len(body)) + body


class TestReadWav:
    def test_pcm16_scaling(self):
        clip = read_wav(wav_bytes([32767, -32768, 0]))
        assert clip.samples == pytest.approx([32767 / 32768, -1.0, 0.0])

    def test_all_zero_second(self):
        clip = read_wav(wav_bytes([0] * 16000))
        assert len(clip.samples) == 16000
        assert not clip.samples.any()

    def test_stereo_averaged_to_mono(self):
        # interleaved (0.5, -0.5) frames average to 0
        left = int(0.5 * 32768)
        interleaved = [left, -left] * 100
        clip = read_wav(wav_bytes(interleaved, channels=2))
        assert len(clip.samples) == 100
        assert clip.samples == pytest.approx(np.zeros(100), abs=1e-9)

    def test_float32_passthrough(self):
        clip = read_wav(wav_bytes([0.25, -0.75], fmt=3))
        assert clip.samples == pytest.approx([0.25, -0.75])

    def test_rate_mismatch_rejected(self):
        with pytest.raises(UnsupportedAudioError, match="sample rate"):
            read_wav(wav_bytes([0] * 10, rate=44100))

    def test_unsupported_codec(self):
        data = bytearray(wav_bytes([0] * 4))
        # flip the audio-format field to 2 (ADPCM)
        idx = data.index(b"fmt ") + 8
        data[idx] = 2
        with pytest.raises(UnsupportedAudioError, match="codec"):
            read_wav(bytes(data))

    def test_truncated_chunk_offset(self):
        data = wav_bytes([1, 2, 3, 4])
        with pytest.raises(AudioParseError):
            read_wav(data[:-3])

    def test_not_riff(self):
        with pytest.raises(AudioParseError):
            read_wav(b"OggS" + b"\x00" * 40)

    def test_pcm16_round_trip(self):
        rng = np.random.default_rng(8)
        samples = rng.uniform(-0.99, 0.99, 4000)
        clip = AudioClip(samples, 16000)
        back = read_wav(write_wav(clip))
        assert np.abs(back.samples - samples).max() < 1.0 / 32768


class TestLogMel:
    def test_zero_signal_hits_floor(self):
        mel = log_mel(AudioClip(np.zeros(16000), 16000), CFG)
        assert np.allclose(mel.values, LOG_FLOOR)

    def test_shape_for_ten_second_clip(self):
        mel = log_mel(AudioClip(np.zeros(160000), 16000), CFG)
        assert mel.values.shape == (1001, 229)

    def test_window_aligned_shape_for_10_01s(self):
        n = int(10.01 * CFG.sample_rate)
        clip = AudioClip(np.zeros(n), 16000)
        mel = mel_for_window(clip, 0.0, 1001, CFG)
        assert mel.values.shape == (1001, 229)
        assert mel.frames_per_second == pytest.approx(100.0)

    def test_frame_count_formula_random_lengths(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            n = int(rng.integers(CFG.window_size, 80000))
            mel = log_mel(AudioClip(np.zeros(n), 16000), CFG)
            assert mel.values.shape[0] == n // CFG.hop_size + 1 == frame_count(n, CFG.hop_size)

    def test_too_short_clip_rejected(self):
        with pytest.raises(ValueError, match="shorter than one window"):
            log_mel(AudioClip(np.zeros(CFG.window_size - 1), 16000), CFG)

    def test_sine_argmax_at_nearest_center(self):
        # oracle: centers from the filterbank definition; nearest one to 440 Hz
        t = np.arange(32000) / 16000
        clip = AudioClip(0.5 * np.sin(2 * np.pi * 440.0 * t), 16000)
        mel = log_mel(clip, CFG)
        centers = mel_center_frequencies(CFG)
        expected = int(np.argmin(np.abs(centers - 440.0)))
        interior = mel.values[5:-5].argmax(axis=1)
        assert (interior == expected).all()

    def test_scaling_linearity(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal(20000) * 0.1
        base = log_mel(AudioClip(x, 16000), CFG).values
        scaled = log_mel(AudioClip(0.5 * x, 16000), CFG).values
        above = (base > LOG_FLOOR + 1.0) & (scaled > LOG_FLOOR + 1.0)
        assert scaled[above] - base[above] == pytest.approx(
            np.full(above.sum(), 2 * np.log(0.5)), abs=1e-8
        )

    def test_window_slice_matches_full(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal(48000) * 0.2
        clip = AudioClip(x, 16000)
        windowed = mel_for_window(clip, 0.0, 101, CFG)
        full = log_mel(clip, CFG)
        # interior rows agree; the slice boundary only disturbs edge frames
        assert windowed.values[8:93] == pytest.approx(full.values[8:93], abs=1e-9)


class TestFilterbank:
    def test_rows_nonnegative_and_positive_sum(self):
        fb = mel_filterbank(CFG)
        assert (fb >= 0).all()
        assert (fb.sum(axis=0) > 0).all()

    def test_triangle_supports_contiguous(self):
        fb = mel_filterbank(CFG)
        for k in range(CFG.mel_bins):
            nz = np.flatnonzero(fb[:, k] > 0)
            assert len(nz) > 0
            assert np.array_equal(nz, np.arange(nz[0], nz[-1] + 1))

    def test_mel_scale_round_trip(self):
        f = np.array([30.0, 440.0, 1000.0, 7999.0])
        assert mel_to_hz(hz_to_mel(f)) == pytest.approx(f)
