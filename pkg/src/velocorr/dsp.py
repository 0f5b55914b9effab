"""Audio decoding and log-mel spectrogram extraction.

The default ("HPT-profile") constants: 16 kHz mono input, 2048-sample Hann
window, 160-sample hop (100 frames per second), 229 triangular mel filters
spanning 30 Hz to 8 kHz, and a 1e-10 power floor before the log.  All of them
are configurable; only the output frame geometry is relied on elsewhere.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np


class AudioParseError(ValueError):
    """Malformed RIFF/WAVE content.  Carries the failing byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedAudioError(AudioParseError):
    """WAVE codec or layout this reader deliberately rejects."""


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray          # mono float64 in [-1, 1]
    sample_rate: int

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = 16000
    window_size: int = 2048
    hop_size: int = 160
    mel_bins: int = 229
    fmin: float = 30.0
    fmax: float = 8000.0
    power_floor: float = 1e-10

    @property
    def frames_per_second(self) -> float:
        return self.sample_rate / self.hop_size


@dataclass(frozen=True)
class MelSpectrogram:
    values: np.ndarray           # (frames, mel_bins), natural-log scale
    frames_per_second: float
    mel_bins: int


def read_wav(data: bytes, expected_rate: int = 16000) -> AudioClip:
    """Decode RIFF/WAVE bytes (PCM 16-bit or IEEE float 32-bit) to mono.

    Stereo channels are averaged.  A sample rate other than ``expected_rate``
    is an error: resampling is out of scope.
    """
    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise AudioParseError("not a RIFF/WAVE file", 0)
    pos = 12
    fmt = None
    payload = None
    while pos + 8 <= len(data):
        tag = data[pos:pos + 4]
        size = struct.unpack("<I", data[pos + 4:pos + 8])[0]
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise AudioParseError(f"chunk {tag!r} truncated", pos)
        if tag == b"fmt ":
            if size < 16:
                raise AudioParseError("fmt chunk shorter than 16 bytes", pos)
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif tag == b"data":
            payload = body
        pos += 8 + size + (size & 1)            # chunks are word-aligned
    if fmt is None:
        raise AudioParseError("missing fmt chunk", pos)
    if payload is None:
        raise AudioParseError("missing data chunk", pos)

    audio_format, channels, rate, _, _, bits = fmt
    if channels not in (1, 2):
        raise UnsupportedAudioError(f"{channels} channels not supported")
    if audio_format == 1 and bits == 16:
        raw = np.frombuffer(payload[: len(payload) // 2 * 2], dtype="<i2")
        samples = raw.astype(np.float64) / 32768.0
    elif audio_format == 3 and bits == 32:
        raw = np.frombuffer(payload[: len(payload) // 4 * 4], dtype="<f4")
        samples = raw.astype(np.float64)
    else:
        raise UnsupportedAudioError(
            f"codec (format={audio_format}, bits={bits}) not supported"
        )
    if channels == 2:
        samples = samples[: len(samples) // 2 * 2].reshape(-1, 2).mean(axis=1)
    if rate != expected_rate:
        raise UnsupportedAudioError(
            f"sample rate {rate} != configured {expected_rate}; resampling is out of scope"
        )
    return AudioClip(samples=samples, sample_rate=int(rate))


def write_wav(clip: AudioClip) -> bytes:
    """Encode a clip as 16-bit PCM mono WAVE."""
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    payload = pcm.tobytes()
    fmt = struct.pack(
        "<HHIIHH", 1, 1, clip.sample_rate, clip.sample_rate * 2, 2, 16
    )
    out = b"WAVE"
    out += b"fmt " + struct.pack("<I", len(fmt)) + fmt
    out += b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", len(out)) + out


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """Triangular mel filterbank, shape (fft_bins, mel_bins), unit peaks."""
    n_freqs = cfg.window_size // 2 + 1
    freqs = np.arange(n_freqs) * (cfg.sample_rate / cfg.window_size)
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.mel_bins + 2))
    fb = np.zeros((n_freqs, cfg.mel_bins))
    for k in range(cfg.mel_bins):
        lower = (freqs - edges[k]) / (edges[k + 1] - edges[k])
        upper = (edges[k + 2] - freqs) / (edges[k + 2] - edges[k + 1])
        fb[:, k] = np.maximum(0.0, np.minimum(lower, upper))
    return fb


def mel_center_frequencies(cfg: MelConfig) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.mel_bins + 2))
    return edges[1:-1]


def frame_count(n_samples: int, hop_size: int) -> int:
    return n_samples // hop_size + 1


def mel_for_window(
    clip: AudioClip,
    start_s: float,
    frames: int,
    cfg: MelConfig | None = None,
) -> MelSpectrogram:
    """Log-mel for a fixed-frame window, row-aligned with the piano-roll grid.

    Slices ``frames * hop`` samples starting at ``start_s`` (zero-padded past
    the end of the clip) and trims the spectrogram to exactly ``frames`` rows,
    so mel row k is centered on piano-roll row k of the same window.
    """
    cfg = cfg or MelConfig()
    start = int(round(start_s * cfg.sample_rate))
    length = frames * cfg.hop_size
    seg = clip.samples[max(start, 0):start + length]
    if len(seg) < length:
        seg = np.pad(seg, (0, length - len(seg)))
    mel = log_mel(AudioClip(seg, cfg.sample_rate), cfg)
    return MelSpectrogram(
        values=mel.values[:frames],
        frames_per_second=mel.frames_per_second,
        mel_bins=mel.mel_bins,
    )


def log_mel(clip: AudioClip, cfg: MelConfig | None = None) -> MelSpectrogram:
    """Centered-STFT log-mel spectrogram.

    Frames are centered on multiples of the hop via reflect padding, so frame
    count is floor(len/hop) + 1 and frame 0 aligns with time 0 on the
    piano-roll grid.
    """
    cfg = cfg or MelConfig()
    if clip.sample_rate != cfg.sample_rate:
        raise ValueError(
            f"clip rate {clip.sample_rate} != mel config rate {cfg.sample_rate}"
        )
    win = cfg.window_size
    if len(clip.samples) < win:
        raise ValueError(f"clip shorter than one window ({len(clip.samples)} < {win})")
    pad = win // 2
    padded = np.pad(clip.samples.astype(np.float64), pad, mode="reflect")
    n_frames = frame_count(len(clip.samples), cfg.hop_size)
    frames = np.lib.stride_tricks.sliding_window_view(padded, win)[:: cfg.hop_size]
    frames = frames[:n_frames]
    # periodic Hann window
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)
    spectrum = np.fft.rfft(frames * window, axis=1)
    power = spectrum.real ** 2 + spectrum.imag ** 2
    mel_power = power @ mel_filterbank(cfg)
    values = np.log(np.maximum(mel_power, cfg.power_floor))
    return MelSpectrogram(
        values=values,
        frames_per_second=cfg.frames_per_second,
        mel_bins=cfg.mel_bins,
    )
