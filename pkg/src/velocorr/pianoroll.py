"""Piano-roll feature extraction for fixed-shape segments.

Rasterizes note events onto a frame grid (10 ms frames by default) as three
binary matrices -- key attacks (onset), active frames (frame), and
sustain-only frames (frame_ex = frame - onset) -- plus a normalized velocity
target.  Long performances are tiled into fixed-length segments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from velocorr.midi_io import MidiPerformance

DEFAULT_VELOCITY_DIVISOR = 127.0


@dataclass(frozen=True)
class SegmentSpec:
    """Geometry of one rasterized segment."""

    frames_per_second: float = 100.0
    frames: int = 1001
    keys: int = 88
    lowest_pitch: int = 21
    start_s: float = 0.0

    def __post_init__(self):
        if self.frames < 1:
            raise ValueError(f"frames must be >= 1, got {self.frames}")
        if self.frames_per_second <= 0:
            raise ValueError("frames_per_second must be positive")
        if self.keys < 1:
            raise ValueError("keys must be >= 1")

    @property
    def window_s(self) -> float:
        """Length of the window covered by ``frames`` rows."""
        return self.frames / self.frames_per_second


@dataclass
class ScoreFeatures:
    """Binary score matrices plus velocity target for one segment.

    ``note_index`` holds, per onset cell, the index of the note in the source
    performance (-1 elsewhere).  ``note_cells`` lists (note_id, row, col) for
    every note whose onset falls inside the segment, in note order; two notes
    may share a cell when their onsets quantize to the same frame.
    """

    onset: np.ndarray
    frame: np.ndarray
    frame_ex: np.ndarray
    target_vel: np.ndarray
    note_index: np.ndarray
    note_cells: list[tuple[int, int, int]] = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int]:
        return self.onset.shape


def round_half_up(x: float) -> int:
    """Round to nearest integer with .5 going up (deterministic tie-break)."""
    return int(math.floor(x + 0.5))


def normalize_velocity(velocity, divisor: float = DEFAULT_VELOCITY_DIVISOR):
    """Map 0..127 velocities onto [0, 1]."""
    return np.asarray(velocity, dtype=np.float64) / divisor


def denormalize_velocity(value, divisor: float = DEFAULT_VELOCITY_DIVISOR):
    """Map [0, 1] values back to integer velocities, rounding half up."""
    v = np.floor(np.asarray(value, dtype=np.float64) * divisor + 0.5)
    v = np.clip(v, 0, 127).astype(np.int64)
    return int(v) if v.ndim == 0 else v


def rasterize(
    perf: MidiPerformance,
    spec: SegmentSpec,
    *,
    divisor: float = DEFAULT_VELOCITY_DIVISOR,
    dtype=np.float32,
) -> ScoreFeatures:
    """Rasterize a performance onto one segment grid.

    A note contributes frame rows from its onset row through its offset row
    inclusive, clipped to the window; its onset cell is marked only when the
    onset row itself lands inside the window, so tiling at hop = window length
    assigns each onset to exactly one segment.  The velocity target covers the
    note's frame rows.
    """
    T, P = spec.frames, spec.keys
    fps = spec.frames_per_second
    onset = np.zeros((T, P), dtype=dtype)
    frame = np.zeros((T, P), dtype=dtype)
    target = np.zeros((T, P), dtype=dtype)
    note_index = np.full((T, P), -1, dtype=np.int32)
    note_cells: list[tuple[int, int, int]] = []

    for note_id, note in enumerate(perf.notes):
        col = note.pitch - spec.lowest_pitch
        if not 0 <= col < P:
            continue
        r_on = round_half_up((note.onset_s - spec.start_s) * fps)
        r_off = round_half_up((note.offset_s - spec.start_s) * fps)
        lo = max(r_on, 0)
        hi = min(r_off, T - 1)
        if lo > hi:
            continue
        frame[lo:hi + 1, col] = 1
        target[lo:hi + 1, col] = note.velocity / divisor
        if 0 <= r_on <= T - 1:
            onset[r_on, col] = 1
            note_index[r_on, col] = note_id
            note_cells.append((note_id, r_on, col))

    frame_ex = frame - onset
    return ScoreFeatures(
        onset=onset,
        frame=frame,
        frame_ex=frame_ex,
        target_vel=target,
        note_index=note_index,
        note_cells=note_cells,
    )


def onset_mask(sf: ScoreFeatures) -> np.ndarray:
    """Canonical accessor for the loss/eval mask: the onset matrix itself."""
    return sf.onset


def segment_performance(
    perf: MidiPerformance,
    spec: SegmentSpec,
    hop_s: float | None = None,
    *,
    divisor: float = DEFAULT_VELOCITY_DIVISOR,
    dtype=np.float32,
) -> list[tuple[SegmentSpec, ScoreFeatures]]:
    """Tile a performance into consecutive fixed-length segments.

    Windows start at ``spec.start_s + k * hop_s``; the default hop equals the
    window length, which partitions the frame grid so every onset belongs to
    exactly one segment.  The final window is implicitly zero-padded.
    """
    if hop_s is None:
        hop_s = spec.window_s
    if hop_s <= 0:
        raise ValueError("hop_s must be positive")
    span = perf.duration_s - spec.start_s
    if span <= spec.window_s:
        n_segments = 1
    else:
        n_segments = 1 + math.ceil((span - spec.window_s) / hop_s)
    out = []
    for k in range(n_segments):
        sub = replace(spec, start_s=spec.start_s + k * hop_s)
        out.append((sub, rasterize(perf, sub, divisor=divisor, dtype=dtype)))
    return out


def value_roll(
    perf: MidiPerformance,
    spec: SegmentSpec,
    values: np.ndarray,
    *,
    dtype=np.float32,
) -> np.ndarray:
    """Paint one arbitrary [0, 1] value per note onto its frame rows.

    Uses the same row arithmetic as :func:`rasterize`; used to build
    preliminary velocity grids whose per-note values differ from the target.
    """
    if len(values) != len(perf.notes):
        raise ValueError(
            f"need one value per note: {len(values)} values, {len(perf.notes)} notes"
        )
    T, P = spec.frames, spec.keys
    fps = spec.frames_per_second
    roll = np.zeros((T, P), dtype=dtype)
    for note, value in zip(perf.notes, values):
        col = note.pitch - spec.lowest_pitch
        if not 0 <= col < P:
            continue
        r_on = round_half_up((note.onset_s - spec.start_s) * fps)
        r_off = round_half_up((note.offset_s - spec.start_s) * fps)
        lo = max(r_on, 0)
        hi = min(r_off, T - 1)
        if lo > hi:
            continue
        roll[lo:hi + 1, col] = value
    return roll
