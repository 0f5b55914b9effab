"""Standard MIDI File reading and writing with tempo-aware absolute timing.

Supports format 0/1 files with ticks-per-quarter-note division, running
status, and mid-track tempo changes.  Note on/off events are resolved into
absolute-time note events; overlapping same-pitch notes are truncated at the
later onset so at most one note per pitch is active at any instant.  Sustain
pedal (CC64) is parsed and can optionally extend note offsets.
"""

from __future__ import annotations

import bisect
import struct
import warnings
from dataclasses import dataclass, field, replace

PIANO_MIN_PITCH = 21
PIANO_MAX_PITCH = 108
DEFAULT_TEMPO_US = 500_000      # microseconds per quarter note (120 bpm)
WRITE_DIVISION = 480            # ticks per quarter note used by write_smf
MAX_VARLEN = 0x0FFFFFFF

_META_TEMPO = 0x51
_META_END_OF_TRACK = 0x2F
_CC_SUSTAIN = 64


class MidiParseError(ValueError):
    """Malformed SMF content.  Carries the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedMidiError(MidiParseError):
    """Structurally valid SMF that this reader deliberately rejects."""


@dataclass(frozen=True)
class NoteEvent:
    """One performed note with absolute times in seconds."""

    onset_s: float
    offset_s: float
    pitch: int
    velocity: int

    def validate(self) -> None:
        if not 0 <= self.velocity <= 127:
            raise ValueError(f"velocity {self.velocity} outside 0..127")
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"pitch {self.pitch} outside 0..127")
        if self.offset_s <= self.onset_s:
            raise ValueError(
                f"note duration must be positive "
                f"(onset {self.onset_s}, offset {self.offset_s})"
            )
        if self.onset_s < 0:
            raise ValueError(f"negative onset {self.onset_s}")


@dataclass
class MidiPerformance:
    """Ordered note list plus source metadata."""

    notes: list[NoteEvent]
    duration_s: float
    smf_format: int = 0
    division: int = WRITE_DIVISION
    n_tracks: int = 1

    def validate(self) -> None:
        for note in self.notes:
            note.validate()
        order = [(n.onset_s, n.pitch) for n in self.notes]
        if order != sorted(order):
            raise ValueError("notes are not sorted by (onset_s, pitch)")
        if self.notes and self.duration_s < max(n.offset_s for n in self.notes):
            raise ValueError("duration_s is smaller than the last note offset")


class TempoMap:
    """Piecewise-constant tempo map mapping ticks to seconds."""

    def __init__(self, changes: list[tuple[int, int]], division: int):
        # changes: (tick, us_per_quarter), deduplicated, tick-ascending,
        # starting at tick 0.
        if division <= 0:
            raise MidiParseError(f"invalid division {division}")
        cleaned: list[tuple[int, int]] = []
        for tick, tempo in sorted(changes):
            if tempo <= 0:
                raise MidiParseError(f"invalid tempo {tempo} at tick {tick}")
            if cleaned and cleaned[-1][0] == tick:
                cleaned[-1] = (tick, tempo)
            else:
                cleaned.append((tick, tempo))
        if not cleaned or cleaned[0][0] != 0:
            cleaned.insert(0, (0, DEFAULT_TEMPO_US))
        self.division = division
        self._ticks = [t for t, _ in cleaned]
        self._tempi = [q for _, q in cleaned]
        self._seconds = [0.0]
        for i in range(1, len(cleaned)):
            dt = self._ticks[i] - self._ticks[i - 1]
            self._seconds.append(
                self._seconds[i - 1] + dt * self._tempi[i - 1] / (division * 1e6)
            )

    def to_seconds(self, tick: int) -> float:
        i = bisect.bisect_right(self._ticks, tick) - 1
        return self._seconds[i] + (tick - self._ticks[i]) * self._tempi[i] / (
            self.division * 1e6
        )


def _read_varlen(data: bytes, pos: int) -> tuple[int, int]:
    value = 0
    for _ in range(4):
        if pos >= len(data):
            raise MidiParseError("truncated variable-length quantity", pos)
        byte = data[pos]
        pos += 1
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, pos
    raise MidiParseError("variable-length quantity exceeds 4 bytes", pos)


def _write_varlen(value: int) -> bytes:
    if not 0 <= value <= MAX_VARLEN:
        raise ValueError(f"delta time {value} outside representable tick range")
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def _data_byte(data: bytes, pos: int) -> tuple[int, int]:
    if pos >= len(data):
        raise MidiParseError("truncated event data", pos)
    byte = data[pos]
    if byte & 0x80:
        raise MidiParseError(f"expected data byte, got 0x{byte:02X}", pos)
    return byte, pos + 1


# Raw per-track events: (tick, kind, a, b) where kind is one of
# "on"/"off" (a=pitch, b=velocity), "tempo" (a=us per quarter),
# "cc64" (a=value).
_RawEvent = tuple[int, str, int, int]

_CHANNEL_DATA_LEN = {0x8: 2, 0x9: 2, 0xA: 2, 0xB: 2, 0xC: 1, 0xD: 1, 0xE: 2}


def _parse_track(data: bytes, start: int, end: int) -> list[_RawEvent]:
    events: list[_RawEvent] = []
    pos = start
    tick = 0
    running_status: int | None = None
    while pos < end:
        delta, pos = _read_varlen(data, pos)
        tick += delta
        if pos >= end:
            raise MidiParseError("truncated event", pos)
        byte = data[pos]
        if byte & 0x80:
            status = byte
            pos += 1
        else:
            if running_status is None:
                raise MidiParseError("data byte without running status", pos)
            status = running_status

        if status == 0xFF:                       # meta event
            running_status = None
            if pos >= end:
                raise MidiParseError("truncated meta event", pos)
            meta_type = data[pos]
            pos += 1
            length, pos = _read_varlen(data, pos)
            if pos + length > end:
                raise MidiParseError("meta event overruns track", pos)
            payload = data[pos:pos + length]
            pos += length
            if meta_type == _META_TEMPO:
                if length != 3:
                    raise MidiParseError("tempo meta event must be 3 bytes", pos)
                tempo = int.from_bytes(payload, "big")
                events.append((tick, "tempo", tempo, 0))
            elif meta_type == _META_END_OF_TRACK:
                events.append((tick, "eot", 0, 0))
                break
        elif status in (0xF0, 0xF7):             # sysex: skip payload
            running_status = None
            length, pos = _read_varlen(data, pos)
            if pos + length > end:
                raise MidiParseError("sysex event overruns track", pos)
            pos += length
        elif 0x80 <= status <= 0xEF:             # channel message
            running_status = status
            kind = status >> 4
            if _CHANNEL_DATA_LEN[kind] == 2:
                a, pos = _data_byte(data, pos)
                b, pos = _data_byte(data, pos)
            else:
                a, pos = _data_byte(data, pos)
                b = 0
            if kind == 0x9:
                # velocity-0 note-on is a note-off by SMF convention
                events.append((tick, "on" if b > 0 else "off", a, b))
            elif kind == 0x8:
                events.append((tick, "off", a, b))
            elif kind == 0xB and a == _CC_SUSTAIN:
                events.append((tick, "cc64", b, 0))
        else:
            raise MidiParseError(f"unexpected status byte 0x{status:02X}", pos)
    else:
        events.append((tick, "eot", 0, 0))
        warnings.warn("track has no end-of-track meta event")
    return events


# Within one tick, note-offs are applied before note-ons so adjacent
# same-pitch notes survive a round trip, and before pedal changes.
_EVENT_ORDER = {"tempo": 0, "cc64": 1, "off": 2, "on": 3, "eot": 4}


@dataclass
class _OpenNote:
    onset_tick: int
    pitch: int
    velocity: int


def parse_smf(data: bytes, *, extend_with_pedal: bool = False) -> MidiPerformance:
    """Parse SMF bytes into a :class:`MidiPerformance`.

    ``extend_with_pedal`` stretches each note offset to the next sustain-pedal
    release (clipped at the next same-pitch onset), mimicking datasets that
    bake the pedal into note durations.  Default is off.
    """
    if len(data) < 14:
        raise MidiParseError("file shorter than SMF header", len(data))
    if data[0:4] != b"MThd":
        raise MidiParseError("missing MThd header chunk", 0)
    header_len = struct.unpack(">I", data[4:8])[0]
    if header_len < 6:
        raise MidiParseError(f"header chunk length {header_len} < 6", 4)
    smf_format, n_tracks, division = struct.unpack(">HHH", data[8:14])
    if smf_format not in (0, 1):
        raise UnsupportedMidiError(f"SMF format {smf_format} not supported", 8)
    if division & 0x8000:
        raise UnsupportedMidiError("SMPTE division mode not supported", 12)
    if division == 0:
        raise MidiParseError("division of zero ticks per quarter", 12)

    pos = 8 + header_len
    merged: list[tuple[int, int, int, _RawEvent]] = []
    track_index = 0
    while pos < len(data) and track_index < n_tracks:
        if pos + 8 > len(data):
            raise MidiParseError("truncated chunk header", pos)
        tag = data[pos:pos + 4]
        length = struct.unpack(">I", data[pos + 4:pos + 8])[0]
        body_start = pos + 8
        if body_start + length > len(data):
            raise MidiParseError(f"chunk length {length} overruns file", pos + 4)
        if tag == b"MTrk":
            for seq, ev in enumerate(_parse_track(data, body_start, body_start + length)):
                merged.append((ev[0], _EVENT_ORDER[ev[1]], track_index * 1_000_000 + seq, ev))
            track_index += 1
        pos = body_start + length
    if track_index == 0:
        raise MidiParseError("no MTrk chunk found", pos)

    merged.sort(key=lambda item: item[:3])
    tempo_changes = [(ev[0], ev[2]) for _, _, _, ev in merged if ev[1] == "tempo"]
    tempo_map = TempoMap(tempo_changes, division)
    end_tick = max(ev[0] for _, _, _, ev in merged)

    # Resolve note on/off pairs per pitch; a new onset truncates any note
    # still sounding at that pitch.
    open_notes: dict[int, _OpenNote] = {}
    raw_notes: list[tuple[int, int, int, int]] = []  # (on_tick, off_tick, pitch, vel)

    def close(pitch: int, off_tick: int) -> None:
        note = open_notes.pop(pitch, None)
        if note is None:
            return
        raw_notes.append((note.onset_tick, off_tick, pitch, note.velocity))

    pedal_down_spans: list[tuple[int, int]] = []   # closed [press, release) spans
    pedal_down_since: int | None = None
    for tick, _, _, ev in merged:
        kind = ev[1]
        if kind == "on":
            close(ev[2], tick)
            open_notes[ev[2]] = _OpenNote(tick, ev[2], ev[3])
        elif kind == "off":
            close(ev[2], tick)
        elif kind == "cc64":
            if ev[2] >= 64 and pedal_down_since is None:
                pedal_down_since = tick
            elif ev[2] < 64 and pedal_down_since is not None:
                pedal_down_spans.append((pedal_down_since, tick))
                pedal_down_since = None
    if open_notes:
        warnings.warn(
            f"{len(open_notes)} dangling note-on event(s); clamping to track end"
        )
        for pitch in list(open_notes):
            close(pitch, end_tick)
    if pedal_down_since is not None:
        pedal_down_spans.append((pedal_down_since, end_tick))

    if extend_with_pedal and pedal_down_spans:
        releases = [span[1] for span in pedal_down_spans]
        next_onset: dict[int, list[int]] = {}
        for on_tick, _, pitch, _ in raw_notes:
            next_onset.setdefault(pitch, []).append(on_tick)
        for ticks in next_onset.values():
            ticks.sort()
        extended = []
        for on_tick, off_tick, pitch, vel in raw_notes:
            for press, release in pedal_down_spans:
                if press <= off_tick < release:
                    off_tick = release
                    break
            onsets = next_onset[pitch]
            j = bisect.bisect_right(onsets, on_tick)
            if j < len(onsets):
                off_tick = min(off_tick, onsets[j])
            extended.append((on_tick, off_tick, pitch, vel))
        raw_notes = extended
        del releases

    notes: list[NoteEvent] = []
    n_dropped_range = 0
    n_dropped_zero = 0
    for on_tick, off_tick, pitch, vel in raw_notes:
        if not PIANO_MIN_PITCH <= pitch <= PIANO_MAX_PITCH:
            n_dropped_range += 1
            continue
        if off_tick <= on_tick:
            n_dropped_zero += 1
            continue
        notes.append(
            NoteEvent(
                onset_s=tempo_map.to_seconds(on_tick),
                offset_s=tempo_map.to_seconds(off_tick),
                pitch=pitch,
                velocity=vel,
            )
        )
    if n_dropped_range:
        warnings.warn(f"dropped {n_dropped_range} note(s) outside piano range 21..108")
    if n_dropped_zero:
        warnings.warn(f"dropped {n_dropped_zero} zero-duration note(s)")

    notes.sort(key=lambda n: (n.onset_s, n.pitch))
    duration_s = tempo_map.to_seconds(end_tick)
    if notes:
        duration_s = max(duration_s, max(n.offset_s for n in notes))
    return MidiPerformance(
        notes=notes,
        duration_s=duration_s,
        smf_format=smf_format,
        division=division,
        n_tracks=n_tracks,
    )


def write_smf(
    perf: MidiPerformance,
    *,
    division: int = WRITE_DIVISION,
    tempo_us: int = DEFAULT_TEMPO_US,
) -> bytes:
    """Serialize a performance as a single-track format-0 SMF at fixed tempo.

    Note times are quantized to ``division`` ticks per quarter at ``tempo_us``
    (defaults: 480 ticks at 120 bpm, about 1.04 ms per tick).  Notes whose
    quantized duration collapses to zero are stretched to one tick.
    """
    perf.validate()
    ticks_per_second = division * 1e6 / tempo_us

    events: list[tuple[int, int, int, int]] = []  # (tick, order, pitch, velocity)
    for note in perf.notes:
        on_tick = int(round(note.onset_s * ticks_per_second))
        off_tick = int(round(note.offset_s * ticks_per_second))
        if off_tick <= on_tick:
            off_tick = on_tick + 1
        velocity = note.velocity
        if velocity == 0:
            warnings.warn("velocity-0 note written as velocity 1")
            velocity = 1
        events.append((off_tick, 0, note.pitch, 0))
        events.append((on_tick, 1, note.pitch, velocity))
    events.sort()

    body = bytearray()
    body += _write_varlen(0) + bytes([0xFF, _META_TEMPO, 3]) + tempo_us.to_bytes(3, "big")
    tick = 0
    for ev_tick, order, pitch, velocity in events:
        body += _write_varlen(ev_tick - tick)
        tick = ev_tick
        status = 0x90 if order == 1 else 0x80
        body += bytes([status, pitch, velocity])
    end_tick = max(tick, int(round(perf.duration_s * ticks_per_second)))
    body += _write_varlen(end_tick - tick) + bytes([0xFF, _META_END_OF_TRACK, 0])

    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, division)
    return header + b"MTrk" + struct.pack(">I", len(body)) + bytes(body)


def sorted_performance(notes: list[NoteEvent], duration_s: float | None = None) -> MidiPerformance:
    """Convenience constructor: sort notes and derive the duration."""
    ordered = sorted(notes, key=lambda n: (n.onset_s, n.pitch))
    max_offset = max((n.offset_s for n in ordered), default=0.0)
    if duration_s is None:
        duration_s = max_offset
    return MidiPerformance(notes=ordered, duration_s=max(duration_s, max_offset))
