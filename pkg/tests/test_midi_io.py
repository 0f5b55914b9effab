"""MIDI parser/writer tests against hand-encoded SMF fixtures."""

import struct

import numpy as np
import pytest

from velocorr.midi_io import (
    MidiParseError,
    MidiPerformance,
    NoteEvent,
    TempoMap,
    UnsupportedMidiError,
    parse_smf,
    sorted_performance,
    write_smf,
)


def varlen(value):
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def smf(track_events, division=480, fmt=0):
    """Assemble SMF bytes by hand: track_events is [(delta, event_bytes)]."""
    body = b"".join(varlen(delta) + ev for delta, ev in track_events)
    body += varlen(0) + bytes([0xFF, 0x2F, 0x00])
    header = b"MThd" + struct.pack(">IHHH", 6, fmt, 1, division)
    return header + b"MTrk" + struct.pack(">I", len(body)) + body


def tempo_event(us_per_quarter):
    return bytes([0xFF, 0x51, 0x03]) + us_per_quarter.to_bytes(3, "big")


SINGLE_NOTE = smf([
    (0, tempo_event(500000)),
    (0, bytes([0x90, 60, 64])),
    (480, bytes([0x80, 60, 0])),
])


class TestParse:
    def test_single_note_fixture(self):
        # 480 ticks at 500000 us / 480 ticks-per-quarter = 0.5 s
        perf = parse_smf(SINGLE_NOTE)
        assert perf.notes == [NoteEvent(0.0, 0.5, 60, 64)]
        assert perf.duration_s >= 0.5

    def test_velocity_zero_note_on_is_note_off(self):
        data = smf([
            (0, bytes([0x90, 60, 80])),
            (480, bytes([0x90, 60, 0])),
        ])
        perf = parse_smf(data)
        assert len(perf.notes) == 1
        assert perf.notes[0] == NoteEvent(0.0, 0.5, 60, 80)

    def test_mid_track_tempo_change(self):
        # 480 ticks at 500000 then 480 ticks at 250000: 0.5 + 0.25 = 0.75 s
        data = smf([
            (0, tempo_event(500000)),
            (0, bytes([0x90, 60, 64])),
            (480, tempo_event(250000)),
            (480, bytes([0x80, 60, 0])),
        ])
        perf = parse_smf(data)
        assert perf.notes[0].onset_s == pytest.approx(0.0)
        assert perf.notes[0].offset_s == pytest.approx(0.75)

    def test_running_status(self):
        data = smf([
            (0, bytes([0x90, 60, 64])),
            (10, bytes([64, 64])),          # running status note-on
            (470, bytes([60, 0])),          # running status vel-0 = off
            (10, bytes([64, 0])),
        ])
        perf = parse_smf(data)
        assert [n.pitch for n in perf.notes] == [60, 64]

    def test_default_tempo_when_absent(self):
        data = smf([
            (0, bytes([0x90, 60, 64])),
            (960, bytes([0x80, 60, 0])),
        ])
        perf = parse_smf(data)
        assert perf.notes[0].offset_s == pytest.approx(1.0)

    def test_smpte_division_rejected(self):
        header = b"MThd" + struct.pack(">IHHh", 6, 0, 1, -25 * 256 + 40)
        with pytest.raises(UnsupportedMidiError):
            parse_smf(header + b"MTrk" + struct.pack(">I", 4) + varlen(0) + bytes([0xFF, 0x2F, 0x00]))

    def test_malformed_header_reports_offset(self):
        with pytest.raises(MidiParseError) as exc:
            parse_smf(b"RIFF" + b"\x00" * 20)
        assert exc.value.offset == 0

    def test_truncated_chunk(self):
        data = SINGLE_NOTE[:-4]
        with pytest.raises(MidiParseError):
            parse_smf(data)

    def test_dangling_note_on_clamped(self):
        body = varlen(0) + bytes([0x90, 60, 64]) + varlen(480) + bytes([0xFF, 0x2F, 0x00])
        data = b"MThd" + struct.pack(">IHHH", 6, 0, 1, 480)
        data += b"MTrk" + struct.pack(">I", len(body)) + body
        with pytest.warns(UserWarning, match="dangling"):
            perf = parse_smf(data)
        assert perf.notes[0].offset_s == pytest.approx(0.5)

    def test_overlapping_same_pitch_truncated(self):
        data = smf([
            (0, bytes([0x90, 60, 80])),
            (240, bytes([0x90, 60, 90])),    # truncates the first note
            (240, bytes([0x80, 60, 0])),
            (240, bytes([0x80, 60, 0])),
        ])
        perf = parse_smf(data)
        assert len(perf.notes) == 2
        assert perf.notes[0].offset_s == pytest.approx(perf.notes[1].onset_s)

    def test_out_of_range_pitch_dropped(self):
        data = smf([
            (0, bytes([0x90, 12, 80])),
            (0, bytes([0x90, 60, 80])),
            (480, bytes([0x80, 12, 0])),
            (0, bytes([0x80, 60, 0])),
        ])
        with pytest.warns(UserWarning, match="piano range"):
            perf = parse_smf(data)
        assert [n.pitch for n in perf.notes] == [60]

    def test_format_1_multitrack(self):
        tempo_body = varlen(0) + tempo_event(250000) + varlen(0) + bytes([0xFF, 0x2F, 0x00])
        note_body = (
            varlen(0) + bytes([0x90, 72, 33])
            + varlen(480) + bytes([0x80, 72, 0])
            + varlen(0) + bytes([0xFF, 0x2F, 0x00])
        )
        data = b"MThd" + struct.pack(">IHHH", 6, 1, 2, 480)
        data += b"MTrk" + struct.pack(">I", len(tempo_body)) + tempo_body
        data += b"MTrk" + struct.pack(">I", len(note_body)) + note_body
        perf = parse_smf(data)
        assert perf.notes == [NoteEvent(0.0, 0.25, 72, 33)]

    def test_pedal_extension_flag(self):
        events = [
            (0, bytes([0xB0, 64, 127])),     # pedal down
            (0, bytes([0x90, 60, 70])),
            (240, bytes([0x80, 60, 0])),     # raw offset at 0.25 s
            (720, bytes([0xB0, 64, 0])),     # pedal up at tick 960 = 1.0 s
        ]
        assert parse_smf(smf(events)).notes[0].offset_s == pytest.approx(0.25)
        extended = parse_smf(smf(events), extend_with_pedal=True)
        assert extended.notes[0].offset_s == pytest.approx(1.0)


class TestWriteRoundTrip:
    def test_single_note_round_trip(self):
        perf = parse_smf(SINGLE_NOTE)
        again = parse_smf(write_smf(perf))
        assert again.notes == perf.notes

    def test_empty_performance(self):
        data = write_smf(MidiPerformance(notes=[], duration_s=0.0))
        assert parse_smf(data).notes == []

    def test_seeded_random_round_trip(self):
        rng = np.random.default_rng(1234)
        notes = []
        for _ in range(100):
            onset = float(rng.uniform(0, 60))
            dur = float(rng.uniform(0.05, 2.0))
            pitch = int(rng.integers(21, 109))
            vel = int(rng.integers(1, 128))
            notes.append(NoteEvent(onset, onset + dur, pitch, vel))
        perf = sorted_performance(notes)
        # the writer resolves same-pitch overlaps implicitly via the parser
        again = parse_smf(write_smf(perf))
        tick_s = 0.5 / 480
        assert sorted((n.pitch, n.velocity) for n in again.notes) == sorted(
            (n.pitch, n.velocity) for n in perf.notes
        )
        paired = {}
        for n in perf.notes:
            paired.setdefault((n.pitch, n.velocity), []).append(n)
        for n in again.notes:
            candidates = paired[(n.pitch, n.velocity)]
            src = min(candidates, key=lambda c: abs(c.onset_s - n.onset_s))
            assert abs(src.onset_s - n.onset_s) <= tick_s + 1e-9

    def test_round_trip_offsets_within_one_tick(self):
        rng = np.random.default_rng(77)
        notes = []
        onset = 0.0
        for _ in range(50):
            onset += float(rng.uniform(0.05, 0.5))
            notes.append(NoteEvent(onset, onset + float(rng.uniform(0.05, 0.3)),
                                   int(rng.integers(21, 109)), int(rng.integers(1, 128))))
        perf = sorted_performance(notes)
        again = parse_smf(write_smf(perf))
        tick_s = 0.5 / 480
        # distinct pitches may truncate overlaps; restrict to the surviving set
        assert len(again.notes) <= len(perf.notes)
        for got in again.notes:
            src = min(perf.notes, key=lambda n: (n.pitch != got.pitch, abs(n.onset_s - got.onset_s)))
            assert src.pitch == got.pitch
            assert abs(src.onset_s - got.onset_s) <= tick_s + 1e-9

    def test_velocity_zero_clamped_on_write(self):
        perf = sorted_performance([NoteEvent(0.0, 0.5, 60, 0)])
        with pytest.warns(UserWarning, match="velocity-0"):
            data = write_smf(perf)
        assert parse_smf(data).notes[0].velocity == 1


class TestProperties:
    def test_tempo_map_monotonic(self):
        tm = TempoMap([(0, 500000), (480, 125000), (960, 750000)], 480)
        ticks = np.arange(0, 2000, 7)
        seconds = [tm.to_seconds(int(t)) for t in ticks]
        assert all(b > a for a, b in zip(seconds, seconds[1:]))

    def test_parser_totality_fuzz(self):
        rng = np.random.default_rng(99)
        for _ in range(300):
            blob = bytes(rng.integers(0, 256, size=int(rng.integers(0, 200)), dtype=np.uint8))
            try:
                perf = parse_smf(blob)
            except MidiParseError:
                continue
            perf.validate()

    def test_fuzz_valid_prefix(self):
        # corruptions of a valid file must never escape MidiParseError
        rng = np.random.default_rng(5)
        base = bytearray(SINGLE_NOTE)
        for _ in range(300):
            mutated = bytearray(base)
            for _ in range(int(rng.integers(1, 4))):
                mutated[int(rng.integers(0, len(mutated)))] = int(rng.integers(0, 256))
            try:
                parse_smf(bytes(mutated)).validate()
            except MidiParseError:
                pass
