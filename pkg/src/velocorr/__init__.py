"""Score-informed MIDI velocity estimation and correction toolkit."""

__version__ = "0.1.0"

from velocorr.midi_io import MidiPerformance, NoteEvent, parse_smf, write_smf
from velocorr.pianoroll import (
    ScoreFeatures,
    SegmentSpec,
    denormalize_velocity,
    normalize_velocity,
    onset_mask,
    rasterize,
    segment_performance,
)

__all__ = [
    "MidiPerformance",
    "NoteEvent",
    "parse_smf",
    "write_smf",
    "ScoreFeatures",
    "SegmentSpec",
    "denormalize_velocity",
    "normalize_velocity",
    "onset_mask",
    "rasterize",
    "segment_performance",
    "__version__",
]
