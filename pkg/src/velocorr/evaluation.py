"""Velocity-estimation metrics: per-note MAE/STD and note Recall.

Recall follows the note-with-offset-and-velocity matching procedure: pitch
and 50 ms onset agreement (plus an offset criterion by default) make a
candidate pair; reference velocities are normalized by their maximum;
estimated velocities are rescaled by a single global least-squares factor
fitted on a timing-only matching; candidates whose rescaled velocity error
exceeds the tolerance are dropped; recall counts a maximum one-to-one
matching of the survivors.  MAE and STD are computed on the denormalized
0-127 scale over per-note absolute errors (population standard deviation).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from velocorr.midi_io import MidiPerformance, NoteEvent
from velocorr.models import VelocityGrid, map_onset_velocities
from velocorr.pianoroll import ScoreFeatures, SegmentSpec

_NO_PAIR = 1e9


class EmptyReferenceError(ValueError):
    """Recall is undefined for an empty reference note list."""


class CoverageError(ValueError):
    """Some reference notes received no velocity from the grid segments."""

    def __init__(self, missing: list[int]):
        super().__init__(
            f"{len(missing)} reference note(s) not covered by any segment: "
            f"{missing[:10]}{'...' if len(missing) > 10 else ''}"
        )
        self.missing = missing


@dataclass(frozen=True)
class MatchConfig:
    onset_tolerance: float = 0.05
    offset_ratio: float = 0.2
    offset_min_tolerance: float = 0.05
    velocity_tolerance: float = 0.1
    use_offset: bool = True

    def __post_init__(self):
        if min(self.onset_tolerance, self.offset_min_tolerance, self.velocity_tolerance) <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class MatchResult:
    pairs: list[tuple[int, int]]
    recall: float
    scale: float
    n_reference: int
    n_estimated: int


@dataclass
class PieceEval:
    piece_id: str
    mae: float
    std: float
    recall: float | None
    n_reference_notes: int
    n_matched: int


@dataclass
class EvalReport:
    mae: float
    std: float
    recall: float | None
    n_reference_notes: int
    n_matched: int
    per_piece: list[PieceEval] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [
            f"mae = {self.mae:.6f}",
            f"std = {self.std:.6f}",
            f"recall = {'n/a' if self.recall is None else f'{self.recall:.6f}'}",
            f"n_reference_notes = {self.n_reference_notes}",
            f"n_matched = {self.n_matched}",
            "",
            "piece\tmae\tstd\trecall\tn_notes\tn_matched",
        ]
        for p in self.per_piece:
            recall = "n/a" if p.recall is None else f"{p.recall:.6f}"
            lines.append(
                f"{p.piece_id}\t{p.mae:.6f}\t{p.std:.6f}\t{recall}"
                f"\t{p.n_reference_notes}\t{p.n_matched}"
            )
        return "\n".join(lines) + "\n"


def mae_std(ref_velocities, est_velocities) -> tuple[float, float]:
    """Mean and population standard deviation of per-note absolute errors."""
    ref = np.asarray(ref_velocities, dtype=np.float64)
    est = np.asarray(est_velocities, dtype=np.float64)
    if ref.shape != est.shape:
        raise ValueError(f"velocity lists differ in length: {ref.shape} vs {est.shape}")
    if ref.size == 0:
        raise ValueError("mae_std is undefined for an empty note set")
    errors = np.abs(ref - est)
    return float(errors.mean()), float(errors.std())


def _candidate_pairs(ref: list[NoteEvent], est: list[NoteEvent], cfg: MatchConfig):
    pairs = []
    for i, r in enumerate(ref):
        for j, e in enumerate(est):
            if r.pitch != e.pitch:
                continue
            onset_dist = abs(r.onset_s - e.onset_s)
            if onset_dist > cfg.onset_tolerance:
                continue
            if cfg.use_offset:
                tol = max(cfg.offset_min_tolerance, cfg.offset_ratio * (r.offset_s - r.onset_s))
                if abs(r.offset_s - e.offset_s) > tol:
                    continue
            pairs.append((i, j, onset_dist))
    return pairs


def _max_matching(pairs, n_ref: int, n_est: int) -> list[tuple[int, int]]:
    """Maximum-cardinality matching minimizing total onset distance."""
    if not pairs or n_ref == 0 or n_est == 0:
        return []
    cost = np.full((n_ref, n_est), _NO_PAIR)
    for i, j, dist in pairs:
        cost[i, j] = dist
    rows, cols = linear_sum_assignment(cost)
    return [(int(i), int(j)) for i, j in zip(rows, cols) if cost[i, j] < _NO_PAIR]


def match_notes(
    ref: list[NoteEvent], est: list[NoteEvent], cfg: MatchConfig = MatchConfig()
) -> MatchResult:
    """Match estimated notes to reference notes; see the module docstring."""
    if not ref:
        raise EmptyReferenceError("no reference notes to match against")
    candidates = _candidate_pairs(ref, est, cfg)

    max_ref_vel = max(n.velocity for n in ref)
    ref_norm = np.array(
        [n.velocity / max_ref_vel if max_ref_vel > 0 else 0.0 for n in ref]
    )
    est_vel = np.array([n.velocity for n in est], dtype=np.float64)

    timing_pairs = _max_matching(candidates, len(ref), len(est))
    if timing_pairs:
        r = np.array([ref_norm[i] for i, _ in timing_pairs])
        e = np.array([est_vel[j] for _, j in timing_pairs])
        denom = float((e * e).sum())
        scale = float((r * e).sum() / denom) if denom > 0 else 1.0
    else:
        scale = 1.0

    surviving = [
        (i, j, dist)
        for i, j, dist in candidates
        if abs(ref_norm[i] - scale * est_vel[j]) <= cfg.velocity_tolerance
    ]
    pairs = _max_matching(surviving, len(ref), len(est))
    return MatchResult(
        pairs=pairs,
        recall=len(pairs) / len(ref),
        scale=scale,
        n_reference=len(ref),
        n_estimated=len(est),
    )


def assemble_note_velocities(
    perf: MidiPerformance,
    segments: list[tuple[SegmentSpec, ScoreFeatures]],
    grids: list[np.ndarray | VelocityGrid],
    *,
    frame_window: int = 0,
    divisor: float = 127.0,
) -> np.ndarray:
    """Collect one estimated velocity per reference note from segment grids.

    With the default hop = window tiling every onset lives in exactly one
    segment; a note not covered by any segment raises :class:`CoverageError`.
    """
    if len(segments) != len(grids):
        raise ValueError(f"{len(segments)} segments but {len(grids)} grids")
    estimated: dict[int, int] = {}
    for (_, sf), grid in zip(segments, grids):
        for note_id, velocity in map_onset_velocities(
            grid, sf, frame_window=frame_window, divisor=divisor
        ):
            estimated.setdefault(note_id, velocity)
    missing = [i for i in range(len(perf.notes)) if i not in estimated]
    if missing:
        raise CoverageError(missing)
    return np.array([estimated[i] for i in range(len(perf.notes))], dtype=np.int64)


def _evaluate_one(
    piece_id: str,
    perf: MidiPerformance,
    segments,
    grids,
    cfg: MatchConfig,
    frame_window: int,
    divisor: float,
) -> tuple[PieceEval, np.ndarray]:
    est_vel = assemble_note_velocities(
        perf, segments, grids, frame_window=frame_window, divisor=divisor
    )
    ref_vel = np.array([n.velocity for n in perf.notes], dtype=np.int64)
    mae, std = mae_std(ref_vel, est_vel)
    est_notes = [
        NoteEvent(n.onset_s, n.offset_s, n.pitch, int(v))
        for n, v in zip(perf.notes, est_vel)
    ]
    result = match_notes(perf.notes, est_notes, cfg)
    piece = PieceEval(
        piece_id=piece_id,
        mae=mae,
        std=std,
        recall=result.recall,
        n_reference_notes=len(perf.notes),
        n_matched=len(result.pairs),
    )
    return piece, np.abs(ref_vel - est_vel).astype(np.float64)


def evaluate_piece(
    piece_id: str,
    perf: MidiPerformance,
    segments: list[tuple[SegmentSpec, ScoreFeatures]],
    grids: list[np.ndarray | VelocityGrid],
    cfg: MatchConfig = MatchConfig(),
    *,
    frame_window: int = 0,
    divisor: float = 127.0,
) -> PieceEval:
    """Metrics for one piece with ground-truth timing on both sides."""
    piece, _ = _evaluate_one(piece_id, perf, segments, grids, cfg, frame_window, divisor)
    return piece


def aggregate_report(pieces: list[PieceEval], all_errors: np.ndarray | None = None) -> EvalReport:
    """Pool per-piece results into one report (note-weighted aggregate)."""
    if not pieces:
        raise ValueError("no pieces to aggregate")
    n_ref = sum(p.n_reference_notes for p in pieces)
    n_matched = sum(p.n_matched for p in pieces)
    if all_errors is not None and all_errors.size:
        mae = float(np.abs(all_errors).mean())
        std = float(np.abs(all_errors).std())
    else:
        mae = sum(p.mae * p.n_reference_notes for p in pieces) / n_ref
        # note-weighted mean of per-piece stds is not the pooled std; callers
        # that want the exact pooled value pass all_errors
        std = sum(p.std * p.n_reference_notes for p in pieces) / n_ref
    recall = n_matched / n_ref if n_ref else None
    return EvalReport(
        mae=mae,
        std=std,
        recall=recall,
        n_reference_notes=n_ref,
        n_matched=n_matched,
        per_piece=pieces,
    )


def evaluate_pipeline(
    items: list[tuple[str, MidiPerformance, list, list]],
    cfg: MatchConfig = MatchConfig(),
    *,
    frame_window: int = 0,
    divisor: float = 127.0,
) -> EvalReport:
    """Evaluate (piece_id, performance, segments, grids) items into a report."""
    pieces = []
    errors = []
    for piece_id, perf, segments, grids in items:
        piece, errs = _evaluate_one(
            piece_id, perf, segments, grids, cfg, frame_window, divisor
        )
        pieces.append(piece)
        errors.append(errs)
    return aggregate_report(pieces, np.concatenate(errors) if errors else None)
