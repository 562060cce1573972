"""Reset-based evaluation: accuracy, robustness, expected average overlap.

The protocol scores one frame at a time against ground truth. A frame with
zero overlap is a failure; the following four frames are skipped, the tracker
is reinitialized with ground truth on the fifth, and the ten frames after the
failure are excluded from the accuracy average (they are recorded with
skipped status and no overlap). Failures landing inside that masked window
still count and start a fresh reset cycle.

Expected average overlap (EAO) is computed from the recorded traces alone:
every (re)initialization opens a run covering all later frames of the
sequence; within a run, a frame contributes its overlap if it was tracked and
no failure has occurred earlier in the run, and zero otherwise. ``phi(N)``
averages the first ``N`` values of every run (short runs are zero-extended),
and the EAO is the mean of ``phi`` over an interval of run lengths.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol, Sequence as SequenceType

from .errors import (
    DatasetMismatch,
    EmptySequence,
    InvalidInterval,
    MissingAnnotation,
    NoValidFrames,
)
from .geometry import CornerBB, FiveBB, five_to_corners, polygon_iou

SKIP_FRAMES = 4          # frames ignored right after a failure
REINIT_OFFSET = 5        # reinitialization happens this many frames after it
ACCURACY_MASK = 10       # frames after a failure excluded from accuracy


class FrameStatus(str, Enum):
    TRACKED = "tracked"
    FAILED = "failed"
    SKIPPED = "skipped"
    REINIT = "reinit"


@dataclass(frozen=True)
class FrameOutcome:
    """Per-frame protocol record. ``overlap`` is present iff tracked."""

    status: FrameStatus
    overlap: float | None = None

    def __post_init__(self):
        if (self.status is FrameStatus.TRACKED) != (self.overlap is not None):
            raise ValueError("overlap must be present exactly for tracked frames")
        if self.overlap is not None and not (0.0 < self.overlap <= 1.0):
            raise ValueError(f"tracked overlap {self.overlap} outside (0, 1]")

    def to_dict(self) -> dict:
        return {"status": self.status.value, "overlap": self.overlap}


@dataclass(frozen=True)
class EvalTrace:
    """Outcome list for one sequence."""

    sequence_id: str
    outcomes: tuple[FrameOutcome, ...]

    @property
    def n_frames(self) -> int:
        return len(self.outcomes)

    @property
    def n_fails(self) -> int:
        return sum(1 for o in self.outcomes if o.status is FrameStatus.FAILED)

    def to_dict(self) -> dict:
        return {
            "sequence_id": self.sequence_id,
            "n_frames": self.n_frames,
            "n_fails": self.n_fails,
            "outcomes": [o.to_dict() for o in self.outcomes],
        }


class ResetTracker(Protocol):
    """What the protocol needs from a tracker.

    ``frame`` may be None when the implementation only replays stored
    predictions; pixel-driven trackers require real frames.
    """

    def initialize(self, index: int, frame, gt: CornerBB) -> None: ...

    def predict(self, index: int, frame) -> CornerBB: ...


class ReplayTracker:
    """Replays a fixed per-frame prediction list through the protocol."""

    def __init__(self, boxes: SequenceType[FiveBB]):
        self._boxes = list(boxes)

    def initialize(self, index: int, frame, gt: CornerBB) -> None:
        pass

    def predict(self, index: int, frame) -> CornerBB:
        if index >= len(self._boxes):
            raise DatasetMismatch(
                f"prediction list has {len(self._boxes)} entries, frame {index} requested"
            )
        return five_to_corners(self._boxes[index])


def run_reset_protocol(tracker: ResetTracker, sequence) -> EvalTrace:
    """Score one sequence with reset-based supervision.

    ``sequence`` must expose ``sequence_id``, ``groundtruth`` (one CornerBB
    per frame) and ``frames`` (may be None for replay trackers).
    """
    gts = list(sequence.groundtruth)
    n = len(gts)
    if n == 0:
        raise EmptySequence(f"sequence {sequence.sequence_id!r} has no frames")
    if any(g is None for g in gts):
        bad = next(i for i, g in enumerate(gts) if g is None)
        raise MissingAnnotation(f"frame {bad} of {sequence.sequence_id!r} lacks ground truth")
    frames = sequence.frames if sequence.frames is not None else [None] * n

    outcomes: list[FrameOutcome] = []
    tracker.initialize(0, frames[0], gts[0])
    outcomes.append(FrameOutcome(FrameStatus.REINIT))

    last_fail: int | None = None
    for i in range(1, n):
        if last_fail is not None:
            k = i - last_fail
            if 1 <= k <= SKIP_FRAMES:
                outcomes.append(FrameOutcome(FrameStatus.SKIPPED))
                continue
            if k == REINIT_OFFSET:
                tracker.initialize(i, frames[i], gts[i])
                outcomes.append(FrameOutcome(FrameStatus.REINIT))
                continue
        pred = tracker.predict(i, frames[i])
        overlap = polygon_iou(pred, gts[i])
        if overlap == 0.0:
            outcomes.append(FrameOutcome(FrameStatus.FAILED))
            last_fail = i
        elif last_fail is not None and i - last_fail <= ACCURACY_MASK:
            # Tracked but inside the post-failure mask: excluded from the
            # accuracy average, so the overlap is not recorded.
            outcomes.append(FrameOutcome(FrameStatus.SKIPPED))
        else:
            outcomes.append(FrameOutcome(FrameStatus.TRACKED, overlap))
    return EvalTrace(sequence.sequence_id, tuple(outcomes))


def accuracy(traces: SequenceType[EvalTrace]) -> float:
    """Mean overlap over all tracked frames across traces."""
    overlaps = [
        o.overlap for t in traces for o in t.outcomes if o.status is FrameStatus.TRACKED
    ]
    if not overlaps:
        raise NoValidFrames("no tracked frames in any trace")
    return sum(overlaps) / len(overlaps)


def robustness(traces: SequenceType[EvalTrace]) -> float:
    """Failures per 100 frames: 100 * total failures / total frames."""
    total_frames = sum(t.n_frames for t in traces)
    if total_frames == 0:
        raise EmptySequence("no frames in any trace")
    total_fails = sum(t.n_fails for t in traces)
    return 100.0 * total_fails / total_frames


def _run_curves(trace: EvalTrace) -> list[list[float]]:
    """Per-run overlap curves: one run per (re)initialization.

    A run covers every frame after its initialization to the end of the
    trace. Tracked frames before the run's first failure contribute their
    overlap; failed, skipped, masked, and post-failure frames contribute 0.
    """
    curves = []
    outcomes = trace.outcomes
    for start, outcome in enumerate(outcomes):
        if outcome.status is not FrameStatus.REINIT:
            continue
        curve = []
        failed = False
        for o in outcomes[start + 1:]:
            if o.status is FrameStatus.FAILED:
                failed = True
            if not failed and o.status is FrameStatus.TRACKED:
                curve.append(o.overlap)
            else:
                curve.append(0.0)
        curves.append(curve)
    return curves


def phi(traces: SequenceType[EvalTrace], n: int) -> float:
    """Expected overlap at run length ``n``: mean over runs of the mean of
    each run's first ``n`` values, zero-extending runs shorter than ``n``."""
    if n < 1:
        raise InvalidInterval(f"run length must be at least 1, got {n}")
    runs = [curve for t in traces for curve in _run_curves(t)]
    if not runs:
        raise NoValidFrames("no runs in any trace")
    return sum(sum(curve[:n]) / n for curve in runs) / len(runs)


def eao(traces: SequenceType[EvalTrace], lo: int, hi: int) -> float:
    """Mean of ``phi`` over run lengths ``lo..hi`` inclusive."""
    if lo < 1 or hi < lo:
        raise InvalidInterval(f"invalid interval [{lo}, {hi}]")
    return sum(phi(traces, n) for n in range(lo, hi + 1)) / (hi - lo + 1)


def eao_curve(traces: SequenceType[EvalTrace], lo: int, hi: int) -> list[tuple[int, float]]:
    """The (N, phi(N)) pairs over the averaging interval, for reports."""
    if lo < 1 or hi < lo:
        raise InvalidInterval(f"invalid interval [{lo}, {hi}]")
    return [(n, phi(traces, n)) for n in range(lo, hi + 1)]


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    robustness: float
    eao: float
    interval: tuple[int, int]
    per_sequence: tuple[dict, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "robustness": self.robustness,
            "eao": self.eao,
            "interval": list(self.interval),
            "per_sequence": list(self.per_sequence),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def default_interval(sequences) -> tuple[int, int]:
    """Averaging interval defaulting to the observed sequence length range."""
    lengths = [len(s.groundtruth) for s in sequences]
    if not lengths:
        raise EmptySequence("no sequences")
    return (min(lengths), max(lengths))


def evaluate(
    sequences, tracker_factory, lo: int | None = None, hi: int | None = None
) -> tuple[EvalReport, list[EvalTrace]]:
    """Run the reset protocol over a dataset and aggregate the three scores.

    ``tracker_factory(sequence)`` must return a fresh ResetTracker per
    sequence. Bounds default to the observed sequence length range, and the
    traces are returned alongside the report for curve plotting.
    """
    sequences = list(sequences)
    if lo is None or hi is None:
        d_lo, d_hi = default_interval(sequences)
        lo = d_lo if lo is None else lo
        hi = d_hi if hi is None else hi
    traces = [run_reset_protocol(tracker_factory(seq), seq) for seq in sequences]
    per_seq = []
    for trace in traces:
        tracked = [o.overlap for o in trace.outcomes if o.status is FrameStatus.TRACKED]
        per_seq.append(
            {
                "sequence_id": trace.sequence_id,
                "n_frames": trace.n_frames,
                "n_fails": trace.n_fails,
                "mean_overlap": sum(tracked) / len(tracked) if tracked else None,
            }
        )
    return EvalReport(
        accuracy=accuracy(traces),
        robustness=robustness(traces),
        eao=eao(traces, lo, hi),
        interval=(lo, hi),
        per_sequence=tuple(per_seq),
    ), traces


def traces_to_json(traces: SequenceType[EvalTrace]) -> str:
    return json.dumps([t.to_dict() for t in traces], indent=2, sort_keys=True) + "\n"
