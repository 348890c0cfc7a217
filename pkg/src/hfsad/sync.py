"""Transmission layouts, marker-based validation and stream segmentation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .dsp import AudioBuffer
from .markers import MarkerHypothesis

VALID = "valid"
REJECTED = "rejected"
MISSING_MARKER = "missing_marker"
WRONG_ORDER = "wrong_order"
TIMING_MISMATCH = "timing_mismatch"
NO_REASON = "none"

SYNC_TOLERANCE_S = 0.016


@dataclass(frozen=True)
class TransmissionLayout:
    """Timing skeleton of one transmission, in samples from its first sample.

    ``sequence_spans[i]`` is the audio sequence that sits between markers
    ``i`` and ``i + 1``.
    """

    marker_ids: tuple
    marker_offsets: tuple
    sequence_spans: tuple
    marker_len_samples: int
    sample_rate_hz: int
    tolerance_samples: int = -1

    def __post_init__(self):
        if len(self.marker_ids) != len(self.marker_offsets):
            raise ValueError("one offset per marker required")
        if len(self.sequence_spans) != len(self.marker_ids) - 1:
            raise ValueError("need exactly one sequence between consecutive markers")
        if self.tolerance_samples < 0:
            object.__setattr__(
                self, "tolerance_samples", int(round(SYNC_TOLERANCE_S * self.sample_rate_hz))
            )
        if self.tolerance_samples > SYNC_TOLERANCE_S * self.sample_rate_hz + 1e-9:
            raise ValueError("tolerance may not exceed 16 ms")
        if any(g <= 0 for g in self.gaps):
            raise ValueError("inter-marker gaps must be strictly positive")

    @property
    def gaps(self) -> list[int]:
        return [int(b - a) for a, b in zip(self.marker_offsets, self.marker_offsets[1:])]

    def to_dict(self) -> dict:
        return {
            "marker_ids": list(self.marker_ids),
            "marker_offsets": list(self.marker_offsets),
            "gaps": self.gaps,
            "sequence_spans": [list(s) for s in self.sequence_spans],
            "marker_len_samples": self.marker_len_samples,
            "sample_rate_hz": self.sample_rate_hz,
            "tolerance_samples": self.tolerance_samples,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransmissionLayout":
        return cls(
            marker_ids=tuple(int(i) for i in d["marker_ids"]),
            marker_offsets=tuple(int(o) for o in d["marker_offsets"]),
            sequence_spans=tuple(tuple(int(v) for v in s) for s in d["sequence_spans"]),
            marker_len_samples=int(d["marker_len_samples"]),
            sample_rate_hz=int(d["sample_rate_hz"]),
            tolerance_samples=int(d.get("tolerance_samples", -1)),
        )

    def rescaled(self, sample_rate_hz: int) -> "TransmissionLayout":
        """Same layout expressed at another sample rate."""
        f = sample_rate_hz / self.sample_rate_hz
        r = lambda v: int(round(v * f))  # noqa: E731
        return TransmissionLayout(
            self.marker_ids,
            tuple(r(o) for o in self.marker_offsets),
            tuple((r(a), r(b)) for a, b in self.sequence_spans),
            r(self.marker_len_samples),
            sample_rate_hz,
        )


@dataclass
class SyncReport:
    status: str
    reject_reason: str = NO_REASON
    aligned_segments: list = field(default_factory=list)  # (start, end, sequence_index)
    matched: list = field(default_factory=list)  # MarkerHypothesis per layout marker
    transmission_offset: Optional[int] = None
    detail: str = ""

    @property
    def valid(self) -> bool:
        return self.status == VALID

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "reject_reason": self.reject_reason,
            "aligned_segments": [list(s) for s in self.aligned_segments],
            "matched_markers": [h.to_dict() for h in self.matched],
            "transmission_offset": self.transmission_offset,
            "detail": self.detail,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyncReport":
        return cls(
            status=d["status"],
            reject_reason=d["reject_reason"],
            aligned_segments=[tuple(int(v) for v in s) for s in d["aligned_segments"]],
            matched=[MarkerHypothesis(**h) for h in d.get("matched_markers", [])],
            transmission_offset=d.get("transmission_offset"),
            detail=d.get("detail", ""),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "SyncReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _best(hyps):
    # highest score wins, ties go to the earliest offset
    return min(hyps, key=lambda h: (-h.score, h.sample_offset))


def validate_layout(hyps: list, layout: TransmissionLayout) -> SyncReport:
    """Apply the three sanity checks in order and report the first failure.

    1. every layout marker has a hypothesis,
    2. the matched markers appear in layout order,
    3. every inter-marker distance matches the layout within tolerance.
    """
    matched = []
    for mid in layout.marker_ids:
        cands = [h for h in hyps if h.marker_id == mid]
        if not cands:
            return SyncReport(REJECTED, MISSING_MARKER, detail=f"marker {mid} not detected")
        matched.append(_best(cands))

    offsets = [h.sample_offset for h in matched]
    for k in range(1, len(offsets)):
        if offsets[k] <= offsets[k - 1]:
            return SyncReport(
                REJECTED, WRONG_ORDER, matched=matched,
                detail=f"marker {layout.marker_ids[k]} precedes marker {layout.marker_ids[k - 1]}",
            )

    for k, expected in enumerate(layout.gaps):
        measured = offsets[k + 1] - offsets[k]
        if abs(measured - expected) > layout.tolerance_samples:
            return SyncReport(
                REJECTED, TIMING_MISMATCH, matched=matched,
                detail=(f"gap {k}: measured {measured} samples, expected {expected} "
                        f"+- {layout.tolerance_samples}"),
            )

    segments = []
    for i, (start, end) in enumerate(layout.sequence_spans):
        anchor = offsets[i] - layout.marker_offsets[i]
        segments.append((anchor + start, anchor + end, i))
    return SyncReport(
        VALID, NO_REASON, aligned_segments=segments, matched=matched,
        transmission_offset=offsets[0] - layout.marker_offsets[0],
    )


@dataclass(frozen=True, eq=False)
class Segment:
    audio: AudioBuffer
    global_offset: int
    sequence_index: int


def segment_stream(stream: AudioBuffer, report: SyncReport) -> list[Segment]:
    """Cut the aligned audio sequences out of a validated stream.

    Spans reaching past either end of the stream are zero-padded so every
    segment has exactly its layout length.
    """
    if report.status != VALID:
        raise ValueError(f"cannot segment a {report.status} stream ({report.reject_reason})")
    x = stream.samples
    out = []
    for start, end, idx in report.aligned_segments:
        seg = np.zeros(end - start)
        lo, hi = max(start, 0), min(end, x.size)
        if hi > lo:
            seg[lo - start: hi - start] = x[lo:hi]
        out.append(Segment(AudioBuffer(seg, stream.sample_rate_hz), int(start), int(idx)))
    return out
