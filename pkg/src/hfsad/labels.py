"""Speech/silence interval tracks shared by ground truth and hypotheses."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SPEECH = "sp"
SILENCE = "sil"


@dataclass(frozen=True)
class LabelTrack:
    """Contiguous, alternating ``sp``/``sil`` intervals covering ``[0, duration]``."""

    intervals: tuple

    def __post_init__(self):
        iv = tuple((float(a), float(b), str(lab)) for a, b, lab in self.intervals)
        if not iv:
            raise ValueError("label track needs at least one interval")
        if iv[0][0] != 0.0:
            raise ValueError(f"track must start at 0, starts at {iv[0][0]}")
        for (a, b, lab), nxt in zip(iv, iv[1:] + (None,)):
            if lab not in (SPEECH, SILENCE):
                raise ValueError(f"unknown label {lab!r}")
            if not b > a:
                raise ValueError(f"empty or reversed interval ({a}, {b})")
            if nxt is not None:
                if nxt[0] != b:
                    raise ValueError(f"gap or overlap at {b} s")
                if nxt[2] == lab:
                    raise ValueError(f"labels do not alternate at {b} s")
        object.__setattr__(self, "intervals", iv)

    @classmethod
    def from_spans(cls, speech_spans, duration_s: float) -> "LabelTrack":
        """Build from (start_s, end_s) speech spans; overlapping spans merge."""
        spans = sorted((max(0.0, float(a)), min(float(duration_s), float(b)))
                       for a, b in speech_spans)
        merged = []
        for a, b in spans:
            if b <= a:
                continue
            if merged and a <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], b)
            else:
                merged.append([a, b])
        out, t = [], 0.0
        for a, b in merged:
            if a > t:
                out.append((t, a, SILENCE))
            out.append((a, b, SPEECH))
            t = b
        if duration_s > t:
            out.append((t, float(duration_s), SILENCE))
        return cls(tuple(out))

    @classmethod
    def from_decisions(cls, decisions, frame_shift_s: float, duration_s: float,
                       first_center_s: float = None) -> "LabelTrack":
        """Frame decisions -> intervals, each frame owning one shift around its centre."""
        d = np.asarray(decisions, dtype=bool)
        if first_center_s is None:
            first_center_s = frame_shift_s / 2
        if d.size == 0:
            return cls.from_spans([], duration_s)
        edges = first_center_s + (np.arange(d.size + 1) - 0.5) * frame_shift_s
        edges[0], edges[-1] = 0.0, duration_s
        edges = np.clip(edges, 0.0, duration_s)
        change = np.flatnonzero(np.diff(d.astype(np.int8))) + 1
        starts = np.concatenate([[0], change])
        stops = np.concatenate([change, [d.size]])
        spans = [(edges[a], edges[b]) for a, b in zip(starts, stops) if d[a]]
        return cls.from_spans(spans, duration_s)

    @property
    def duration_s(self) -> float:
        return self.intervals[-1][1]

    def speech_spans(self) -> list[tuple[float, float]]:
        return [(a, b) for a, b, lab in self.intervals if lab == SPEECH]

    def speech_fraction(self) -> float:
        return sum(b - a for a, b in self.speech_spans()) / self.duration_s

    def boundaries(self) -> np.ndarray:
        """Speech on/offset times (interval edges strictly inside the track)."""
        return np.array([b for _, b, _ in self.intervals[:-1]])

    def is_speech_at(self, times_s) -> np.ndarray:
        t = np.asarray(times_s, float)
        ends = np.array([b for _, b, _ in self.intervals])
        idx = np.clip(np.searchsorted(ends, t, side="right"), 0, len(self.intervals) - 1)
        labels = np.array([lab == SPEECH for _, _, lab in self.intervals])
        return labels[idx]

    def speech_mask(self, num_samples: int, sample_rate_hz: int) -> np.ndarray:
        mask = np.zeros(num_samples, dtype=bool)
        for a, b in self.speech_spans():
            mask[int(round(a * sample_rate_hz)): int(round(b * sample_rate_hz))] = True
        return mask

    def shifted(self, offset_s: float) -> "LabelTrack":
        """Move every boundary by ``offset_s``, keeping the duration."""
        return LabelTrack.from_spans(
            [(a + offset_s, b + offset_s) for a, b in self.speech_spans()], self.duration_s
        )

    def crop(self, start_s: float, end_s: float) -> "LabelTrack":
        """The part of the track inside ``[start_s, end_s)``, re-based to start at 0."""
        if not 0 <= start_s < end_s <= self.duration_s + 1e-9:
            raise ValueError(f"crop window ({start_s}, {end_s}) outside [0, {self.duration_s}]")
        return LabelTrack.from_spans(
            [(a - start_s, b - start_s) for a, b in self.speech_spans()], end_s - start_s
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["start_s", "end_s", "label"])
        for a, b, lab in self.intervals:
            w.writerow([repr(a), repr(b), lab])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "LabelTrack":
        rows = list(csv.reader(io.StringIO(text)))
        if rows and rows[0][:3] == ["start_s", "end_s", "label"]:
            rows = rows[1:]
        return cls(tuple((float(a), float(b), lab.strip()) for a, b, lab in rows if a))

    def save(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def load(cls, path) -> "LabelTrack":
        return cls.from_csv(Path(path).read_text())
