"""Collar-based frame scoring, ROC/EER, SDR and real-time factor."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .dsp import AudioBuffer
from .labels import LabelTrack

COLLAR_S = 0.5
FRAME_S = 0.01
SDR_CAP_DB = 60.0


class DurationMismatch(ValueError):
    pass


@dataclass
class ScoreReport:
    tp: int
    fp: int
    fn: int
    tn: int
    recall: float
    precision: float
    f1: float
    scored_fraction: float
    rt_factor: Optional[float] = None
    degenerate: bool = False  # no hypothesised speech: precision reported as 0
    threshold: Optional[float] = None

    @classmethod
    def from_counts(cls, tp, fp, fn, tn, scored_fraction=1.0, **kw) -> "ScoreReport":
        tp, fp, fn, tn = int(tp), int(fp), int(fn), int(tn)
        recall = tp / (tp + fn) if tp + fn else 0.0
        degenerate = tp + fp == 0
        precision = 0.0 if degenerate else tp / (tp + fp)
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return cls(tp, fp, fn, tn, recall, precision, f1, float(scored_fraction),
                   degenerate=degenerate, **kw)

    @property
    def fpr(self) -> float:
        return self.fp / (self.fp + self.tn) if self.fp + self.tn else 0.0

    @property
    def fnr(self) -> float:
        return self.fn / (self.fn + self.tp) if self.fn + self.tp else 0.0

    def __add__(self, other: "ScoreReport") -> "ScoreReport":
        n_self = self.tp + self.fp + self.fn + self.tn
        n_other = other.tp + other.fp + other.fn + other.tn
        total_self = n_self / self.scored_fraction if self.scored_fraction else 0.0
        total_other = n_other / other.scored_fraction if other.scored_fraction else 0.0
        total = total_self + total_other
        return ScoreReport.from_counts(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn,
            scored_fraction=(n_self + n_other) / total if total else 0.0,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def to_csv(self) -> str:
        d = self.to_dict()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(d))
        w.writerow(["" if v is None else v for v in d.values()])
        return buf.getvalue()


@dataclass(frozen=True, eq=False)
class ScoringFrames:
    """Reference labels and collar mask on the scoring frame grid."""

    centers: np.ndarray
    ref: np.ndarray
    keep: np.ndarray

    @classmethod
    def build(cls, ref: LabelTrack, collar_s: float = COLLAR_S,
              frame_s: float = FRAME_S) -> "ScoringFrames":
        n = int(round(ref.duration_s / frame_s))
        centers = (np.arange(n) + 0.5) * frame_s
        labels = ref.is_speech_at(centers)
        keep = np.ones(n, dtype=bool)
        b = ref.boundaries()
        if b.size:
            pos = np.searchsorted(b, centers)
            d_right = np.abs(b[np.clip(pos, 0, b.size - 1)] - centers)
            d_left = np.abs(centers - b[np.clip(pos - 1, 0, b.size - 1)])
            keep = np.minimum(d_left, d_right) > collar_s
        return cls(centers, labels, keep)

    def counts(self, hyp: np.ndarray) -> tuple[int, int, int, int]:
        r, h, k = self.ref, np.asarray(hyp, bool), self.keep
        tp = int(np.count_nonzero(r & h & k))
        fp = int(np.count_nonzero(~r & h & k))
        fn = int(np.count_nonzero(r & ~h & k))
        tn = int(np.count_nonzero(~r & ~h & k))
        return tp, fp, fn, tn


def _check_durations(ref: LabelTrack, duration_s: float, frame_s: float):
    if abs(ref.duration_s - duration_s) > frame_s + 1e-9:
        raise DurationMismatch(
            f"reference lasts {ref.duration_s:.3f} s, hypothesis {duration_s:.3f} s "
            f"(allowed difference {frame_s} s)"
        )


def collar_score(ref: LabelTrack, hyp: LabelTrack, collar_s: float = COLLAR_S,
                 frame_s: float = FRAME_S) -> ScoreReport:
    """Frame-level scoring that ignores frames within ``collar_s`` of a reference boundary.

    Frames are ``frame_s`` long; each is labelled by the track value at its centre.
    """
    _check_durations(ref, hyp.duration_s, frame_s)
    frames = ScoringFrames.build(ref, collar_s, frame_s)
    hyp_labels = hyp.is_speech_at(np.minimum(frames.centers, hyp.duration_s))
    tp, fp, fn, tn = frames.counts(hyp_labels)
    frac = float(frames.keep.mean()) if frames.keep.size else 0.0
    return ScoreReport.from_counts(tp, fp, fn, tn, frac)


@dataclass(frozen=True, eq=False)
class ScoreTrack:
    """Per-frame detector scores with the frame geometry needed to score them."""

    scores: np.ndarray
    frame_shift_s: float
    first_center_s: float
    ref: LabelTrack

    def frame_map(self, centers: np.ndarray) -> np.ndarray:
        k = np.floor((centers - self.first_center_s) / self.frame_shift_s + 0.5).astype(int)
        return np.clip(k, 0, self.scores.size - 1)


@dataclass
class RocCurve:
    points: list  # (threshold, fpr, fnr)
    eer_threshold: float
    eer_rate: float

    @property
    def auc(self) -> float:
        """Area under the (fpr, tpr) curve, closed at (0,0) and (1,1)."""
        fpr = np.array([p[1] for p in self.points] + [0.0, 1.0])
        tpr = np.array([1 - p[2] for p in self.points] + [0.0, 1.0])
        order = np.lexsort((tpr, fpr))
        return float(trapezoid(tpr[order], fpr[order]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "fpr", "fnr"])
        for t, a, b in self.points:
            w.writerow([repr(float(t)), repr(float(a)), repr(float(b))])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "eer": {"threshold": self.eer_threshold, "rate": self.eer_rate},
            "auc": self.auc,
            "points": [list(map(float, p)) for p in self.points],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RocCurve":
        return cls([tuple(p) for p in d["points"]], float(d["eer"]["threshold"]),
                   float(d["eer"]["rate"]))

    def to_svg(self, width: int = 360, height: int = 360) -> str:
        """Minimal ROC plot (false positive rate vs. miss rate)."""
        m = 40
        w, h = width - 2 * m, height - 2 * m
        pts = " ".join(f"{m + fpr * w:.1f},{m + (1 - fnr) * h:.1f}"
                       for _, fpr, fnr in sorted(self.points, key=lambda p: p[1]))
        ex = m + self.eer_rate * w
        ey = m + (1 - self.eer_rate) * h
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">\n'
            f'<rect x="{m}" y="{m}" width="{w}" height="{h}" fill="none" stroke="black"/>\n'
            f'<line x1="{m}" y1="{m}" x2="{m + w}" y2="{m + h}" stroke="gray"/>\n'
            f'<polyline points="{pts}" fill="none" stroke="steelblue" stroke-width="2"/>\n'
            f'<circle cx="{ex:.1f}" cy="{ey:.1f}" r="4" fill="crimson"/>\n'
            f'<text x="{m}" y="{height - 10}" font-size="12">false positive rate</text>\n'
            f'<text x="4" y="{m - 10}" font-size="12">miss rate (EER {self.eer_rate:.3f})</text>\n'
            "</svg>\n"
        )


def roc_and_eer(tracks: Sequence[ScoreTrack], thresholds, collar_s: float = COLLAR_S,
                frame_s: float = FRAME_S,
                smoother: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> RocCurve:
    """Sweep thresholds over pooled, collar-scored decisions ``score > threshold``.

    ``smoother`` (e.g. the SAD median vote) is applied to each track's frame
    decisions before scoring.  The EER point minimises ``|fpr - fnr|``; ties
    go to the lower threshold.
    """
    thresholds = np.sort(np.asarray(list(thresholds), float))
    if not tracks:
        raise ValueError("no score tracks given")
    if thresholds.size < 2:
        raise ValueError("need at least two thresholds")
    prepared = []
    for tr in tracks:
        if tr.scores.size == 0:
            raise ValueError("empty score track")
        if not np.all(np.isfinite(tr.scores)):
            raise ValueError("scores must be finite")
        frames = ScoringFrames.build(tr.ref, collar_s, frame_s)
        prepared.append((tr, frames, tr.frame_map(frames.centers)))
    points = []
    for th in thresholds:
        tp = fp = fn = tn = 0
        for tr, frames, fmap in prepared:
            d = tr.scores > th
            if smoother is not None:
                d = smoother(d)
            a, b, c, e = frames.counts(d[fmap])
            tp, fp, fn, tn = tp + a, fp + b, fn + c, tn + e
        fpr = fp / (fp + tn) if fp + tn else 0.0
        fnr = fn / (fn + tp) if fn + tp else 0.0
        points.append((float(th), fpr, fnr))
    gaps = np.array([abs(p[1] - p[2]) for p in points])
    best = int(np.flatnonzero(gaps == gaps.min())[0])
    th, fpr, fnr = points[best]
    return RocCurve(points, th, 0.5 * (fpr + fnr))


def score_tracks(tracks: Sequence[ScoreTrack], threshold: float, collar_s: float = COLLAR_S,
                 frame_s: float = FRAME_S, smoother=None) -> ScoreReport:
    """Pooled collar scoring of thresholded score tracks."""
    total = None
    for tr in tracks:
        frames = ScoringFrames.build(tr.ref, collar_s, frame_s)
        d = tr.scores > threshold
        if smoother is not None:
            d = smoother(d)
        rep = ScoreReport.from_counts(*frames.counts(d[tr.frame_map(frames.centers)]),
                                      scored_fraction=float(frames.keep.mean()))
        total = rep if total is None else total + rep
    total.threshold = float(threshold)
    return total


def sdr(clean: AudioBuffer, received: AudioBuffer) -> float:
    """Scale-invariant SDR in dB, clipped to +-60 dB.

    The received signal ``y`` is projected onto the clean signal ``s``; the
    projection is the target and the residual the distortion.
    """
    s = clean.samples if isinstance(clean, AudioBuffer) else np.asarray(clean, float)
    y = received.samples if isinstance(received, AudioBuffer) else np.asarray(received, float)
    if s.shape != y.shape:
        raise ValueError(f"length mismatch: {s.size} vs {y.size} samples")
    ss = float(np.dot(s, s))
    if ss == 0:
        raise ValueError("clean signal is all zeros")
    p = (np.dot(y, s) / ss) * s
    e = y - p
    pp, ee = float(np.dot(p, p)), float(np.dot(e, e))
    if ee == 0:
        return SDR_CAP_DB
    if pp == 0:
        return -SDR_CAP_DB
    return float(np.clip(10 * np.log10(pp / ee), -SDR_CAP_DB, SDR_CAP_DB))


def rt_factor(processing_wall_s: float, audio_duration_s: float) -> float:
    if audio_duration_s <= 0:
        raise ValueError("audio duration must be positive")
    return float(processing_wall_s) / float(audio_duration_s)


def save_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2))
