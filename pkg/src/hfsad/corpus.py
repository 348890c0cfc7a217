"""Assembly of audio sequences and marker-framed transmissions, plus manifests.

A sequence is ``gap0 seg1 gap1 ... seg5 gap5`` with exact digital silence in
the gaps.  A transmission is ``M0 | 5 s | seq1 | 1 s | M1 | 5 s | seq2 ... | MN``.
Labels are exact: segment spans are ``sp``, everything else (gaps, guards,
markers) is ``sil``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import audio_io
from .dsp import AudioBuffer, resample
from .labels import LabelTrack
from .markers import MarkerSet
from .sync import TransmissionLayout

SEGMENTS_PER_SEQUENCE = 5
SEGMENT_RANGE_S = (1.0, 8.0)
GAP_RANGE_S = (8.0, 30.0)
POST_MARKER_SILENCE_S = 5.0
POST_SEQUENCE_SILENCE_S = 1.0


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class SegmentSpec:
    source_wav: str
    start_s: float
    duration_s: float
    transcript: Optional[str] = None

    def __post_init__(self):
        lo, hi = SEGMENT_RANGE_S
        if not lo <= self.duration_s <= hi:
            raise CorpusError(f"segment duration {self.duration_s} s outside [{lo}, {hi}]")
        if self.start_s < 0:
            raise CorpusError("segment start must be nonnegative")


@dataclass(frozen=True)
class SequenceSpec:
    segments: tuple
    gaps_s: tuple

    def __post_init__(self):
        if len(self.segments) != SEGMENTS_PER_SEQUENCE:
            raise CorpusError(
                f"a sequence has exactly {SEGMENTS_PER_SEQUENCE} segments, got {len(self.segments)}"
            )
        if len(self.gaps_s) != SEGMENTS_PER_SEQUENCE + 1:
            raise CorpusError(f"need {SEGMENTS_PER_SEQUENCE + 1} gaps, got {len(self.gaps_s)}")
        lo, hi = GAP_RANGE_S
        for g in self.gaps_s:
            if not lo <= g <= hi:
                raise CorpusError(f"gap {g} s outside [{lo}, {hi}]")

    @property
    def duration_s(self) -> float:
        return sum(self.gaps_s) + sum(s.duration_s for s in self.segments)

    def to_dict(self) -> dict:
        return {"segments": [asdict(s) for s in self.segments], "gaps_s": list(self.gaps_s)}

    @classmethod
    def from_dict(cls, d: dict) -> "SequenceSpec":
        return cls(tuple(SegmentSpec(**s) for s in d["segments"]), tuple(d["gaps_s"]))


@dataclass(frozen=True)
class TransmissionSpec:
    sequences: tuple
    marker_ids: tuple
    post_marker_silence_s: float = POST_MARKER_SILENCE_S
    post_sequence_silence_s: float = POST_SEQUENCE_SILENCE_S

    def __post_init__(self):
        if len(self.sequences) < 1:
            raise CorpusError("a transmission carries at least one sequence")
        if len(self.marker_ids) != len(self.sequences) + 1:
            raise CorpusError(
                f"{len(self.sequences)} sequences need {len(self.sequences) + 1} markers, "
                f"got {len(self.marker_ids)}"
            )
        if len(set(self.marker_ids)) != len(self.marker_ids):
            raise CorpusError(f"duplicate marker ids {list(self.marker_ids)}")

    def to_dict(self) -> dict:
        return {
            "sequences": [s.to_dict() for s in self.sequences],
            "marker_ids": list(self.marker_ids),
            "post_marker_silence_s": self.post_marker_silence_s,
            "post_sequence_silence_s": self.post_sequence_silence_s,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransmissionSpec":
        return cls(
            tuple(SequenceSpec.from_dict(s) for s in d["sequences"]),
            tuple(d["marker_ids"]),
            d.get("post_marker_silence_s", POST_MARKER_SILENCE_S),
            d.get("post_sequence_silence_s", POST_SEQUENCE_SILENCE_S),
        )


@lru_cache(maxsize=64)
def _load_source(path: str, rate_hz: int) -> AudioBuffer:
    p = Path(path)
    if not p.exists():
        raise CorpusError(f"missing source audio: {p}")
    audio = audio_io.read_wav(p)
    if audio.sample_rate_hz != rate_hz:
        audio = resample(audio, rate_hz)
    return audio


def load_segment(seg: SegmentSpec, rate_hz: int) -> np.ndarray:
    src = _load_source(str(seg.source_wav), int(rate_hz)).samples
    start = int(round(seg.start_s * rate_hz))
    n = int(round(seg.duration_s * rate_hz))
    if start + n > src.size:
        raise CorpusError(
            f"segment {seg.start_s}+{seg.duration_s} s exceeds {seg.source_wav} "
            f"({src.size / rate_hz:.3f} s)"
        )
    return src[start: start + n]


def assemble_sequence(spec: SequenceSpec, rate_hz: int) -> tuple[AudioBuffer, LabelTrack]:
    parts, spans, pos = [], [], 0
    for gap, seg in zip(spec.gaps_s, spec.segments):
        ng = int(round(gap * rate_hz))
        parts.append(np.zeros(ng))
        pos += ng
        x = load_segment(seg, rate_hz)
        parts.append(x)
        spans.append((pos, pos + x.size))
        pos += x.size
    ng = int(round(spec.gaps_s[-1] * rate_hz))
    parts.append(np.zeros(ng))
    pos += ng
    audio = AudioBuffer(np.concatenate(parts), rate_hz)
    labels = LabelTrack.from_spans([(a / rate_hz, b / rate_hz) for a, b in spans], pos / rate_hz)
    return audio, labels


def assemble_transmission(spec: TransmissionSpec, markers: MarkerSet, rate_hz: int):
    """Returns (audio, labels, layout); markers and guards are labelled ``sil``."""
    if markers.sample_rate_hz != rate_hz:
        raise CorpusError(
            f"marker bank is at {markers.sample_rate_hz} Hz, transmission at {rate_hz} Hz"
        )
    for mid in spec.marker_ids:
        markers[mid]  # raises KeyError for unknown ids
    guard_m = np.zeros(int(round(spec.post_marker_silence_s * rate_hz)))
    guard_s = np.zeros(int(round(spec.post_sequence_silence_s * rate_hz)))
    parts, spans, marker_offsets, seq_spans = [], [], [], []
    pos = 0

    def put(x):
        nonlocal pos
        parts.append(x)
        pos += x.size

    for k, seq in enumerate(spec.sequences):
        marker_offsets.append(pos)
        put(markers[spec.marker_ids[k]].waveform.samples)
        put(guard_m)
        audio, labels = assemble_sequence(seq, rate_hz)
        seq_spans.append((pos, pos + len(audio)))
        spans += [(a + pos / rate_hz, b + pos / rate_hz) for a, b in labels.speech_spans()]
        put(audio.samples)
        put(guard_s)
    marker_offsets.append(pos)
    put(markers[spec.marker_ids[-1]].waveform.samples)

    audio = AudioBuffer(np.concatenate(parts), rate_hz)
    labels = LabelTrack.from_spans(spans, pos / rate_hz)
    layout = TransmissionLayout(
        marker_ids=tuple(spec.marker_ids),
        marker_offsets=tuple(marker_offsets),
        sequence_spans=tuple(seq_spans),
        marker_len_samples=markers.marker_len_samples,
        sample_rate_hz=rate_hz,
    )
    return audio, labels, layout


# -- random drawing ---------------------------------------------------------

def _draw_ms(rng, lo_s, hi_s, quantum_ms):
    lo = int(np.ceil(lo_s * 1000 / quantum_ms))
    hi = int(np.floor(hi_s * 1000 / quantum_ms))
    return int(rng.integers(lo, hi + 1)) * quantum_ms


def draw_sequence_spec(rng, sources: Sequence[tuple[str, float]],
                       quantum_ms: int = 32, period_fixed_ms: int = 10000,
                       segment_range_s=SEGMENT_RANGE_S, gap_range_s=GAP_RANGE_S) -> SequenceSpec:
    """Random sequence from ``(path, duration_s)`` sources.

    Durations are whole multiples of ``quantum_ms`` (the detection frame
    shift).  The trailing gap is then nudged (by less than one quantum) so
    that ``period_fixed_ms`` plus the sequence length is also a whole number
    of quanta: inter-marker distances then fall exactly on the detection grid.
    """
    segs, seg_ms = [], []
    for _ in range(SEGMENTS_PER_SEQUENCE):
        path, src_dur = sources[int(rng.integers(len(sources)))]
        hi = min(segment_range_s[1], src_dur)
        d_ms = _draw_ms(rng, segment_range_s[0], hi, quantum_ms)
        start_ms = _draw_ms(rng, 0.0, src_dur - d_ms / 1000, quantum_ms) if src_dur * 1000 > d_ms else 0
        segs.append(SegmentSpec(str(path), start_ms / 1000, d_ms / 1000))
        seg_ms.append(d_ms)
    gaps = [_draw_ms(rng, gap_range_s[0], gap_range_s[1] - quantum_ms / 1000, quantum_ms)
            for _ in range(SEGMENTS_PER_SEQUENCE + 1)]
    total = period_fixed_ms + sum(seg_ms) + sum(gaps)
    gaps[-1] += (-total) % quantum_ms
    return SequenceSpec(tuple(segs), tuple(g / 1000 for g in gaps))


def draw_transmission_spec(rng, sources, num_sequences: int, marker_ids=None,
                           quantum_ms: int = 32, **kw) -> TransmissionSpec:
    if marker_ids is None:
        marker_ids = tuple(range(num_sequences + 1))
    fixed_ms = int(round(1000 * (4.0 + POST_MARKER_SILENCE_S + POST_SEQUENCE_SILENCE_S)))
    seqs = tuple(draw_sequence_spec(rng, sources, quantum_ms, fixed_ms, **kw)
                 for _ in range(num_sequences))
    return TransmissionSpec(seqs, tuple(marker_ids))


# -- manifest -----------------------------------------------------------------

MANIFEST_FIELDS = {
    "id": str,
    "split": str,
    "clean_wav": str,
    "received_wav": str,
    "labels_csv": str,
    "layout_json": str,
    "offset_samples": int,
    "sample_rate_hz": int,
    "channel": dict,
    "metrics": dict,
}
OPTIONAL_FIELDS = {"station": str, "stoi": (float, type(None)), "spec": dict}
FILE_FIELDS = ("clean_wav", "received_wav", "labels_csv", "layout_json")


class ManifestError(ValueError):
    pass


@dataclass
class ManifestItem:
    id: str
    split: str
    clean_wav: str
    received_wav: str
    labels_csv: str
    layout_json: str
    offset_samples: int
    sample_rate_hz: int
    channel: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    station: str = "sim"
    stoi: Optional[float] = None  # reserved for externally computed STOI
    spec: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _check_item(d, lineno: int) -> ManifestItem:
    if not isinstance(d, dict):
        raise ManifestError(f"line {lineno}: item is not an object")
    name = d.get("id", f"<line {lineno}>")
    for key, typ in MANIFEST_FIELDS.items():
        if key not in d:
            raise ManifestError(f"item {name}: missing field '{key}'")
        if typ is int and isinstance(d[key], bool) or not isinstance(d[key], typ):
            raise ManifestError(
                f"item {name}: field '{key}' should be {typ.__name__}, got {type(d[key]).__name__}"
            )
    for key, typ in OPTIONAL_FIELDS.items():
        if key in d and not isinstance(d[key], typ):
            raise ManifestError(f"item {name}: field '{key}' has wrong type")
    unknown = set(d) - set(MANIFEST_FIELDS) - set(OPTIONAL_FIELDS)
    if unknown:
        raise ManifestError(f"item {name}: unknown field(s) {sorted(unknown)}")
    return ManifestItem(**d)


def write_manifest(items, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".part")
    with open(tmp, "w") as f:
        for it in items:
            d = it.to_dict() if isinstance(it, ManifestItem) else dict(it)
            _check_item(d, 0)
            f.write(json.dumps(d, sort_keys=True) + "\n")
    tmp.replace(path)
    return path


def read_manifest(path, check_files: bool = True) -> list[ManifestItem]:
    """Load and validate a JSON-lines manifest.

    File references are resolved relative to the manifest's directory.
    """
    path = Path(path)
    items = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as e:
            raise ManifestError(f"line {lineno}: invalid JSON ({e})") from None
        item = _check_item(d, lineno)
        if check_files:
            for key in FILE_FIELDS:
                ref = getattr(item, key)
                if ref and not (path.parent / ref).exists():
                    raise ManifestError(f"item {item.id}: {key} file not found: {ref}")
        items.append(item)
    return items
