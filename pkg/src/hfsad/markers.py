"""Chirp synchronisation markers derived from Gold codes, and their detection.

A marker is 26 linear chirps, 4 s in total.  Chip ``k`` of the marker's Gold
code selects the ramp direction of symbol ``k``; the symbol's frequency slot
comes from a 13-point grid.  The first 13 symbols visit the grid in order and
the last 13 visit it again in a fixed scrambled order (``SECOND_PASS``).  The
scramble was chosen by search so that the two visits of each slot lie a
different number of symbols apart, hence a marker shifted by any whole number
of symbols meets its own slot pattern at most once.  Each marker multiplies
the pattern by its own stride mod 13; for every pair of strides and every
symbol lag at most 4 of the 26 symbols share a slot.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import audio_io
from .dsp import AudioBuffer, Spectrogram, StftParams, STAT_SAD_PARAMS, stft
from .gold import GoldCodeFamily, gen_gold_family

MARKER_DURATION_S = 4.0
GRID_POINTS = 13
MAX_MARKERS = GRID_POINTS - 1  # one stride per marker
SECOND_PASS = (8, 2, 6, 0, 10, 12, 11, 9, 1, 3, 5, 7, 4)

DETECTION_PARAMS = STAT_SAD_PARAMS
DEFAULT_MASK_QUANTILE = 0.5
DEFAULT_MIN_SCORE = 0.35


@dataclass(frozen=True)
class ChirpAlphabet:
    num_symbols_per_marker: int = 26
    symbol_duration_s: float = MARKER_DURATION_S / 26
    band_hz: tuple[float, float] = (300.0, 2700.0)
    start_freq_grid: tuple[float, ...] = tuple(np.linspace(300.0, 2400.0, GRID_POINTS))
    sweep_hz: float = 300.0
    directions: tuple[str, str] = ("up", "down")

    def __post_init__(self):
        lo, hi = self.band_hz
        if not 0 <= lo < hi:
            raise ValueError(f"bad band {self.band_hz}")
        for f0 in self.start_freq_grid:
            if f0 < lo or f0 + self.sweep_hz > hi:
                raise ValueError(
                    f"chirp slot [{f0}, {f0 + self.sweep_hz}] Hz leaves band {self.band_hz}"
                )

    @property
    def marker_duration_s(self) -> float:
        return self.num_symbols_per_marker * self.symbol_duration_s

    def to_dict(self) -> dict:
        return {
            "num_symbols_per_marker": self.num_symbols_per_marker,
            "symbol_duration_s": self.symbol_duration_s,
            "band_hz": list(self.band_hz),
            "start_freq_grid": [float(f) for f in self.start_freq_grid],
            "sweep_hz": self.sweep_hz,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChirpAlphabet":
        return cls(
            num_symbols_per_marker=int(d["num_symbols_per_marker"]),
            symbol_duration_s=float(d["symbol_duration_s"]),
            band_hz=tuple(d["band_hz"]),
            start_freq_grid=tuple(float(f) for f in d["start_freq_grid"]),
            sweep_hz=float(d["sweep_hz"]),
        )


def hop_pattern(num_symbols: int, grid_points: int) -> np.ndarray:
    """Base slot index of each symbol: ``0..G-1`` in order, then a second pass.

    For the default 13-point grid the second pass is ``SECOND_PASS``; other odd
    grids use ``m * (G+1)/2 mod G``, which keeps the repeat distances distinct
    but is weaker against stride collisions.
    """
    g = int(grid_points)
    if num_symbols > 2 * g:
        raise ValueError(f"at most {2 * g} symbols on a {g}-point grid")
    if g == len(SECOND_PASS):
        second = np.array(SECOND_PASS)
    elif g % 2:
        second = (np.arange(g) * ((g + 1) // 2)) % g
    else:
        raise ValueError("grid size must be odd")
    return np.concatenate([np.arange(g), second])[:num_symbols]


def symbol_plan(code, alphabet: ChirpAlphabet, stride: int = 1):
    """(slot frequency, +1 up / -1 down) for each symbol of a marker."""
    code = np.asarray(code)
    n_sym = alphabet.num_symbols_per_marker
    if code.size < n_sym:
        raise ValueError(f"code has {code.size} chips, need at least {n_sym}")
    grid = alphabet.start_freq_grid
    slots = (stride * hop_pattern(n_sym, len(grid))) % len(grid)
    return [(grid[slot], int(np.sign(code[k]) or 1)) for k, slot in enumerate(slots)]


def build_marker(code, alphabet: ChirpAlphabet = ChirpAlphabet(), rate_hz: int = 8000,
                 stride: int = 1) -> np.ndarray:
    """Marker waveform with exactly ``duration * rate_hz`` samples and unit peak.

    An up-chirp (chip +1) ramps linearly from the slot frequency to
    ``slot + sweep``; a down-chirp (chip -1) ramps over the same slot in the
    opposite direction.  Phase is continuous across symbols.
    """
    if alphabet.band_hz[1] >= rate_hz / 2:
        raise ValueError(
            f"alphabet band {alphabet.band_hz} Hz exceeds Nyquist of {rate_hz} Hz"
        )
    plan = symbol_plan(code, alphabet, stride)
    n_total = int(round(alphabet.marker_duration_s * rate_hz))
    bounds = np.round(np.linspace(0, n_total, len(plan) + 1)).astype(int)
    freq = np.empty(n_total)
    for (f0, direction), a, b in zip(plan, bounds[:-1], bounds[1:]):
        ramp = np.arange(b - a) / (b - a)
        if direction < 0:
            ramp = 1.0 - ramp
        freq[a:b] = f0 + alphabet.sweep_hz * ramp
    phase = 2 * np.pi * np.cumsum(freq) / rate_hz
    x = np.sin(phase)
    return x / np.max(np.abs(x))


def marker_mask(waveform, params: StftParams = DETECTION_PARAMS,
                quantile: float = DEFAULT_MASK_QUANTILE, rate_hz: int = 8000) -> np.ndarray:
    """Binary T x F mask: bins whose magnitude reaches ``quantile`` x frame max."""
    if not 0 < quantile < 1:
        raise ValueError(f"quantile must lie in (0, 1), got {quantile}")
    audio = waveform if isinstance(waveform, AudioBuffer) else AudioBuffer(waveform, rate_hz)
    mag = np.abs(stft(audio, params).frames)
    if not np.any(mag > 0):
        raise ValueError("degenerate marker: all-zero spectrogram")
    peak = mag.max(axis=1, keepdims=True)
    return (mag >= quantile * peak) & (peak > 0)


@dataclass(frozen=True, eq=False)
class Marker:
    id: int
    code_index: int
    stride: int
    waveform: AudioBuffer
    mask: np.ndarray
    self_score: float

    @property
    def num_samples(self) -> int:
        return len(self.waveform)

    @property
    def mask_frames(self) -> int:
        return self.mask.shape[0]


@dataclass(frozen=True, eq=False)
class MarkerSet:
    markers: list
    alphabet: ChirpAlphabet
    params: StftParams
    sample_rate_hz: int
    quantile: float
    gold_degree: int

    def __len__(self):
        return len(self.markers)

    def __getitem__(self, marker_id: int) -> Marker:
        for m in self.markers:
            if m.id == marker_id:
                return m
        raise KeyError(f"no marker with id {marker_id}")

    @property
    def ids(self) -> list[int]:
        return [m.id for m in self.markers]

    @property
    def marker_len_samples(self) -> int:
        return self.markers[0].num_samples

    def save(self, directory) -> Path:
        """Write one WAV per marker plus ``markers.json``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        family = gen_gold_family(self.gold_degree)
        entries = []
        for m in self.markers:
            wav = f"marker_{m.id:02d}.wav"
            audio_io.write_wav(directory / wav, m.waveform)
            entries.append({
                "id": m.id,
                "code_index": m.code_index,
                "stride": m.stride,
                "code": family[m.code_index].tolist(),
                "wav": wav,
            })
        meta = {
            "gold_degree": self.gold_degree,
            "sample_rate_hz": self.sample_rate_hz,
            "quantile": self.quantile,
            "alphabet": self.alphabet.to_dict(),
            "stft": self.params.to_dict(),
            "markers": entries,
        }
        path = directory / "markers.json"
        path.write_text(json.dumps(meta, indent=2))
        return path

    @classmethod
    def load(cls, directory) -> "MarkerSet":
        """Rebuild a marker bank from ``markers.json``.

        Waveforms are regenerated from the stored codes (the WAVs are the
        16-bit rendering of the same signal and exist for listening/export).
        """
        meta = json.loads((Path(directory) / "markers.json").read_text())
        alphabet = ChirpAlphabet.from_dict(meta["alphabet"])
        params = StftParams(**meta["stft"])
        return build_marker_set(
            len(meta["markers"]),
            rate_hz=meta["sample_rate_hz"],
            alphabet=alphabet,
            params=params,
            quantile=meta["quantile"],
            gold_degree=meta["gold_degree"],
            code_indices=[e["code_index"] for e in meta["markers"]],
            strides=[e["stride"] for e in meta["markers"]],
        )


def build_marker_set(num_markers: int, rate_hz: int = 8000,
                     alphabet: ChirpAlphabet = ChirpAlphabet(),
                     params: StftParams = DETECTION_PARAMS,
                     quantile: float = DEFAULT_MASK_QUANTILE,
                     gold_degree: int = 5,
                     code_indices: Optional[list] = None,
                     strides: Optional[list] = None) -> MarkerSet:
    """Marker ``i`` uses Gold code ``i + 2`` (the combined codes) and stride ``i + 1``."""
    if not 1 <= num_markers <= MAX_MARKERS:
        raise ValueError(f"between 1 and {MAX_MARKERS} markers supported, got {num_markers}")
    family = gen_gold_family(gold_degree)
    if code_indices is None:
        code_indices = [i + 2 for i in range(num_markers)]
    if strides is None:
        strides = [i + 1 for i in range(num_markers)]
    markers = []
    for i, (ci, s) in enumerate(zip(code_indices, strides)):
        wave = AudioBuffer(build_marker(family[ci], alphabet, rate_hz, s), rate_hz)
        mask = marker_mask(wave, params, quantile)
        power = stft(wave, params).power()
        self_score = _masked_ratio(power, mask)
        markers.append(Marker(i, int(ci), int(s), wave, mask, self_score))
    return MarkerSet(markers, alphabet, params, rate_hz, quantile, gold_degree)


def _mask_band(mask: np.ndarray) -> slice:
    cols = np.flatnonzero(mask.any(axis=0))
    return slice(cols[0], cols[-1] + 1)


def _masked_ratio(power: np.ndarray, mask: np.ndarray) -> float:
    return float(correlation_scores(power, mask)[0]) if power.shape[0] >= mask.shape[0] else 0.0


def correlation_scores(stream_power: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Normalised masked-energy correlation for every frame offset.

    For the mask placed at frame ``tau``, each mask frame contributes the
    fraction of the stream frame's energy (within the mask's frequency
    support) that falls under the mask; ``score[tau]`` is the mean over the
    mask's non-empty frames.  Silent stream frames contribute zero, so a
    partial overlap with silence cannot score high.  Values lie in [0, 1].
    """
    t_s = stream_power.shape[0]
    t_m = mask.shape[0]
    n_off = t_s - t_m + 1
    if n_off <= 0:
        return np.zeros(0)
    band = _mask_band(mask)
    p = stream_power[:, band]
    m = mask[:, band].astype(np.float64)
    active = np.flatnonzero(m.any(axis=1))
    energy = p.sum(axis=1)
    frac = np.zeros((t_s, active.size))
    # frac[t', j] = share of frame t' energy under mask frame active[j]
    np.divide(p @ m[active].T, energy[:, None], out=frac, where=energy[:, None] > 0)
    num = np.zeros(n_off)
    for j, t in enumerate(active):
        num += frac[t: t + n_off, j]
    return np.clip(num / active.size, 0.0, 1.0)


@dataclass(frozen=True)
class MarkerHypothesis:
    marker_id: int
    frame_offset: int
    sample_offset: int
    score: float

    def to_dict(self) -> dict:
        return {
            "marker_id": self.marker_id,
            "frame_offset": self.frame_offset,
            "sample_offset": self.sample_offset,
            "score": self.score,
        }


def detect_markers(stream: Spectrogram, marker_set: MarkerSet,
                   min_score: float = DEFAULT_MIN_SCORE,
                   max_per_marker: Optional[int] = None) -> list[MarkerHypothesis]:
    """Scan every marker mask along the stream spectrogram.

    ``min_score`` is relative to each marker's clean self-score.  Reported
    hypotheses are local maxima at least one marker length apart, sorted by
    sample offset.
    """
    if stream.params != marker_set.params:
        raise ValueError("stream STFT parameters differ from the marker bank's")
    power = stream.power()
    shift = stream.params.shift_samples
    hyps = []
    for m in marker_set.markers:
        scores = correlation_scores(power, m.mask)
        floor = min_score * m.self_score
        order = np.argsort(-scores, kind="stable")
        taken = np.zeros(scores.size, dtype=bool)
        found = 0
        for tau in order:
            s = scores[tau]
            if s < floor:
                break
            if taken[tau]:
                continue
            lo = max(0, tau - m.mask_frames + 1)
            hi = min(scores.size, tau + m.mask_frames)
            # must be the maximum of its own neighbourhood
            if s < scores[lo:hi].max():
                continue
            taken[lo:hi] = True
            hyps.append(MarkerHypothesis(m.id, int(tau), int(tau) * shift, float(s)))
            found += 1
            if max_per_marker is not None and found >= max_per_marker:
                break
    hyps.sort(key=lambda h: (h.sample_offset, h.marker_id))
    return hyps
