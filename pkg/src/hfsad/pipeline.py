"""End-to-end reproduce loop: corpus -> channel -> sync -> SAD -> scoring.

The SAD threshold is picked at the equal-error point on the ``dev`` split
and then applied unchanged to the ``eval`` split.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import audio_io, corpus, synthspeech
from .channel import ChannelConfig, simulate_channel
from .config import (agc_config, csbe_config, fading_config, interferer_config, stft_params,
                     wiener_config)
from .dsp import AudioBuffer, stft
from .labels import LabelTrack
from .markers import MarkerSet, build_marker_set, detect_markers
from .sad import median_smooth, sad_pipeline
from .scoring import (RocCurve, ScoreReport, ScoreTrack, rt_factor, roc_and_eer, score_tracks,
                      sdr)
from .sync import SyncReport, TransmissionLayout, segment_stream, validate_layout

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
MARKER_DIR = "markers"


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".part")
    with os.fdopen(fd, "w") as f:
        f.write(text)
    os.replace(tmp, path)
    return path


def write_json(path, obj) -> Path:
    return atomic_write_text(path, json.dumps(obj, indent=2) + "\n")


def active_sdr(clean: AudioBuffer, received: AudioBuffer, labels: LabelTrack) -> float:
    """SDR restricted to the labelled speech samples of an aligned pair."""
    mask = labels.speech_mask(len(clean), clean.sample_rate_hz)
    return sdr(clean.samples[mask], received.samples[mask])


# -- corpus ------------------------------------------------------------------------

def _sources(cfg: dict, out_dir: Path, rng_seed: int) -> list[tuple[str, float]]:
    src_dir = cfg["corpus"]["source_dir"]
    if src_dir is None:
        src_dir = out_dir / "sources"
        synthspeech.write_source_dir(src_dir, cfg["corpus"]["synth_files"],
                                     cfg["corpus"]["synth_duration_s"], seed=rng_seed)
    src_dir = Path(src_dir)
    if not src_dir.is_dir():
        raise corpus.CorpusError(f"source directory not found: {src_dir}")
    out = []
    for p in sorted(src_dir.glob("*.wav")):
        pcm, rate = audio_io.read_pcm16(p)
        out.append((str(p.resolve()), pcm.size / rate))
    usable = [s for s in out if s[1] >= corpus.SEGMENT_RANGE_S[0]]
    if not usable:
        raise corpus.CorpusError(f"no usable WAV files (>= 1 s) in {src_dir}")
    return usable


def build_corpus(cfg: dict, out_dir, seed: Optional[int] = None) -> list[corpus.ManifestItem]:
    """Assemble, transmit and store every transmission; write the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = cfg["seed"] if seed is None else int(seed)
    rate = cfg["sample_rate_hz"]
    c = cfg["corpus"]
    ss = np.random.SeedSequence(seed)
    src_seed, draw_seed, chan_seed = ss.spawn(3)
    sources = _sources(cfg, out_dir, int(src_seed.generate_state(1)[0]))
    n_seq = c["sequences_per_transmission"]
    markers = build_marker_set(n_seq + 1, rate, quantile=cfg["markers"]["quantile"],
                               gold_degree=cfg["markers"]["gold_degree"])
    markers.save(out_dir / MARKER_DIR)
    rng = np.random.default_rng(draw_seed)
    n_tx = c["num_transmissions"]
    n_dev = int(round(c["dev_fraction"] * n_tx))
    chan_seeds = chan_seed.generate_state(n_tx)
    ch = cfg["channel"]
    # an exact share of the files carries an interferer
    n_int = int(round(ch["interferer_fraction"] * n_tx))
    with_interferer = set(rng.choice(n_tx, n_int, replace=False).tolist())
    items = []
    for i in range(n_tx):
        spec = corpus.draw_transmission_spec(rng, sources, n_seq)
        clean, labels, layout = corpus.assemble_transmission(spec, markers, rate)
        lead = int(rng.integers(0, int(c["lead_in_max_s"] * rate) + 1))
        tail = rate
        x = np.concatenate([np.zeros(lead), c["tx_level"] * clean.samples, np.zeros(tail)])
        rx_labels = LabelTrack.from_spans(
            [(a + lead / rate, b + lead / rate) for a, b in labels.speech_spans()], x.size / rate)
        snr = float(rng.uniform(*ch["snr_db_range"]))
        interferer = interferer_config(cfg) if i in with_interferer else None
        chan = ChannelConfig(
            seed=int(chan_seeds[i]), snr_db=snr, band_hz=tuple(ch["band_hz"]),
            bandlimit=ch["bandlimit"], agc=agc_config(cfg), fading=fading_config(cfg),
            interferer=interferer,
        )
        received = simulate_channel(AudioBuffer(x, rate), rx_labels, chan)
        aligned = received.with_samples(received.samples[lead: lead + len(clean)])
        name = f"tx{i:04d}"
        rel = {k: f"{name}/{k}" for k in ("clean.wav", "received.wav", "labels.csv", "layout.json")}
        info = audio_io.write_wav(out_dir / rel["received.wav"], received)
        audio_io.write_wav(out_dir / rel["clean.wav"], clean)
        atomic_write_text(out_dir / rel["labels.csv"], labels.to_csv())
        write_json(out_dir / rel["layout.json"], layout.to_dict())
        items.append(corpus.ManifestItem(
            id=name, split="dev" if i < n_dev else "eval",
            clean_wav=rel["clean.wav"], received_wav=rel["received.wav"],
            labels_csv=rel["labels.csv"], layout_json=rel["layout.json"],
            offset_samples=lead, sample_rate_hz=rate, channel=chan.to_dict(),
            metrics={
                "snr_db": snr,
                "sdr_db": active_sdr(clean, aligned, labels),
                "speech_fraction": labels.speech_fraction(),
                "clipped_samples": info.clipped,
            },
            spec=spec.to_dict(),
        ))
    corpus.write_manifest(items, out_dir / MANIFEST_NAME)
    return items


# -- per-item processing -----------------------------------------------------------

@dataclass
class ItemResult:
    id: str
    split: str
    sync: SyncReport
    offset_error_samples: Optional[int]
    tracks: list = field(default_factory=list)  # ScoreTrack per aligned sequence
    sad_wall_s: float = 0.0
    audio_s: float = 0.0


def process_item(item: corpus.ManifestItem, root, cfg: dict,
                 markers: Optional[MarkerSet] = None) -> ItemResult:
    root = Path(root)
    if markers is None:
        markers = MarkerSet.load(root / MARKER_DIR)
    received = audio_io.read_wav(root / item.received_wav)
    layout = TransmissionLayout.from_dict(json.loads((root / item.layout_json).read_text()))
    labels = LabelTrack.load(root / item.labels_csv)
    hyps = detect_markers(stft(received, markers.params), markers,
                          min_score=cfg["markers"]["min_score"])
    report = validate_layout(hyps, layout)
    result = ItemResult(item.id, item.split, report, None)
    if not report.valid:
        return result
    result.offset_error_samples = int(report.transmission_offset - item.offset_samples)
    wiener, csbe_cfg, params = wiener_config(cfg), csbe_config(cfg), stft_params(cfg)
    rate = received.sample_rate_hz
    for seg, (start, end) in zip(segment_stream(received, report), layout.sequence_spans):
        ref = labels.crop(start / rate, end / rate)
        t0 = time.perf_counter()
        trace = sad_pipeline(seg.audio, wiener, csbe_cfg, params)
        result.sad_wall_s += time.perf_counter() - t0
        result.audio_s += seg.audio.duration_s
        result.tracks.append(ScoreTrack(trace.score, trace.frame_shift_s, trace.first_center_s, ref))
    return result


def _process_star(args):
    return process_item(*args)


def process_all(items, root, cfg: dict, jobs: int = 1) -> list[ItemResult]:
    root = Path(root)
    markers = MarkerSet.load(root / MARKER_DIR)
    args = [(it, root, cfg, markers) for it in items]
    if jobs <= 1:
        return [process_item(*a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(_process_star, args))


# -- run-all -----------------------------------------------------------------------

@dataclass
class RunSummary:
    threshold: float
    roc: Optional[RocCurve]
    report: ScoreReport
    results: list
    report_rate: int = 8000

    def sync_summary(self) -> dict:
        out = {"total": len(self.results), "valid": 0, "rejected": {}, "max_offset_error_ms": None}
        errs = []
        for r in self.results:
            if r.sync.valid:
                out["valid"] += 1
                errs.append(abs(r.offset_error_samples))
            else:
                out["rejected"][r.sync.reject_reason] = out["rejected"].get(r.sync.reject_reason, 0) + 1
        if errs:
            out["max_offset_error_ms"] = 1000.0 * max(errs) / self.report_rate
        return out


def thresholds_from(cfg: dict) -> np.ndarray:
    t = cfg["scoring"]["thresholds"]
    return np.geomspace(t["min"], t["max"], t["count"])


def run_all(cfg: dict, out_dir, corpus_dir=None, threshold: Optional[float] = None,
            jobs: int = 1) -> RunSummary:
    """Score the eval split at the dev-split EER threshold (or at ``threshold``).

    Writes ``threshold.json``, ``roc_dev.csv``/``.svg``/``.json`` (unless a
    threshold is given), ``report_eval.json``/``.csv`` and ``sync.json``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if corpus_dir is None:
        corpus_dir = out_dir / "corpus"
        if not (corpus_dir / MANIFEST_NAME).exists():
            build_corpus(cfg, corpus_dir)
    corpus_dir = Path(corpus_dir)
    items = corpus.read_manifest(corpus_dir / MANIFEST_NAME)
    results = process_all(items, corpus_dir, cfg, jobs)
    dev = [t for r in results if r.split == "dev" for t in r.tracks]
    ev = [t for r in results if r.split == "eval" for t in r.tracks]
    sc = cfg["scoring"]
    csbe_cfg = csbe_config(cfg)
    shift_s = cfg["sad"]["stft"]["shift_samples"] / cfg["sample_rate_hz"]

    def smoother(d):
        return median_smooth(d, shift_s, csbe_cfg.median_window_s, csbe_cfg.median_overlap)

    roc = None
    if threshold is None:
        if not dev:
            raise ValueError("no synchronised dev sequences: cannot choose a threshold")
        roc = roc_and_eer(dev, thresholds_from(cfg), sc["collar_s"], sc["frame_s"], smoother)
        threshold = roc.eer_threshold
        atomic_write_text(out_dir / "roc_dev.csv", roc.to_csv())
        atomic_write_text(out_dir / "roc_dev.svg", roc.to_svg())
        write_json(out_dir / "roc_dev.json", roc.to_dict())
    write_json(out_dir / "threshold.json", {
        "threshold": float(threshold),
        "source": "dev_eer" if roc is not None else "override",
        "dev_eer": roc.eer_rate if roc is not None else None,
    })
    if not ev:
        raise ValueError("no synchronised eval sequences to score")
    report = score_tracks(ev, threshold, sc["collar_s"], sc["frame_s"], smoother)
    wall = sum(r.sad_wall_s for r in results if r.split == "eval")
    audio_s = sum(r.audio_s for r in results if r.split == "eval")
    report.rt_factor = rt_factor(wall, audio_s)
    write_json(out_dir / "report_eval.json", report.to_dict())
    atomic_write_text(out_dir / "report_eval.csv", report.to_csv())
    summary = RunSummary(float(threshold), roc, report, results,
                         report_rate=cfg["sample_rate_hz"])
    write_json(out_dir / "sync.json", summary.sync_summary())
    return summary
