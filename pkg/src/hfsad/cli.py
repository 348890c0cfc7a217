"""Command-line entry point: ``hfsad <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import CONFIG_SCHEMA_VERSION, __version__, audio_io, ingest
from .config import ConfigError, csbe_config, load_config, stft_params, wiener_config
from .corpus import CorpusError, ManifestError
from .dsp import resample, stft
from .labels import LabelTrack
from .markers import MarkerSet, build_marker_set, detect_markers
from .pipeline import atomic_write_text, build_corpus, run_all, write_json
from .sad import sad_pipeline
from .scoring import collar_score
from .sync import TransmissionLayout, validate_layout

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
DATA_ERRORS = (ValueError, KeyError, OSError, CorpusError, ManifestError, ConfigError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(args) -> dict:
    return load_config(getattr(args, "config", None), getattr(args, "set", None) or ())


def _add_config(p):
    p.add_argument("--config", help="YAML config file (defaults apply to missing keys)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key, e.g. sad.wiener.gamma=30 (repeatable)")


# -- commands --------------------------------------------------------------------

def cmd_corpus_build(args) -> int:
    cfg = _config(args)
    if args.source_dir:
        cfg["corpus"]["source_dir"] = args.source_dir
    items = build_corpus(cfg, args.out, args.seed)
    print(f"wrote {len(items)} transmissions to {Path(args.out) / 'manifest.jsonl'}")
    return EXIT_OK


def cmd_run_all(args) -> int:
    cfg = _config(args)
    summary = run_all(cfg, args.out, args.corpus, args.threshold, args.jobs)
    r = summary.report
    print(f"threshold {summary.threshold:.4g}  recall {r.recall:.4f}  precision {r.precision:.4f}  "
          f"f1 {r.f1:.4f}  rt {r.rt_factor:.5f}")
    return EXIT_OK


def cmd_markers_build(args) -> int:
    cfg = _config(args)
    ms = build_marker_set(args.count, cfg["sample_rate_hz"], quantile=cfg["markers"]["quantile"],
                          gold_degree=cfg["markers"]["gold_degree"])
    ms.save(args.out)
    print(f"wrote {len(ms)} markers to {args.out}")
    return EXIT_OK


def cmd_sync(args) -> int:
    cfg = _config(args)
    stream = audio_io.read_wav(args.stream)
    markers = MarkerSet.load(args.markers)
    if stream.sample_rate_hz != markers.sample_rate_hz:
        stream = resample(stream, markers.sample_rate_hz)
    layout = TransmissionLayout.from_dict(json.loads(Path(args.layout).read_text()))
    hyps = detect_markers(stft(stream, markers.params), markers,
                          min_score=cfg["markers"]["min_score"])
    report = validate_layout(hyps, layout)
    write_json(args.out, report.to_dict())
    print(f"{report.status} {report.reject_reason}".strip())
    return EXIT_OK


def cmd_sad(args) -> int:
    cfg = _config(args)
    audio = audio_io.read_wav(args.wav)
    rate = cfg["sample_rate_hz"]
    if audio.sample_rate_hz != rate:
        audio = resample(audio, rate)
    trace = sad_pipeline(audio, wiener_config(cfg), csbe_config(cfg), stft_params(cfg))
    track = trace.to_label_track()
    atomic_write_text(args.out, track.to_csv())
    if args.trace:
        atomic_write_text(args.trace, json.dumps(trace.to_dict()))
    print(f"{len(track.speech_spans())} speech intervals, "
          f"{100 * track.speech_fraction():.1f}% speech")
    return EXIT_OK


def cmd_score(args) -> int:
    cfg = _config(args)
    ref = LabelTrack.load(args.ref)
    hyp = LabelTrack.load(args.hyp)
    rep = collar_score(ref, hyp, cfg["scoring"]["collar_s"], cfg["scoring"]["frame_s"])
    if args.out:
        write_json(args.out, rep.to_dict())
    print(f"recall {rep.recall:.4f}  precision {rep.precision:.4f}  f1 {rep.f1:.4f}")
    return EXIT_OK


def cmd_ingest_serve(args) -> int:
    srv = ingest.StreamServer(args.wav, args.port, args.chunk, args.faults,
                              realtime=args.realtime, loop=args.loop, host=args.host)
    print(f"serving {args.wav} on {srv.endpoint}", flush=True)
    srv.start()
    try:
        srv._thread.join()
    except KeyboardInterrupt:
        pass
    finally:
        srv.shutdown()
    return EXIT_OK


def cmd_ingest_record(args) -> int:
    session = ingest.record_stream(args.endpoint, args.out, args.max_s, args.timeout,
                                   args.station)
    if args.session:
        session.save(args.session)
    verdict = ingest.validate_continuity(session)
    print(f"{session.total_samples} samples, {session.gap_count} gaps: {verdict}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hfsad", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version",
                   version=f"hfsad {__version__} (config schema {CONFIG_SCHEMA_VERSION})")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    corpus = sub.add_parser("corpus", help="corpus tools")
    csub = corpus.add_subparsers(dest="action", parser_class=_Parser)
    csub.required = True
    b = csub.add_parser("build", help="assemble transmissions, simulate the channel, write manifest")
    _add_config(b)
    b.add_argument("--out", required=True)
    b.add_argument("--seed", type=int)
    b.add_argument("--source-dir", help="directory of mono 16-bit WAVs (default: synthesised)")
    b.set_defaults(func=cmd_corpus_build)

    r = sub.add_parser("run-all", help="sync + SAD + dev-EER threshold + eval scoring")
    _add_config(r)
    r.add_argument("--out", required=True)
    r.add_argument("--corpus", help="existing corpus directory (default: build into OUT/corpus)")
    r.add_argument("--threshold", type=float, help="fixed SAD threshold; skips the ROC sweep")
    r.add_argument("--jobs", type=int, default=1)
    r.set_defaults(func=cmd_run_all)

    m = sub.add_parser("markers", help="marker tools")
    msub = m.add_subparsers(dest="action", parser_class=_Parser)
    msub.required = True
    mb = msub.add_parser("build", help="write a marker bank")
    _add_config(mb)
    mb.add_argument("--count", type=int, required=True)
    mb.add_argument("--out", required=True)
    mb.set_defaults(func=cmd_markers_build)

    s = sub.add_parser("sync", help="detect markers and validate a stream against its layout")
    _add_config(s)
    s.add_argument("--stream", required=True)
    s.add_argument("--markers", required=True, help="marker bank directory")
    s.add_argument("--layout", required=True, help="layout JSON")
    s.add_argument("--out", required=True, help="SyncReport JSON")
    s.set_defaults(func=cmd_sync)

    d = sub.add_parser("sad", help="statistical SAD on one WAV")
    _add_config(d)
    d.add_argument("--wav", required=True)
    d.add_argument("--out", required=True, help="interval CSV (start_s,end_s,label)")
    d.add_argument("--trace", help="optional per-frame trace JSON")
    d.set_defaults(func=cmd_sad)

    c = sub.add_parser("score", help="collar scoring of a hypothesis against a reference")
    _add_config(c)
    c.add_argument("--ref", required=True)
    c.add_argument("--hyp", required=True)
    c.add_argument("--out")
    c.set_defaults(func=cmd_score)

    g = sub.add_parser("ingest", help="framed PCM streaming")
    gsub = g.add_subparsers(dest="action", parser_class=_Parser)
    gsub.required = True
    gs = gsub.add_parser("serve", help="replay a WAV to every client")
    gs.add_argument("--wav", required=True)
    gs.add_argument("--port", type=int, required=True)
    gs.add_argument("--host", default="127.0.0.1")
    gs.add_argument("--faults", default="", help='e.g. "drop:100-105,dup:200,cut:300"')
    gs.add_argument("--chunk", type=int, default=1024)
    gs.add_argument("--realtime", action="store_true")
    gs.add_argument("--loop", action="store_true")
    gs.set_defaults(func=cmd_ingest_serve)
    gr = gsub.add_parser("record", help="record a stream to WAV with continuity checks")
    gr.add_argument("--endpoint", required=True, help="HOST:PORT")
    gr.add_argument("--out", required=True)
    gr.add_argument("--max-s", type=float)
    gr.add_argument("--timeout", type=float, default=5.0)
    gr.add_argument("--station")
    gr.add_argument("--session", help="write session statistics JSON here")
    gr.set_defaults(func=cmd_ingest_record)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except DATA_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"hfsad: error: {msg}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
