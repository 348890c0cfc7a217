import socket
import threading

import numpy as np
import pytest

from hfsad import audio_io
from hfsad.ingest import (DISCARD, HEADER_SIZE, MAGIC, OK, FaultPlan, ProtocolError,
                          StreamServer, decode_header, encode_frame, record_stream, serve_stream,
                          validate_continuity)


@pytest.fixture
def wav(tmp_path, rng):
    pcm = rng.integers(-32768, 32768, 24 * 1024 - 300).astype("<i2")
    path = tmp_path / "src.wav"
    audio_io.write_pcm16(path, pcm, 8000)
    return path, pcm


def record(srv, tmp_path, **kw):
    out = tmp_path / "rec.wav"
    session = record_stream(srv.endpoint, out, **kw)
    pcm, rate = audio_io.read_pcm16(out)
    return session, pcm, rate


class TestFraming:
    def test_header_layout(self):
        frame = encode_frame(7, 8000, np.array([1, -2], dtype="<i2"))
        assert frame[:4] == MAGIC
        assert len(frame) == HEADER_SIZE + 4
        assert decode_header(frame[:HEADER_SIZE]) == (7, 8000, 2)

    def test_bad_magic(self):
        with pytest.raises(ProtocolError, match="magic"):
            decode_header(b"XXXX" + bytes(10))

    def test_short_header(self):
        with pytest.raises(ProtocolError):
            decode_header(bytes(5))

    def test_oversize_frame(self):
        with pytest.raises(ValueError):
            encode_frame(0, 8000, np.zeros(70000, dtype="<i2"))


class TestFaultPlan:
    def test_parse(self):
        plan = FaultPlan.parse("drop:3-5,dup:9,cut:12")
        assert plan.drop == {3, 4, 5} and plan.dup == {9} and plan.cut == 12
        assert FaultPlan.parse(str(plan)) == plan

    def test_empty(self):
        assert FaultPlan.parse("").empty
        assert FaultPlan.parse(None).empty

    @pytest.mark.parametrize("text", ["drop", "drop:5-3", "cut:1-2", "cut:1,cut:2", "zap:1"])
    def test_bad(self, text):
        with pytest.raises(ValueError):
            FaultPlan.parse(text)


class TestLoopback:
    def test_bit_exact(self, wav, tmp_path):
        path, pcm = wav
        with serve_stream(path) as srv:
            session, got, rate = record(srv, tmp_path)
        assert rate == 8000
        assert np.array_equal(got, pcm)
        assert session.frames_received == 24
        assert validate_continuity(session) == OK
        assert not session.disconnected

    def test_odd_chunk(self, wav, tmp_path):
        path, pcm = wav
        with serve_stream(path, chunk_samples=333) as srv:
            session, got, _ = record(srv, tmp_path)
        assert np.array_equal(got, pcm)
        assert session.gap_count == 0

    def test_concurrent_clients(self, wav, tmp_path):
        path, pcm = wav
        results = {}

        def client(i):
            results[i] = record_stream(srv.endpoint, tmp_path / f"c{i}.wav")

        with serve_stream(path) as srv:
            threads = [threading.Thread(target=client, args=(i,)) for i in range(4)]
            for t in threads:
                t.start()
            for t in threads:
                t.join(10)
        for i in range(4):
            assert results[i].gap_count == 0
            assert np.array_equal(audio_io.read_pcm16(tmp_path / f"c{i}.wav")[0], pcm)

    def test_max_s_on_looped_stream(self, wav, tmp_path):
        path, _ = wav
        with serve_stream(path, loop=True) as srv:
            session, got, _ = record(srv, tmp_path, max_s=10.0)
        assert got.size == 80000
        assert session.stopped_at_limit
        assert validate_continuity(session) == OK

    def test_max_s_fraction(self, wav, tmp_path):
        path, pcm = wav
        with serve_stream(path) as srv:
            _, got, _ = record(srv, tmp_path, max_s=0.30001)
        assert np.array_equal(got, pcm[:2400])

    def test_connect_failure(self, tmp_path):
        s = socket.socket()
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
        s.close()
        with pytest.raises(ConnectionError):
            record_stream(f"127.0.0.1:{port}", tmp_path / "x.wav", timeout_s=1.0)

    def test_bad_endpoint(self, tmp_path):
        with pytest.raises(ValueError):
            record_stream("localhost", tmp_path / "x.wav")

    def test_session_json(self, wav, tmp_path):
        import json
        path, _ = wav
        with serve_stream(path) as srv:
            session, _, _ = record(srv, tmp_path)
        session.save(tmp_path / "s.json")
        d = json.loads((tmp_path / "s.json").read_text())
        assert d["continuity"] == OK and d["total_samples"] == session.total_samples

    def test_port_in_use(self, wav):
        path, _ = wav
        with serve_stream(path) as srv:
            with pytest.raises(OSError):
                StreamServer(path, srv.port)


class TestFaults:
    @pytest.mark.parametrize("plan,kind", [
        ("drop:3", "drop"), ("drop:0", "drop"), ("drop:23", "end_mismatch"),
        ("dup:5", "repeat"), ("cut:10", "disconnect"), ("cut:23", "disconnect"),
    ])
    def test_detected(self, wav, tmp_path, plan, kind):
        path, _ = wav
        with serve_stream(path, fault_plan=plan) as srv:
            session, _, _ = record(srv, tmp_path)
        assert validate_continuity(session) == DISCARD
        assert session.events[0]["kind"] == kind

    def test_drop_counts(self, wav, tmp_path):
        path, pcm = wav
        with serve_stream(path, fault_plan="drop:4-6") as srv:
            session, got, _ = record(srv, tmp_path)
        assert session.missing_frames == 3
        assert session.gap_count == 1
        assert got.size == pcm.size - 3 * 1024
        assert np.array_equal(got[: 4 * 1024], pcm[: 4 * 1024])

    def test_cut_disconnected(self, wav, tmp_path):
        path, _ = wav
        with serve_stream(path, fault_plan="cut:2") as srv:
            session, got, _ = record(srv, tmp_path)
        assert session.disconnected
        assert got.size == 3 * 1024


class TestEndToEnd:
    def test_dropped_frames_reject_sync(self, tmp_path, marker_set, rng):
        from hfsad.dsp import AudioBuffer, stft
        from hfsad.markers import detect_markers
        from hfsad.sync import TIMING_MISMATCH, TransmissionLayout, validate_layout

        offsets = (0, 256 * 250)
        x = np.zeros(offsets[1] + 32000 + 4000)
        for mid, off in enumerate(offsets):
            x[off: off + 32000] = 0.5 * marker_set[mid].waveform.samples
        x += 0.01 * rng.standard_normal(x.size)
        audio_io.write_wav(tmp_path / "tx.wav", AudioBuffer(x, 8000))
        layout = TransmissionLayout((0, 1), offsets, ((36000, 60000),), 32000, 8000)
        # frame 40 of 1024 samples lies between the two markers
        with serve_stream(tmp_path / "tx.wav", fault_plan="drop:40") as srv:
            session = record_stream(srv.endpoint, tmp_path / "rx.wav")
        assert validate_continuity(session) == DISCARD
        rx = audio_io.read_wav(tmp_path / "rx.wav")
        rep = validate_layout(detect_markers(stft(rx, marker_set.params), marker_set), layout)
        assert rep.reject_reason == TIMING_MISMATCH
