"""Framed PCM streaming: a loopback replay server and a continuity-checking recorder.

Wire format, all fields little-endian::

    magic "HAMR" (4 bytes) | seq u32 | sample_rate_hz u32 | n_samples u16 | n_samples x int16

Data frames carry ``seq = 0, 1, 2, ...``.  The server ends a session with a
frame of ``n_samples = 0`` whose ``seq`` is the number of data frames sent,
so a missing final frame is detectable too.  A connection that closes
without this end frame counts as a premature disconnect.
"""

from __future__ import annotations

import json
import re
import socket
import socketserver
import struct
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import audio_io

MAGIC = b"HAMR"
HEADER = struct.Struct("<4sIIH")
HEADER_SIZE = HEADER.size  # 14
MAX_FRAME_SAMPLES = 0xFFFF
OK = "ok"
DISCARD = "discard"


class ProtocolError(ValueError):
    pass


def encode_frame(seq: int, sample_rate_hz: int, pcm: np.ndarray) -> bytes:
    pcm = np.asarray(pcm, dtype="<i2")
    if pcm.size > MAX_FRAME_SAMPLES:
        raise ValueError(f"frame holds at most {MAX_FRAME_SAMPLES} samples, got {pcm.size}")
    return HEADER.pack(MAGIC, seq & 0xFFFFFFFF, sample_rate_hz, pcm.size) + pcm.tobytes()


def decode_header(data: bytes) -> tuple[int, int, int]:
    """(seq, sample_rate_hz, n_samples) of a 14-byte header."""
    if len(data) != HEADER_SIZE:
        raise ProtocolError(f"header must be {HEADER_SIZE} bytes, got {len(data)}")
    magic, seq, rate, n = HEADER.unpack(data)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    return seq, rate, n


# -- fault plans ---------------------------------------------------------------

@dataclass(frozen=True)
class FaultPlan:
    """Deterministic server-side faults, keyed by data-frame sequence number.

    ``drop`` frames are never sent, ``dup`` frames are sent twice, and
    ``cut`` closes the connection (without the end frame) right after that
    frame would have been sent.
    """

    drop: frozenset = frozenset()
    dup: frozenset = frozenset()
    cut: Optional[int] = None

    @classmethod
    def parse(cls, text: Optional[str]) -> "FaultPlan":
        """Parse e.g. ``"drop:100-105,dup:200,cut:300"``; empty text means no faults."""
        drop, dup, cut = set(), set(), None
        if not text:
            return cls()
        for item in text.split(","):
            item = item.strip()
            m = re.fullmatch(r"(drop|dup|cut):(\d+)(?:-(\d+))?", item)
            if not m:
                raise ValueError(f"bad fault item {item!r} (expected drop:A[-B], dup:A[-B], cut:A)")
            kind, a = m.group(1), int(m.group(2))
            b = int(m.group(3)) if m.group(3) else a
            if b < a:
                raise ValueError(f"empty range in {item!r}")
            if kind == "cut":
                if m.group(3) or cut is not None:
                    raise ValueError("a plan holds at most one single-frame cut")
                cut = a
            else:
                (drop if kind == "drop" else dup).update(range(a, b + 1))
        return cls(frozenset(drop), frozenset(dup), cut)

    def __str__(self) -> str:
        parts = [f"drop:{s}" for s in sorted(self.drop)] + [f"dup:{s}" for s in sorted(self.dup)]
        if self.cut is not None:
            parts.append(f"cut:{self.cut}")
        return ",".join(parts)

    @property
    def empty(self) -> bool:
        return not self.drop and not self.dup and self.cut is None


# -- server --------------------------------------------------------------------

class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        srv = self.server
        pcm, rate, chunk, plan = srv.pcm, srv.rate, srv.chunk_samples, srv.fault_plan
        n_frames = int(np.ceil(pcm.size / chunk)) if pcm.size else 0
        seq = 0
        try:
            while True:
                for i in range(n_frames):
                    if srv.stopping.is_set():
                        return
                    if seq not in plan.drop:
                        frame = encode_frame(seq, rate, pcm[i * chunk: (i + 1) * chunk])
                        self.request.sendall(frame)
                        if seq in plan.dup:
                            self.request.sendall(frame)
                    if plan.cut is not None and seq == plan.cut:
                        return
                    if srv.realtime:
                        time.sleep(chunk / rate)
                    seq += 1
                if not srv.loop or n_frames == 0:
                    break
            self.request.sendall(HEADER.pack(MAGIC, seq, rate, 0))
        except (BrokenPipeError, ConnectionResetError):
            pass  # recorder hung up (e.g. reached max_s)


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = False


class StreamServer:
    """Replays one WAV file to every client that connects; runs in a background thread."""

    def __init__(self, wav, port: int = 0, chunk_samples: int = 1024,
                 fault_plan: FaultPlan | str | None = None, realtime: bool = False,
                 loop: bool = False, host: str = "127.0.0.1"):
        if not 1 <= chunk_samples <= MAX_FRAME_SAMPLES:
            raise ValueError(f"chunk_samples must lie in [1, {MAX_FRAME_SAMPLES}]")
        pcm, rate = audio_io.read_pcm16(wav)
        if not isinstance(fault_plan, FaultPlan):
            fault_plan = FaultPlan.parse(fault_plan)
        self._srv = _Server((host, int(port)), _Handler)  # OSError if the port is busy
        self._srv.pcm = pcm
        self._srv.rate = rate
        self._srv.chunk_samples = int(chunk_samples)
        self._srv.fault_plan = fault_plan
        self._srv.realtime = realtime
        self._srv.loop = loop
        self._srv.stopping = threading.Event()
        self._thread = threading.Thread(target=self._srv.serve_forever, daemon=True)

    @property
    def host(self) -> str:
        return self._srv.server_address[0]

    @property
    def port(self) -> int:
        return self._srv.server_address[1]

    @property
    def endpoint(self) -> str:
        return f"{self.host}:{self.port}"

    def start(self) -> "StreamServer":
        if not self._thread.is_alive():
            self._thread.start()
        return self

    def shutdown(self) -> None:
        self._srv.stopping.set()
        self._srv.shutdown()
        self._srv.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.shutdown()


def serve_stream(wav, port: int = 0, chunk_samples: int = 1024, fault_plan=None,
                 realtime: bool = False, loop: bool = False,
                 host: str = "127.0.0.1") -> StreamServer:
    """Start a replay server and return it (already accepting connections)."""
    return StreamServer(wav, port, chunk_samples, fault_plan, realtime, loop, host).start()


# -- recorder ------------------------------------------------------------------

@dataclass
class StationSession:
    station_id: str
    endpoint: str
    sample_rate_hz: int = 0
    frames_received: int = 0
    total_samples: int = 0
    gap_count: int = 0
    missing_frames: int = 0
    repeated_frames: int = 0
    disconnected: bool = False  # connection ended without the end frame
    stopped_at_limit: bool = False
    events: list = field(default_factory=list)

    def _gap(self, kind: str, expected: int, got: int):
        self.gap_count += 1
        self.events.append({"kind": kind, "expected_seq": expected, "got_seq": got})

    @property
    def duration_s(self) -> float:
        return self.total_samples / self.sample_rate_hz if self.sample_rate_hz else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["continuity"] = validate_continuity(self)
        return d

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def _parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, sep, port = endpoint.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint must be HOST:PORT, got {endpoint!r}")
    return host or "127.0.0.1", int(port)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            break
        buf.extend(chunk)
    return bytes(buf)


def record_stream(endpoint: str, out_wav, max_s: Optional[float] = None,
                  timeout_s: float = 5.0, station_id: Optional[str] = None) -> StationSession:
    """Record a framed stream to a 16-bit WAV and account for every discontinuity.

    Samples are written in arrival order; lost frames are not zero-filled.
    Any sequence jump, repeated or out-of-order frame, and a disconnect
    before the end frame each count as one gap.  With ``max_s`` the recording
    stops after exactly ``floor(max_s * rate)`` samples (or fewer if the
    stream ends first).
    """
    host, port = _parse_endpoint(endpoint)
    session = StationSession(station_id or endpoint, endpoint)
    chunks = []
    try:
        sock = socket.create_connection((host, port), timeout=timeout_s)
    except OSError as exc:
        raise ConnectionError(f"cannot connect to {endpoint}: {exc}") from exc
    expected = 0
    limit = None
    with sock:
        while True:
            raw = _recv_exact(sock, HEADER_SIZE)
            if len(raw) < HEADER_SIZE:
                session.disconnected = True
                session._gap("disconnect", expected, -1)
                break
            seq, rate, n = decode_header(raw)
            if session.sample_rate_hz == 0:
                session.sample_rate_hz = rate
                if max_s is not None:
                    limit = int(np.floor(max_s * rate))
            elif rate != session.sample_rate_hz:
                raise ProtocolError(f"sample rate changed from {session.sample_rate_hz} to {rate}")
            payload = _recv_exact(sock, 2 * n)
            if len(payload) < 2 * n:
                session.disconnected = True
                session._gap("disconnect", expected, seq)
                break
            if n == 0:
                if seq != expected:
                    session._gap("end_mismatch", expected, seq)
                    if seq > expected:
                        session.missing_frames += seq - expected
                break
            if seq != expected:
                if seq > expected:
                    session._gap("drop", expected, seq)
                    session.missing_frames += seq - expected
                else:
                    session._gap("repeat", expected, seq)
                    session.repeated_frames += 1
            expected = max(expected, seq + 1)
            pcm = np.frombuffer(payload, dtype="<i2")
            if limit is not None and session.total_samples + pcm.size >= limit:
                pcm = pcm[: limit - session.total_samples]
                session.stopped_at_limit = True
            chunks.append(pcm)
            session.frames_received += 1
            session.total_samples += pcm.size
            if session.stopped_at_limit:
                break
    pcm = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<i2")
    audio_io.write_pcm16(out_wav, pcm, session.sample_rate_hz or 8000)
    return session


def validate_continuity(session: StationSession) -> str:
    """``"discard"`` for any session with a gap, else ``"ok"``."""
    return DISCARD if session.gap_count > 0 else OK
