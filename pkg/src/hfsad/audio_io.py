"""16-bit PCM mono WAV reading and writing."""

from __future__ import annotations

import os
import tempfile
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import AudioBuffer

FULL_SCALE = 32768.0


@dataclass(frozen=True)
class WriteInfo:
    path: Path
    num_samples: int
    clipped: int


def to_pcm16(samples: np.ndarray) -> tuple[np.ndarray, int]:
    """Saturating float -> int16 conversion; returns (pcm, clipped count)."""
    scaled = np.round(np.asarray(samples, float) * FULL_SCALE)
    clipped = int(np.count_nonzero((scaled > 32767) | (scaled < -32768)))
    return np.clip(scaled, -32768, 32767).astype("<i2"), clipped


def from_pcm16(pcm: np.ndarray) -> np.ndarray:
    return np.asarray(pcm, dtype=np.int16).astype(np.float64) / FULL_SCALE


def read_wav(path) -> AudioBuffer:
    path = Path(path)
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono, found {w.getnchannels()} channels")
        if w.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM, found {8 * w.getsampwidth()}-bit")
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    return AudioBuffer(from_pcm16(np.frombuffer(raw, dtype="<i2")), rate)


def write_pcm16(path, pcm: np.ndarray, sample_rate_hz: int) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # temp + rename so readers never see a half-written file
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".part")
    os.close(fd)
    try:
        with wave.open(tmp, "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(2)
            w.setframerate(int(sample_rate_hz))
            w.writeframes(np.asarray(pcm, dtype="<i2").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_wav(path, audio: AudioBuffer) -> WriteInfo:
    pcm, clipped = to_pcm16(audio.samples)
    write_pcm16(path, pcm, audio.sample_rate_hz)
    return WriteInfo(Path(path), pcm.size, clipped)


def read_pcm16(path) -> tuple[np.ndarray, int]:
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit mono PCM")
        return np.frombuffer(w.readframes(w.getnframes()), dtype="<i2").copy(), w.getframerate()
