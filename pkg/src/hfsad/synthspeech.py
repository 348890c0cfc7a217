"""Formant-synthesised pseudo speech for self-contained corpora.

Each syllable is an optional fricative noise burst followed by a voiced
nucleus: a jittered glottal pulse train with spectral tilt, shaped by three
formant resonators and a raised-cosine envelope.  Syllables are separated by
short pauses, so any excerpt of an utterance is continuously "speech-like"
at the 0.25 s scale.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import signal as sps

from . import audio_io
from .dsp import AudioBuffer, rms

SPEECH_RMS = 0.1


def _resonator(freq_hz, bw_hz, rate_hz):
    r = np.exp(-np.pi * bw_hz / rate_hz)
    theta = 2 * np.pi * freq_hz / rate_hz
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return [sum(a)], a  # unit gain at DC keeps levels comparable


def _envelope(n, attack):
    env = np.ones(n)
    k = max(1, min(int(attack), n // 2))
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(k) / k)
    env[:k] = ramp
    env[n - k:] = ramp[::-1]
    return env


def _voiced(n, rate_hz, rng, f0):
    # falling f0 contour with jitter
    f0_track = f0 * (1.05 - 0.15 * np.linspace(0, 1, n))
    phase = np.cumsum(f0_track / rate_hz)
    pulses = np.zeros(n)
    idx = np.flatnonzero(np.diff(np.floor(phase)) > 0) + 1
    idx = np.clip(idx + rng.integers(-2, 3, idx.size), 0, n - 1)
    pulses[idx] = 1.0
    # glottal tilt: two leaky integrators
    src = sps.lfilter([1.0], [1.0, -0.95], pulses)
    src = sps.lfilter([1.0, -1.0], [1.0, -0.9], src)
    f1 = rng.uniform(300, 850)
    f2 = rng.uniform(900, 2300)
    f3 = rng.uniform(2400, min(3300, 0.45 * rate_hz))
    y = src
    out = np.zeros(n)
    for f, bw, g in ((f1, 80, 1.0), (f2, 110, 0.6), (f3, 160, 0.3)):
        b, a = _resonator(f, bw, rate_hz)
        out += g * sps.lfilter(b, a, y)
    return out


def _fricative(n, rate_hz, rng):
    noise = rng.standard_normal(n)
    lo = min(2000.0, 0.3 * rate_hz)
    hi = min(6000.0, 0.45 * rate_hz)
    b, a = sps.butter(2, [lo, hi], btype="band", fs=rate_hz)
    return sps.lfilter(b, a, noise)


def synth_utterance(duration_s: float, rate_hz: int = 16000, seed=None,
                    level_rms: float = SPEECH_RMS) -> AudioBuffer:
    """Pseudo speech of the requested duration, active RMS ``level_rms``."""
    rng = np.random.default_rng(seed)
    total = int(round(duration_s * rate_hz))
    out = np.zeros(total)
    f0 = rng.uniform(95, 230)
    pos = int(rng.uniform(0.0, 0.05) * rate_hz)
    while pos < total:
        if rng.random() < 0.35:
            nf = int(rng.uniform(0.03, 0.09) * rate_hz)
            seg = _fricative(nf, rate_hz, rng) * _envelope(nf, 0.01 * rate_hz)
            seg *= rng.uniform(0.15, 0.35) / max(rms(seg), 1e-12)
            end = min(total, pos + nf)
            out[pos:end] += seg[: end - pos]
            pos = end
        nv = int(rng.uniform(0.09, 0.26) * rate_hz)
        seg = _voiced(nv, rate_hz, rng, f0 * rng.uniform(0.9, 1.1))
        seg *= _envelope(nv, 0.03 * rate_hz)
        seg *= rng.uniform(0.5, 1.0) / max(rms(seg), 1e-12)
        end = min(total, pos + nv)
        out[pos:end] += seg[: end - pos]
        pos = end + int(rng.uniform(0.02, 0.12) * rate_hz)
    cur = rms(out)
    if cur > 0:
        out *= level_rms / cur
    return AudioBuffer(np.clip(out, -0.99, 0.99), rate_hz)


def write_source_dir(directory, num_files: int = 20, duration_s: float = 20.0,
                     rate_hz: int = 16000, seed: int = 0) -> list[Path]:
    """Write ``num_files`` synthetic utterances as 16-bit WAVs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(seed).spawn(num_files)
    paths = []
    for i, s in enumerate(seeds):
        p = directory / f"utt_{i:04d}.wav"
        audio_io.write_wav(p, synth_utterance(duration_s, rate_hz, np.random.default_rng(s)))
        paths.append(p)
    return paths
