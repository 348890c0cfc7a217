"""Shared signal builders for the test suite."""

import numpy as np

from hfsad import corpus
from hfsad.channel import ChannelConfig, simulate_channel
from hfsad.dsp import AudioBuffer
from hfsad.labels import LabelTrack
from hfsad.synthspeech import synth_utterance


def mixture(seed, duration_s=30.0, snr_db=5.0, rate=8000, **channel):
    """Speech bursts in silence sent through the simulated receive chain."""
    rng = np.random.default_rng(seed)
    n = int(duration_s * rate)
    x = np.zeros(n)
    spans, t = [], rng.uniform(3.0, 5.0)
    while True:
        d = rng.uniform(1.0, 4.0)
        if t + d > duration_s - 2.0:
            break
        a = int(t * rate)
        burst = synth_utterance(d, rate, rng).samples
        x[a: a + burst.size] = burst
        spans.append((a / rate, (a + burst.size) / rate))
        t += d + rng.uniform(3.0, 8.0)
    labels = LabelTrack.from_spans(spans, duration_s)
    cfg = ChannelConfig(seed=int(rng.integers(2 ** 31)), snr_db=snr_db, **channel)
    return simulate_channel(AudioBuffer(x, rate), labels, cfg), labels


def make_sequence(sources, seed, rate=8000):
    spec = corpus.draw_sequence_spec(np.random.default_rng(seed), sources)
    return corpus.assemble_sequence(spec, rate)
