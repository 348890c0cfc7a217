"""Independent brute-force references used by the unit and acceptance tests."""

import numpy as np

from hfsad.labels import LabelTrack


def label_at(track, t):
    for a, b, lab in track.intervals:
        if a <= t < b:
            return lab == "sp"
    return track.intervals[-1][2] == "sp"


def collar_counts(ref, hyp, collar_s=0.5, frame_s=0.01):
    """Frame loop: label each frame by its centre, skip frames near a reference boundary."""
    bounds = [b for _, b, _ in ref.intervals[:-1]]
    tp = fp = fn = tn = 0
    for k in range(int(round(ref.duration_s / frame_s))):
        c = (k + 0.5) * frame_s
        if any(abs(c - b) <= collar_s for b in bounds):
            continue
        r = label_at(ref, c)
        h = label_at(hyp, min(c, hyp.duration_s))
        tp += r and h
        fp += (not r) and h
        fn += r and not h
        tn += not r and not h
    return tp, fp, fn, tn


def random_track(rng, duration_s, max_spans=8):
    spans = []
    for _ in range(int(rng.integers(0, max_spans + 1))):
        a = rng.uniform(0, duration_s)
        spans.append((a, a + rng.uniform(0.05, 4.0)))
    return LabelTrack.from_spans(spans, duration_s)


def wiener_gain_scalar(x, v, gamma, g_min):
    if x <= 0:
        return g_min
    return min(1.0, max(1.0 - gamma * v / x, g_min))


def orthogonal_pair(rng, n):
    """(s, y) with y = s + e, e orthogonal to s and of equal energy."""
    s = rng.standard_normal(n)
    e = rng.standard_normal(n)
    e -= (e @ s) / (s @ s) * s
    e *= np.sqrt((s @ s) / (e @ e))
    return s, s + e
