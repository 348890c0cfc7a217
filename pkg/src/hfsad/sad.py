"""Statistical speech activity detector.

Phase one cleans the signal: several rounds of minimum-statistics noise
tracking and Wiener filtering, a highpass, and a first-order LPC
predictability gate.  Phase two computes the cumulative sub-band energy
(CSBE) of the cleaned signal, tracks its floor with minimum statistics, and
declares speech where CSBE exceeds the floor by a factor, followed by a
windowed median vote.

Every stage is scale covariant and the decision is a ratio test, so the
decisions do not depend on the input level.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy import signal as sps

from .dsp import (AudioBuffer, STAT_SAD_PARAMS, StftParams, apply_fir, design_highpass,
                  istft, mel_filterbank, mel_smooth, stft)
from .labels import LabelTrack

SCORE_CAP = 1e12


@dataclass(frozen=True)
class WienerConfig:
    gamma: float = 24.0
    g_min: float = 0.1
    num_stages: int = 3
    min_stat_window_frames: int = 48
    smoothing_alpha: float = 0.85
    bias_comp: float = 1.5

    def __post_init__(self):
        if not self.gamma > 20:
            raise ValueError(f"oversubtraction gamma must exceed 20, got {self.gamma}")
        if not 0 < self.g_min < 1:
            raise ValueError(f"g_min must lie in (0, 1), got {self.g_min}")
        if self.num_stages < 1:
            raise ValueError("at least one Wiener stage required")
        if self.min_stat_window_frames < 2:
            raise ValueError("minimum-statistics window must be >= 2 frames")
        if not 0 < self.smoothing_alpha < 1:
            raise ValueError("smoothing alpha must lie in (0, 1)")
        if self.bias_comp < 1:
            raise ValueError("bias compensation must be >= 1")


@dataclass(frozen=True)
class CsbeConfig:
    mel_bands: int = 40
    subband_width_hz: float = 1000.0
    alpha_threshold: float = 2.5
    floor_window_frames: int = 300  # ~9.6 s, longer than any speech segment
    floor_smoothing_alpha: float = 0.9  # slow enough that syllable gaps under AGC pumping do not set the floor
    floor_bias_comp: float = 1.5
    median_window_s: float = 0.25
    median_overlap: float = 0.5
    highpass_hz: float = 120.0
    highpass_transition_hz: float = 100.0
    highpass_atten_db: float = 60.0
    lpc_block_s: float = 0.032
    lpc_rho_floor: float = 0.1

    def __post_init__(self):
        if not self.alpha_threshold > 1:
            raise ValueError("alpha_threshold must exceed 1")
        if self.floor_window_frames < 2:
            raise ValueError("floor window must be >= 2 frames")
        if not 0 <= self.median_overlap < 1:
            raise ValueError("median overlap must lie in [0, 1)")

    def num_subbands(self, rate_hz: int) -> int:
        return int(np.ceil((rate_hz / 2) / self.subband_width_hz))


# -- minimum statistics and Wiener gain -----------------------------------------

def recursive_smooth(psd: np.ndarray, alpha: float) -> np.ndarray:
    """``S[t] = alpha S[t-1] + (1 - alpha) P[t]`` with ``S[0] = P[0]``."""
    psd = np.asarray(psd, float)
    if psd.shape[0] == 0:
        return psd.copy()
    zi = alpha * psd[:1]
    out, _ = sps.lfilter([1 - alpha], [1.0, -alpha], psd, axis=0, zi=zi)
    return out


def causal_min(x: np.ndarray, window: int) -> np.ndarray:
    """Minimum over the last ``window`` frames (fewer during warm-up), along axis 0."""
    origin = (window - 1) // 2
    return ndimage.minimum_filter1d(x, size=window, axis=0, mode="nearest", origin=origin)


def track_noise_min_stat(psd_sequence: np.ndarray, window_frames: int = 48,
                         alpha: float = 0.85, bias_comp: float = 1.5) -> np.ndarray:
    """Noise PSD as the bias-compensated sliding minimum of the smoothed PSD."""
    if window_frames < 2:
        raise ValueError("window must be >= 2 frames")
    smoothed = recursive_smooth(psd_sequence, alpha)
    return bias_comp * causal_min(smoothed, int(window_frames))


def wiener_gain(x_psd, v_psd, gamma, g_min) -> np.ndarray:
    """``max(1 - gamma * V / X, g_min)``, capped at 1; bins with ``X = 0`` get ``g_min``.

    ``gamma`` and ``g_min`` may be scalars or arrays broadcastable with the spectra.
    """
    x = np.asarray(x_psd, float)
    v = np.asarray(v_psd, float)
    gamma = np.asarray(gamma, float)
    g_min = np.asarray(g_min, float)
    if np.any(x < 0) or np.any(v < 0):
        raise ValueError("power spectra must be nonnegative")
    if np.any(gamma <= 0):
        raise ValueError("gamma must be positive")
    shape = np.broadcast_shapes(x.shape, v.shape, gamma.shape, g_min.shape)
    x, v, gamma, g_min = (np.broadcast_to(a, shape) for a in (x, v, gamma, g_min))
    out = g_min.copy()
    pos = x > 0
    with np.errstate(over="ignore"):  # denormal X: ratio overflows to inf, gain floors
        out[pos] = np.maximum(1.0 - gamma[pos] * v[pos] / x[pos], g_min[pos])
    return np.minimum(out, 1.0)


def _fit_length(x: np.ndarray, n: int) -> np.ndarray:
    if x.size >= n:
        return x[:n]
    return np.concatenate([x, np.zeros(n - x.size)])


def wiener_stage(audio: AudioBuffer, cfg: WienerConfig, params: StftParams,
                 return_gain: bool = False):
    spec = stft(audio, params)
    p = spec.power()
    v = track_noise_min_stat(p, cfg.min_stat_window_frames, cfg.smoothing_alpha, cfg.bias_comp)
    gain = wiener_gain(p, v, cfg.gamma, cfg.g_min)
    out = istft(type(spec)(spec.frames * gain, params, spec.sample_rate_hz))
    out = audio.with_samples(_fit_length(out.samples, len(audio)))
    return (out, gain) if return_gain else out


def enhance_multistage(audio: AudioBuffer, cfg: WienerConfig = WienerConfig(),
                       params: StftParams = STAT_SAD_PARAMS) -> AudioBuffer:
    """Repeat noise tracking and Wiener filtering ``cfg.num_stages`` times."""
    y = audio
    for _ in range(cfg.num_stages):
        y = wiener_stage(y, cfg, params)
    return y


# -- LPC gate -------------------------------------------------------------------

def lag1_correlation(block: np.ndarray) -> float:
    r0 = float(np.dot(block, block))
    if r0 == 0:
        return 0.0
    return float(np.dot(block[:-1], block[1:]) / r0)


def lpc_gate(audio: AudioBuffer, block_s: float = 0.032, rho_floor: float = 0.1,
             crossfade_s: float = 0.01, return_gain: bool = False):
    """Scale each block by its first-order predictability ``clip(r1/r0, floor, 1)``.

    Gains change with a linear cross-fade of ``crossfade_s`` centred on the
    block boundaries.
    """
    if block_s <= 0:
        raise ValueError("block length must be positive")
    x = audio.samples
    rate = audio.sample_rate_hz
    n = max(2, int(round(block_s * rate)))
    n_blocks = int(np.ceil(x.size / n)) if x.size else 0
    pad = np.zeros(n_blocks * n)
    pad[: x.size] = x
    blocks = pad.reshape(n_blocks, n)
    r0 = np.einsum("ij,ij->i", blocks, blocks)
    r1 = np.einsum("ij,ij->i", blocks[:, :-1], blocks[:, 1:])
    rho = np.zeros(n_blocks)
    np.divide(r1, r0, out=rho, where=r0 > 0)
    g_block = np.clip(rho, rho_floor, 1.0)
    g = np.repeat(g_block, n)[: x.size]
    c = int(round(crossfade_s * rate))
    if c > 1 and x.size:
        left, right = c // 2, c - 1 - c // 2
        padded = np.concatenate([np.full(left, g[0]), g, np.full(right, g[-1])])
        g = np.convolve(padded, np.ones(c) / c, mode="valid")
    out = audio.with_samples(x * g)
    return (out, g) if return_gain else out


# -- CSBE -----------------------------------------------------------------------

def subband_index(center_hz: np.ndarray, width_hz: float) -> np.ndarray:
    """1-based sub-band of each mel band centre."""
    return np.floor(np.asarray(center_hz) / width_hz).astype(int) + 1


def csbe_from_power(power: np.ndarray, rate_hz: int, fft_size: int,
                    cfg: CsbeConfig = CsbeConfig()) -> np.ndarray:
    fb = mel_filterbank(cfg.mel_bands, fft_size, rate_hz)
    bands = mel_smooth(power, fb)
    s = subband_index(fb.center_hz, cfg.subband_width_hz)
    n_sub = cfg.num_subbands(rate_hz)
    energies = np.zeros((bands.shape[0], n_sub))
    for k in range(1, n_sub + 1):
        energies[:, k - 1] = bands[:, s == k].sum(axis=1)
    return energies @ (1.0 / np.arange(1, n_sub + 1))


def csbe(enhanced: AudioBuffer, cfg: CsbeConfig = CsbeConfig(),
         params: StftParams = STAT_SAD_PARAMS) -> np.ndarray:
    """``CSBE(t) = sum_s E_s(t) / s`` over 1 kHz sub-bands of mel-smoothed power."""
    spec = stft(enhanced, params)
    return csbe_from_power(spec.power(), enhanced.sample_rate_hz, params.fft_size, cfg)


# -- decisions ------------------------------------------------------------------

def median_smooth(raw, frame_shift_s: float, window_s: float = 0.25,
                  overlap: float = 0.5) -> np.ndarray:
    """Majority vote over ``window_s`` windows hopped at ``(1-overlap)*window_s``.

    Each window's vote is held for the hop-length block at its centre.  A tie
    counts as non-speech, so a speech output always has raw speech support
    inside its window.
    """
    raw = np.asarray(raw, dtype=bool)
    n = raw.size
    win = max(1, int(round(window_s / frame_shift_s)))
    hop = max(1, int(round(win * (1 - overlap))))
    csum = np.concatenate([[0], np.cumsum(raw, dtype=np.int64)])
    out = np.zeros(n, dtype=bool)
    lead = (win - hop) // 2
    for start in range(0, n, hop):
        lo = max(0, start - lead)
        hi = min(n, start - lead + win)
        count = csum[hi] - csum[lo]
        out[start: start + hop] = 2 * count > (hi - lo)
    return out


@dataclass(eq=False)
class SadTrace:
    csbe: np.ndarray
    floor: np.ndarray
    score: np.ndarray
    raw_decisions: np.ndarray
    smoothed_decisions: np.ndarray
    frame_shift_s: float
    first_center_s: float
    duration_s: float
    warmup_frames: int = 0

    def to_label_track(self, smoothed: bool = True) -> LabelTrack:
        d = self.smoothed_decisions if smoothed else self.raw_decisions
        return LabelTrack.from_decisions(d, self.frame_shift_s, self.duration_s,
                                         self.first_center_s)

    def to_dict(self) -> dict:
        return {
            "frame_shift_s": self.frame_shift_s,
            "first_center_s": self.first_center_s,
            "duration_s": self.duration_s,
            "warmup_frames": self.warmup_frames,
            "csbe": self.csbe.tolist(),
            "floor": self.floor.tolist(),
            "score": self.score.tolist(),
            "raw_decisions": self.raw_decisions.astype(int).tolist(),
            "smoothed_decisions": self.smoothed_decisions.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SadTrace":
        return cls(
            csbe=np.asarray(d["csbe"], float),
            floor=np.asarray(d["floor"], float),
            score=np.asarray(d["score"], float),
            raw_decisions=np.asarray(d["raw_decisions"], bool),
            smoothed_decisions=np.asarray(d["smoothed_decisions"], bool),
            frame_shift_s=float(d["frame_shift_s"]),
            first_center_s=float(d["first_center_s"]),
            duration_s=float(d["duration_s"]),
            warmup_frames=int(d.get("warmup_frames", 0)),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "SadTrace":
        return cls.from_dict(json.loads(Path(path).read_text()))


def csbe_score(c: np.ndarray, floor: np.ndarray, warmup: int) -> np.ndarray:
    score = np.zeros_like(c)
    pos = floor > 0
    np.divide(c, floor, out=score, where=pos)
    score[~pos & (c > 0)] = SCORE_CAP
    score = np.minimum(score, SCORE_CAP)
    score[:warmup] = 0.0
    return score


def decide(score: np.ndarray, alpha: float, frame_shift_s: float,
           cfg: CsbeConfig = CsbeConfig()) -> tuple[np.ndarray, np.ndarray]:
    raw = np.asarray(score) > alpha
    return raw, median_smooth(raw, frame_shift_s, cfg.median_window_s, cfg.median_overlap)


def cleanup(audio: AudioBuffer, wiener: WienerConfig = WienerConfig(),
            cfg: CsbeConfig = CsbeConfig(), params: StftParams = STAT_SAD_PARAMS) -> AudioBuffer:
    """Phase one: multi-stage Wiener filter, highpass, LPC gate."""
    y = enhance_multistage(audio, wiener, params)
    hp = design_highpass(cfg.highpass_hz, cfg.highpass_transition_hz, cfg.highpass_atten_db,
                         audio.sample_rate_hz)
    y = apply_fir(y, hp)
    return lpc_gate(y, cfg.lpc_block_s, cfg.lpc_rho_floor)


def sad_pipeline(audio: AudioBuffer, wiener: WienerConfig = WienerConfig(),
                 cfg: CsbeConfig = CsbeConfig(),
                 params: StftParams = STAT_SAD_PARAMS) -> SadTrace:
    if audio.duration_s < 2.0:
        raise ValueError(f"need at least 2 s of audio, got {audio.duration_s:.3f} s")
    cleaned = cleanup(audio, wiener, cfg, params)
    c = csbe(cleaned, cfg, params)
    floor = track_noise_min_stat(c[:, None], cfg.floor_window_frames,
                                 cfg.floor_smoothing_alpha, cfg.floor_bias_comp)[:, 0]
    shift_s = params.shift_samples / audio.sample_rate_hz
    warmup = min(c.size, wiener.min_stat_window_frames)
    score = csbe_score(c, floor, warmup)
    raw, smoothed = decide(score, cfg.alpha_threshold, shift_s, cfg)
    return SadTrace(
        csbe=c, floor=floor, score=score, raw_decisions=raw, smoothed_decisions=smoothed,
        frame_shift_s=shift_s,
        first_center_s=params.window_len_samples / 2 / audio.sample_rate_hz,
        duration_s=audio.duration_s, warmup_frames=warmup,
    )
