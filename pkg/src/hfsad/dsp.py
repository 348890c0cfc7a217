"""Signal primitives shared by every stage: STFT/ISTFT, FIR design, resampling
and mel smoothing.

All functions are pure; inputs are never modified.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy import signal as sps

PIPELINE_RATES = (8000, 12000, 16000)
MAX_FIR_TAPS = 8191
MAX_RATIO_TERM = 480


class TooShortError(ValueError):
    """Raised when a signal does not contain a single analysis window."""


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    """Uniformly sampled mono waveform, full scale +-1.0."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError(f"audio must be 1-D, got shape {x.shape}")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(x)):
            raise ValueError("audio contains non-finite samples")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def with_samples(self, samples) -> "AudioBuffer":
        return AudioBuffer(samples, self.sample_rate_hz)

    def require_pipeline_rate(self) -> "AudioBuffer":
        if self.sample_rate_hz not in PIPELINE_RATES:
            raise ValueError(
                f"pipeline entry points accept {PIPELINE_RATES} Hz, got {self.sample_rate_hz}"
            )
        return self


@dataclass(frozen=True)
class StftParams:
    fft_size: int = 1024
    window_len_samples: int = 512
    shift_samples: int = 256
    window: str = "hann"

    def __post_init__(self):
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")
        if not 0 < self.shift_samples <= self.window_len_samples <= self.fft_size:
            raise ValueError(
                "need 0 < shift <= window_len <= fft_size, got "
                f"{self.shift_samples}/{self.window_len_samples}/{self.fft_size}"
            )

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    def is_cola(self) -> bool:
        # Periodic Hann overlap-adds to a constant for any integer overlap >= 2.
        return (
            self.window_len_samples % self.shift_samples == 0
            and self.window_len_samples // self.shift_samples >= 2
        )

    def num_frames(self, num_samples: int) -> int:
        if num_samples < self.window_len_samples:
            return 0
        return 1 + (num_samples - self.window_len_samples) // self.shift_samples

    def analysis_window(self) -> np.ndarray:
        return sps.get_window("hann", self.window_len_samples, fftbins=True)

    def to_dict(self) -> dict:
        return {
            "fft_size": self.fft_size,
            "window_len_samples": self.window_len_samples,
            "shift_samples": self.shift_samples,
            "window": self.window,
        }


# 1024-point FFT, 64 ms window, 32 ms shift at 8 kHz.
STAT_SAD_PARAMS = StftParams(1024, 512, 256)


@dataclass(frozen=True, eq=False)
class Spectrogram:
    frames: np.ndarray  # T x F complex
    params: StftParams
    sample_rate_hz: int

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_shift_s(self) -> float:
        return self.params.shift_samples / self.sample_rate_hz

    def power(self) -> np.ndarray:
        return self.frames.real ** 2 + self.frames.imag ** 2

    def energy(self) -> float:
        """Time-domain energy of the windowed frames, via Parseval."""
        p = self.power()
        n = self.params.fft_size
        total = p[:, 0].sum() + 2.0 * p[:, 1:-1].sum()
        total += p[:, -1].sum() if n % 2 == 0 else 2.0 * p[:, -1].sum()
        return float(total / n)


def stft(audio: AudioBuffer, params: StftParams = STAT_SAD_PARAMS) -> Spectrogram:
    """Short-time Fourier transform without edge padding.

    Frame ``t`` covers samples ``[t*shift, t*shift + window_len)``.
    """
    x = audio.samples
    if len(x) < params.window_len_samples:
        raise TooShortError(
            f"audio too short: {len(x)} samples < window of {params.window_len_samples}"
        )
    win = params.analysis_window()
    frames = np.lib.stride_tricks.sliding_window_view(x, params.window_len_samples)
    frames = frames[:: params.shift_samples] * win
    spec = np.fft.rfft(frames, n=params.fft_size, axis=-1)
    return Spectrogram(spec, params, audio.sample_rate_hz)


def istft(spec: Spectrogram) -> AudioBuffer:
    """Weighted overlap-add inverse of :func:`stft`.

    Output length is ``(T-1)*shift + window_len``.  Samples covered only by
    zero-valued window taps (the very first sample) come back as zero.
    """
    params = spec.params
    if not params.is_cola():
        raise ValueError(
            f"window {params.window_len_samples} / shift {params.shift_samples} "
            "does not satisfy the overlap-add reconstruction constraint"
        )
    win = params.analysis_window()
    wl, hop = params.window_len_samples, params.shift_samples
    n_frames = spec.num_frames
    if n_frames == 0:
        return AudioBuffer(np.zeros(0), spec.sample_rate_hz)
    frames = np.fft.irfft(spec.frames, n=params.fft_size, axis=-1)[:, :wl] * win
    length = (n_frames - 1) * hop + wl
    out = np.zeros(length)
    norm = np.zeros(length)
    wsq = win ** 2
    # Accumulate one overlap phase at a time: frames t, t+r, t+2r, ... do not overlap.
    ratio = wl // hop
    for phase in range(ratio):
        sel = frames[phase::ratio]
        if sel.shape[0] == 0:
            continue
        start = phase * hop
        stop = start + sel.shape[0] * wl
        out[start:stop] += sel.reshape(-1)
        norm[start:stop] += np.tile(wsq, sel.shape[0])
    nz = norm > 1e-10
    out[nz] /= norm[nz]
    out[~nz] = 0.0
    return AudioBuffer(out, spec.sample_rate_hz)


@dataclass(frozen=True, eq=False)
class FirFilter:
    coefficients: np.ndarray
    design: dict = field(default_factory=dict)

    def __post_init__(self):
        h = np.asarray(self.coefficients, dtype=np.float64)
        if h.ndim != 1 or h.size == 0:
            raise ValueError("filter coefficients must be a non-empty 1-D sequence")
        object.__setattr__(self, "coefficients", h)

    @property
    def num_taps(self) -> int:
        return self.coefficients.size

    def is_linear_phase(self) -> bool:
        h = self.coefficients
        return bool(np.allclose(h, h[::-1], rtol=0, atol=1e-12))

    def response_db(self, freqs_hz, rate_hz: int) -> np.ndarray:
        _, H = sps.freqz(self.coefficients, worN=np.asarray(freqs_hz, float), fs=rate_hz)
        return 20 * np.log10(np.maximum(np.abs(H), 1e-300))


def _kaiser_taps(transition_hz: float, atten_db: float, rate_hz: int):
    numtaps, beta = sps.kaiserord(atten_db, transition_hz / (0.5 * rate_hz))
    numtaps |= 1  # odd length: type I, integer group delay
    if numtaps > MAX_FIR_TAPS:
        raise ValueError(
            f"infeasible filter: {numtaps} taps needed (limit {MAX_FIR_TAPS}); "
            "widen the transition band or relax the attenuation"
        )
    return numtaps, beta


def _check_band(cutoff_hz, transition_hz, rate_hz):
    if not 0 < cutoff_hz < rate_hz / 2:
        raise ValueError(f"cutoff {cutoff_hz} Hz outside (0, {rate_hz / 2})")
    if transition_hz <= 0:
        raise ValueError("transition width must be positive")


def design_lowpass(cutoff_hz: float, transition_hz: float, atten_db: float,
                   rate_hz: int) -> FirFilter:
    """Kaiser-windowed sinc lowpass.

    ``cutoff_hz`` is the centre of the transition band; the passband ends at
    ``cutoff - transition/2`` and the stopband begins at ``cutoff + transition/2``.
    """
    _check_band(cutoff_hz, transition_hz, rate_hz)
    numtaps, beta = _kaiser_taps(transition_hz, atten_db, rate_hz)
    h = sps.firwin(numtaps, cutoff_hz, window=("kaiser", beta), fs=rate_hz)
    return FirFilter(h, {
        "type": "lowpass",
        "passband_hz": (0.0, cutoff_hz - transition_hz / 2),
        "stopband_hz": (cutoff_hz + transition_hz / 2, rate_hz / 2),
        "attenuation_db": atten_db,
        "rate_hz": rate_hz,
    })


def design_highpass(cutoff_hz: float, transition_hz: float, atten_db: float,
                    rate_hz: int) -> FirFilter:
    _check_band(cutoff_hz, transition_hz, rate_hz)
    numtaps, beta = _kaiser_taps(transition_hz, atten_db, rate_hz)
    h = sps.firwin(numtaps, cutoff_hz, window=("kaiser", beta), pass_zero=False, fs=rate_hz)
    return FirFilter(h, {
        "type": "highpass",
        "passband_hz": (cutoff_hz + transition_hz / 2, rate_hz / 2),
        "stopband_hz": (0.0, cutoff_hz - transition_hz / 2),
        "attenuation_db": atten_db,
        "rate_hz": rate_hz,
    })


def design_bandpass(low_hz: float, high_hz: float, transition_hz: float,
                    atten_db: float, rate_hz: int) -> FirFilter:
    _check_band(low_hz, transition_hz, rate_hz)
    _check_band(high_hz, transition_hz, rate_hz)
    if not low_hz < high_hz:
        raise ValueError("bandpass needs low < high")
    numtaps, beta = _kaiser_taps(transition_hz, atten_db, rate_hz)
    h = sps.firwin(numtaps, [low_hz, high_hz], window=("kaiser", beta),
                   pass_zero=False, fs=rate_hz)
    return FirFilter(h, {
        "type": "bandpass",
        "passband_hz": (low_hz + transition_hz / 2, high_hz - transition_hz / 2),
        "attenuation_db": atten_db,
        "rate_hz": rate_hz,
    })


def apply_fir(audio: AudioBuffer, fir: FirFilter) -> AudioBuffer:
    """Filter and compensate the group delay so the output stays time aligned.

    For odd-length symmetric filters the compensation is exact; even-length
    filters are advanced by ``(N-1)//2`` samples.
    """
    h = fir.coefficients
    x = audio.samples
    if h.size == 1:
        return audio.with_samples(x * h[0])
    if x.size == 0:
        return audio.with_samples(x.copy())
    y = sps.oaconvolve(x, h, mode="full")
    delay = (h.size - 1) // 2
    return audio.with_samples(y[delay: delay + x.size])


def _ratio(source_hz: int, target_hz: int) -> tuple[int, int]:
    frac = Fraction(int(target_hz), int(source_hz))
    if frac.numerator > MAX_RATIO_TERM or frac.denominator > MAX_RATIO_TERM:
        raise ValueError(
            f"resampling {source_hz} -> {target_hz} Hz needs ratio {frac}, "
            f"terms exceed {MAX_RATIO_TERM}"
        )
    return frac.numerator, frac.denominator


def antialias_filter(source_hz: int, target_hz: int, atten_db: float = 70.0) -> FirFilter:
    """Lowpass used by :func:`resample`, designed at the intermediate rate."""
    up, _ = _ratio(source_hz, target_hz)
    nyq = 0.5 * min(source_hz, target_hz)
    return design_lowpass(0.925 * nyq, 0.15 * nyq, atten_db, source_hz * up)


def resample(audio: AudioBuffer, target_hz: int) -> AudioBuffer:
    """Rational-ratio polyphase resampling with a Kaiser anti-alias filter.

    Passband is flat to 85% of the lower Nyquist frequency; everything above
    the lower Nyquist frequency is attenuated by at least 67 dB.
    """
    target_hz = int(target_hz)
    if target_hz <= 0:
        raise ValueError("target rate must be positive")
    if target_hz == audio.sample_rate_hz:
        return audio.with_samples(audio.samples.copy())
    up, down = _ratio(audio.sample_rate_hz, target_hz)
    h = antialias_filter(audio.sample_rate_hz, target_hz).coefficients
    y = sps.resample_poly(audio.samples, up, down, window=h)
    return AudioBuffer(y, target_hz)


@dataclass(frozen=True, eq=False)
class MelFilterbank:
    num_bands: int
    weights: np.ndarray  # bands x bins
    sample_rate_hz: int
    center_hz: np.ndarray

    @property
    def num_bins(self) -> int:
        return self.weights.shape[1]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, float) / 2595.0) - 1.0)


def mel_filterbank(num_bands: int, fft_size: int, sample_rate_hz: int,
                   f_min: float = 0.0, f_max: Optional[float] = None) -> MelFilterbank:
    """Triangular filters with unit peak, equally spaced on the mel scale.

    Adjacent triangles sum to one between the first and last centre frequency.
    """
    if f_max is None:
        f_max = sample_rate_hz / 2
    if not 0 <= f_min < f_max <= sample_rate_hz / 2:
        raise ValueError("need 0 <= f_min < f_max <= Nyquist")
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), num_bands + 2))
    bins = np.arange(fft_size // 2 + 1) * sample_rate_hz / fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins - lo) / (mid - lo)
    falling = (hi - bins) / (hi - mid)
    weights = np.clip(np.minimum(rising, falling), 0.0, None)
    if np.any(weights.sum(axis=1) <= 0):
        raise ValueError(
            f"{num_bands} mel bands are too narrow for a {fft_size}-point FFT"
        )
    return MelFilterbank(num_bands, weights, sample_rate_hz, edges[1:-1].copy())


def mel_smooth(power_frame: np.ndarray, fb: MelFilterbank) -> np.ndarray:
    """Band energies of one power frame (or a T x F stack of frames)."""
    p = np.asarray(power_frame, dtype=np.float64)
    if p.shape[-1] != fb.num_bins:
        raise ValueError(f"frame has {p.shape[-1]} bins, filterbank expects {fb.num_bins}")
    if np.any(p < 0):
        raise ValueError("power spectrum must be nonnegative")
    return p @ fb.weights.T


def rms(x: np.ndarray) -> float:
    x = np.asarray(x, float)
    return float(np.sqrt(np.mean(x ** 2))) if x.size else 0.0


def db(ratio: float) -> float:
    return float(10.0 * np.log10(ratio))
