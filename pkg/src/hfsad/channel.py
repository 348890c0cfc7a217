"""Seeded audio-band model of an HF SSB receive chain.

Stage order is fixed: bandlimit -> fading -> additive noise -> interferer ->
AGC.  Every random draw comes from one ``numpy`` generator seeded by
``ChannelConfig.seed``; each stage gets its own child stream so that
switching one stage off does not change the others' randomness.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import signal as sps

from .dsp import AudioBuffer, FirFilter, apply_fir, design_bandpass, design_lowpass
from .labels import LabelTrack

SSB_BANDWIDTH_HZ = 2700.0


@dataclass(frozen=True)
class AgcConfig:
    enabled: bool = True
    target_rms: float = 0.02  # leaves headroom for onset overshoot during attack
    attack_s: float = 0.1
    release_s: float = 1.0
    max_gain_db: float = 30.0
    detector_s: float = 0.01
    control_period_s: float = 0.001


@dataclass(frozen=True)
class FadingConfig:
    enabled: bool = True
    rate_hz: float = 0.2
    depth_db: float = 6.0


@dataclass(frozen=True)
class InterfererConfig:
    offset_hz: float = 800.0
    level_db: float = -6.0
    source: Optional[str] = None  # WAV path; synthetic speech when None
    placement: str = "anywhere"  # or "silence": only inside labelled silence
    bursts: int = 2  # keyed-up transmissions at random times; 0 keeps it on throughout
    burst_s: tuple = (1.0, 8.0)  # burst length range

    def __post_init__(self):
        object.__setattr__(self, "burst_s", tuple(float(v) for v in self.burst_s))
        if self.bursts < 0:
            raise ValueError(f"interferer bursts must be >= 0, got {self.bursts}")
        if not 0 < self.burst_s[0] <= self.burst_s[1]:
            raise ValueError(f"bad interferer burst range {self.burst_s}")
        if abs(self.offset_hz) > 1500:
            raise ValueError(f"interferer offset {self.offset_hz} Hz exceeds 1500 Hz")
        if self.placement not in ("anywhere", "silence"):
            raise ValueError(f"unknown interferer placement {self.placement!r}")


@dataclass(frozen=True)
class ChannelConfig:
    seed: int = 0
    snr_db: Optional[float] = 10.0  # None disables the noise stage
    band_hz: tuple = (150.0, 2850.0)
    bandlimit: bool = True
    agc: AgcConfig = field(default_factory=AgcConfig)
    fading: FadingConfig = field(default_factory=FadingConfig)
    interferer: Optional[InterfererConfig] = None
    drop: Optional[tuple] = None  # (start_sample, length): negative sync tests only

    def __post_init__(self):
        lo, hi = self.band_hz
        if not 0 <= lo < hi:
            raise ValueError(f"bad band {self.band_hz}")
        if hi - lo > SSB_BANDWIDTH_HZ + 1e-9:
            raise ValueError(f"band {self.band_hz} wider than {SSB_BANDWIDTH_HZ} Hz")

    @classmethod
    def identity(cls, seed: int = 0) -> "ChannelConfig":
        return cls(seed=seed, snr_db=None, bandlimit=False,
                   agc=AgcConfig(enabled=False), fading=FadingConfig(enabled=False))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelConfig":
        d = dict(d)
        if "agc" in d:
            d["agc"] = AgcConfig(**d["agc"])
        if "fading" in d:
            d["fading"] = FadingConfig(**d["fading"])
        if d.get("interferer") is not None:
            d["interferer"] = InterfererConfig(**d["interferer"])
        if "band_hz" in d:
            d["band_hz"] = tuple(d["band_hz"])
        if d.get("drop") is not None:
            d["drop"] = tuple(d["drop"])
        return cls(**d)


def _stage_rngs(seed: int):
    names = ("fading", "noise", "interferer")
    children = np.random.SeedSequence(int(seed)).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def ssb_filter(rate_hz: int, band_hz=(150.0, 2850.0)) -> FirFilter:
    lo, hi = band_hz
    # 100 Hz transitions centred on the band edges; 60 dB keeps out-of-band
    # energy below -50 dB after the transition region.
    if lo <= 0:
        return design_lowpass(hi + 50.0, 100.0, 60.0, rate_hz)
    return design_bandpass(lo - 50.0, hi + 50.0, 100.0, 60.0, rate_hz)


def bandlimit_ssb(audio: AudioBuffer, band_hz=(150.0, 2850.0)) -> AudioBuffer:
    """Audio-band equivalent of an LSB transmit/receive path (linear phase)."""
    if audio.sample_rate_hz not in (8000, 16000):
        raise ValueError(f"SSB bandlimiting expects 8 or 16 kHz, got {audio.sample_rate_hz}")
    return apply_fir(audio, ssb_filter(audio.sample_rate_hz, band_hz))


def fading_gain_db(num_samples: int, rate_hz: int, cfg: FadingConfig, rng) -> np.ndarray:
    """Slow log-normal fading: a smooth Gaussian process in dB.

    Sum of eight random-phase sinusoids with frequencies spread around
    ``rate_hz``, scaled to a standard deviation of ``depth_db / 2`` and
    clipped to +-``depth_db``.
    """
    k = 8
    freqs = cfg.rate_hz * rng.uniform(0.5, 1.5, k)
    phases = rng.uniform(0, 2 * np.pi, k)
    t = np.arange(num_samples) / rate_hz
    z = np.zeros(num_samples)
    for f, ph in zip(freqs, phases):
        z += np.cos(2 * np.pi * f * t + ph)
    z *= np.sqrt(2.0 / k)
    return np.clip(0.5 * cfg.depth_db * z, -cfg.depth_db, cfg.depth_db)


def apply_fading(audio: AudioBuffer, cfg: FadingConfig, rng) -> AudioBuffer:
    g = fading_gain_db(len(audio), audio.sample_rate_hz, cfg, rng)
    return audio.with_samples(audio.samples * 10 ** (g / 20))


def active_power(x: np.ndarray, labels: LabelTrack, rate_hz: int) -> float:
    mask = labels.speech_mask(x.size, rate_hz)
    if not mask.any():
        raise ValueError("label track has no speech interval")
    return float(np.mean(x[mask] ** 2))


def add_noise_snr(audio: AudioBuffer, labels: LabelTrack, snr_db: float, seed) -> AudioBuffer:
    """White Gaussian noise scaled so the speech-active SNR is exactly ``snr_db``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = audio.samples
    mask = labels.speech_mask(x.size, audio.sample_rate_hz)
    if not mask.any():
        raise ValueError("label track has no speech interval; SNR undefined")
    p_sig = np.mean(x[mask] ** 2)
    noise = rng.standard_normal(x.size)
    p_noise = np.mean(noise[mask] ** 2)
    noise *= np.sqrt(p_sig / (p_noise * 10 ** (snr_db / 10)))
    return audio.with_samples(x + noise)


def frequency_shift(x: np.ndarray, offset_hz: float, rate_hz: int) -> np.ndarray:
    """Single-sideband frequency translation via the analytic signal."""
    analytic = sps.hilbert(x)
    t = np.arange(x.size) / rate_hz
    return np.real(analytic * np.exp(2j * np.pi * offset_hz * t))


def burst_envelope(n: int, rate: int, bursts: int, burst_s, rng, ramp_s: float = 0.02) -> np.ndarray:
    """0/1 keying envelope of ``bursts`` random on-periods with raised-cosine edges."""
    on = np.zeros(n)
    for _ in range(bursts):
        length = min(n, int(round(rng.uniform(*burst_s) * rate)))
        start = int(rng.integers(0, n - length + 1))
        on[start: start + length] = 1.0
    ramp = max(1, int(round(ramp_s * rate)))
    win = np.hanning(2 * ramp + 1)
    return np.convolve(on, win / win.sum(), mode="same")


def add_interferer(audio: AudioBuffer, cfg: InterfererConfig, seed, labels: LabelTrack = None,
                   source: Optional[AudioBuffer] = None, band_hz=(150.0, 2850.0)) -> AudioBuffer:
    """Mix a frequency-shifted, bandlimited talker at ``level_db`` re the active region.

    The reference level is the speech-active power of ``audio`` when labels are
    given, otherwise its overall power.  With ``cfg.bursts > 0`` the talker is
    keyed on only for that many bursts (may overlap) with 20 ms ramps.
    """
    from .synthspeech import synth_utterance

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    rate = audio.sample_rate_hz
    x = audio.samples
    if source is None:
        if cfg.source is not None:
            from .audio_io import read_wav
            from .dsp import resample
            source = read_wav(cfg.source)
            if source.sample_rate_hz != rate:
                source = resample(source, rate)
        else:
            source = synth_utterance(x.size / rate, rate, rng)
    s = np.resize(source.samples, x.size) if len(source) < x.size else source.samples[: x.size]
    s = frequency_shift(s, cfg.offset_hz, rate)
    if rate in (8000, 16000):
        s = bandlimit_ssb(AudioBuffer(s, rate), band_hz).samples
    if cfg.bursts > 0:
        s = s * burst_envelope(x.size, rate, cfg.bursts, cfg.burst_s, rng)
    if cfg.placement == "silence":
        if labels is None:
            raise ValueError("placement 'silence' needs the label track")
        s = s * ~labels.speech_mask(x.size, rate)
    ref = active_power(x, labels, rate) if labels is not None else float(np.mean(x ** 2))
    p_s = float(np.mean(s[s != 0] ** 2)) if np.any(s != 0) else 0.0
    if p_s == 0 or ref == 0:
        return audio.with_samples(x.copy())
    s *= np.sqrt(ref / p_s * 10 ** (cfg.level_db / 10))
    return audio.with_samples(x + s)


def agc(audio: AudioBuffer, cfg: AgcConfig = AgcConfig()) -> tuple[AudioBuffer, np.ndarray]:
    """Receiver AGC; returns (output, per-sample linear gain).

    An RMS detector (``detector_s`` time constant) sets the desired gain
    ``target / rms`` clipped to [1, max_gain].  The applied gain follows it in
    the dB domain with one-pole attack (gain falling) and release (gain
    rising) smoothing, evaluated on a ``control_period_s`` grid and linearly
    interpolated in between.  Per-sample dB steps are therefore bounded by
    ``max_gain_db * (1 - exp(-period / attack_s))`` per control period.
    The receiver is taken to be running before the first sample: the
    detector starts at the power of the first ``detector_s`` and the gain at
    the matching desired value.
    """
    if cfg.target_rms <= 0:
        raise ValueError("AGC target RMS must be positive")
    x = audio.samples
    rate = audio.sample_rate_hz
    if not cfg.enabled or x.size == 0:
        return audio.with_samples(x.copy()), np.ones(x.size)
    a_det = 1.0 - np.exp(-1.0 / (cfg.detector_s * rate))
    p0 = float(np.mean(x[: max(1, int(round(cfg.detector_s * rate)))] ** 2))
    env, _ = sps.lfilter([a_det], [1.0, a_det - 1.0], x ** 2, zi=[(1.0 - a_det) * p0])
    step = max(1, int(round(cfg.control_period_s * rate)))
    ctrl_idx = np.arange(0, x.size, step)
    level = np.sqrt(np.maximum(env[ctrl_idx], 0.0))
    with np.errstate(divide="ignore"):
        desired = 20 * np.log10(cfg.target_rms) - 20 * np.log10(level)
    desired = np.clip(np.nan_to_num(desired, posinf=cfg.max_gain_db), 0.0, cfg.max_gain_db)
    c_att = 1.0 - np.exp(-step / (cfg.attack_s * rate))
    c_rel = 1.0 - np.exp(-step / (cfg.release_s * rate))
    g_db = np.empty(desired.size)
    g = float(desired[0])
    for i, d in enumerate(desired.tolist()):
        g += (c_att if d < g else c_rel) * (d - g)
        g_db[i] = g
    gain_db = np.interp(np.arange(x.size), ctrl_idx, g_db)
    gain = 10 ** (gain_db / 20)
    return audio.with_samples(x * gain), gain


def inject_drop(audio: AudioBuffer, start: int, length: int) -> AudioBuffer:
    """Remove ``length`` samples starting at ``start`` (simulated stream loss)."""
    x = audio.samples
    return audio.with_samples(np.concatenate([x[:start], x[start + length:]]))


def simulate_channel(clean: AudioBuffer, labels: LabelTrack, cfg: ChannelConfig,
                     interferer_source: Optional[AudioBuffer] = None,
                     return_gain: bool = False):
    """Run the full receive chain.  Output length equals input length unless
    ``cfg.drop`` requests a sample drop."""
    rngs = _stage_rngs(cfg.seed)
    y = clean
    if cfg.bandlimit:
        y = bandlimit_ssb(y, cfg.band_hz)
    if cfg.fading.enabled:
        y = apply_fading(y, cfg.fading, rngs["fading"])
    if cfg.snr_db is not None:
        y = add_noise_snr(y, labels, cfg.snr_db, rngs["noise"])
    if cfg.interferer is not None:
        y = add_interferer(y, cfg.interferer, rngs["interferer"], labels,
                           source=interferer_source, band_hz=cfg.band_hz)
    y, gain = agc(y, cfg.agc)
    if cfg.drop is not None:
        y = inject_drop(y, *cfg.drop)
        gain = np.concatenate([gain[: cfg.drop[0]], gain[cfg.drop[0] + cfg.drop[1]:]])
    return (y, gain) if return_gain else y


def with_seed(cfg: ChannelConfig, seed: int, **changes) -> ChannelConfig:
    return replace(cfg, seed=seed, **changes)
