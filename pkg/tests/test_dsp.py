import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hfsad.dsp import (AudioBuffer, StftParams, TooShortError, apply_fir, design_bandpass,
                       design_highpass, design_lowpass, FirFilter, istft, mel_filterbank,
                       mel_smooth, resample, rms, stft)

PARAMS = StftParams(1024, 512, 256)


def tone(freq, dur=1.0, rate=8000, amp=0.5):
    t = np.arange(int(dur * rate)) / rate
    return AudioBuffer(amp * np.sin(2 * np.pi * freq * t), rate)


def steady_rms(x, skip):
    return rms(x[skip:-skip])


class TestAudioBuffer:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            AudioBuffer(np.array([0.0, np.nan]), 8000)

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            AudioBuffer(np.zeros(4), 0)

    def test_pipeline_rate(self):
        AudioBuffer(np.zeros(4), 12000).require_pipeline_rate()
        with pytest.raises(ValueError):
            AudioBuffer(np.zeros(4), 44100).require_pipeline_rate()


class TestStft:
    def test_frame_count(self):
        x = AudioBuffer(np.zeros(8000), 8000)
        assert stft(x, PARAMS).num_frames == 1 + (8000 - 512) // 256

    def test_bin_count(self):
        assert stft(tone(1000), PARAMS).frames.shape[1] == 513

    def test_sine_peak_bin(self):
        spec = stft(tone(1000), PARAMS)
        assert np.all(np.argmax(np.abs(spec.frames), axis=1) == 128)

    def test_zero_input(self):
        assert not np.any(stft(AudioBuffer(np.zeros(4000), 8000), PARAMS).frames)

    def test_too_short(self):
        with pytest.raises(TooShortError, match="short"):
            stft(AudioBuffer(np.zeros(100), 8000), PARAMS)

    def test_parseval(self, rng):
        x = AudioBuffer(rng.standard_normal(16000), 8000)
        spec = stft(x, PARAMS)
        w = PARAMS.analysis_window()
        n = spec.num_frames
        frames = np.stack([x.samples[t * 256: t * 256 + 512] * w for t in range(n)])
        assert spec.energy() == pytest.approx(np.sum(frames ** 2), rel=0.01)

    def test_round_trip(self, rng):
        x = AudioBuffer(rng.standard_normal(16000), 8000)
        y = istft(stft(x, PARAMS))
        assert len(y) == (stft(x, PARAMS).num_frames - 1) * 256 + 512
        interior = slice(512, len(y) - 512)
        assert np.max(np.abs(y.samples[interior] - x.samples[interior])) <= 1e-6

    def test_silence_round_trip(self):
        y = istft(stft(AudioBuffer(np.zeros(4096), 8000), PARAMS))
        assert not np.any(y.samples)

    def test_zeroed_bins_give_silence(self, rng):
        spec = stft(AudioBuffer(rng.standard_normal(4096), 8000), PARAMS)
        out = istft(type(spec)(np.zeros_like(spec.frames), spec.params, spec.sample_rate_hz))
        assert not np.any(out.samples)

    def test_non_cola_rejected(self, rng):
        p = StftParams(1024, 512, 384)
        with pytest.raises(ValueError, match="overlap-add"):
            istft(stft(AudioBuffer(rng.standard_normal(4096), 8000), p))

    def test_speech_shaped_noise_round_trip(self, rng):
        from scipy.signal import lfilter
        x = lfilter([1.0], [1.0, -0.9], rng.standard_normal(16000)) * 0.1
        y = istft(stft(AudioBuffer(x, 8000), PARAMS)).samples
        assert np.max(np.abs(y[512:-512] - x[512:y.size - 512])) <= 1e-6

    @settings(max_examples=25, deadline=None)
    @given(shift=st.sampled_from([64, 128, 256]), n=st.integers(1500, 5000),
           seed=st.integers(0, 2 ** 31))
    def test_round_trip_property(self, shift, n, seed):
        x = np.random.default_rng(seed).uniform(-1, 1, n)
        p = StftParams(512, 512, shift)
        y = istft(stft(AudioBuffer(x, 8000), p)).samples
        assert np.max(np.abs(y[512:-512] - x[512:y.size - 512]), initial=0.0) <= 1e-6


class TestFirDesign:
    def test_lowpass_stopband(self):
        fir = design_lowpass(4000, 400, 60, 16000)
        y = apply_fir(tone(5000, 2.0, 16000), fir)
        x = tone(5000, 2.0, 16000)
        skip = fir.num_taps
        assert 20 * np.log10(steady_rms(y.samples, skip) / steady_rms(x.samples, skip)) <= -57

    def test_lowpass_passband(self):
        fir = design_lowpass(2700, 400, 60, 8000)
        x = tone(1000, 2.0)
        y = apply_fir(x, fir)
        skip = fir.num_taps
        assert abs(20 * np.log10(steady_rms(y.samples, skip) / steady_rms(x.samples, skip))) <= 1

    def test_response_contract(self):
        fir = design_lowpass(2000, 300, 60, 8000)
        stop = fir.response_db(np.linspace(2150, 4000, 200), 8000)
        passb = fir.response_db(np.linspace(0, 1850, 200), 8000)
        assert stop.max() <= -57
        assert np.abs(passb).max() <= 1

    def test_symmetric_taps(self):
        for fir in (design_lowpass(1000, 200, 60, 8000), design_highpass(120, 100, 60, 8000),
                    design_bandpass(150, 2850, 100, 60, 8000)):
            h = fir.coefficients
            assert np.array_equal(h, h[::-1])
            assert fir.is_linear_phase

    def test_infeasible(self):
        with pytest.raises(ValueError, match="taps"):
            design_lowpass(1000, 0.5, 80, 16000)

    def test_bad_cutoff(self):
        with pytest.raises(ValueError):
            design_lowpass(5000, 100, 60, 8000)

    def test_identity(self, rng):
        x = AudioBuffer(rng.standard_normal(100), 8000)
        assert np.array_equal(apply_fir(x, FirFilter(np.array([1.0]))).samples, x.samples)

    def test_highpass_removes_dc(self):
        fir = design_highpass(120, 100, 60, 8000)
        x = AudioBuffer(np.full(16000, 0.5), 8000)
        y = apply_fir(x, fir)
        skip = fir.num_taps
        assert steady_rms(y.samples, skip) <= 0.01 * 0.5

    def test_linearity(self, rng):
        fir = design_lowpass(1000, 200, 60, 8000)
        a = AudioBuffer(rng.standard_normal(2000), 8000)
        b = AudioBuffer(rng.standard_normal(2000), 8000)
        lhs = apply_fir(a.with_samples(a.samples + b.samples), fir).samples
        rhs = apply_fir(a, fir).samples + apply_fir(b, fir).samples
        assert np.max(np.abs(lhs - rhs)) <= 1e-9

    def test_no_onset_shift(self):
        fir = design_lowpass(3000, 400, 60, 8000)
        x = np.zeros(2001)
        x[1000] = 1.0
        y = apply_fir(AudioBuffer(x, 8000), fir).samples
        assert len(y) == len(x)
        assert np.argmax(np.abs(y)) == 1000


class TestResample:
    def test_tone_amplitude(self):
        y = resample(tone(1000, 2.0, 16000), 8000)
        assert len(y) == 16000
        skip = 400
        ref = steady_rms(tone(1000, 2.0, 8000).samples, skip)
        assert abs(20 * np.log10(steady_rms(y.samples, skip) / ref)) <= 0.5

    def test_alias_suppressed(self):
        x = tone(5000, 2.0, 16000)
        y = resample(x, 8000)
        assert 20 * np.log10(steady_rms(y.samples, 400) / steady_rms(x.samples, 400)) <= -50

    def test_same_rate_identity(self, rng):
        x = AudioBuffer(rng.standard_normal(100), 8000)
        assert np.array_equal(resample(x, 8000).samples, x.samples)

    def test_length(self, rng):
        x = AudioBuffer(rng.standard_normal(12001), 12000)
        assert abs(len(resample(x, 8000)) - round(12001 * 8000 / 12000)) <= 1

    def test_huge_ratio_rejected(self):
        with pytest.raises(ValueError):
            resample(AudioBuffer(np.zeros(1000), 12001), 8000)

    def test_up_down_round_trip(self, rng):
        # band-limited content survives 8k -> 16k -> 8k
        from scipy.signal import firwin, lfilter
        x = lfilter(firwin(255, 2500, fs=8000), [1.0], rng.standard_normal(16000))
        buf = AudioBuffer(x, 8000)
        back = resample(resample(buf, 16000), 8000).samples
        err = back[500:-500] - x[500:-500]
        assert 20 * np.log10(rms(err) / rms(x[500:-500])) <= -50


class TestMel:
    def test_shapes_and_triangles(self):
        fb = mel_filterbank(40, 1024, 8000)
        assert fb.weights.shape == (40, 513)
        assert np.all(fb.weights >= 0)
        assert np.all(fb.weights.sum(axis=1) > 0)
        assert np.all(np.diff(fb.center_hz) > 0)

    def test_zero_frame(self):
        fb = mel_filterbank(40, 1024, 8000)
        assert not np.any(mel_smooth(np.zeros(513), fb))

    def test_flat_spectrum(self):
        fb = mel_filterbank(40, 1024, 8000)
        assert np.allclose(mel_smooth(np.ones(513), fb), fb.weights.sum(axis=1))

    def test_impulse(self):
        fb = mel_filterbank(40, 1024, 8000)
        frame = np.zeros(513)
        frame[200] = 1.0
        out = mel_smooth(frame, fb)
        assert np.array_equal(out > 0, fb.weights[:, 200] > 0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            mel_smooth(np.ones(257), mel_filterbank(40, 1024, 8000))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2 ** 31))
    def test_monotone(self, seed):
        r = np.random.default_rng(seed)
        fb = mel_filterbank(40, 1024, 8000)
        a = r.uniform(0, 1, 513)
        b = a + r.uniform(0, 1, 513)
        assert np.all(mel_smooth(b, fb) >= mel_smooth(a, fb))
