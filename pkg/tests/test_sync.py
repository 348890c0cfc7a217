import numpy as np
import pytest

from hfsad.channel import inject_drop
from hfsad.dsp import AudioBuffer, stft
from hfsad.markers import MarkerHypothesis, detect_markers
from hfsad.sync import (MISSING_MARKER, NO_REASON, REJECTED, TIMING_MISMATCH, VALID, WRONG_ORDER,
                        SyncReport, TransmissionLayout, segment_stream, validate_layout)

M = 32000
OFFSETS = (0, 256 * 250, 256 * 520)


def layout(ids=(0, 1, 2), offsets=OFFSETS):
    spans = tuple((a + M + 4000, b - 2000) for a, b in zip(offsets, offsets[1:]))
    return TransmissionLayout(tuple(ids), tuple(offsets), spans, M, 8000)


def stream(marker_set, rng, lead=0, ids=(0, 1, 2), offsets=OFFSETS, noise=0.02):
    x = np.zeros(lead + offsets[-1] + M + 8000)
    for mid, off in zip(ids, offsets):
        x[lead + off: lead + off + M] = 0.5 * marker_set[mid].waveform.samples
    x += noise * rng.standard_normal(x.size)
    return AudioBuffer(x, 8000)


def run(marker_set, audio, lay):
    return validate_layout(detect_markers(stft(audio, marker_set.params), marker_set), lay)


def hyp(mid, off, score=0.8):
    return MarkerHypothesis(mid, off // 256, off, score)


class TestLayout:
    def test_default_tolerance(self):
        assert layout().tolerance_samples == 128

    def test_tolerance_cap(self):
        with pytest.raises(ValueError, match="16 ms"):
            TransmissionLayout((0, 1), (0, 50000), ((33000, 48000),), M, 8000, 200)

    def test_needs_one_sequence_per_gap(self):
        with pytest.raises(ValueError):
            TransmissionLayout((0, 1, 2), OFFSETS, (), M, 8000)

    def test_round_trip(self):
        lay = layout()
        assert TransmissionLayout.from_dict(lay.to_dict()) == lay

    def test_rescaled(self):
        lay = layout().rescaled(16000)
        assert lay.marker_offsets == tuple(2 * o for o in OFFSETS)
        assert lay.tolerance_samples == 256


class TestValidateLayout:
    def test_clean_stream_valid(self, marker_set, rng):
        rep = run(marker_set, stream(marker_set, rng, lead=1234), layout())
        assert rep.status == VALID
        assert rep.reject_reason == NO_REASON
        assert abs(rep.transmission_offset - 1234) <= 128

    def test_known_delay(self, marker_set, rng):
        rep = run(marker_set, stream(marker_set, rng, lead=1234), layout())
        assert rep.valid and abs(rep.transmission_offset - 1234) <= 128

    def test_missing_final_marker(self, marker_set, rng):
        audio = stream(marker_set, rng)
        x = audio.samples.copy()
        x[OFFSETS[2]:] = 0.02 * rng.standard_normal(x.size - OFFSETS[2])
        assert run(marker_set, audio.with_samples(x), layout()).reject_reason == MISSING_MARKER

    def test_deterministic_and_duplicate_insensitive(self):
        hyps = [hyp(0, 0), hyp(1, OFFSETS[1]), hyp(2, OFFSETS[2])]
        a = validate_layout(hyps, layout())
        b = validate_layout(hyps + hyps[::-1], layout())
        assert a.to_dict() == b.to_dict()

    def test_tie_goes_to_earliest(self):
        hyps = [hyp(0, 0), hyp(1, OFFSETS[1] + 64), hyp(1, OFFSETS[1] - 64), hyp(2, OFFSETS[2])]
        rep = validate_layout(hyps, layout())
        assert rep.matched[1].sample_offset == OFFSETS[1] - 64

    def test_missing_marker(self, marker_set, rng):
        audio = stream(marker_set, rng)
        x = audio.samples.copy()
        x[OFFSETS[1]: OFFSETS[1] + M] = 0.02 * rng.standard_normal(M)
        rep = run(marker_set, audio.with_samples(x), layout())
        assert (rep.status, rep.reject_reason) == (REJECTED, MISSING_MARKER)

    def test_wrong_order(self, marker_set, rng):
        audio = stream(marker_set, rng, ids=(1, 0, 2))
        rep = run(marker_set, audio, layout())
        assert rep.reject_reason == WRONG_ORDER

    def test_drop_gives_timing_mismatch(self, marker_set, rng):
        audio = stream(marker_set, rng)
        dropped = inject_drop(audio, OFFSETS[1] - 3000, 500)
        rep = run(marker_set, dropped, layout())
        assert rep.reject_reason == TIMING_MISMATCH

    def test_hypotheses_tolerance_edge(self):
        lay = layout()
        ok = [hyp(0, 0), hyp(1, OFFSETS[1] + 128), hyp(2, OFFSETS[2] + 128)]
        assert validate_layout(ok, lay).valid
        bad = [hyp(0, 0), hyp(1, OFFSETS[1] + 129), hyp(2, OFFSETS[2])]
        assert validate_layout(bad, lay).reject_reason == TIMING_MISMATCH

    def test_checks_run_in_order(self):
        # missing beats wrong order
        hyps = [hyp(1, 0), hyp(0, OFFSETS[1])]
        assert validate_layout(hyps, layout()).reject_reason == MISSING_MARKER

    def test_best_scoring_candidate_used(self):
        hyps = [hyp(0, 0), hyp(1, 9000, 0.3), hyp(1, OFFSETS[1], 0.9), hyp(2, OFFSETS[2])]
        assert validate_layout(hyps, layout()).valid

    def test_report_round_trip(self, tmp_path):
        rep = validate_layout([hyp(0, 0), hyp(1, OFFSETS[1]), hyp(2, OFFSETS[2])], layout())
        rep.save(tmp_path / "r.json")
        back = SyncReport.load(tmp_path / "r.json")
        assert back.to_dict() == rep.to_dict()


class TestSegmentStream:
    def test_segments_match_layout(self, marker_set, rng):
        lead = 2560
        audio = stream(marker_set, rng, lead=lead)
        rep = run(marker_set, audio, layout())
        segs = segment_stream(audio, rep)
        lay = layout()
        assert [s.sequence_index for s in segs] == [0, 1]
        for seg, (a, b) in zip(segs, lay.sequence_spans):
            assert len(seg.audio) == b - a
            assert seg.global_offset == a + rep.transmission_offset
            ref = audio.samples[seg.global_offset: seg.global_offset + b - a]
            assert np.array_equal(seg.audio.samples, ref)

    def test_zero_pads_past_end(self):
        rep = SyncReport(VALID, aligned_segments=[(90, 110, 0)])
        seg = segment_stream(AudioBuffer(np.ones(100), 8000), rep)[0]
        assert len(seg.audio) == 20
        assert seg.audio.samples[:10].sum() == 10 and not seg.audio.samples[10:].any()

    def test_rejected_stream(self):
        with pytest.raises(ValueError, match="rejected"):
            segment_stream(AudioBuffer(np.ones(100), 8000), SyncReport(REJECTED, MISSING_MARKER))
