import json

import numpy as np
import pytest

from hfsad import __version__, audio_io
from hfsad.cli import main
from hfsad.corpus import read_manifest
from hfsad.labels import LabelTrack

from helpers import mixture

SMALL = ["--set", "corpus.num_transmissions=3", "--set", "corpus.synth_files=4"]


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["corpus", "build", "--out", str(out), "--seed", "3"] + SMALL) == 0
    return out


class TestBasics:
    def test_version(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["--version"])
        assert e.value.code == 0
        assert __version__ in capsys.readouterr().out

    def test_no_command(self):
        with pytest.raises(SystemExit) as e:
            main([])
        assert e.value.code == 1

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as e:
            main(["frobnicate"])
        assert e.value.code == 1

    def test_missing_input_is_data_error(self, tmp_path, capsys):
        assert main(["sad", "--wav", str(tmp_path / "nope.wav"), "--out", str(tmp_path / "o")]) == 2
        assert "error" in capsys.readouterr().err

    def test_bad_override_is_data_error(self, tmp_path):
        assert main(["markers", "build", "--count", "2", "--out", str(tmp_path),
                     "--set", "markers.bogus=1"]) == 2


class TestCorpusCommand:
    def test_manifest(self, small_corpus):
        items = read_manifest(small_corpus / "manifest.jsonl")
        assert [it.split for it in items] == ["dev", "eval", "eval"]
        for it in items:
            assert it.metrics["clipped_samples"] == 0
            assert 0.0 <= it.metrics["snr_db"] <= 10.0
        assert (small_corpus / "markers" / "markers.json").exists()

    def test_deterministic(self, small_corpus, tmp_path):
        assert main(["corpus", "build", "--out", str(tmp_path), "--seed", "3"] + SMALL) == 0
        for name in ("tx0000/received.wav", "tx0002/clean.wav", "tx0001/labels.csv"):
            assert (tmp_path / name).read_bytes() == (small_corpus / name).read_bytes()

    def test_missing_source_dir(self, tmp_path):
        assert main(["corpus", "build", "--out", str(tmp_path),
                     "--source-dir", str(tmp_path / "none")]) == 2


class TestRunAll:
    def test_smoke(self, small_corpus, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(["run-all", "--out", str(out), "--corpus", str(small_corpus)]) == 0
        for name in ("threshold.json", "roc_dev.csv", "roc_dev.svg", "report_eval.json",
                     "report_eval.csv", "sync.json"):
            assert (out / name).exists()
        rep = json.loads((out / "report_eval.json").read_text())
        assert rep["f1"] > 0.7
        assert rep["rt_factor"] < 0.05
        sync = json.loads((out / "sync.json").read_text())
        assert sync["valid"] == 3
        assert "f1" in capsys.readouterr().out

    def test_fixed_threshold(self, small_corpus, tmp_path):
        out = tmp_path / "run"
        assert main(["run-all", "--out", str(out), "--corpus", str(small_corpus),
                     "--threshold", "2.5"]) == 0
        th = json.loads((out / "threshold.json").read_text())
        assert th == {"threshold": 2.5, "source": "override", "dev_eer": None}
        assert not (out / "roc_dev.csv").exists()


class TestTools:
    def test_sync_on_corpus_item(self, small_corpus, tmp_path):
        out = tmp_path / "sync.json"
        rc = main(["sync", "--stream", str(small_corpus / "tx0000/received.wav"),
                   "--markers", str(small_corpus / "markers"),
                   "--layout", str(small_corpus / "tx0000/layout.json"), "--out", str(out)])
        assert rc == 0
        assert json.loads(out.read_text())["status"] == "valid"

    def test_sad_and_score(self, tmp_path):
        audio, labels = mixture(11, 30.0)
        audio_io.write_wav(tmp_path / "a.wav", audio.with_samples(0.5 * audio.samples))
        labels.save(tmp_path / "ref.csv")
        assert main(["sad", "--wav", str(tmp_path / "a.wav"), "--out", str(tmp_path / "hyp.csv"),
                     "--trace", str(tmp_path / "trace.json")]) == 0
        hyp = LabelTrack.load(tmp_path / "hyp.csv")
        assert hyp.duration_s == pytest.approx(30.0)
        assert "score" in json.loads((tmp_path / "trace.json").read_text())
        assert main(["score", "--ref", str(tmp_path / "ref.csv"), "--hyp", str(tmp_path / "hyp.csv"),
                     "--out", str(tmp_path / "s.json")]) == 0
        assert json.loads((tmp_path / "s.json").read_text())["f1"] > 0.7

    def test_score_duration_mismatch(self, tmp_path):
        LabelTrack.from_spans([(1, 2)], 10.0).save(tmp_path / "r.csv")
        LabelTrack.from_spans([(1, 2)], 12.0).save(tmp_path / "h.csv")
        assert main(["score", "--ref", str(tmp_path / "r.csv"), "--hyp", str(tmp_path / "h.csv")]) == 2

    def test_markers_build(self, tmp_path):
        assert main(["markers", "build", "--count", "3", "--out", str(tmp_path)]) == 0
        assert len(json.loads((tmp_path / "markers.json").read_text())["markers"]) == 3

    def test_ingest_record(self, tmp_path):
        from hfsad.ingest import serve_stream
        pcm = np.arange(-5000, 5000, dtype="<i2")
        audio_io.write_pcm16(tmp_path / "s.wav", pcm, 8000)
        with serve_stream(tmp_path / "s.wav", fault_plan="dup:2") as srv:
            rc = main(["ingest", "record", "--endpoint", srv.endpoint, "--out",
                       str(tmp_path / "r.wav"), "--session", str(tmp_path / "sess.json")])
        assert rc == 0
        assert json.loads((tmp_path / "sess.json").read_text())["continuity"] == "discard"
