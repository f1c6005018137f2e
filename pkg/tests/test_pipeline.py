import json

import numpy as np
import pytest

from diarkit import cli
from diarkit.backend import train_backend
from diarkit.embedstore import SynthConfig, emb_read, emb_write, synth_corpus
from diarkit.errors import ConfigError, DataError
from diarkit.metrics import der_corpus
from diarkit.pipeline import (
    PipelineConfig,
    load_config,
    read_sim_file,
    run_pipeline,
    verify_run,
)
from diarkit.timeline import rttm_parse
from diarkit.windowing import WindowPlan

FIXTURE_WINDOW = WindowPlan(5.0, 1.0, 1.0)


def language_fixture(seed=0, n_recordings=6, n_classes=5, dim=48, turns=14,
                     between=3.0):
    cfg = SynthConfig(
        n_recordings=n_recordings,
        n_classes=n_classes,
        classes_per_recording=min(3, n_classes),
        turns_per_recording=turns,
        between_class_std=between,
        within_class_std=1.0,
        dim=dim,
        seed=seed,
        window=FIXTURE_WINDOW,
    )
    return cfg, synth_corpus(cfg)


def split_corpus(embeddings, references, speech, train_recs):
    train_idx = [
        i for i, m in enumerate(embeddings.meta) if m.recording_id in train_recs
    ]
    eval_idx = [
        i for i, m in enumerate(embeddings.meta) if m.recording_id not in train_recs
    ]
    from diarkit.embedstore import EmbeddingSet

    train = EmbeddingSet(embeddings.rows[train_idx], [embeddings.meta[i] for i in train_idx])
    eval_ = EmbeddingSet(embeddings.rows[eval_idx], [embeddings.meta[i] for i in eval_idx])
    eval_refs = {r: a for r, a in references.items() if r not in train_recs}
    eval_speech = {r: s for r, s in speech.items() if r not in train_recs}
    return train, eval_, eval_refs, eval_speech


class TestConfig:
    def test_defaults(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text('track = "speaker"\n')
        config = load_config(path)
        assert config.backend == "plda"
        assert config.vbx is None  # speaker track: off unless requested
        assert config.window == WindowPlan(5.0, 1.0, 1.0)

    def test_language_track_enables_vbx(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text('track = "language"\n')
        config = load_config(path)
        assert config.vbx is not None
        assert (config.vbx.p_loop, config.vbx.fa, config.vbx.fb) == (0.9, 9.0, 4.0)

    def test_full_file(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text(
            """
track = "language"
backend = "plda"
seed = 7

[window]
length = 5.0
shift = 1.0
min_window = 1.0

[ahc]
threshold = 0.0
max_clusters = 7

[vbx]
p_loop = 0.9
fa = 9.0
fb = 4.0

[ensemble]
weights = [0.5, 0.25, 0.25]
"""
        )
        config = load_config(path)
        assert config.seed == 7
        assert config.ahc.max_clusters == 7
        assert config.ensemble_weights == (0.5, 0.25, 0.25)

    def test_vbx_section_implies_enabled(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text('track = "speaker"\n\n[vbx]\nfa = 2.0\n')
        config = load_config(path)
        assert config.vbx is not None and config.vbx.fa == 2.0
        path.write_text('track = "language"\n\n[vbx]\nenabled = false\n')
        assert load_config(path).vbx is None

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text("track = \"speaker\"\ntypo_key = 3\n")
        with pytest.raises(ConfigError, match="typo_key"):
            load_config(path)

    def test_language_requires_plda(self):
        with pytest.raises(ConfigError):
            PipelineConfig(track="language", backend="cosine")

    def test_vbx_requires_plda(self):
        from diarkit.clustering import VbxConfig

        with pytest.raises(ConfigError):
            PipelineConfig(track="speaker", backend="cosine", vbx=VbxConfig())

    def test_config_hash_stable(self):
        a = PipelineConfig(track="speaker", seed=1)
        b = PipelineConfig(track="speaker", seed=1)
        c = PipelineConfig(track="speaker", seed=2)
        assert a.hash() == b.hash() != c.hash()


class TestRunPipeline:
    def fitted(self, tmp_path, seed=0):
        cfg, (embeddings, references, speech) = language_fixture(seed=seed)
        train_recs = {"synth000", "synth001", "synth002"}
        train, eval_, eval_refs, eval_speech = split_corpus(
            embeddings, references, speech, train_recs
        )
        model = train_backend(train, None, 4)
        return cfg, model, eval_, eval_refs, eval_speech

    def test_language_pipeline_low_der(self, tmp_path):
        _, model, eval_, eval_refs, eval_speech = self.fitted(tmp_path)
        config = PipelineConfig(track="language", window=FIXTURE_WINDOW, seed=0)
        annotations, manifest = run_pipeline(
            config, eval_speech, eval_, model, tmp_path / "run"
        )
        pairs = [(eval_refs[a.recording_id], a) for a in annotations]
        report = der_corpus(pairs)
        assert report.der < 0.05
        assert set(manifest.outputs) == {
            "windows.json", "sim.f32", "ahc.rttm", "vbx.rttm", "final.rttm"
        }

    def test_determinism_bit_identical(self, tmp_path):
        _, model, eval_, _, eval_speech = self.fitted(tmp_path)
        config = PipelineConfig(track="language", window=FIXTURE_WINDOW, seed=0)
        run_pipeline(config, eval_speech, eval_, model, tmp_path / "a")
        run_pipeline(config, eval_speech, eval_, model, tmp_path / "b")
        rttm_a = (tmp_path / "a" / "final.rttm").read_bytes()
        rttm_b = (tmp_path / "b" / "final.rttm").read_bytes()
        assert rttm_a == rttm_b
        man_a = json.loads((tmp_path / "a" / "run_manifest.json").read_text())
        man_b = json.loads((tmp_path / "b" / "run_manifest.json").read_text())
        assert man_a["outputs"] == man_b["outputs"]

    def test_manifest_verifies_and_detects_tampering(self, tmp_path):
        _, model, eval_, _, eval_speech = self.fitted(tmp_path)
        config = PipelineConfig(track="language", window=FIXTURE_WINDOW, seed=0)
        run_pipeline(config, eval_speech, eval_, model, tmp_path / "run")
        assert verify_run(tmp_path / "run") == []
        target = tmp_path / "run" / "final.rttm"
        target.write_bytes(target.read_bytes() + b"SPEAKER x 1 0.000 1.000 <NA> <NA> q <NA> <NA>\n")
        assert verify_run(tmp_path / "run") == ["final.rttm"]

    def test_misalignment_reports_first_window(self, tmp_path):
        _, model, eval_, _, eval_speech = self.fitted(tmp_path)
        config = PipelineConfig(track="language", window=FIXTURE_WINDOW, seed=0)
        bad_speech = {
            rec: segs[:-1] if len(segs) > 1 else segs
            for rec, segs in eval_speech.items()
        }
        with pytest.raises(DataError, match="window"):
            run_pipeline(config, bad_speech, eval_, model, tmp_path / "run")

    def test_vbx_merges_oversplit_ahc(self, tmp_path):
        # single-language recordings; an AHC threshold inside the same-class
        # score range fragments each recording, VBx merges the shards back
        cfg = SynthConfig(
            n_recordings=8,
            n_classes=4,
            classes_per_recording=1,
            turns_per_recording=12,
            between_class_std=2.0,
            within_class_std=1.0,
            dim=48,
            seed=21,
            window=FIXTURE_WINDOW,
        )
        embeddings, references, speech = synth_corpus(cfg)
        train_recs = {f"synth{i:03d}" for i in range(6)}
        train, eval_, _, eval_speech = split_corpus(
            embeddings, references, speech, train_recs
        )
        model = train_backend(train, None, 4)

        from diarkit.clustering import AhcConfig

        base = dict(window=FIXTURE_WINDOW, seed=0, ahc=AhcConfig(threshold=5.0))
        disabled = PipelineConfig(track="speaker", vbx=None, **base)
        enabled = PipelineConfig(track="language", **base)  # VBx on by default
        run_pipeline(disabled, eval_speech, eval_, model, tmp_path / "off")
        run_pipeline(enabled, eval_speech, eval_, model, tmp_path / "on")

        def label_count(path):
            return sum(
                len(ann.labels()) for ann in rttm_parse(path.read_bytes())
            )

        n_ahc = label_count(tmp_path / "off" / "final.rttm")
        n_vbx = label_count(tmp_path / "on" / "final.rttm")
        assert n_vbx < n_ahc

    def test_easy_three_class_fixture(self, tmp_path):
        # 3 classes at 10:1 separation; dim kept low because synthetic
        # Gaussians at higher dim become degenerate after length-norm
        cfg = SynthConfig(
            n_recordings=6,
            n_classes=3,
            classes_per_recording=3,
            turns_per_recording=12,
            between_class_std=10.0,
            within_class_std=1.0,
            dim=16,
            seed=2024,
            window=FIXTURE_WINDOW,
        )
        embeddings, references, speech = synth_corpus(cfg)
        train_recs = {f"synth{i:03d}" for i in range(3)}
        train, eval_, eval_refs, eval_speech = split_corpus(
            embeddings, references, speech, train_recs
        )
        model = train_backend(train, None, 2)
        config = PipelineConfig(track="language", window=FIXTURE_WINDOW, seed=0)
        annotations, _ = run_pipeline(config, eval_speech, eval_, model, tmp_path / "r")
        report = der_corpus([(eval_refs[a.recording_id], a) for a in annotations])
        assert report.der < 0.05

    def test_single_window_recording(self, tmp_path):
        _, model, eval_, _, eval_speech = self.fitted(tmp_path)
        from diarkit.embedstore import EmbeddingSet
        from diarkit.timeline import Segment

        rec = eval_.recordings()[0]
        sub = eval_.select_recording(rec)
        one = EmbeddingSet(sub.rows[:1], [sub.meta[0]])
        speech = {rec: [Segment(sub.meta[0].window.onset_ms, sub.meta[0].window.duration_ms)]}
        config = PipelineConfig(track="language", window=FIXTURE_WINDOW, seed=0)
        annotations, _ = run_pipeline(config, speech, one, model, tmp_path / "one")
        assert len(annotations) == 1
        assert len(annotations[0]) == 1

    def test_sim_artifact_round_trips(self, tmp_path):
        _, model, eval_, _, eval_speech = self.fitted(tmp_path)
        config = PipelineConfig(track="language", window=FIXTURE_WINDOW, seed=0)
        run_pipeline(config, eval_speech, eval_, model, tmp_path / "run")
        matrices = read_sim_file(tmp_path / "run" / "sim.f32")
        sizes = [len(eval_.select_recording(r)) for r in eval_.recordings()]
        assert [m.shape[0] for m in matrices] == sizes
        for m in matrices:
            assert np.abs(m - m.T).max() < 1e-6


class TestCli:
    def synth_and_train(self, tmp_path):
        assert cli.main([
            "synth", "--out-dir", str(tmp_path / "train"), "--recordings", "3",
            "--classes", "4", "--turns", "10", "--dim", "32", "--seed", "5",
        ]) == 0
        assert cli.main([
            "train-backend", "--embeddings", str(tmp_path / "train" / "embeddings.dkeb"),
            "--lda-dim", "3", "-o", str(tmp_path / "model.json"),
        ]) == 0

    def test_full_cli_flow(self, tmp_path, capsys):
        self.synth_and_train(tmp_path)
        assert cli.main([
            "synth", "--out-dir", str(tmp_path / "eval"), "--recordings", "2",
            "--classes", "4", "--turns", "10", "--dim", "32", "--seed", "6",
        ]) == 0
        config = tmp_path / "c.toml"
        config.write_text('track = "language"\nseed = 1\n')
        assert cli.main([
            "run", "--config", str(config),
            "--vad", str(tmp_path / "eval" / "speech.vad"),
            "--embeddings", str(tmp_path / "eval" / "embeddings.dkeb"),
            "--model", str(tmp_path / "model.json"),
            "--out-dir", str(tmp_path / "run"),
        ]) == 0
        assert cli.main([
            "score", "--ref", str(tmp_path / "eval" / "reference.rttm"),
            "--hyp", str(tmp_path / "run" / "final.rttm"),
            "--ci", "--n-bootstrap", "50", "--seed", "3",
        ]) == 0
        out = capsys.readouterr().out
        doc = json.loads(out[out.index("{") : out.rindex("}") + 1])
        assert "der" in doc and "ci" in doc

    def test_windows_subcommand(self, tmp_path, capsys):
        lab = tmp_path / "f.lab"
        lab.write_text("0.0 7.0 speech\n10.0 12.5\n")
        assert cli.main([
            "windows", "--lab", str(lab), "--recording-id", "recX",
            "--win", "5", "--shift", "1", "--min-window", "1",
        ]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc[0] == {"recording_id": "recX", "onset_ms": 0, "duration_ms": 5000}
        assert len(doc) == 3 + 1  # [0,7] -> 3 windows, [10,12.5] -> 1 short window

    def test_ensemble_subcommand(self, tmp_path):
        rttm = tmp_path / "h.rttm"
        rttm.write_bytes(b"SPEAKER r 1 0.000 5.000 <NA> <NA> a <NA> <NA>\n")
        out = tmp_path / "combined.rttm"
        assert cli.main([
            "ensemble", str(rttm), str(rttm), str(rttm), "-o", str(out),
        ]) == 0
        combined = rttm_parse(out.read_bytes())
        assert combined[0].label_coverage(combined[0].labels()[0]) == [(0, 5000)]

    def test_ensemble_weights_normalized(self, tmp_path):
        h1 = tmp_path / "h1.rttm"
        h1.write_bytes(b"SPEAKER r 1 0.000 5.000 <NA> <NA> a <NA> <NA>\n")
        h2 = tmp_path / "h2.rttm"
        h2.write_bytes(b"SPEAKER r 1 0.000 6.000 <NA> <NA> q <NA> <NA>\n")
        raw = tmp_path / "raw.rttm"
        scaled = tmp_path / "scaled.rttm"
        # unnormalized weights must behave like their normalized counterparts
        assert cli.main(["ensemble", str(h1), str(h2), "--weights", "3,1",
                         "-o", str(raw)]) == 0
        assert cli.main(["ensemble", str(h1), str(h2), "--weights", "0.75,0.25",
                         "-o", str(scaled)]) == 0
        assert raw.read_bytes() == scaled.read_bytes()
        assert cli.main(["ensemble", str(h1), str(h2), "--weights", "1,-1",
                         "-o", str(raw)]) == 2

    def test_loss_subcommand(self, tmp_path, capsys):
        from diarkit.embedstore import EmbeddingSet, RowMeta
        from diarkit.timeline import Segment

        def write_matrix(name, matrix):
            matrix = np.asarray(matrix, dtype=np.float32)
            meta = [RowMeta("m", Segment(1000 * i, 1000)) for i in range(len(matrix))]
            emb_write(EmbeddingSet(matrix, meta), tmp_path / name)
            return str(tmp_path / name)

        pred = write_matrix("pred.dkeb", [[0.9, 0.1]])
        ref = write_matrix("ref.dkeb", [[0.0, 1.0]])
        mix = write_matrix("mix.dkeb", np.ones((2, 8)))
        src = write_matrix("src.dkeb", np.ones((2, 8)))
        assert cli.main([
            "loss", "pixit", "--pred", pred, "--ref", ref,
            "--mixtures", mix, "--sources", src, "--lam", "0.1",
            "--reconstruction", "mse",
        ]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["pit"]["loss"] == pytest.approx(0.105361, abs=1e-6)
        assert doc["pit"]["permutation"] == [1, 0]
        assert doc["pixit"]["loss"] == pytest.approx(0.1 * doc["pit"]["loss"], abs=1e-9)

    def test_exit_code_config_error(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("track = \"nope\"\n")
        code = cli.main([
            "run", "--config", str(bad), "--vad", "x", "--embeddings", "y",
            "--out-dir", str(tmp_path / "r"),
        ])
        assert code == 2

    def test_exit_code_data_error(self, tmp_path):
        corrupt = tmp_path / "corrupt.dkeb"
        corrupt.write_bytes(b"JUNKJUNKJUNK")
        code = cli.main([
            "train-backend", "--embeddings", str(corrupt),
            "-o", str(tmp_path / "m.json"),
        ])
        assert code == 3

    def test_score_pairs_and_cluster_and_vbx(self, tmp_path):
        self.synth_and_train(tmp_path)
        eval_dir = tmp_path / "train"
        emb_path = str(eval_dir / "embeddings.dkeb")
        model_path = str(tmp_path / "model.json")
        assert cli.main([
            "score-pairs", "--embeddings", emb_path, "--model", model_path,
            "-o", str(tmp_path / "sim.f32"),
        ]) == 0
        sizes = [len(s) for s in read_sim_file(tmp_path / "sim.f32")]
        emb = emb_read(emb_path)
        assert sizes == [len(emb.select_recording(r)) for r in emb.recordings()]
        assert cli.main([
            "cluster", "--embeddings", emb_path, "--model", model_path,
            "--threshold", "0", "-o", str(tmp_path / "ahc.rttm"),
        ]) == 0
        assert cli.main([
            "vbx", "--embeddings", emb_path, "--model", model_path,
            "--init", str(tmp_path / "ahc.rttm"), "-o", str(tmp_path / "vbx.rttm"),
        ]) == 0
        assert rttm_parse((tmp_path / "vbx.rttm").read_bytes())
