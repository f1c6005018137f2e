import dataclasses

import numpy as np
import pytest

from diarkit.backend import similarity_matrix
from diarkit.clustering import AhcConfig, ahc
from diarkit.embedstore import (
    EmbeddingSet,
    RowMeta,
    SynthConfig,
    emb_dumps,
    emb_loads,
    emb_read,
    emb_write,
    mean_by_cluster,
    sample_plda,
    synth_corpus,
    synth_recording,
)
from diarkit.errors import DataError
from diarkit.timeline import Segment
from diarkit.windowing import make_windows
from helpers import adjusted_rand_index


def tiny_set(n=3, dim=4, rec="rec", seed=0):
    rng = np.random.default_rng(seed)
    rows = rng.normal(size=(n, dim)).astype(np.float32)
    meta = [
        RowMeta(rec, Segment(1000 * i, 5000), stream=0, true_label=f"c{i % 2}")
        for i in range(n)
    ]
    return EmbeddingSet(rows, meta)


class TestDkebFormat:
    def test_round_trip_identity(self, tmp_path):
        original = tiny_set()
        path = tmp_path / "x.dkeb"
        emb_write(original, path)
        loaded = emb_read(path)
        assert loaded == original
        assert loaded.rows.dtype == np.float32

    def test_round_trip_byte_exact(self):
        blob = emb_dumps(tiny_set())
        assert emb_dumps(emb_loads(blob)) == blob

    def test_dim_512_accepted(self):
        rows = np.zeros((2, 512), dtype=np.float32)
        meta = [RowMeta("r", Segment(0, 5000)), RowMeta("r", Segment(1000, 5000))]
        loaded = emb_loads(emb_dumps(EmbeddingSet(rows, meta)))
        assert loaded.dim == 512

    def test_corrupted_magic(self):
        blob = bytearray(emb_dumps(tiny_set()))
        blob[:4] = b"NOPE"
        with pytest.raises(DataError):
            emb_loads(bytes(blob))

    def test_truncated_payload(self):
        blob = emb_dumps(tiny_set())
        with pytest.raises(DataError):
            emb_loads(blob[: len(blob) // 2])

    def test_meta_length_mismatch(self):
        blob = emb_dumps(tiny_set())
        with pytest.raises(DataError):
            emb_loads(blob + b" ")

    def test_unsupported_version(self):
        blob = bytearray(emb_dumps(tiny_set()))
        blob[4:6] = (9).to_bytes(2, "little")
        with pytest.raises(DataError):
            emb_loads(bytes(blob))

    def test_writer_rejects_non_finite(self):
        rows = np.array([[np.nan, 0.0]], dtype=np.float32)
        with pytest.raises(DataError):
            EmbeddingSet(rows, [RowMeta("r", Segment(0, 1000))])

    def test_stream_index_preserved(self):
        meta = [RowMeta("r", Segment(0, 5000), stream=2, true_label=None)]
        loaded = emb_loads(emb_dumps(EmbeddingSet(np.ones((1, 3), np.float32), meta)))
        assert loaded.meta[0].stream == 2
        assert loaded.meta[0].true_label is None


class TestMeanByCluster:
    def test_identical_rows(self):
        rows = np.array([[1.0, 2.0], [1.0, 2.0]], dtype=np.float32)
        meta = [RowMeta("r", Segment(0, 1000)), RowMeta("r", Segment(1000, 1000))]
        out = mean_by_cluster(EmbeddingSet(rows, meta), ["a", "a"])
        assert len(out) == 1
        assert (out.rows[0] == rows[0]).all()

    def test_symmetric_rows_cancel(self):
        rows = np.array([[1.0, -2.0], [-1.0, 2.0]], dtype=np.float32)
        meta = [RowMeta("r", Segment(0, 1000)), RowMeta("r", Segment(1000, 1000))]
        out = mean_by_cluster(EmbeddingSet(rows, meta), ["a", "a"])
        assert (out.rows[0] == 0).all()

    def test_singleton_clusters_pass_through(self):
        original = tiny_set(n=3)
        out = mean_by_cluster(original, ["x", "y", "z"])
        assert (out.rows == original.rows).all()
        assert [m.true_label for m in out.meta] == ["x", "y", "z"]

    def test_label_count_mismatch(self):
        with pytest.raises(DataError):
            mean_by_cluster(tiny_set(n=3), ["a"])


class TestSamplePlda:
    def test_shapes_and_determinism(self):
        x1, labels1, means1 = sample_plda(5, 10, 4, 2.0, 1.0, seed=42)
        x2, labels2, means2 = sample_plda(5, 10, 4, 2.0, 1.0, seed=42)
        assert x1.shape == (50, 4)
        assert (x1 == x2).all() and (labels1 == labels2).all() and (means1 == means2).all()

    def test_covariance_structure(self):
        x, labels, means = sample_plda(400, 30, 3, 2.0, 0.5, seed=0)
        class_means = np.stack([x[labels == c].mean(axis=0) for c in range(400)])
        between = np.cov(class_means.T, bias=True)
        assert np.abs(np.diag(between) - 4.0).max() < 0.6
        within = x - means[labels]
        assert abs(float((within**2).mean()) - 0.25) < 0.01


class TestSynth:
    def test_determinism(self):
        cfg = SynthConfig(n_recordings=2, seed=7)
        a = synth_corpus(cfg)
        b = synth_corpus(cfg)
        assert a[0] == b[0]
        assert a[1] == b[1]
        assert a[2] == b[2]

    def test_zero_within_std_degenerate(self):
        cfg = SynthConfig(within_class_std=0.0, seed=1)
        emb, ref, _ = synth_recording(cfg)
        by_label = {}
        for row, meta in zip(emb.rows, emb.meta):
            by_label.setdefault(meta.true_label, []).append(row)
        for rows in by_label.values():
            assert (np.ptp(np.stack(rows), axis=0) == 0).all()

    def test_embedding_count_matches_windows(self):
        cfg = SynthConfig(n_recordings=3, turns_per_recording=8, seed=3)
        emb, _, speech = synth_corpus(cfg)
        expected = sum(len(make_windows(segs, cfg.window)) for segs in speech.values())
        assert len(emb) == expected
        for rec, segs in speech.items():
            windows = emb.select_recording(rec).windows()
            assert windows == make_windows(segs, cfg.window)

    def test_reference_matches_turns(self):
        cfg = SynthConfig(seed=5)
        emb, ref, speech = synth_recording(cfg)
        assert len(ref) == cfg.turns_per_recording
        assert [seg for seg, _ in ref] == speech

    def test_separated_classes_recovered_by_ahc(self):
        cfg = SynthConfig(
            n_classes=3,
            classes_per_recording=3,
            turns_per_recording=12,
            between_class_std=100.0,
            within_class_std=1.0,
            dim=16,
            seed=11,
        )
        emb, _, _ = synth_recording(cfg)
        sim = similarity_matrix(emb, backend="cosine")
        labels = ahc(sim, AhcConfig(threshold=0.5))
        truth = emb.true_labels()
        assert adjusted_rand_index(labels, truth) == 1.0

    def test_recording_first_of_corpus(self):
        cfg = SynthConfig(n_recordings=4, seed=9)
        emb_corpus, refs, _ = synth_corpus(cfg)
        emb_single, ref_single, _ = synth_recording(dataclasses.replace(cfg))
        first = next(iter(refs))
        assert ref_single == refs[first]
        assert emb_single == emb_corpus.select_recording(first)
