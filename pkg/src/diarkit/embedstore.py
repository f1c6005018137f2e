"""Embedding sets, the `.dkeb` binary file format and a synthetic
recording generator.

`.dkeb` layout (little-endian):

    magic  b"DKEB"
    u16    version (= 1)
    u32    dim
    u32    n_rows
    f32 x  n_rows * dim row-major embedding matrix
    u64    length of the JSON metadata block
    utf-8  canonical JSON: {"rows": [{...}, ...]} with sorted keys and
           compact separators, one object per row carrying
           duration_ms, label (null allowed), onset_ms, recording_id, stream

The canonical JSON form matters: writers that follow it produce files that
round-trip byte-exactly through read + write.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError
from .timeline import Annotation, Segment
from .windowing import WindowPlan, make_windows

MAGIC = b"DKEB"
VERSION = 1


@dataclass(frozen=True)
class RowMeta:
    """Provenance of one embedding row."""

    recording_id: str
    window: Segment
    stream: int = 0
    true_label: str | None = None

    def __post_init__(self):
        if self.stream < 0:
            raise DataError(f"stream index must be >= 0, got {self.stream}")


class EmbeddingSet:
    """A float32 matrix of fixed-dimension embeddings with per-row provenance."""

    __slots__ = ("dim", "rows", "meta")

    def __init__(self, rows, meta: Sequence[RowMeta]):
        rows = np.ascontiguousarray(np.asarray(rows), dtype=np.float32)
        if rows.ndim != 2:
            raise DataError(f"rows must be a 2-D matrix, got shape {rows.shape}")
        if not np.isfinite(rows).all():
            raise DataError("embedding rows must be finite")
        if len(meta) != rows.shape[0]:
            raise DataError(f"{len(meta)} meta rows for {rows.shape[0]} embeddings")
        self.rows = rows
        self.meta = tuple(meta)
        self.dim = rows.shape[1]

    def __len__(self) -> int:
        return self.rows.shape[0]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, EmbeddingSet)
            and self.meta == other.meta
            and self.rows.shape == other.rows.shape
            and bool((self.rows == other.rows).all())
        )

    def recordings(self) -> list[str]:
        seen: dict[str, None] = {}
        for m in self.meta:
            seen.setdefault(m.recording_id, None)
        return list(seen)

    def select_recording(self, recording_id: str) -> "EmbeddingSet":
        idx = [i for i, m in enumerate(self.meta) if m.recording_id == recording_id]
        return EmbeddingSet(self.rows[idx], [self.meta[i] for i in idx])

    def windows(self) -> list[Segment]:
        return [m.window for m in self.meta]

    def true_labels(self) -> list[str | None]:
        return [m.true_label for m in self.meta]


def emb_dumps(embedding_set: EmbeddingSet) -> bytes:
    """Serialize to canonical `.dkeb` bytes."""
    meta_obj = {
        "rows": [
            {
                "duration_ms": m.window.duration_ms,
                "label": m.true_label,
                "onset_ms": m.window.onset_ms,
                "recording_id": m.recording_id,
                "stream": m.stream,
            }
            for m in embedding_set.meta
        ]
    }
    meta_bytes = json.dumps(
        meta_obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")
    header = MAGIC + struct.pack(
        "<HII", VERSION, embedding_set.dim, len(embedding_set)
    )
    return (
        header
        + embedding_set.rows.tobytes(order="C")
        + struct.pack("<Q", len(meta_bytes))
        + meta_bytes
    )


def emb_loads(data: bytes) -> EmbeddingSet:
    """Parse `.dkeb` bytes; any structural defect raises DataError."""
    if len(data) < 14 or data[:4] != MAGIC:
        raise DataError("not a DKEB file (bad magic)")
    version, dim, n_rows = struct.unpack("<HII", data[4:14])
    if version != VERSION:
        raise DataError(f"unsupported DKEB version {version}")
    matrix_bytes = 4 * dim * n_rows
    if len(data) < 14 + matrix_bytes + 8:
        raise DataError("truncated DKEB payload")
    rows = np.frombuffer(data[14 : 14 + matrix_bytes], dtype="<f4").reshape(n_rows, dim)
    (meta_len,) = struct.unpack("<Q", data[14 + matrix_bytes : 22 + matrix_bytes])
    meta_start = 22 + matrix_bytes
    if len(data) != meta_start + meta_len:
        raise DataError("DKEB metadata length mismatch")
    try:
        meta_obj = json.loads(data[meta_start:].decode("utf-8"))
        raw_rows = meta_obj["rows"]
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise DataError(f"bad DKEB metadata block: {exc}") from None
    if len(raw_rows) != n_rows:
        raise DataError(f"metadata describes {len(raw_rows)} rows, header says {n_rows}")
    meta = [
        RowMeta(
            recording_id=r["recording_id"],
            window=Segment(int(r["onset_ms"]), int(r["duration_ms"])),
            stream=int(r["stream"]),
            true_label=r["label"],
        )
        for r in raw_rows
    ]
    return EmbeddingSet(rows.copy(), meta)


def emb_write(embedding_set: EmbeddingSet, path) -> None:
    Path(path).write_bytes(emb_dumps(embedding_set))


def emb_read(path) -> EmbeddingSet:
    return emb_loads(Path(path).read_bytes())


def mean_by_cluster(embedding_set: EmbeddingSet, labels: Sequence) -> EmbeddingSet:
    """One row per distinct label (first-appearance order): the member mean."""
    if len(labels) != len(embedding_set):
        raise DataError(f"{len(labels)} labels for {len(embedding_set)} rows")
    order: dict[str, list[int]] = {}
    for i, lab in enumerate(labels):
        order.setdefault(str(lab), []).append(i)
    rows = []
    meta = []
    for lab, idx in order.items():
        members = embedding_set.rows[idx].astype(np.float64)
        rows.append(members.mean(axis=0).astype(np.float32))
        windows = [embedding_set.meta[i].window for i in idx]
        onset = min(w.onset_ms for w in windows)
        end = max(w.end_ms for w in windows)
        meta.append(
            RowMeta(
                recording_id=embedding_set.meta[idx[0]].recording_id,
                window=Segment(onset, end - onset),
                stream=0,
                true_label=lab,
            )
        )
    return EmbeddingSet(np.stack(rows), meta)


# ---------------------------------------------------------------------------
# Synthetic data generation (two-covariance generative model)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    """Controls the synthetic labeled-turn generator.

    Embeddings are drawn as class_mean + within-class noise with class means
    drawn from an isotropic between-class Gaussian, i.e. exactly the
    two-covariance model the scoring backend estimates.
    """

    n_recordings: int = 1
    n_classes: int = 3
    classes_per_recording: int = 3
    turns_per_recording: int = 10
    turn_log_mean: float = 1.8  # lognormal mu, log-seconds
    turn_log_std: float = 0.4
    pause: float = 0.3  # silence between turns, seconds
    between_class_std: float = 3.0
    within_class_std: float = 1.0
    dim: int = 64
    seed: int = 0
    window: WindowPlan = WindowPlan(5.0, 1.0, 1.0)
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.n_recordings < 1 or self.n_classes < 1 or self.turns_per_recording < 1:
            raise DataError("counts must be positive")
        if not (1 <= self.classes_per_recording <= self.n_classes):
            raise DataError("need 1 <= classes_per_recording <= n_classes")
        if self.pause < 0 or self.turn_log_std < 0:
            raise DataError("durations must be non-negative")
        if self.between_class_std < 0 or self.within_class_std < 0 or self.dim < 1:
            raise DataError("bad embedding-space parameters")
        if self.class_names is not None and len(self.class_names) != self.n_classes:
            raise DataError("class_names length must equal n_classes")

    def names(self) -> tuple[str, ...]:
        if self.class_names is not None:
            return self.class_names
        return tuple(f"c{i:02d}" for i in range(self.n_classes))


def sample_plda(n_classes, n_per_class, dim, between_class_std, within_class_std, seed):
    """Draw labeled vectors from the two-covariance model.

    Returns (X, labels, class_means) with X of shape (n_classes * n_per_class,
    dim) and integer labels. B = between_class_std**2 * I, W =
    within_class_std**2 * I.
    """
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, between_class_std, size=(n_classes, dim))
    noise = rng.normal(0.0, within_class_std, size=(n_classes, n_per_class, dim))
    x = (means[:, None, :] + noise).reshape(n_classes * n_per_class, dim)
    labels = np.repeat(np.arange(n_classes), n_per_class)
    return x, labels, means


def synth_corpus(cfg: SynthConfig):
    """Generate all recordings of a corpus.

    Returns (embeddings, references, speech) where embeddings is a single
    EmbeddingSet over all recordings, references maps recording_id to the
    true Annotation and speech maps recording_id to its VAD-style segments.
    """
    rng = np.random.default_rng(cfg.seed)
    names = cfg.names()
    class_means = rng.normal(0.0, cfg.between_class_std, size=(cfg.n_classes, cfg.dim))

    all_rows: list[np.ndarray] = []
    all_meta: list[RowMeta] = []
    references: dict[str, Annotation] = {}
    speech: dict[str, list[Segment]] = {}
    pause_ms = int(round(cfg.pause * 1000))

    for r in range(cfg.n_recordings):
        rec = f"synth{r:03d}"
        cast = rng.choice(cfg.n_classes, size=cfg.classes_per_recording, replace=False)
        turns: list[tuple[Segment, int]] = []
        t = 0
        prev_class = -1
        for _ in range(cfg.turns_per_recording):
            cls = int(rng.choice(cast))
            while cfg.classes_per_recording > 1 and cls == prev_class:
                cls = int(rng.choice(cast))
            dur_ms = max(1, int(round(rng.lognormal(cfg.turn_log_mean, cfg.turn_log_std) * 1000)))
            turns.append((Segment(t, dur_ms), cls))
            prev_class = cls
            t += dur_ms + pause_ms

        references[rec] = Annotation(rec, [(seg, names[cls]) for seg, cls in turns])
        speech[rec] = [seg for seg, _ in turns]

        for seg, cls in turns:
            for window in make_windows([seg], cfg.window):
                row = class_means[cls] + rng.normal(0.0, cfg.within_class_std, cfg.dim)
                all_rows.append(row.astype(np.float32))
                all_meta.append(RowMeta(rec, window, 0, names[cls]))

    rows = np.stack(all_rows) if all_rows else np.zeros((0, cfg.dim), dtype=np.float32)
    return EmbeddingSet(rows, all_meta), references, speech


def synth_recording(cfg: SynthConfig):
    """Generate a single recording (the first of the corpus for this seed)."""
    embeddings, references, speech = synth_corpus(dataclasses.replace(cfg, n_recordings=1))
    rec = next(iter(references))
    return embeddings, references[rec], speech[rec]
