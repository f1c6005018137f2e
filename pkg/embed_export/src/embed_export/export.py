"""The export job: decode audio, window the speech, embed, write .dkeb."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import read_wav
from .dkeb import dkeb_bytes
from .errors import ExportError
from .providers import resolve_provider
from .windows import WindowPlan, make_windows


@dataclass(frozen=True)
class ExportJob:
    audio_path: str
    vad_segments_ms: list[tuple[int, int]]
    plan: WindowPlan
    provider_id: str
    output_path: str
    recording_id: str | None = None  # defaults to the audio file stem


def export(job: ExportJob) -> int:
    """Run the provider over every analysis window; returns the row count."""
    provider = resolve_provider(job.provider_id)
    samples, sample_rate = read_wav(job.audio_path)
    duration_ms = int(len(samples) * 1000 / sample_rate)
    windows = make_windows(job.vad_segments_ms, job.plan)
    recording_id = job.recording_id or Path(job.audio_path).stem

    rows = []
    for onset, end in windows:
        if end > duration_ms + 1:  # allow 1 ms of duration rounding slack
            raise ExportError(
                f"window [{onset}, {end}] ms extends past the {duration_ms} ms audio"
            )
        lo = round(onset * sample_rate / 1000)
        hi = min(round(end * sample_rate / 1000), len(samples))
        vector = np.asarray(provider.embed(samples[lo:hi], sample_rate), dtype=np.float32)
        if vector.shape != (provider.dim,):
            raise ExportError(
                f"dimension drift: provider declared {provider.dim}, "
                f"produced {vector.shape} for window [{onset}, {end}] ms"
            )
        rows.append(vector)

    matrix = np.stack(rows) if rows else np.zeros((0, provider.dim), dtype=np.float32)
    Path(job.output_path).write_bytes(dkeb_bytes(matrix, recording_id, windows))
    return len(rows)
