"""Canonical `.dkeb` writer.

Byte layout (little-endian): magic b"DKEB", u16 version = 1, u32 dim,
u32 n_rows, n_rows x dim float32 row-major, u64 metadata length, UTF-8
JSON `{"rows": [...]}` with sorted keys and compact separators. Each row
object carries duration_ms, label (null here), onset_ms, recording_id and
stream. Following the canonical JSON form exactly is what makes the files
round-trip byte-identically through the consuming toolkit.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ExportError

MAGIC = b"DKEB"
VERSION = 1


def dkeb_bytes(rows: np.ndarray, recording_id: str, windows_ms: list[tuple[int, int]]) -> bytes:
    rows = np.ascontiguousarray(rows, dtype=np.float32)
    if rows.ndim != 2:
        raise ExportError(f"rows must be 2-D, got shape {rows.shape}")
    if not np.isfinite(rows).all():
        raise ExportError("embedding rows must be finite")
    if len(windows_ms) != rows.shape[0]:
        raise ExportError(f"{len(windows_ms)} windows for {rows.shape[0]} rows")
    meta = {
        "rows": [
            {
                "duration_ms": end - onset,
                "label": None,
                "onset_ms": onset,
                "recording_id": recording_id,
                "stream": 0,
            }
            for onset, end in windows_ms
        ]
    }
    meta_bytes = json.dumps(
        meta, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")
    return (
        MAGIC
        + struct.pack("<HII", VERSION, rows.shape[1], rows.shape[0])
        + rows.tobytes(order="C")
        + struct.pack("<Q", len(meta_bytes))
        + meta_bytes
    )
